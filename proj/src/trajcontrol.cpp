#include "mm/trajcontrol.hpp"

#include "mm/errors.hpp"

namespace mm {

namespace {

DitConfig widen(const DitConfig& base_cfg) {
    DitConfig cfg = base_cfg;
    cfg.in_channels = base_cfg.in_channels + 16;  // + trajectory latent
    return cfg;
}

}  // namespace

ControlBranch::ControlBranch(const DitConfig& base_cfg, ParamStore& ps) : cfg_(widen(base_cfg)) {
    const int64_t D = cfg_.hidden_dim;
    const int64_t in_dim = static_cast<int64_t>(cfg_.patch) * cfg_.patch * cfg_.in_channels;
    patch_in_ = Linear::create(ps, "control.patch_in", in_dim, D, nullptr);
    for (int i = 0; i < cfg_.n_blocks; ++i) {
        blocks_.push_back(DitBlock::create(ps, "control.block" + std::to_string(i), D, nullptr));
        zero_projs_.push_back(Linear::create(ps, "control.zp" + std::to_string(i), D, D, nullptr));
    }
}

ControlBranch ControlBranch::init_from_base(const Denoiser& base, ParamStore& ps) {
    const DitConfig& bc = base.config();
    const DitConfig cc = widen(bc);
    const int64_t D = cc.hidden_dim;
    const int64_t p2 = static_cast<int64_t>(cc.patch) * cc.patch;
    const int64_t base_ch = bc.in_channels, wide_ch = cc.in_channels;

    auto set = [&](const std::string& name, Tensor value) {
        std::vector<int64_t> shape = value.shape;
        Tensor copy = value;
        Var& p = ps.ensure(name, shape, [&] { return copy; });
        p.mutable_val() = std::move(value);  // reset if it already existed
    };

    // patch projection: copy the image/video rows, zero the trajectory rows,
    // so the adapter initially ignores trajectory content
    const Tensor& bw = ps.at("base.patch_in.w").val();  // (p2*base_ch, D)
    Tensor ww = Tensor::zeros({p2 * wide_ch, D});
    for (int64_t cell = 0; cell < p2; ++cell) {
        for (int64_t c = 0; c < base_ch; ++c) {
            const double* src = bw.data.data() + (cell * base_ch + c) * D;
            double* dst = ww.data.data() + (cell * wide_ch + c) * D;
            std::copy(src, src + D, dst);
        }
    }
    set("control.patch_in.w", std::move(ww));
    set("control.patch_in.b", ps.at("base.patch_in.b").val());

    for (int i = 0; i < bc.n_blocks; ++i) {
        const std::string src = "base.block" + std::to_string(i);
        const std::string dst = "control.block" + std::to_string(i);
        for (const std::string& suffix : DitBlock::param_suffixes()) {
            set(dst + suffix, ps.at(src + suffix).val());
        }
        set("control.zp" + std::to_string(i) + ".w", Tensor::zeros({D, D}));
        set("control.zp" + std::to_string(i) + ".b", Tensor::zeros({D}));
    }
    return ControlBranch(bc, ps);
}

Var control_input(const LatentBlock& z_image_padded, const Tensor& x_t, const LatentBlock& z_traj) {
    LatentBlock iv = concat_channels(z_image_padded, LatentBlock{x_t, LatentKind::noise});
    LatentBlock all = concat_channels(iv, z_traj);
    return Var(all.data, false);
}

std::vector<Var> ControlBranch::forward_var(const Denoiser& base, const Var& z_in48, double tau, CondMode cond,
                                            ForwardTrace* trace) const {
    const auto& s = z_in48.val().shape;
    if (s.size() != 4 || s[3] != cfg_.in_channels) {
        throw ShapeError("control branch expects trailing channel dim " + std::to_string(cfg_.in_channels) +
                         ", got " + z_in48.val().shape_str());
    }
    const int64_t Tp = s[0], Hp2 = s[1] / cfg_.patch, Wp2 = s[2] / cfg_.patch;
    Var x = add(base.patchify(z_in48, patch_in_), base.pos_embedding(Tp, Hp2, Wp2));
    Var emb = base.embedding(tau, cond);
    std::vector<Var> residuals;
    residuals.reserve(blocks_.size());
    for (size_t i = 0; i < blocks_.size(); ++i) {
        x = blocks_[i].forward(x, emb, cfg_.n_heads, trace);
        residuals.push_back(base.tokens_to_grid(zero_projs_[i](x), Tp, Hp2, Wp2));
    }
    return residuals;
}

std::vector<Var> ControlBranch::forward(const Denoiser& base, const LatentBlock& z_traj, const Tensor& x_t,
                                        const LatentBlock& z_image_padded, double tau, CondMode cond,
                                        ForwardTrace* trace) const {
    return forward_var(base, control_input(z_image_padded, x_t, z_traj), tau, cond, trace);
}

DenoiserForward full_forward(const Denoiser& base, const ControlBranch& branch, const LatentBlock& z_image_padded,
                             const Tensor& x_t, const LatentBlock& z_traj, double tau, double control_scale,
                             CondMode cond, ForwardTrace* trace) {
    if (control_scale < 0.0) throw InputError("control_scale must be >= 0");
    Var z_in(concat_channels(z_image_padded, LatentBlock{x_t, LatentKind::noise}).data, false);
    if (control_scale == 0.0) return base.forward(z_in, tau, cond, nullptr, trace);
    std::vector<Var> residuals = branch.forward(base, z_traj, x_t, z_image_padded, tau, cond, trace);
    for (Var& r : residuals) r = scale(r, control_scale);
    return base.forward(z_in, tau, cond, &residuals, trace);
}

VideoClip sample_with_control(const Denoiser& base, const ControlBranch* branch, const Codec& codec,
                              const LatentBlock& z_image_padded, const LatentBlock& z_traj,
                              const SampleConfig& cfg) {
    ResidualFn fn;
    if (branch) {
        fn = [&](const Tensor& x_t, double tau) {
            return branch->forward(base, z_traj, x_t, z_image_padded, tau, CondMode::global);
        };
    }
    Tensor z = sample_latent(base, z_image_padded, cfg, fn);
    return codec.decode(LatentBlock{std::move(z), LatentKind::video});
}

}  // namespace mm
