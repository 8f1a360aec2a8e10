#include "mm/ditcore.hpp"

#include <cmath>

#include "mm/errors.hpp"

namespace mm {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kCosineS = 0.008;

void check_pair(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

// Standard sinusoidal features of one coordinate into an even-sized chunk.
void fill_sinusoidal(double* out, int64_t dim, double pos) {
    const int64_t half = dim / 2;
    for (int64_t j = 0; j < half; ++j) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(j) / static_cast<double>(half));
        out[2 * j] = std::sin(pos * freq);
        out[2 * j + 1] = std::cos(pos * freq);
    }
}

}  // namespace

double cosine_alpha_bar(double tau) {
    const double f = [](double u) {
        const double c = std::cos((u + kCosineS) / (1.0 + kCosineS) * kPi / 2.0);
        return c * c;
    }(tau);
    static const double f0 = [] {
        const double c = std::cos(kCosineS / (1.0 + kCosineS) * kPi / 2.0);
        return c * c;
    }();
    return std::max(f / f0, 1e-6);
}

NoiseSchedule make_cosine_schedule(int n_steps) {
    if (n_steps < 1) throw StepError("schedule needs at least 1 step");
    NoiseSchedule s;
    s.n_steps = n_steps;
    s.alphas.resize(static_cast<size_t>(n_steps) + 1);
    s.alphas[0] = 1.0;
    for (int t = 1; t <= n_steps; ++t) {
        double a = cosine_alpha_bar(static_cast<double>(t) / n_steps);
        // keep the sequence strictly decreasing even after the 1e-6 floor
        if (a >= s.alphas[static_cast<size_t>(t - 1)]) a = s.alphas[static_cast<size_t>(t - 1)] * (1.0 - 1e-9);
        s.alphas[static_cast<size_t>(t)] = a;
    }
    return s;
}

double alpha_bar_at(const NoiseSchedule& sched, int t) {
    if (t < 0 || t > sched.n_steps) {
        throw StepError("step " + std::to_string(t) + " outside [0, " + std::to_string(sched.n_steps) + "]");
    }
    return sched.alphas[static_cast<size_t>(t)];
}

Tensor add_noise_alpha(const Tensor& x0, const Tensor& eps, double alpha_bar) {
    check_pair(x0, eps, "add_noise");
    const double sa = std::sqrt(alpha_bar), sb = std::sqrt(1.0 - alpha_bar);
    Tensor out = x0;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = sa * x0[i] + sb * eps[i];
    return out;
}

Tensor add_noise(const Tensor& x0, const Tensor& eps, const NoiseSchedule& sched, int t) {
    return add_noise_alpha(x0, eps, alpha_bar_at(sched, t));
}

Tensor v_target_alpha(const Tensor& x0, const Tensor& eps, double alpha_bar) {
    check_pair(x0, eps, "v_target");
    const double sa = std::sqrt(alpha_bar), sb = std::sqrt(1.0 - alpha_bar);
    Tensor out = x0;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = sa * eps[i] - sb * x0[i];
    return out;
}

Tensor v_target(const Tensor& x0, const Tensor& eps, const NoiseSchedule& sched, int t) {
    return v_target_alpha(x0, eps, alpha_bar_at(sched, t));
}

double diffusion_loss_alpha(const Tensor& x0, const Tensor& x_t, const Tensor& v_pred, double alpha_bar) {
    check_pair(x0, x_t, "diffusion_loss");
    check_pair(x0, v_pred, "diffusion_loss");
    const double sa = std::sqrt(alpha_bar), sb = std::sqrt(1.0 - alpha_bar);
    double acc = 0.0;
    for (int64_t i = 0; i < x0.numel(); ++i) {
        const double r = x0[i] - (sa * x_t[i] - sb * v_pred[i]);
        acc += r * r;
    }
    return acc / static_cast<double>(x0.numel());
}

double diffusion_loss(const Tensor& x0, const Tensor& x_t, const Tensor& v_pred, const NoiseSchedule& sched, int t) {
    return diffusion_loss_alpha(x0, x_t, v_pred, alpha_bar_at(sched, t));
}

Var diffusion_loss_var(const Tensor& x0, const Tensor& x_t, const Var& v_pred, double alpha_bar) {
    check_pair(x0, x_t, "diffusion_loss");
    check_pair(x0, v_pred.val(), "diffusion_loss");
    const double sa = std::sqrt(alpha_bar), sb = std::sqrt(1.0 - alpha_bar);
    // x0 - (sa*x_t - sb*v) = (x0 - sa*x_t) + sb*v
    Tensor base = x0;
    for (int64_t i = 0; i < base.numel(); ++i) base[i] = x0[i] - sa * x_t[i];
    Var residual = add(Var(base, false), scale(v_pred, sb));
    return mean_all(square(residual));
}

DitBlock DitBlock::create(ParamStore& ps, const std::string& name, int64_t D, Rng* rng) {
    DitBlock blk;
    // zero-init modulation: blocks start as plain pre-norm transformer blocks
    blk.mod = Linear::create_zero(ps, name + ".mod", D, 4 * D);
    blk.wq = Linear::create(ps, name + ".attn.wq", D, D, rng);
    blk.wk = Linear::create(ps, name + ".attn.wk", D, D, rng);
    blk.wv = Linear::create(ps, name + ".attn.wv", D, D, rng);
    blk.wo = Linear::create(ps, name + ".attn.wo", D, D, rng);
    blk.mlp0 = Linear::create(ps, name + ".mlp.0", D, 4 * D, rng);
    blk.mlp1 = Linear::create(ps, name + ".mlp.1", 4 * D, D, rng);
    return blk;
}

std::vector<std::string> DitBlock::param_suffixes() {
    return {".mod.w",     ".mod.b",     ".attn.wq.w", ".attn.wq.b", ".attn.wk.w", ".attn.wk.b", ".attn.wv.w",
            ".attn.wv.b", ".attn.wo.w", ".attn.wo.b", ".mlp.0.w",   ".mlp.0.b",   ".mlp.1.w",   ".mlp.1.b"};
}

Var DitBlock::forward(const Var& x, const Var& emb, int n_heads, ForwardTrace* trace) const {
    const int64_t N = x.val().shape[0], D = x.val().shape[1];
    const int64_t nh = n_heads, hd = D / nh;

    Var mods = mod(gelu(emb));  // (1, 4D)
    auto mod_vec = [&](int64_t idx) { return reshape(slice(mods, 1, idx * D, D), {D}); };
    auto modulate = [&](const Var& y, const Var& sc, const Var& sh) {
        return add_vec(mul_vec(y, add_scalar(sc, 1.0)), sh);
    };

    auto heads = [&](const Var& m) {
        // (N, D) -> (nh, N, hd)
        return permute(reshape(m, {N, nh, hd}), {1, 0, 2});
    };
    Var a_in = modulate(layernorm(x), mod_vec(0), mod_vec(1));
    Var q = heads(wq(a_in)), k = heads(wk(a_in)), v = heads(wv(a_in));
    Var scores = scale(bmm(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(hd)));
    Var probs = softmax_last(scores);  // (nh, N, N)
    if (trace) trace->attn_probs.push_back(probs.val());
    Var attn = wo(reshape(permute(bmm(probs, v), {1, 0, 2}), {N, D}));

    Var h = add(x, attn);
    Var m = modulate(layernorm(h), mod_vec(2), mod_vec(3));
    return add(h, mlp1(gelu(mlp0(m))));
}

Denoiser::Denoiser(DitConfig cfg, ParamStore& ps, Rng* rng, std::string prefix)
    : cfg_(cfg), prefix_(std::move(prefix)) {
    if (cfg_.hidden_dim % cfg_.n_heads != 0 || cfg_.hidden_dim % 2 != 0) {
        throw InputError("hidden_dim must be even and divisible by n_heads");
    }
    if (cfg_.patch != 2) throw InputError("patch size is fixed to 2 by the segment-head geometry");
    const int64_t D = cfg_.hidden_dim;
    const int64_t patch_in_dim = static_cast<int64_t>(cfg_.patch) * cfg_.patch * cfg_.in_channels;
    patch_in_ = Linear::create(ps, prefix_ + ".patch_in", patch_in_dim, D, rng);
    time0_ = Linear::create(ps, prefix_ + ".time.0", D, D, rng);
    time1_ = Linear::create(ps, prefix_ + ".time.1", D, D, rng);
    auto cond_init = [&](const char* what) {
        return [this, rng, what, D]() -> Tensor {
            if (!rng) throw WeightsError(std::string("missing parameter ") + prefix_ + ".cond." + what);
            Tensor t = rng->normal_tensor({D});
            for (double& v : t.data) v *= 0.02;
            return t;
        };
    };
    cond_global_ = ps.ensure(prefix_ + ".cond.global", {D}, cond_init("global"));
    cond_null_ = ps.ensure(prefix_ + ".cond.null", {D}, cond_init("null"));
    for (int i = 0; i < cfg_.n_blocks; ++i) {
        blocks_.push_back(DitBlock::create(ps, prefix_ + ".block" + std::to_string(i), D, rng));
    }
    if (cfg_.final_layernorm) head_mod_ = Linear::create_zero(ps, prefix_ + ".head.mod", D, 2 * D);
    const int64_t patch_out_dim = static_cast<int64_t>(cfg_.patch) * cfg_.patch * cfg_.out_channels;
    head_out_ = Linear::create(ps, prefix_ + ".head.out", D, patch_out_dim, rng);
}

Var Denoiser::pos_embedding(int64_t Tp, int64_t Hp2, int64_t Wp2) const {
    const int64_t D = cfg_.hidden_dim;
    // three even-sized chunks, one per axis
    int64_t dt = 2 * (D / 6);
    int64_t dy = dt;
    int64_t dx = D - dt - dy;
    Tensor pos({Tp * Hp2 * Wp2, D});
    int64_t n = 0;
    for (int64_t t = 0; t < Tp; ++t) {
        for (int64_t y = 0; y < Hp2; ++y) {
            for (int64_t x = 0; x < Wp2; ++x, ++n) {
                double* row = pos.data.data() + n * D;
                fill_sinusoidal(row, dt, static_cast<double>(t));
                fill_sinusoidal(row + dt, dy, static_cast<double>(y));
                fill_sinusoidal(row + dt + dy, dx, static_cast<double>(x));
            }
        }
    }
    return Var(std::move(pos), false);
}

Var Denoiser::embedding(double tau, CondMode cond) const {
    const int64_t D = cfg_.hidden_dim;
    Tensor tfeat({D});
    fill_sinusoidal(tfeat.data.data(), D, tau * 1000.0);
    Var e = time1_(gelu(time0_(reshape(Var(std::move(tfeat), false), {1, D}))));
    const Var& c = cond == CondMode::global ? cond_global_ : cond_null_;
    return add(e, reshape(c, {1, D}));  // (1, D)
}

Var Denoiser::patchify(const Var& z, const Linear& proj) const {
    const auto& s = z.val().shape;
    if (s.size() != 4) throw ShapeError("denoiser input must be (T', H', W', C), got " + z.val().shape_str());
    const int64_t Tp = s[0], Hp = s[1], Wp = s[2], C = s[3];
    if (Hp % cfg_.patch != 0 || Wp % cfg_.patch != 0) {
        throw ShapeError("latent spatial dims must be divisible by patch " + std::to_string(cfg_.patch));
    }
    const int64_t p = cfg_.patch, Hp2 = Hp / p, Wp2 = Wp / p;
    Var x = reshape(z, {Tp, Hp2, p, Wp2, p, C});
    x = permute(x, {0, 1, 3, 2, 4, 5});
    x = reshape(x, {Tp * Hp2 * Wp2, p * p * C});
    return proj(x);  // (N, D)
}

Var Denoiser::tokens_to_grid(const Var& tokens, int64_t Tp, int64_t Hp2, int64_t Wp2) const {
    return reshape(tokens, {Tp, Hp2, Wp2, cfg_.hidden_dim});
}

DenoiserForward Denoiser::forward(const Var& z_in, double tau, CondMode cond, const std::vector<Var>* residuals,
                                  ForwardTrace* trace) const {
    const auto& s = z_in.val().shape;
    if (s.size() != 4 || s[3] != cfg_.in_channels) {
        throw ShapeError("denoiser expects trailing channel dim " + std::to_string(cfg_.in_channels) + ", got " +
                         z_in.val().shape_str());
    }
    const int64_t Tp = s[0], Hp2 = s[1] / cfg_.patch, Wp2 = s[2] / cfg_.patch;
    const int64_t N = Tp * Hp2 * Wp2, D = cfg_.hidden_dim;
    if (residuals && static_cast<int>(residuals->size()) != cfg_.n_blocks) {
        throw ShapeError("expected " + std::to_string(cfg_.n_blocks) + " residuals, got " +
                         std::to_string(residuals ? residuals->size() : 0));
    }

    Var x = add(patchify(z_in, patch_in_), pos_embedding(Tp, Hp2, Wp2));
    Var emb = embedding(tau, cond);

    DenoiserForward out;
    for (int i = 0; i < cfg_.n_blocks; ++i) {
        x = blocks_[static_cast<size_t>(i)].forward(x, emb, cfg_.n_heads, trace);
        if (residuals) {
            const Var& r = (*residuals)[static_cast<size_t>(i)];
            const std::vector<int64_t> want{Tp, Hp2, Wp2, D};
            if (r.val().shape != want) {
                throw ShapeError("residual " + std::to_string(i) + " has shape " + r.val().shape_str() +
                                 ", expected " + shape_str(want));
            }
            x = add(x, reshape(r, {N, D}));
        }
        out.features.push_back(tokens_to_grid(x, Tp, Hp2, Wp2));
    }

    Var y = x;
    if (cfg_.final_layernorm) {
        Var mods = head_mod_(gelu(emb));
        auto mod_vec = [&](int64_t idx) { return reshape(slice(mods, 1, idx * D, D), {D}); };
        y = add_vec(mul_vec(layernorm(y), add_scalar(mod_vec(0), 1.0)), mod_vec(1));
    }
    y = head_out_(y);  // (N, p*p*out_channels)

    const int64_t p = cfg_.patch, C = cfg_.out_channels;
    y = reshape(y, {Tp, Hp2, Wp2, p, p, C});
    y = permute(y, {0, 1, 3, 2, 4, 5});
    out.v = reshape(y, {Tp, Hp2 * p, Wp2 * p, C});
    return out;
}

Tensor sample_latent(const Denoiser& base, const LatentBlock& image_latent, const SampleConfig& cfg,
                     const ResidualFn& residual_fn) {
    if (cfg.n_steps < 1) throw StepError("sampling needs at least 1 step");
    if (image_latent.data.rank() != 4) throw ShapeError("image latent must be (T', H', W', C)");
    NoGradGuard ng;
    const NoiseSchedule sched = make_cosine_schedule(cfg.n_steps);

    Rng rng(cfg.seed);
    Tensor x = rng.normal_tensor(image_latent.data.shape);

    for (int t = cfg.n_steps; t >= 1; --t) {
        const double a_cur = sched.alphas[static_cast<size_t>(t)];
        const double a_prev = sched.alphas[static_cast<size_t>(t - 1)];
        const double tau = static_cast<double>(t) / cfg.n_steps;

        Var z_in(concat_channels(image_latent, LatentBlock{x, LatentKind::noise}).data, false);

        std::vector<Var> residuals;
        const std::vector<Var>* res_ptr = nullptr;
        if (residual_fn && cfg.control_scale != 0.0) {
            residuals = residual_fn(x, tau);
            for (Var& r : residuals) r = scale(r, cfg.control_scale);
            res_ptr = &residuals;
        }

        Tensor v_hat = base.forward(z_in, tau, CondMode::global, res_ptr).v.val();
        if (cfg.guidance != 1.0) {
            // unconditional pass: null embedding, no trajectory residuals
            Tensor v_unc = base.forward(z_in, tau, CondMode::null_cond, nullptr).v.val();
            for (int64_t i = 0; i < v_hat.numel(); ++i) {
                v_hat[i] = v_unc[i] + cfg.guidance * (v_hat[i] - v_unc[i]);
            }
        }

        const double sa = std::sqrt(a_cur), sb = std::sqrt(1.0 - a_cur);
        Tensor x0_hat = x, eps_hat = x;
        for (int64_t i = 0; i < x.numel(); ++i) {
            x0_hat[i] = sa * x[i] - sb * v_hat[i];
            eps_hat[i] = sb * x[i] + sa * v_hat[i];
        }
        const double pa = std::sqrt(a_prev), pb = std::sqrt(1.0 - a_prev);
        for (int64_t i = 0; i < x.numel(); ++i) x[i] = pa * x0_hat[i] + pb * eps_hat[i];
    }
    if (!x.all_finite()) throw NumericsError("sampling produced non-finite latents");
    return x;
}

}  // namespace mm
