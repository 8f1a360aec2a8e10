#include "mm/latent3d.hpp"

#include <algorithm>
#include <cmath>

#include "mm/errors.hpp"

namespace mm {

namespace {

void check_divisible(const VideoClip& v, const CodecConfig& cfg) {
    check_video(v);
    if (v.shape[0] % cfg.temporal_factor != 0) {
        throw ShapeError("video T=" + std::to_string(v.shape[0]) + " not divisible by " +
                         std::to_string(cfg.temporal_factor));
    }
    if (v.shape[1] % cfg.spatial_factor != 0) {
        throw ShapeError("video H=" + std::to_string(v.shape[1]) + " not divisible by " +
                         std::to_string(cfg.spatial_factor));
    }
    if (v.shape[2] % cfg.spatial_factor != 0) {
        throw ShapeError("video W=" + std::to_string(v.shape[2]) + " not divisible by " +
                         std::to_string(cfg.spatial_factor));
    }
}

void check_latent(const Tensor& z, int channels) {
    if (z.rank() != 4 || z.shape[3] != channels) {
        throw ShapeError("latent must be (T', H', W', " + std::to_string(channels) + "), got " + z.shape_str());
    }
}

}  // namespace

Codec::Codec(CodecConfig cfg, ParamStore& ps, Rng* rng) : cfg_(std::move(cfg)) {
    if (cfg_.hidden_widths.empty()) throw InputError("codec hidden_widths must be nonempty");
    const int64_t cell = static_cast<int64_t>(cfg_.temporal_factor) * cfg_.spatial_factor * cfg_.spatial_factor * 3;
    std::vector<int64_t> enc_dims{cell};
    enc_dims.insert(enc_dims.end(), cfg_.hidden_widths.begin(), cfg_.hidden_widths.end());
    enc_dims.push_back(2 * cfg_.latent_channels);  // mean and logvar
    for (size_t i = 0; i + 1 < enc_dims.size(); ++i) {
        enc_.push_back(Linear::create(ps, "codec.enc." + std::to_string(i), enc_dims[i], enc_dims[i + 1], rng));
    }
    std::vector<int64_t> dec_dims{cfg_.latent_channels};
    dec_dims.insert(dec_dims.end(), cfg_.hidden_widths.rbegin(), cfg_.hidden_widths.rend());
    dec_dims.push_back(cell);
    for (size_t i = 0; i + 1 < dec_dims.size(); ++i) {
        dec_.push_back(Linear::create(ps, "codec.dec." + std::to_string(i), dec_dims[i], dec_dims[i + 1], rng));
    }
}

Var Codec::rearrange_in(const Var& video) const {
    const auto& s = video.val().shape;
    const int64_t tf = cfg_.temporal_factor, sf = cfg_.spatial_factor;
    const int64_t Tp = s[0] / tf, Hp = s[1] / sf, Wp = s[2] / sf;
    Var x = reshape(video, {Tp, tf, Hp, sf, Wp, sf, 3});
    x = permute(x, {0, 2, 4, 1, 3, 5, 6});
    return reshape(x, {Tp, Hp, Wp, tf * sf * sf * 3});
}

Var Codec::rearrange_out(const Var& cells) const {
    const auto& s = cells.val().shape;
    const int64_t tf = cfg_.temporal_factor, sf = cfg_.spatial_factor;
    const int64_t Tp = s[0], Hp = s[1], Wp = s[2];
    Var x = reshape(cells, {Tp, Hp, Wp, tf, sf, sf, 3});
    x = permute(x, {0, 3, 1, 4, 2, 5, 6});
    return reshape(x, {Tp * tf, Hp * sf, Wp * sf, 3});
}

Var Codec::encode_stats(const Var& video) const {
    check_divisible(video.val(), cfg_);
    Var x = rearrange_in(video);
    for (size_t i = 0; i < enc_.size(); ++i) {
        x = enc_[i](x);
        if (i + 1 < enc_.size()) x = gelu(x);
    }
    return x;  // (T', H', W', 32): mean | logvar
}

Var Codec::decode_pre_clamp(const Var& z) const {
    check_latent(z.val(), cfg_.latent_channels);
    Var x = z;
    for (size_t i = 0; i < dec_.size(); ++i) {
        x = dec_[i](x);
        if (i + 1 < dec_.size()) x = gelu(x);
    }
    return rearrange_out(x);
}

LatentBlock Codec::encode(const VideoClip& v, LatentKind kind) const {
    NoGradGuard ng;
    Var stats = encode_stats(Var(v, false));
    Var mean = slice(stats, 3, 0, cfg_.latent_channels);
    LatentBlock out;
    out.data = mean.val();
    out.kind = kind;
    return out;
}

VideoClip Codec::decode(const LatentBlock& z) const {
    if (z.kind != LatentKind::video && z.kind != LatentKind::segment) {
        throw InputError("decode accepts video or segment latents");
    }
    NoGradGuard ng;
    Tensor out = decode_pre_clamp(Var(z.data, false)).val();
    for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
    return out;
}

LatentBlock Codec::encode_image(const Tensor& frame) const {
    if (frame.rank() != 3 || frame.shape[2] != 3) {
        throw ShapeError("encode_image expects (H, W, 3), got " + frame.shape_str());
    }
    VideoClip v({static_cast<int64_t>(cfg_.temporal_factor), frame.shape[0], frame.shape[1], 3});
    for (int t = 0; t < cfg_.temporal_factor; ++t) {
        std::copy(frame.data.begin(), frame.data.end(), v.data.begin() + t * frame.numel());
    }
    LatentBlock out = encode(v, LatentKind::image);
    return out;
}

LatentBlock pad_image_latent(const LatentBlock& zi, int64_t target_T) {
    if (target_T < 1) throw ShapeError("pad_image_latent target must be >= 1");
    if (zi.data.rank() != 4 || zi.data.shape[0] != 1) {
        throw ShapeError("pad_image_latent expects a 1-slot latent, got " + zi.data.shape_str());
    }
    Tensor out = Tensor::zeros({target_T, zi.data.shape[1], zi.data.shape[2], zi.data.shape[3]});
    std::copy(zi.data.data.begin(), zi.data.data.end(), out.data.begin());
    return LatentBlock{std::move(out), zi.kind};
}

LatentBlock concat_channels(const LatentBlock& a, const LatentBlock& b) {
    const Tensor& x = a.data;
    const Tensor& y = b.data;
    if (x.rank() != 4 || y.rank() != 4 || x.shape[0] != y.shape[0] || x.shape[1] != y.shape[1] ||
        x.shape[2] != y.shape[2]) {
        throw ShapeError("concat_channels mismatch: " + x.shape_str() + " vs " + y.shape_str());
    }
    Tensor out({x.shape[0], x.shape[1], x.shape[2], x.shape[3] + y.shape[3]});
    const int64_t cells = x.shape[0] * x.shape[1] * x.shape[2];
    for (int64_t i = 0; i < cells; ++i) {
        std::copy(x.data.begin() + i * x.shape[3], x.data.begin() + (i + 1) * x.shape[3],
                  out.data.begin() + i * out.shape[3]);
        std::copy(y.data.begin() + i * y.shape[3], y.data.begin() + (i + 1) * y.shape[3],
                  out.data.begin() + i * out.shape[3] + x.shape[3]);
    }
    return LatentBlock{std::move(out), a.kind};
}

CodecTrainReport train_codec(Codec& codec, ParamStore& ps, const std::vector<VideoClip>& clips,
                             const CodecTrainConfig& cfg) {
    if (clips.empty()) throw InputError("train_codec needs at least one clip");
    Rng rng(cfg.seed);
    AdamWConfig oc;
    oc.lr = cfg.lr;
    AdamW opt(ps, ps.names("codec."), oc);
    const int ch = codec.config().latent_channels;

    CodecTrainReport report;
    for (int step = 0; step < cfg.steps; ++step) {
        const VideoClip& clip = clips[static_cast<size_t>(step) % clips.size()];
        Var video(clip, false);
        Var stats = codec.encode_stats(video);
        Var mean = slice(stats, 3, 0, ch);
        Var logvar = slice(stats, 3, ch, ch);

        // reparameterized sample
        Var eps(rng.normal_tensor(mean.val().shape), false);
        Var z = add(mean, mul(exp_op(scale(logvar, 0.5)), eps));
        Var recon = codec.decode_pre_clamp(z);
        Var rec_loss = mse(recon, video);

        // KL(q || N(0,1)) in mean form: -0.5 * mean(1 + logvar - mean^2 - exp(logvar))
        Var kl = scale(mean_all(sub(add_scalar(logvar, 1.0), add(square(mean), exp_op(logvar)))), -0.5);
        Var loss = add(rec_loss, scale(kl, cfg.kl_weight));

        ps.zero_grads();
        backward(loss);
        clip_global_norm(ps, opt.param_names(), 1.0);
        opt.step();

        const double l = loss.val()[0];
        if (!std::isfinite(l)) throw NumericsError("codec training loss went non-finite at step " + std::to_string(step));
        report.losses.push_back(l);
    }
    report.final_loss = report.losses.empty() ? 0.0 : report.losses.back();
    return report;
}

}  // namespace mm
