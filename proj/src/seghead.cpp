#include "mm/seghead.hpp"

#include <cmath>

#include "mm/errors.hpp"

namespace mm {

namespace {
constexpr int kProjChannels = 64;
constexpr int kOutChannels = 16;
}  // namespace

SegHead::SegHead(const DitConfig& dit_cfg, ParamStore& ps, Rng* rng)
    : n_blocks_(dit_cfg.n_blocks), hidden_dim_(dit_cfg.hidden_dim) {
    for (int i = 0; i < n_blocks_; ++i) {
        per_block_.push_back(Linear::create(ps, "seghead.pb" + std::to_string(i), hidden_dim_, kProjChannels, rng));
    }
    fuse_ = Linear::create(ps, "seghead.fuse", static_cast<int64_t>(kProjChannels) * n_blocks_, kProjChannels, rng);
    post_up_ = Linear::create(ps, "seghead.post_up", kProjChannels, kProjChannels, rng);
    out_proj_ = Linear::create(ps, "seghead.out", kProjChannels, kOutChannels, rng);
}

SegHead SegHead::zero_init(const DitConfig& dit_cfg, ParamStore& ps) {
    SegHead head;
    head.n_blocks_ = dit_cfg.n_blocks;
    head.hidden_dim_ = dit_cfg.hidden_dim;
    const int64_t D = dit_cfg.hidden_dim;
    for (int i = 0; i < dit_cfg.n_blocks; ++i) {
        head.per_block_.push_back(Linear::create_zero(ps, "seghead.pb" + std::to_string(i), D, kProjChannels));
    }
    head.fuse_ = Linear::create_zero(ps, "seghead.fuse", static_cast<int64_t>(kProjChannels) * dit_cfg.n_blocks,
                                     kProjChannels);
    head.post_up_ = Linear::create_zero(ps, "seghead.post_up", kProjChannels, kProjChannels);
    head.out_proj_ = Linear::create_zero(ps, "seghead.out", kProjChannels, kOutChannels);
    return head;
}

Var SegHead::forward(const std::vector<Var>& features) const {
    if (static_cast<int>(features.size()) != n_blocks_) {
        throw ShapeError("seg head expects " + std::to_string(n_blocks_) + " features, got " +
                         std::to_string(features.size()));
    }
    const std::vector<int64_t>& s0 = features[0].val().shape;
    if (s0.size() != 4 || s0[3] != hidden_dim_) {
        throw ShapeError("seg head feature must be (T', H'/2, W'/2, " + std::to_string(hidden_dim_) + "), got " +
                         features[0].val().shape_str());
    }
    std::vector<Var> projected;
    projected.reserve(features.size());
    for (size_t i = 0; i < features.size(); ++i) {
        if (features[i].val().shape != s0) {
            throw ShapeError("seg head feature " + std::to_string(i) + " shape " + features[i].val().shape_str() +
                             " differs from " + features[0].val().shape_str());
        }
        projected.push_back(per_block_[i](features[i]));
    }
    Var x = gelu(fuse_(concat(projected, 3)));
    x = gelu(post_up_(upsample2x_hw(x)));
    return out_proj_(x);  // (T', H', W', 16)
}

double seg_loss(const Tensor& z_segment, const Tensor& z_mask) {
    if (!z_segment.same_shape(z_mask)) {
        throw ShapeError("seg_loss shape mismatch: " + z_segment.shape_str() + " vs " + z_mask.shape_str());
    }
    double acc = 0.0;
    for (int64_t i = 0; i < z_segment.numel(); ++i) {
        const double d = z_segment[i] - z_mask[i];
        acc += d * d;
    }
    return acc / static_cast<double>(z_segment.numel());
}

Var seg_loss_var(const Var& z_segment, const Tensor& z_mask) {
    if (!z_segment.val().same_shape(z_mask)) {
        throw ShapeError("seg_loss shape mismatch: " + z_segment.val().shape_str() + " vs " + z_mask.shape_str());
    }
    return mse(z_segment, Var(z_mask, false));
}

double total_loss(double l_diff, double l_seg, const LossWeights& weights) {
    if (!std::isfinite(l_diff) || !std::isfinite(l_seg)) throw NumericsError("total_loss on non-finite inputs");
    return weights.diffusion_weight * l_diff + weights.lambda_seg * l_seg;
}

Var total_loss_var(const Var& l_diff, const Var& l_seg, const LossWeights& weights) {
    if (!l_diff.val().all_finite() || !l_seg.val().all_finite()) {
        throw NumericsError("total_loss on non-finite inputs");
    }
    return add(scale(l_diff, weights.diffusion_weight), scale(l_seg, weights.lambda_seg));
}

}  // namespace mm
