#pragma once

#include "mm/ditcore.hpp"

namespace mm {

// Lightweight segmentation head over the per-block diffusion features:
// per-block channel projections to 64, concatenation, a fuse projection,
// nearest-neighbor 2x spatial upsampling back to the latent grid, and a final
// projection to 16 latent channels. Parameters live under "seghead.*".
class SegHead {
  public:
    SegHead(const DitConfig& dit_cfg, ParamStore& ps, Rng* rng);

    // All-zero parameters (used to probe the zero-preserving property).
    static SegHead zero_init(const DitConfig& dit_cfg, ParamStore& ps);

    // features: one (T', H'/2, W'/2, hidden_dim) tensor per block.
    // Returns Z_segment of shape (T', H', W', 16).
    Var forward(const std::vector<Var>& features) const;

  private:
    SegHead() = default;

    int n_blocks_ = 0;
    int64_t hidden_dim_ = 0;
    std::vector<Linear> per_block_;
    Linear fuse_;
    Linear post_up_;
    Linear out_proj_;
};

// Mean squared error between the predicted and target mask latents.
double seg_loss(const Tensor& z_segment, const Tensor& z_mask);
Var seg_loss_var(const Var& z_segment, const Tensor& z_mask);

struct LossWeights {
    double lambda_seg = 0.0;  // 0 in stage1, 0.5 in stages 2-3
    double diffusion_weight = 1.0;
};

// total = diffusion_weight * l_diff + lambda_seg * l_seg.
// Throws NumericsError on non-finite inputs.
double total_loss(double l_diff, double l_seg, const LossWeights& weights);
Var total_loss_var(const Var& l_diff, const Var& l_seg, const LossWeights& weights);

}  // namespace mm
