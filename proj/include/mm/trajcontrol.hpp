#pragma once

#include "mm/ditcore.hpp"

namespace mm {

// Trainable copy of the base DiT blocks consuming [image 16 | noised video 16
// | trajectory 16] channels, emitting one residual per base block through a
// zero-initialized kernel-1 projection. Parameters live under "control.*";
// the timestep/condition embedders are shared with (and stay owned by) the
// base model.
class ControlBranch {
  public:
    // Attaches to existing "control.*" parameters; any missing parameter is a
    // WeightsError. Use init_from_base for a fresh branch.
    ControlBranch(const DitConfig& base_cfg, ParamStore& ps);

    // Creates (or resets) the branch from the base weights: block weights are
    // copied bit-exactly, the patch projection's image/video rows are copied
    // with the trajectory rows zeroed, and every zero-projection starts at 0,
    // so the branch initially leaves the base output unchanged.
    static ControlBranch init_from_base(const Denoiser& base, ParamStore& ps);

    // Per-block residuals, each (T', H'/patch, W'/patch, hidden_dim).
    std::vector<Var> forward(const Denoiser& base, const LatentBlock& z_traj, const Tensor& x_t,
                             const LatentBlock& z_image_padded, double tau, CondMode cond = CondMode::global,
                             ForwardTrace* trace = nullptr) const;
    // Grad-carrying variant where the noised video latent is a Var (training).
    std::vector<Var> forward_var(const Denoiser& base, const Var& z_in48, double tau, CondMode cond,
                                 ForwardTrace* trace = nullptr) const;

    int n_blocks() const { return cfg_.n_blocks; }
    const DitConfig& config() const { return cfg_; }

  private:
    DitConfig cfg_;  // base geometry with in_channels widened to 48
    Linear patch_in_;
    std::vector<DitBlock> blocks_;
    std::vector<Linear> zero_projs_;
};

// Assembles the widened branch input [image | video | trajectory].
Var control_input(const LatentBlock& z_image_padded, const Tensor& x_t, const LatentBlock& z_traj);

// Base forward with residuals control_scale * branch(...). control_scale == 0
// skips the branch entirely and equals the base-only forward bit-exactly.
DenoiserForward full_forward(const Denoiser& base, const ControlBranch& branch, const LatentBlock& z_image_padded,
                             const Tensor& x_t, const LatentBlock& z_traj, double tau, double control_scale,
                             CondMode cond = CondMode::global, ForwardTrace* trace = nullptr);

// Reverse-diffusion sampling with the trajectory branch attached (branch may
// be null for base-only sampling), decoded to pixels through the codec.
VideoClip sample_with_control(const Denoiser& base, const ControlBranch* branch, const Codec& codec,
                              const LatentBlock& z_image_padded, const LatentBlock& z_traj,
                              const SampleConfig& cfg);

}  // namespace mm
