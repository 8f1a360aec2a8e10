#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mm/latent3d.hpp"
#include "mm/nn.hpp"

namespace mm {

struct DitConfig {
    int64_t hidden_dim = 64;  // must be even and divisible by n_heads
    int n_blocks = 4;
    int n_heads = 4;
    int patch = 2;          // spatial patch over the latent grid, fixed to 2
    int in_channels = 32;   // image latent 16 + noised video latent 16
    int out_channels = 16;  // predicted velocity channels
    int n_train_steps = 1000;
    // The final head applies layernorm + modulation before its projection.
    // Disabled only for the residual-linearity property test, where the whole
    // post-residual path must stay linear.
    bool final_layernorm = true;
};

// Discrete view of the cosine noise-decay curve: alphas[t] for t in
// [0, n_steps], alphas[0] = 1, strictly decreasing, final < 0.01.
struct NoiseSchedule {
    std::vector<double> alphas;
    int n_steps = 0;
};

NoiseSchedule make_cosine_schedule(int n_steps);
// The continuous curve behind the discrete schedule; tau in [0, 1].
double cosine_alpha_bar(double tau);
// alphas[t] with range checking. Throws StepError outside [0, n_steps].
double alpha_bar_at(const NoiseSchedule& sched, int t);

// Forward noising x_t = sqrt(a)*x0 + sqrt(1-a)*eps and the velocity target
// v = sqrt(a)*eps - sqrt(1-a)*x0. The _alpha variants take the decay value
// directly (used by oracles probing values off the discrete grid).
Tensor add_noise(const Tensor& x0, const Tensor& eps, const NoiseSchedule& sched, int t);
Tensor add_noise_alpha(const Tensor& x0, const Tensor& eps, double alpha_bar);
Tensor v_target(const Tensor& x0, const Tensor& eps, const NoiseSchedule& sched, int t);
Tensor v_target_alpha(const Tensor& x0, const Tensor& eps, double alpha_bar);

// Mean squared error between x0 and the reconstruction
// sqrt(a)*x_t - sqrt(1-a)*v_pred.
double diffusion_loss(const Tensor& x0, const Tensor& x_t, const Tensor& v_pred, const NoiseSchedule& sched, int t);
double diffusion_loss_alpha(const Tensor& x0, const Tensor& x_t, const Tensor& v_pred, double alpha_bar);
// Grad-carrying variant for training; x0 and x_t are constants.
Var diffusion_loss_var(const Tensor& x0, const Tensor& x_t, const Var& v_pred, double alpha_bar);

enum class CondMode { global, null_cond };

// Optional capture of attention probabilities, one (n_heads, N, N) tensor per
// block, for normalization checks.
struct ForwardTrace {
    std::vector<Tensor> attn_probs;
};

struct DenoiserForward {
    Var v;                      // (T', H', W', out_channels)
    std::vector<Var> features;  // per block, (T', H'/patch, W'/patch, hidden_dim)
};

// One pre-norm transformer block with adaLN-style modulation. The control
// branch instantiates trainable copies of these under its own prefix.
struct DitBlock {
    Linear mod;  // emb -> 4*D: scale1, shift1, scale2, shift2 (zero-init)
    Linear wq, wk, wv, wo;
    Linear mlp0, mlp1;

    static DitBlock create(ParamStore& ps, const std::string& name, int64_t D, Rng* rng);
    // x: (N, D) tokens; emb: (1, D). Appends attention probs to trace.
    Var forward(const Var& x, const Var& emb, int n_heads, ForwardTrace* trace) const;
    // Dotted parameter names of one block, relative to its own prefix.
    static std::vector<std::string> param_suffixes();
};

// Toy diffusion transformer: patch-2 token grid, 3D full attention,
// adaLN-style per-block modulation from timestep + condition embedding.
// Parameters live under "<prefix>." in the store.
class Denoiser {
  public:
    Denoiser(DitConfig cfg, ParamStore& ps, Rng* rng, std::string prefix = "base");

    // z_in: (T', H', W', in_channels); tau = t / n_steps in [0, 1].
    // residuals, when given, hold one (T', H'/patch, W'/patch, hidden_dim)
    // tensor per block, added after the block body (before the feature tap).
    DenoiserForward forward(const Var& z_in, double tau, CondMode cond,
                            const std::vector<Var>* residuals = nullptr, ForwardTrace* trace = nullptr) const;

    // Timestep + condition embedding, shared with the control branch.
    Var embedding(double tau, CondMode cond) const;
    // Token embedding for an arbitrary-channel latent (the control branch
    // re-uses the base geometry with its own patch projection).
    Var patchify(const Var& z, const Linear& proj) const;
    Var tokens_to_grid(const Var& tokens, int64_t Tp, int64_t Hp2, int64_t Wp2) const;
    Var pos_embedding(int64_t Tp, int64_t Hp2, int64_t Wp2) const;

    const DitConfig& config() const { return cfg_; }
    const std::string& prefix() const { return prefix_; }
    const Linear& patch_in() const { return patch_in_; }
    const std::vector<DitBlock>& blocks() const { return blocks_; }

  private:
    DitConfig cfg_;
    std::string prefix_;
    Linear patch_in_;
    Linear time0_, time1_;
    Var cond_global_, cond_null_;
    std::vector<DitBlock> blocks_;
    Linear head_mod_;  // emb -> 2*D, only when final_layernorm
    Linear head_out_;
};

// Residual provider for sampling: given the current noised video latent and
// tau, returns per-block residuals (already scaled).
using ResidualFn = std::function<std::vector<Var>(const Tensor& x_t, double tau)>;

struct SampleConfig {
    int n_steps = 50;
    double guidance = 6.0;
    double control_scale = 1.0;
    uint64_t seed = 0;
};

// Deterministic reverse-diffusion loop in latent space. image_latent is the
// padded conditioning latent (T', H', W', 16); returns the denoised video
// latent of the same shape. residual_fn may be null (base-only sampling).
Tensor sample_latent(const Denoiser& base, const LatentBlock& image_latent, const SampleConfig& cfg,
                     const ResidualFn& residual_fn);

}  // namespace mm
