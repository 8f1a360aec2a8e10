#pragma once

#include <string>
#include <vector>

#include "mm/io.hpp"
#include "mm/nn.hpp"

namespace mm {

enum class LatentKind { image, video, trajectory, mask, segment, noise };

// Latent-space tensor of shape (T', H', W', 16) with T' = T/4, H' = H/8,
// W' = W/8, tagged with what it encodes.
struct LatentBlock {
    Tensor data;
    LatentKind kind = LatentKind::video;
};

struct CodecConfig {
    int temporal_factor = 4;
    int spatial_factor = 8;
    int latent_channels = 16;
    std::vector<int64_t> hidden_widths = {128};
};

// Toy 3D autoencoder. Pixels are grouped into 4x8x8 cells (768 values) and
// run through a small MLP to 16 latent channels; decode mirrors it. A
// variational posterior (mean, logvar) is produced per cell; encode returns
// the mean, so it is deterministic given weights.
class Codec {
  public:
    // Registers "codec.*" parameters in the store (or reattaches to them).
    // rng == nullptr attaches only: missing parameters are a WeightsError.
    Codec(CodecConfig cfg, ParamStore& ps, Rng* rng);

    LatentBlock encode(const VideoClip& v, LatentKind kind = LatentKind::video) const;
    VideoClip decode(const LatentBlock& z) const;

    // Single still image: repeated 4x temporally to fill one latent slot.
    LatentBlock encode_image(const Tensor& frame) const;  // (H, W, 3)

    // Grad-carrying paths for codec training. encode_stats returns the
    // (T', H', W', 32) mean-and-logvar tensor; decode_pre_clamp skips the
    // [0, 1] clamp so the reconstruction loss stays differentiable.
    Var encode_stats(const Var& video) const;
    Var decode_pre_clamp(const Var& z) const;

    const CodecConfig& config() const { return cfg_; }

  private:
    Var rearrange_in(const Var& video) const;   // (T,H,W,3) -> (T',H',W',768)
    Var rearrange_out(const Var& cells) const;  // inverse

    CodecConfig cfg_;
    std::vector<Linear> enc_;
    std::vector<Linear> dec_;
};

// Zero-pads a 1-slot image latent along time: slot 0 keeps zi, the rest are
// zero. Throws ShapeError for target_T' < 1 or a multi-slot input.
LatentBlock pad_image_latent(const LatentBlock& zi, int64_t target_T);

// Channel concatenation; a occupies the leading channels.
LatentBlock concat_channels(const LatentBlock& a, const LatentBlock& b);

struct CodecTrainConfig {
    int steps = 200;
    double lr = 1e-3;
    double kl_weight = 1e-6;
    uint64_t seed = 0;
};

struct CodecTrainReport {
    std::vector<double> losses;
    double final_loss = 0.0;
};

// Reconstruction + small-KL training over the given clips (cycled in order).
CodecTrainReport train_codec(Codec& codec, ParamStore& ps, const std::vector<VideoClip>& clips,
                             const CodecTrainConfig& cfg);

}  // namespace mm
