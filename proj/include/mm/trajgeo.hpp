#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mm/io.hpp"
#include "mm/tensor.hpp"

namespace mm {

// One object's annotation on one frame. At least one of bbox/mask is present;
// when both are, bbox must be the tight box of the mask.
struct FrameAnnotation {
    int64_t frame_index = 0;
    std::optional<std::array<int64_t, 4>> bbox;  // x0, y0, x1, y1 inclusive
    std::optional<Tensor> mask;                  // (H, W) binary raster
};

struct ObjectTrack {
    int object_id = 0;
    std::array<int, 3> color{0, 0, 0};  // 0..255 per channel, never pure black
    std::vector<FrameAnnotation> frames;  // strictly increasing frame_index
};

struct TrajectorySet {
    std::vector<ObjectTrack> tracks;
    int64_t T = 0, H = 0, W = 0;  // canvas
};

// Tight inclusive bounding box (x0, y0, x1, y1) of the foreground.
// Throws EmptyMask when no pixel is set.
std::array<int64_t, 4> extract_bbox(const Tensor& mask);

// Deterministic pairwise-distinct non-black colors; index = object id.
// Throws PaletteExhausted for n > 255.
std::vector<std::array<int, 3>> assign_palette(int n);

// Dense condition: each annotated frame paints every track's mask in the
// track's color; unannotated frames stay black; ascending object_id paints
// last on overlap.
VideoClip render_mask_map(const TrajectorySet& ts);

// Box condition: filled rectangles per annotated frame, except frame 0 which
// renders from the mask (first-frame-mask rule).
VideoClip render_box_map(const TrajectorySet& ts);

// Keeps exactly k annotated frames per track: first and last pinned, the rest
// evenly spaced (ties to the lower index). Frame 0 keeps its mask; all other
// retained frames keep a box only. Throws InvalidSparsity for k outside [1,9].
TrajectorySet sparsify(const TrajectorySet& ts, int k);

// Enforces the structural invariants (unique ids, increasing frames, bounds,
// frame-0 mask, bbox/mask consistency). Throws on violation.
void validate_trajectory(const TrajectorySet& ts);

// JSON round trip matching the trajectory file schema. Masks travel as
// uncompressed run-length strings over row-major order, alternating
// background/foreground run lengths starting with background.
std::string trajectory_to_json(const TrajectorySet& ts);
TrajectorySet trajectory_from_json(const std::string& text);

std::string mask_to_rle(const Tensor& mask);
Tensor mask_from_rle(const std::string& rle, int64_t h, int64_t w);

}  // namespace mm
