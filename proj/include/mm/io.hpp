#pragma once

#include <string>

#include "mm/tensor.hpp"

namespace mm {

// A video clip is a (T, H, W, 3) tensor with values in [0, 1].
using VideoClip = Tensor;

// Throws ShapeError unless v looks like a video clip.
void check_video(const Tensor& v, const char* what = "video");

// Raw tensor files: 8-byte magic "MMTNTNSR", u32 rank, rank x u32 dims,
// then little-endian f32 payload in row-major order.
void write_tensor_file(const std::string& path, const Tensor& t);
Tensor read_tensor_file(const std::string& path);

// Binary PPM (P6) frames, 8-bit per channel. Values clamp to [0, 1] on write.
void write_ppm(const std::string& path, const Tensor& frame);  // (H, W, 3)
Tensor read_ppm(const std::string& path);

// A rendered clip as a directory of frame_00000.ppm .. frame_{T-1}.ppm.
void write_frame_dir(const std::string& dir, const VideoClip& v);
VideoClip read_frame_dir(const std::string& dir);

// Whole-file text helpers. write_text_atomic goes through a temp file + rename.
std::string read_text(const std::string& path);
void write_text_atomic(const std::string& path, const std::string& content);

}  // namespace mm
