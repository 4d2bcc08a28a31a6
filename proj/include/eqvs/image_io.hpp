#pragma once

#include <string>

#include "eqvs/imaging.hpp"

namespace eqvs {

/// 8-bit RGB PNG. Values are quantized with round(v * 255).
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

/// Raw little-endian float32 blob (row-major, RGB interleaved) with a JSON
/// sidecar at `path + ".json"` describing width, height and channels.
void write_f32(const std::string& path, const Image& img);
Image read_f32(const std::string& path);

/// Dispatches on the extension (.png or .f32).
void write_image(const std::string& path, const Image& img);
Image read_image(const std::string& path);

/// Round trip through 8-bit quantization without touching the disk.
Image quantize_8bit(const Image& img);

/// Single-channel grayscale PNG of a matrix, linearly mapped from [lo, hi].
void write_gray_png(const std::string& path, const Eigen::MatrixXd& values, double lo, double hi);

}  // namespace eqvs
