#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cunsb/tensor.hpp"

namespace cunsb::io {

/// 8-bit image, interleaved rows (H, W, C). C is 1 (gray) or 3 (RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int row, int col, int ch) const {
    return pixels[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
};

/// Color files load as RGB, gray files as one channel; alpha is dropped.
/// Throws DataError for unreadable files.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& image);

/// (1, C, H, W) with values 2 (v / 255) - 1.
Tensor to_tensor(const Image& image);
/// Values in [0, 1] as v / 255, used for metrics.
Tensor to_unit_tensor(const Image& image);
/// Inverse of to_tensor with clamping and rounding. Requires n = 1.
Image to_image(const Tensor& x);

/// Largest centred square.
Image center_crop(const Image& image);
/// Bilinear, half-pixel centres.
Image resize(const Image& image, int width, int height);
/// center_crop then resize to size x size. No-op when already that size.
Image ingest(const Image& image, int size);

/// Side-by-side tiles of equally sized images, rows of `columns`.
Image tile(const std::vector<Image>& images, int columns);

/// Sorted regular files ending in ".png" (case-insensitive).
std::vector<std::string> list_pngs(const std::string& dir);
/// File name without directory and extension.
std::string stem(const std::string& path);

}  // namespace cunsb::io
