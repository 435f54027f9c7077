#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dexined/tensor.hpp"

namespace dexined {

// Interleaved HWC image with values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  float& at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

struct PngInfo {
  int width = 0;
  int height = 0;
  int channels = 0;
};

bool is_png(const std::filesystem::path& path);
PngInfo read_png_info(const std::filesystem::path& path);

// desired_channels: 0 keeps the file layout (alpha dropped), 1 gray, 3 RGB.
Image read_png(const std::filesystem::path& path, int desired_channels = 0);

// 8-bit PNG; samples quantized as round(v * 255) after clamping to [0, 1].
void write_png(const std::filesystem::path& path, const Image& image);

// RGB image -> [1, 3, H, W] network input, centered as v - 0.5.
template <typename Real>
Tensor<Real> image_to_tensor(const Image& image);

// Plane (n, c) of a tensor -> single-channel image.
template <typename Real>
Image tensor_plane_to_image(const Tensor<Real>& tensor, std::int64_t n = 0, std::int64_t c = 0);

}  // namespace dexined
