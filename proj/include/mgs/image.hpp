#pragma once

#include <string>
#include <vector>

#include "mgs/types.hpp"

namespace mgs {

// Row-major H x W x C buffer of linear-light values.
struct Image {
  int width = 0, height = 0, channels = 3;
  std::vector<real> data;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), data(size_t(w) * h * c, real(0)) {}

  real& at(int y, int x, int c) { return data[(size_t(y) * width + x) * channels + c]; }
  real at(int y, int x, int c) const { return data[(size_t(y) * width + x) * channels + c]; }
  size_t pixel_count() const { return size_t(width) * size_t(height); }
};

real linear_to_srgb(real v);
real srgb_to_linear(real v);

// 8-bit PNG, sRGB-encoded from linear RGB. 1-channel images use grayscale.
void save_png(const Image& img, const std::string& path);
Image load_png(const std::string& path);  // back to linear

// Grayscale mask without the sRGB transfer (values are coverage, not light).
void save_mask_png(const std::vector<real>& mask, int width, int height, const std::string& path);
std::vector<real> load_mask_png(const std::string& path, int* width = nullptr, int* height = nullptr);

// 32-bit float PFM (little-endian, bottom-up rows per the format spec).
void save_pfm(const Image& img, const std::string& path);

}  // namespace mgs
