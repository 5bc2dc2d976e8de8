#include "mgs/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <png.h>

namespace mgs {

real linear_to_srgb(real v) {
  v = std::clamp(v, real(0), real(1));
  if (v <= real(0.0031308)) return real(12.92) * v;
  return real(1.055) * std::pow(v, real(1) / real(2.4)) - real(0.055);
}

real srgb_to_linear(real v) {
  v = std::clamp(v, real(0), real(1));
  if (v <= real(0.04045)) return v / real(12.92);
  return std::pow((v + real(0.055)) / real(1.055), real(2.4));
}

namespace {

void write_png_bytes(const std::vector<unsigned char>& bytes, int width, int height, int channels,
                     const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = png_uint_32(width);
  img.height = png_uint_32(height);
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw std::runtime_error("png write failed: " + path + ": " + img.message);
  }
}

std::vector<unsigned char> read_png_bytes(const std::string& path, int channels, int* w, int* h) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw std::runtime_error("png read failed: " + path + ": " + img.message);
  }
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<unsigned char> bytes(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
    throw std::runtime_error("png decode failed: " + path + ": " + img.message);
  }
  *w = int(img.width);
  *h = int(img.height);
  return bytes;
}

unsigned char quantize(real v) {
  return (unsigned char)(std::clamp<int>(int(std::lround(double(v) * 255.0)), 0, 255));
}

}  // namespace

void save_png(const Image& img, const std::string& path) {
  if (img.channels != 3 && img.channels != 1) throw std::invalid_argument("png: 1 or 3 channels");
  std::vector<unsigned char> bytes(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) bytes[i] = quantize(linear_to_srgb(img.data[i]));
  write_png_bytes(bytes, img.width, img.height, img.channels, path);
}

Image load_png(const std::string& path) {
  int w = 0, h = 0;
  const auto bytes = read_png_bytes(path, 3, &w, &h);
  Image img(w, h, 3);
  for (size_t i = 0; i < bytes.size(); ++i) img.data[i] = srgb_to_linear(real(bytes[i]) / 255);
  return img;
}

void save_mask_png(const std::vector<real>& mask, int width, int height, const std::string& path) {
  if (int(mask.size()) != width * height) throw std::invalid_argument("mask: size mismatch");
  std::vector<unsigned char> bytes(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) bytes[i] = quantize(mask[i]);
  write_png_bytes(bytes, width, height, 1, path);
}

std::vector<real> load_mask_png(const std::string& path, int* width, int* height) {
  int w = 0, h = 0;
  const auto bytes = read_png_bytes(path, 1, &w, &h);
  if (width) *width = w;
  if (height) *height = h;
  std::vector<real> mask(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i) mask[i] = real(bytes[i]) / 255;
  return mask;
}

void save_pfm(const Image& img, const std::string& path) {
  if (img.channels != 3 && img.channels != 1) throw std::invalid_argument("pfm: 1 or 3 channels");
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  std::fprintf(f, "%s\n%d %d\n-1.0\n", img.channels == 3 ? "PF" : "Pf", img.width, img.height);
  // PFM rows run bottom-up
  for (int y = img.height - 1; y >= 0; --y) {
    std::vector<float> row(size_t(img.width) * img.channels);
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) row[size_t(x) * img.channels + c] = float(img.at(y, x, c));
    }
    std::fwrite(row.data(), sizeof(float), row.size(), f);
  }
  std::fclose(f);
}

}  // namespace mgs
