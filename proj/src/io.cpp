#include "mgs/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mgs {

static_assert(std::endian::native == std::endian::little,
              "blob IO assumes a little-endian host");

void write_f32_blob(const std::string& path, std::span<const real> values) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  std::vector<float> buf(values.size());
  for (size_t i = 0; i < values.size(); ++i) buf[i] = float(values[i]);
  f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::vector<real> read_f32_blob(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open: " + path);
  const auto bytes = size_t(f.tellg());
  if (bytes % sizeof(float) != 0) throw std::runtime_error("blob size not a multiple of 4: " + path);
  f.seekg(0);
  std::vector<float> buf(bytes / sizeof(float));
  f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(bytes));
  if (!f) throw std::runtime_error("read failed: " + path);
  std::vector<real> out(buf.size());
  for (size_t i = 0; i < buf.size(); ++i) out[i] = real(buf[i]);
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string format_index(int value, int width) {
  std::string s = std::to_string(value);
  if (int(s.size()) < width) s.insert(0, size_t(width - int(s.size())), '0');
  return s;
}

}  // namespace mgs
