#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mgs/types.hpp"

namespace mgs {

// Little-endian 32-bit float blobs; values are converted from/to `real`.
void write_f32_blob(const std::string& path, std::span<const real> values);
std::vector<real> read_f32_blob(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

std::uint64_t fnv1a64(std::string_view text);

// Zero-padded decimal, e.g. format_index(7, 6) == "000007".
std::string format_index(int value, int width);

}  // namespace mgs
