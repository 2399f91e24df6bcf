#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "pan/tensor.hpp"

namespace pan {

// [C,H,W] with C = 1 or 3 and values in [0,1] (clamped, rounded to 8 bits).
std::string encode_png(const Tensor& image);
// Any PNG, returned as RGB [3,H,W] in [0,1].
Tensor decode_png(std::string_view bytes, const std::string& context = "png");

void write_png(const std::filesystem::path& path, const Tensor& image);
Tensor read_png(const std::filesystem::path& path);

// Concatenates two [C,H,W] images along the width; heights must agree.
Tensor side_by_side(const Tensor& left, const Tensor& right, std::size_t gap = 2);

}  // namespace pan
