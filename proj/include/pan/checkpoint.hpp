#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pan/tensor.hpp"

namespace pan {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// "PANW" parameter file: magic, u32 version, u32 count, then per tensor
// u16 name length, UTF-8 name, u8 rank, u32 dims, little-endian f64 data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(std::string_view bytes,
                                           const std::string& context = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace pan
