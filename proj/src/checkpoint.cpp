#include "pan/checkpoint.hpp"

#include <limits>

#include "pan/errors.hpp"
#include "pan/io_util.hpp"

namespace pan {

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  ByteWriter w;
  w.raw("PANW");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw InvalidArgument("tensor name too long: " + name.substr(0, 32) + "...");
    }
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) {
      throw InvalidShape("tensor " + name + " has too many dimensions");
    }
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.raw(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.f64(v);
  }
  return w.bytes();
}

std::vector<NamedTensor> decode_checkpoint(std::string_view bytes, const std::string& context) {
  ByteReader r(bytes, context);
  r.expect_magic("PANW");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError(context + ": unsupported version " + std::to_string(version));
  }
  const auto count = r.u32();
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = std::string(r.raw(r.u16()));
    const auto rank = r.u8();
    Shape shape;
    for (std::uint8_t d = 0; d < rank; ++d) {
      shape.push_back(r.u32());
      if (shape.back() == 0) throw DataError(context + ": tensor " + nt.name + " has a zero dimension");
    }
    const auto n = numel(shape);
    if (n * 8 > r.remaining()) throw DataError(context + ": tensor " + nt.name + " truncated");
    std::vector<double> data(n);
    for (auto& v : data) v = r.f64();
    nt.tensor = Tensor(std::move(shape), std::move(data));
    out.push_back(std::move(nt));
  }
  if (!r.at_end()) throw DataError(context + ": trailing bytes after " + std::to_string(count) + " tensors");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  write_file_atomic(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

}  // namespace pan
