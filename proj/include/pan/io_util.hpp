#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace pan {

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// Little-endian encoder for the binary formats.
class ByteWriter {
 public:
  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void raw(std::string_view bytes);

  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

// Bounds-checked little-endian decoder; truncation raises DataError naming
// `context`.
class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string context);

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string_view raw(std::size_t n);
  void expect_magic(std::string_view magic);

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& context() const { return context_; }

 private:
  void need(std::size_t n);

  std::string_view bytes_;
  std::size_t pos_ = 0;
  std::string context_;
};

}  // namespace pan
