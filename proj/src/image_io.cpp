#include "pan/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "pan/errors.hpp"
#include "pan/io_util.hpp"

namespace pan {

std::string encode_png(const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw InvalidShape("encode_png: expected [1|3,H,W], got " + to_string(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<unsigned char> pixels(c * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = std::clamp(image[(ch * h + y) * w + x], 0.0, 1.0);
        pixels[(y * w + x) * c + ch] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(std::string("png encode failed: ") + img.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(std::string("png encode failed: ") + img.message);
  }
  out.resize(size);
  return out;
}

Tensor decode_png(std::string_view bytes, const std::string& context) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw DataError(context + ": not a readable PNG (" + img.message + ")");
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> pixels(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError(context + ": PNG decode failed (" + img.message + ")");
  }
  const std::size_t h = img.height, w = img.width;
  Tensor out({3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        out[(ch * h + y) * w + x] = pixels[(y * w + x) * 3 + ch] / 255.0;
      }
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  write_file_atomic(path, encode_png(image));
}

Tensor read_png(const std::filesystem::path& path) { return decode_png(read_file(path), path.string()); }

Tensor side_by_side(const Tensor& left, const Tensor& right, std::size_t gap) {
  if (left.rank() != 3 || right.rank() != 3 || left.dim(0) != right.dim(0) ||
      left.dim(1) != right.dim(1)) {
    throw InvalidShape("side_by_side: " + to_string(left.shape()) + " vs " + to_string(right.shape()));
  }
  const std::size_t c = left.dim(0), h = left.dim(1), wl = left.dim(2), wr = right.dim(2);
  const std::size_t w = wl + gap + wr;
  Tensor out({c, h, w}, 1.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < wl; ++x) out[(ch * h + y) * w + x] = left[(ch * h + y) * wl + x];
      for (std::size_t x = 0; x < wr; ++x) {
        out[(ch * h + y) * w + wl + gap + x] = right[(ch * h + y) * wr + x];
      }
    }
  }
  return out;
}

}  // namespace pan
