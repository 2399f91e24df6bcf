#include "pan/descriptor.hpp"

#include <cmath>

#include "pan/errors.hpp"
#include "pan/io_util.hpp"

namespace pan {

std::vector<double> l2_normalize(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  std::vector<double> out(v.begin(), v.end());
  if (norm <= kNormEpsilon) return out;
  for (double& x : out) x /= norm;
  return out;
}

Descriptor fuse(std::span<const double> f1, std::span<const double> f2, double alpha,
                SampleMeta meta) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw InvalidArgument("fuse: alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  Descriptor d;
  d.meta = meta;
  d.vector.reserve(f1.size() + f2.size());
  for (double x : l2_normalize(f1)) d.vector.push_back(alpha * x);
  for (double x : l2_normalize(f2)) d.vector.push_back((1.0 - alpha) * x);
  return d;
}

std::vector<Descriptor> EmbeddingFile::fused(double alpha) const {
  std::vector<Descriptor> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    std::vector<double> a(r.branch1.begin(), r.branch1.end());
    std::vector<double> b(r.branch2.begin(), r.branch2.end());
    out.push_back(fuse(a, b, alpha, r.meta));
  }
  return out;
}

std::vector<SampleMeta> EmbeddingFile::metas() const {
  std::vector<SampleMeta> out;
  for (const auto& r : records) out.push_back(r.meta);
  return out;
}

std::string encode_embeddings(const EmbeddingFile& file) {
  ByteWriter w;
  w.raw("PANE");
  w.u32(kEmbeddingVersion);
  w.u32(static_cast<std::uint32_t>(file.records.size()));
  w.u32(file.dim1);
  w.u32(file.dim2);
  for (const auto& r : file.records) {
    if (r.branch1.size() != file.dim1 || r.branch2.size() != file.dim2) {
      throw InvalidShape("embedding record " + std::to_string(r.meta.sample_id) + " has dims " +
                         std::to_string(r.branch1.size()) + "/" + std::to_string(r.branch2.size()) +
                         ", file declares " + std::to_string(file.dim1) + "/" +
                         std::to_string(file.dim2));
    }
    w.u32(r.meta.sample_id);
    w.u32(r.meta.identity);
    w.u16(r.meta.camera);
    for (float v : r.branch1) w.f32(v);
    for (float v : r.branch2) w.f32(v);
  }
  return w.bytes();
}

EmbeddingFile decode_embeddings(std::string_view bytes, const std::string& context) {
  ByteReader r(bytes, context);
  r.expect_magic("PANE");
  const auto version = r.u32();
  if (version != kEmbeddingVersion) {
    throw DataError(context + ": unsupported version " + std::to_string(version));
  }
  EmbeddingFile file;
  const auto count = r.u32();
  file.dim1 = r.u32();
  file.dim2 = r.u32();
  const std::size_t record_bytes = 10 + 4 * (std::size_t{file.dim1} + file.dim2);
  if (record_bytes * count != r.remaining()) {
    throw DataError(context + ": expected " + std::to_string(count) + " records of " +
                    std::to_string(record_bytes) + " bytes, found " +
                    std::to_string(r.remaining()) + " bytes");
  }
  file.records.resize(count);
  for (auto& rec : file.records) {
    rec.meta.sample_id = r.u32();
    rec.meta.identity = r.u32();
    rec.meta.camera = r.u16();
    rec.branch1.resize(file.dim1);
    rec.branch2.resize(file.dim2);
    for (float& v : rec.branch1) v = r.f32();
    for (float& v : rec.branch2) v = r.f32();
  }
  return file;
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingFile& file) {
  write_file_atomic(path, encode_embeddings(file));
}

EmbeddingFile load_embeddings(const std::filesystem::path& path) {
  return decode_embeddings(read_file(path), path.string());
}

}  // namespace pan
