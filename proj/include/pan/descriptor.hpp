#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace pan {

struct SampleMeta {
  std::uint32_t sample_id = 0;
  std::uint32_t identity = 0;
  std::uint16_t camera = 0;

  bool operator==(const SampleMeta&) const = default;
};

struct Descriptor {
  std::vector<double> vector;
  SampleMeta meta;
};

inline constexpr double kNormEpsilon = 1e-12;

// v / ||v||_2, or v unchanged when ||v||_2 <= kNormEpsilon.
std::vector<double> l2_normalize(std::span<const double> v);

// concat(alpha * l2_normalize(f1), (1 - alpha) * l2_normalize(f2)).
Descriptor fuse(std::span<const double> f1, std::span<const double> f2, double alpha,
                SampleMeta meta = {});

// Per-branch vectors as produced by the network, kept separate so the fusion
// weight can be varied after inference.
struct BranchRecord {
  SampleMeta meta;
  std::vector<float> branch1;
  std::vector<float> branch2;
};

struct EmbeddingFile {
  std::uint32_t dim1 = 0;
  std::uint32_t dim2 = 0;
  std::vector<BranchRecord> records;

  std::vector<Descriptor> fused(double alpha) const;
  std::vector<SampleMeta> metas() const;
};

// "PANE" layout: magic, u32 version, u32 count, u32 dim1, u32 dim2, then per
// record u32 sample_id, u32 identity, u16 camera, f32 branch-1, f32 branch-2.
inline constexpr std::uint32_t kEmbeddingVersion = 1;

std::string encode_embeddings(const EmbeddingFile& file);
EmbeddingFile decode_embeddings(std::string_view bytes, const std::string& context = "embeddings");
void save_embeddings(const std::filesystem::path& path, const EmbeddingFile& file);
EmbeddingFile load_embeddings(const std::filesystem::path& path);

}  // namespace pan
