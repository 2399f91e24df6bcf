#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pan/descriptor.hpp"

namespace pan {

/// Row-major squared Euclidean distances, queries by rows.
struct DistanceMatrix {
  std::size_t n_query = 0;
  std::size_t n_gallery = 0;
  std::vector<double> values;

  double at(std::size_t q, std::size_t g) const { return values[q * n_gallery + g]; }
  std::span<const double> row(std::size_t q) const {
    return std::span(values).subspan(q * n_gallery, n_gallery);
  }
  bool square() const { return n_query == n_gallery; }
};

// values[i][j] = sum_k (q_ik - g_jk)^2, summed in index order. Rows are split
// across `threads` workers; the result does not depend on the thread count.
DistanceMatrix pairwise_sqdist(std::span<const Descriptor> queries,
                               std::span<const Descriptor> gallery, std::size_t threads = 1);

// Square matrix over queries followed by gallery.
DistanceMatrix joint_distance(std::span<const Descriptor> queries,
                              std::span<const Descriptor> gallery, std::size_t threads = 1);

// Query rows x gallery columns of a joint matrix whose first n_query items are
// the queries.
DistanceMatrix query_gallery_block(const DistanceMatrix& joint, std::size_t n_query);

struct RankEntry {
  std::size_t gallery_index = 0;
  double distance = 0.0;
  bool relevant = false;
};

struct RankList {
  std::size_t query_index = 0;
  std::vector<RankEntry> entries;  // ascending distance, ties by gallery index
  std::size_t num_relevant = 0;
};

// With cross_camera_only, gallery items sharing identity and camera with the
// query are dropped from the list entirely.
std::vector<RankList> rank(const DistanceMatrix& dist, std::span<const SampleMeta> query_meta,
                           std::span<const SampleMeta> gallery_meta, bool cross_camera_only);

struct KReciprocalSet {
  std::size_t anchor = 0;
  std::size_t k = 0;
  std::vector<std::size_t> members;  // ascending
};

// The k nearest items to p in a square matrix, excluding p itself; ties go to
// the lower index.
std::vector<std::size_t> nearest_neighbors(const DistanceMatrix& dist, std::size_t p,
                                           std::size_t k);

// R(p,k) = { x in N(p,k) : p in N(x,k) }.
KReciprocalSet k_reciprocal(std::size_t anchor, std::size_t k, const DistanceMatrix& dist);

// R* = R united with R(q, ceil(k/2)) for every q in R whose half-k set has at
// least two thirds of its members inside R.
KReciprocalSet expand_set(const KReciprocalSet& set, std::size_t k, const DistanceMatrix& dist);

// 1 - |a & b| / |a | b| over sorted unique index lists; 1 when both are empty.
double jaccard_distance(std::span<const std::size_t> a, std::span<const std::size_t> b);

/// Precomputed neighbour orderings of a square distance matrix, for answering
/// many reciprocal-set queries.
class NeighborIndex {
 public:
  explicit NeighborIndex(const DistanceMatrix& dist);

  std::size_t size() const { return n_; }
  // Position of x in p's ordering (0 = nearest); p itself is not ranked.
  std::size_t position(std::size_t p, std::size_t x) const { return position_[p * n_ + x]; }
  std::span<const std::size_t> nearest(std::size_t p, std::size_t k) const {
    return std::span(order_).subspan(p * (n_ - 1), k);
  }
  std::vector<std::size_t> reciprocal(std::size_t p, std::size_t k) const;
  std::vector<std::size_t> expanded(std::size_t p, std::size_t k) const;

 private:
  std::size_t n_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> position_;
};

// D(q,x) + lambda * Jaccard(R*(q,k), R*(x,k)) over a square joint matrix.
DistanceMatrix rerank(const DistanceMatrix& joint, std::size_t k, double lambda = 1.0,
                      std::size_t threads = 1);

// "PAND": magic, u32 n_query, u32 n_gallery, f32 row-major values.
std::string encode_distances(const DistanceMatrix& dist);
DistanceMatrix decode_distances(std::string_view bytes, const std::string& context = "distances");
void save_distances(const std::filesystem::path& path, const DistanceMatrix& dist);
DistanceMatrix load_distances(const std::filesystem::path& path);

// Runs fn(begin, end) over [0, n) split into contiguous chunks.
template <typename Fn>
void parallel_rows(std::size_t n, std::size_t threads, Fn&& fn);

}  // namespace pan

#include <thread>

template <typename Fn>
void pan::parallel_rows(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    fn(std::size_t{0}, n);
    return;
  }
  threads = std::min(threads, n);
  std::vector<std::jthread> workers;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    workers.emplace_back([&fn, begin, end = std::min(n, begin + chunk)] { fn(begin, end); });
  }
}
