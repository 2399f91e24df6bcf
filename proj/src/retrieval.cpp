#include "pan/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pan/errors.hpp"
#include "pan/io_util.hpp"

namespace pan {

DistanceMatrix pairwise_sqdist(std::span<const Descriptor> queries,
                               std::span<const Descriptor> gallery, std::size_t threads) {
  const std::size_t dim = queries.empty() ? (gallery.empty() ? 0 : gallery[0].vector.size())
                                          : queries[0].vector.size();
  for (auto set : {queries, gallery}) {
    for (const auto& d : set) {
      if (d.vector.size() != dim) {
        throw InvalidShape("pairwise_sqdist: descriptor of dim " + std::to_string(d.vector.size()) +
                           " among dim " + std::to_string(dim));
      }
    }
  }
  DistanceMatrix out{queries.size(), gallery.size(),
                     std::vector<double>(queries.size() * gallery.size())};
  parallel_rows(queries.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const double* q = queries[i].vector.data();
      for (std::size_t j = 0; j < gallery.size(); ++j) {
        const double* g = gallery[j].vector.data();
        double s = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
          const double d = q[k] - g[k];
          s += d * d;
        }
        out.values[i * out.n_gallery + j] = s;
      }
    }
  });
  return out;
}

DistanceMatrix joint_distance(std::span<const Descriptor> queries,
                              std::span<const Descriptor> gallery, std::size_t threads) {
  std::vector<Descriptor> all(queries.begin(), queries.end());
  all.insert(all.end(), gallery.begin(), gallery.end());
  return pairwise_sqdist(all, all, threads);
}

DistanceMatrix query_gallery_block(const DistanceMatrix& joint, std::size_t n_query) {
  if (!joint.square() || n_query > joint.n_query) {
    throw InvalidArgument("query_gallery_block: need a square matrix with at least " +
                          std::to_string(n_query) + " rows");
  }
  DistanceMatrix out{n_query, joint.n_gallery - n_query, {}};
  out.values.reserve(out.n_query * out.n_gallery);
  for (std::size_t i = 0; i < n_query; ++i) {
    auto row = joint.row(i);
    out.values.insert(out.values.end(), row.begin() + static_cast<long>(n_query), row.end());
  }
  return out;
}

std::vector<RankList> rank(const DistanceMatrix& dist, std::span<const SampleMeta> query_meta,
                           std::span<const SampleMeta> gallery_meta, bool cross_camera_only) {
  if (query_meta.size() != dist.n_query || gallery_meta.size() != dist.n_gallery) {
    throw InvalidArgument("rank: metadata sizes " + std::to_string(query_meta.size()) + "/" +
                          std::to_string(gallery_meta.size()) + " do not match distance matrix " +
                          std::to_string(dist.n_query) + "x" + std::to_string(dist.n_gallery));
  }
  std::vector<RankList> out(dist.n_query);
  std::vector<std::size_t> order(dist.n_gallery);
  for (std::size_t q = 0; q < dist.n_query; ++q) {
    auto row = dist.row(q);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return row[a] < row[b] || (row[a] == row[b] && a < b);
    });
    RankList& list = out[q];
    list.query_index = q;
    const auto& qm = query_meta[q];
    for (std::size_t g : order) {
      const auto& gm = gallery_meta[g];
      const bool same_id = gm.identity == qm.identity;
      if (cross_camera_only && same_id && gm.camera == qm.camera) continue;
      list.entries.push_back({g, row[g], same_id});
      if (same_id) ++list.num_relevant;
    }
  }
  return out;
}

namespace {

void require_square(const DistanceMatrix& dist, const char* op) {
  if (!dist.square()) {
    throw InvalidArgument(std::string(op) + ": needs a square joint distance matrix, got " +
                          std::to_string(dist.n_query) + "x" + std::to_string(dist.n_gallery));
  }
}

void require_k(std::size_t k, std::size_t n, const char* op) {
  if (k < 1 || k >= n) {
    throw InvalidArgument(std::string(op) + ": k=" + std::to_string(k) + " outside [1, " +
                          std::to_string(n) + ")");
  }
}

// (distance, index) ordering used for every neighbour list.
inline bool closer(std::span<const double> row, std::size_t a, std::size_t b) {
  return row[a] < row[b] || (row[a] == row[b] && a < b);
}

// Position of `target` in p's neighbour ordering (self excluded).
std::size_t position_in_row(const DistanceMatrix& dist, std::size_t p, std::size_t target) {
  auto row = dist.row(p);
  std::size_t pos = 0;
  for (std::size_t y = 0; y < dist.n_gallery; ++y) {
    if (y != p && y != target && closer(row, y, target)) ++pos;
  }
  return pos;
}

std::size_t half_k(std::size_t k) { return (k + 1) / 2; }

// Union of base with every candidate set that lies mostly inside base.
std::vector<std::size_t> expand_with(const std::vector<std::size_t>& base,
                                     const std::vector<std::vector<std::size_t>>& candidates) {
  std::vector<std::size_t> out = base;
  for (const auto& cand : candidates) {
    std::size_t overlap = 0;
    for (auto x : cand) {
      if (std::binary_search(base.begin(), base.end(), x)) ++overlap;
    }
    // |cand & R| >= 2/3 |cand|, in integers
    if (3 * overlap >= 2 * cand.size()) out.insert(out.end(), cand.begin(), cand.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

std::vector<std::size_t> nearest_neighbors(const DistanceMatrix& dist, std::size_t p,
                                           std::size_t k) {
  require_square(dist, "nearest_neighbors");
  require_k(k, dist.n_query, "nearest_neighbors");
  auto row = dist.row(p);
  std::vector<std::size_t> idx;
  idx.reserve(dist.n_gallery - 1);
  for (std::size_t x = 0; x < dist.n_gallery; ++x) {
    if (x != p) idx.push_back(x);
  }
  std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return closer(row, a, b); });
  idx.resize(k);
  return idx;
}

KReciprocalSet k_reciprocal(std::size_t anchor, std::size_t k, const DistanceMatrix& dist) {
  require_square(dist, "k_reciprocal");
  require_k(k, dist.n_query, "k_reciprocal");
  if (anchor >= dist.n_query) throw InvalidArgument("k_reciprocal: anchor out of range");
  KReciprocalSet out{anchor, k, {}};
  for (std::size_t x : nearest_neighbors(dist, anchor, k)) {
    if (position_in_row(dist, x, anchor) < k) out.members.push_back(x);
  }
  std::sort(out.members.begin(), out.members.end());
  return out;
}

KReciprocalSet expand_set(const KReciprocalSet& set, std::size_t k, const DistanceMatrix& dist) {
  require_square(dist, "expand_set");
  require_k(k, dist.n_query, "expand_set");
  std::vector<std::vector<std::size_t>> candidates;
  for (std::size_t q : set.members) candidates.push_back(k_reciprocal(q, half_k(k), dist).members);
  return {set.anchor, k, expand_with(set.members, candidates)};
}

double jaccard_distance(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++inter;
      ++i;
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

NeighborIndex::NeighborIndex(const DistanceMatrix& dist) : n_(dist.n_query) {
  require_square(dist, "NeighborIndex");
  if (n_ < 2) throw InvalidArgument("NeighborIndex: need at least 2 items");
  order_.resize(n_ * (n_ - 1));
  position_.assign(n_ * n_, n_);
  std::vector<std::size_t> idx;
  for (std::size_t p = 0; p < n_; ++p) {
    auto row = dist.row(p);
    idx.clear();
    for (std::size_t x = 0; x < n_; ++x) {
      if (x != p) idx.push_back(x);
    }
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return closer(row, a, b); });
    for (std::size_t r = 0; r < idx.size(); ++r) {
      order_[p * (n_ - 1) + r] = idx[r];
      position_[p * n_ + idx[r]] = r;
    }
  }
}

std::vector<std::size_t> NeighborIndex::reciprocal(std::size_t p, std::size_t k) const {
  require_k(k, n_, "reciprocal");
  std::vector<std::size_t> out;
  for (std::size_t x : nearest(p, k)) {
    if (position(x, p) < k) out.push_back(x);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> NeighborIndex::expanded(std::size_t p, std::size_t k) const {
  const auto base = reciprocal(p, k);
  std::vector<std::vector<std::size_t>> candidates;
  for (std::size_t q : base) candidates.push_back(reciprocal(q, half_k(k)));
  return expand_with(base, candidates);
}

DistanceMatrix rerank(const DistanceMatrix& joint, std::size_t k, double lambda,
                      std::size_t threads) {
  require_square(joint, "rerank");
  require_k(k, joint.n_query, "rerank");
  if (!std::isfinite(lambda) || lambda < 0.0) throw InvalidArgument("rerank: lambda must be finite and >= 0");
  const std::size_t n = joint.n_query;
  const NeighborIndex index(joint);

  std::vector<std::vector<std::size_t>> expanded(n);
  parallel_rows(n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) expanded[p] = index.expanded(p, k);
  });
  // holders[e] lists every item whose expanded set contains e.
  std::vector<std::vector<std::size_t>> holders(n);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t e : expanded[p]) holders[e].push_back(p);
  }

  DistanceMatrix out{n, n, std::vector<double>(n * n)};
  parallel_rows(n, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> inter(n);
    for (std::size_t p = begin; p < end; ++p) {
      std::fill(inter.begin(), inter.end(), 0);
      for (std::size_t e : expanded[p]) {
        for (std::size_t x : holders[e]) ++inter[x];
      }
      for (std::size_t x = 0; x < n; ++x) {
        const std::size_t uni = expanded[p].size() + expanded[x].size() - inter[x];
        const double jac = uni == 0 ? 1.0 : 1.0 - static_cast<double>(inter[x]) / static_cast<double>(uni);
        out.values[p * n + x] = joint.values[p * n + x] + lambda * jac;
      }
    }
  });
  return out;
}

std::string encode_distances(const DistanceMatrix& dist) {
  ByteWriter w;
  w.raw("PAND");
  w.u32(static_cast<std::uint32_t>(dist.n_query));
  w.u32(static_cast<std::uint32_t>(dist.n_gallery));
  for (double v : dist.values) w.f32(static_cast<float>(v));
  return w.bytes();
}

DistanceMatrix decode_distances(std::string_view bytes, const std::string& context) {
  ByteReader r(bytes, context);
  r.expect_magic("PAND");
  DistanceMatrix d;
  d.n_query = r.u32();
  d.n_gallery = r.u32();
  if (r.remaining() != 4 * d.n_query * d.n_gallery) {
    throw DataError(context + ": expected " + std::to_string(d.n_query) + "x" +
                    std::to_string(d.n_gallery) + " float32 values, found " +
                    std::to_string(r.remaining()) + " bytes");
  }
  d.values.resize(d.n_query * d.n_gallery);
  for (double& v : d.values) v = r.f32();
  return d;
}

void save_distances(const std::filesystem::path& path, const DistanceMatrix& dist) {
  write_file_atomic(path, encode_distances(dist));
}

DistanceMatrix load_distances(const std::filesystem::path& path) {
  return decode_distances(read_file(path), path.string());
}

}  // namespace pan
