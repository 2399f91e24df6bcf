#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pan/retrieval.hpp"

namespace pan {

// Mean over relevant positions r of precision@r. nullopt when the list holds
// no relevant item (the query is excluded from evaluation).
std::optional<double> average_precision(const RankList& list);

struct CmcCurve {
  // accuracy[i-1] = fraction of valid queries whose first relevant item sits
  // at position <= i.
  std::vector<double> accuracy;
  std::size_t num_queries = 0;

  // Rank-i accuracy; positions past the longest list repeat the last value.
  double at(std::size_t i) const;
};

// Lists without relevant items are skipped.
CmcCurve cmc(std::span<const RankList> lists);

struct QueryAp {
  std::size_t query_index = 0;
  double ap = 0.0;
};

struct EvalReport {
  std::map<int, double> rank_accuracy;
  double mean_ap = 0.0;
  std::vector<QueryAp> per_query;
  std::size_t num_valid_queries = 0;
  CmcCurve curve;

  nlohmann::json to_json() const;
  // "rank,accuracy" rows for ranks 1..max_rank.
  std::string cmc_csv(std::size_t max_rank = 50) const;
};

inline const std::vector<int> kDefaultRanks{1, 5, 10, 20};

// Throws EmptyProtocol when no list has a relevant item.
EvalReport evaluate(std::span<const RankList> lists, const std::vector<int>& ranks = kDefaultRanks);

EvalReport evaluate(const DistanceMatrix& dist, std::span<const SampleMeta> query_meta,
                    std::span<const SampleMeta> gallery_meta, bool cross_camera_only = true,
                    const std::vector<int>& ranks = kDefaultRanks);

}  // namespace pan
