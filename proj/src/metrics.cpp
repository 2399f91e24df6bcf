#include "pan/metrics.hpp"

#include <sstream>

#include "pan/errors.hpp"

namespace pan {

std::optional<double> average_precision(const RankList& list) {
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < list.entries.size(); ++r) {
    if (!list.entries[r].relevant) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

double CmcCurve::at(std::size_t i) const {
  if (accuracy.empty() || i == 0) return 0.0;
  return accuracy[std::min(i, accuracy.size()) - 1];
}

CmcCurve cmc(std::span<const RankList> lists) {
  CmcCurve curve;
  std::size_t longest = 0;
  for (const auto& l : lists) longest = std::max(longest, l.entries.size());
  std::vector<std::size_t> first_hit_count(longest, 0);
  for (const auto& l : lists) {
    for (std::size_t r = 0; r < l.entries.size(); ++r) {
      if (l.entries[r].relevant) {
        ++first_hit_count[r];
        ++curve.num_queries;
        break;
      }
    }
  }
  if (curve.num_queries == 0) return curve;
  curve.accuracy.resize(longest);
  std::size_t cumulative = 0;
  for (std::size_t r = 0; r < longest; ++r) {
    cumulative += first_hit_count[r];
    curve.accuracy[r] = static_cast<double>(cumulative) / static_cast<double>(curve.num_queries);
  }
  return curve;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json ranks = nlohmann::json::object();
  for (const auto& [i, acc] : rank_accuracy) ranks[std::to_string(i)] = acc;
  nlohmann::json aps = nlohmann::json::array();
  for (const auto& q : per_query) aps.push_back({{"query", q.query_index}, {"ap", q.ap}});
  return {{"rank_accuracy", ranks},
          {"mAP", mean_ap},
          {"num_valid_queries", num_valid_queries},
          {"per_query_ap", aps}};
}

std::string EvalReport::cmc_csv(std::size_t max_rank) const {
  std::ostringstream out;
  out.precision(17);
  out << "rank,accuracy\n";
  for (std::size_t i = 1; i <= max_rank; ++i) out << i << "," << curve.at(i) << "\n";
  return out.str();
}

EvalReport evaluate(std::span<const RankList> lists, const std::vector<int>& ranks) {
  EvalReport report;
  double sum = 0.0;
  for (const auto& l : lists) {
    if (auto ap = average_precision(l)) {
      report.per_query.push_back({l.query_index, *ap});
      sum += *ap;
    }
  }
  report.num_valid_queries = report.per_query.size();
  if (report.num_valid_queries == 0) {
    throw EmptyProtocol("evaluation has no query with a valid gallery match");
  }
  report.mean_ap = sum / static_cast<double>(report.num_valid_queries);
  report.curve = cmc(lists);
  for (int i : ranks) {
    if (i < 1) throw InvalidArgument("rank cut-offs must be >= 1");
    report.rank_accuracy[i] = report.curve.at(static_cast<std::size_t>(i));
  }
  return report;
}

EvalReport evaluate(const DistanceMatrix& dist, std::span<const SampleMeta> query_meta,
                    std::span<const SampleMeta> gallery_meta, bool cross_camera_only,
                    const std::vector<int>& ranks) {
  const auto lists = rank(dist, query_meta, gallery_meta, cross_camera_only);
  return evaluate(lists, ranks);
}

}  // namespace pan
