#pragma once

// TREC CAR evaluation measures (MAP, R-Prec, MRR, nDCG) and the paired
// t-test used to compare two systems query by query.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "facetcar/trec_io.hpp"

namespace facetcar {

using Ranking = std::span<const std::string>;

// All per-query measures return nullopt when the query has nothing relevant
// to find; such queries are left out of the means.

inline std::optional<double> average_precision(Ranking ranking, const QueryQrels& judged,
                                               int rel_threshold = 1) {
  std::size_t total = 0;
  for (const auto& [doc, g] : judged) total += g >= rel_threshold;
  if (total == 0) return std::nullopt;
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    auto it = judged.find(ranking[i]);
    if (it != judged.end() && it->second >= rel_threshold) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(total);
}

inline std::optional<double> r_precision(Ranking ranking, const QueryQrels& judged,
                                         int rel_threshold = 1) {
  std::size_t r = 0;
  for (const auto& [doc, g] : judged) r += g >= rel_threshold;
  if (r == 0) return std::nullopt;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(r, ranking.size()); ++i) {
    auto it = judged.find(ranking[i]);
    hits += it != judged.end() && it->second >= rel_threshold;
  }
  return static_cast<double>(hits) / static_cast<double>(r);
}

inline std::optional<double> reciprocal_rank(Ranking ranking, const QueryQrels& judged,
                                             int rel_threshold = 1) {
  bool any = false;
  for (const auto& [doc, g] : judged) any = any || g >= rel_threshold;
  if (!any) return std::nullopt;
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    auto it = judged.find(ranking[i]);
    if (it != judged.end() && it->second >= rel_threshold) {
      return 1.0 / static_cast<double>(i + 1);
    }
  }
  return 0.0;
}

// Linear gain max(grade, 0), log2(rank + 1) discount, normalised by the
// ideal ordering of every judged document.
inline std::optional<double> ndcg(Ranking ranking, const QueryQrels& judged) {
  std::vector<double> gains;
  for (const auto& [doc, g] : judged) gains.push_back(std::max(g, 0));
  std::sort(gains.begin(), gains.end(), std::greater<>());
  double ideal = 0.0;
  for (std::size_t i = 0; i < gains.size(); ++i) {
    ideal += gains[i] / std::log2(static_cast<double>(i + 2));
  }
  if (ideal <= 0.0) return std::nullopt;
  double dcg = 0.0;
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    auto it = judged.find(ranking[i]);
    if (it == judged.end() || it->second <= 0) continue;
    dcg += it->second / std::log2(static_cast<double>(i + 2));
  }
  return dcg / ideal;
}

enum class Metric { MAP, RPrec, MRR, NDCG };
inline constexpr std::array<Metric, 4> kAllMetrics{Metric::MAP, Metric::RPrec, Metric::MRR,
                                                   Metric::NDCG};

inline const char* to_string(Metric m) {
  switch (m) {
    case Metric::MAP: return "MAP";
    case Metric::RPrec: return "R-Prec";
    case Metric::MRR: return "MRR";
    case Metric::NDCG: return "nDCG";
  }
  return "?";
}

struct MetricReport {
  std::map<Metric, double> mean;
  std::map<Metric, std::map<std::string, double>> per_query;
  std::map<Metric, std::size_t> excluded;  // queries with nothing relevant
  std::size_t unknown_run_queries = 0;     // in the run but not in qrels
};

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j;
  for (Metric m : kAllMetrics) {
    j["mean"][to_string(m)] = r.mean.at(m);
    j["excluded"][to_string(m)] = r.excluded.at(m);
    j["per_query"][to_string(m)] = r.per_query.at(m);
  }
  j["unknown_run_queries"] = r.unknown_run_queries;
  return j;
}

// Per-query measures for every judged query (restricted to `only` when
// given). Queries absent from the run score 0.
inline MetricReport evaluate(const Run& run, const Qrels& qrels, JudgmentKind mode,
                             const std::set<std::string>* only = nullptr,
                             int rel_threshold = 1) {
  (void)mode;  // both judgment kinds use the same positive-grade cutoff
  std::map<std::string, std::vector<std::pair<std::size_t, std::string>>> by_query;
  MetricReport report;
  std::set<std::string> unknown;
  for (const RunEntry& e : run) {
    if (!qrels.contains(e.qid)) {
      unknown.insert(e.qid);
      continue;
    }
    by_query[e.qid].emplace_back(e.rank, e.doc_id);
  }
  report.unknown_run_queries = unknown.size();

  for (Metric m : kAllMetrics) {
    report.excluded[m] = 0;
    report.per_query[m];
  }
  for (const auto& [qid, judged] : qrels.queries()) {
    if (only && !only->count(qid)) continue;
    std::vector<std::string> ranking;
    if (auto it = by_query.find(qid); it != by_query.end()) {
      auto entries = it->second;
      std::stable_sort(entries.begin(), entries.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      for (auto& [rank, doc] : entries) ranking.push_back(doc);
    }
    const std::pair<Metric, std::optional<double>> values[] = {
        {Metric::MAP, average_precision(ranking, judged, rel_threshold)},
        {Metric::RPrec, r_precision(ranking, judged, rel_threshold)},
        {Metric::MRR, reciprocal_rank(ranking, judged, rel_threshold)},
        {Metric::NDCG, ndcg(ranking, judged)},
    };
    for (const auto& [m, v] : values) {
      if (v) {
        report.per_query[m][qid] = *v;
      } else {
        ++report.excluded[m];
      }
    }
  }
  for (Metric m : kAllMetrics) {
    const auto& pq = report.per_query[m];
    double sum = 0.0;
    for (const auto& [qid, v] : pq) sum += v;
    report.mean[m] = pq.empty() ? 0.0 : sum / static_cast<double>(pq.size());
  }
  return report;
}

struct TTest {
  std::size_t n = 0;
  double mean_difference = 0.0;
  double t = 0.0;
  std::optional<double> p;  // two-sided; absent when degenerate
  bool degenerate = false;  // zero variance of differences or n < 2
};

inline TTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw InvalidConfig("paired t-test needs equal-length samples");
  }
  TTest r;
  r.n = a.size();
  if (r.n < 2) {
    r.degenerate = true;
    return r;
  }
  const auto n = static_cast<double>(r.n);
  double mean = 0.0;
  for (std::size_t i = 0; i < r.n; ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < r.n; ++i) {
    const double dv = (a[i] - b[i]) - mean;
    ss += dv * dv;
  }
  r.mean_difference = mean;
  const double var = ss / (n - 1.0);
  if (!(var > 0.0)) {
    r.degenerate = true;
    return r;
  }
  r.t = mean / std::sqrt(var / n);
  boost::math::students_t dist(n - 1.0);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

}  // namespace facetcar
