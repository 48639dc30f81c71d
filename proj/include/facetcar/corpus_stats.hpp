#pragma once

// Heading usage frequency over an article corpus, its percentile strata,
// and the per-position term occurrence analysis.

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "facetcar/documents.hpp"
#include "facetcar/error.hpp"
#include "facetcar/query_model.hpp"
#include "facetcar/tensor.hpp"
#include "facetcar/trec_io.hpp"

namespace facetcar {

// Lower-cases ASCII, trims, and collapses internal whitespace runs.
inline std::string normalize_heading(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
  }
  return out;
}

struct ArticleHeadingsRecord {
  std::string article_id;
  std::vector<std::string> headings;
};

// Percentiles at which heading frequencies are split into strata 1..3.
inline constexpr std::array<double, 3> kBreakpointPercentiles{60.0, 90.0, 99.0};

// Nearest-rank percentile of an ascending-sorted sample.
inline double nearest_rank_percentile(std::span<const double> sorted, double pct) {
  if (sorted.empty()) throw EmptyCorpus("percentile of an empty sample");
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

struct HeadingFrequencyTable {
  std::size_t corpus_size = 0;
  std::map<std::string, double> freqs;  // normalized heading -> frq
  std::array<double, 3> breakpoints{};

  std::optional<double> frq(std::string_view heading) const {
    auto it = freqs.find(normalize_heading(heading));
    if (it == freqs.end()) return std::nullopt;
    return it->second;
  }
};

// Single-pass fold over the article stream.
class HeadingFrequencyBuilder {
 public:
  void add(const ArticleHeadingsRecord& rec) {
    if (!articles_.insert(rec.article_id).second) {
      throw DuplicateDocument("article '" + rec.article_id + "' seen twice");
    }
    std::set<std::string> distinct;
    for (const auto& h : rec.headings) {
      std::string n = normalize_heading(h);
      if (!n.empty()) distinct.insert(std::move(n));
    }
    for (const auto& h : distinct) ++counts_[h];
  }

  HeadingFrequencyTable finish() const {
    if (articles_.empty()) throw EmptyCorpus("no articles in heading corpus");
    HeadingFrequencyTable t;
    t.corpus_size = articles_.size();
    std::vector<double> values;
    values.reserve(counts_.size());
    for (const auto& [h, c] : counts_) {
      const double v = static_cast<double>(c) / static_cast<double>(t.corpus_size);
      t.freqs.emplace(h, v);
      values.push_back(v);
    }
    std::sort(values.begin(), values.end());
    if (!values.empty()) {
      for (std::size_t i = 0; i < 3; ++i) {
        t.breakpoints[i] = nearest_rank_percentile(values, kBreakpointPercentiles[i]);
      }
    }
    return t;
  }

 private:
  std::unordered_set<std::string> articles_;
  std::map<std::string, std::size_t> counts_;
};

inline HeadingFrequencyTable compute_heading_frequencies(
    std::span<const ArticleHeadingsRecord> records) {
  HeadingFrequencyBuilder b;
  for (const auto& r : records) b.add(r);
  return b.finish();
}

// Stratum 0..3: the number of breakpoints at or below frq(h). Headings not
// in the table are treated as the rarest and land in stratum 0.
inline int bucketize(std::string_view heading, const HeadingFrequencyTable& table) {
  const auto f = table.frq(heading);
  if (!f) return 0;
  int bucket = 0;
  for (double bp : table.breakpoints) bucket += bp <= *f;
  return bucket;
}

// Per-token stratum of the whole heading each token came from; zero on
// padding.
inline Tensor heading_frequency_vector(const CarQuery& q, const TokenizedQuery& tq,
                                       const HeadingFrequencyTable& table) {
  Tensor out({tq.q_len});
  std::vector<int> per_component(q.component_count());
  for (std::size_t c = 0; c < q.component_count(); ++c) {
    per_component[c] = bucketize(q.component(c), table);
  }
  for (std::size_t i = 0; i < tq.tokens.size() && i < tq.q_len; ++i) {
    out[i] = per_component.at(tq.tokens[i].component);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: {"corpus_size": N, "breakpoints": [b60, b90, b99],
//               "freqs": {heading: frq}}

inline nlohmann::json to_json(const HeadingFrequencyTable& t) {
  nlohmann::json j;
  j["corpus_size"] = t.corpus_size;
  j["breakpoints"] = t.breakpoints;
  j["freqs"] = t.freqs;
  return j;
}

inline HeadingFrequencyTable heading_table_from_json(const nlohmann::json& j) {
  HeadingFrequencyTable t;
  try {
    t.corpus_size = j.at("corpus_size").get<std::size_t>();
    t.breakpoints = j.at("breakpoints").get<std::array<double, 3>>();
    t.freqs = j.at("freqs").get<std::map<std::string, double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("heading table: ") + e.what());
  }
  for (const auto& [h, v] : t.freqs) {
    if (!(v > 0.0 && v <= 1.0)) {
      throw ParseError("heading table: frq of '" + h + "' outside (0, 1]");
    }
  }
  if (!(t.breakpoints[0] <= t.breakpoints[1] && t.breakpoints[1] <= t.breakpoints[2])) {
    throw ParseError("heading table: breakpoints must be non-decreasing");
  }
  return t;
}

inline std::vector<ArticleHeadingsRecord> read_article_headings(std::istream& in) {
  std::vector<ArticleHeadingsRecord> out;
  detail::for_each_jsonl(in, "article headings", [&](const nlohmann::json& j, std::size_t ln) {
    if (!j.contains("article") || !j["article"].is_string() ||
        !j.contains("headings") || !j["headings"].is_array()) {
      throw ParseError("article record needs string 'article' and array 'headings'", ln);
    }
    ArticleHeadingsRecord r;
    r.article_id = j["article"].get<std::string>();
    for (const auto& h : j["headings"]) {
      if (!h.is_string()) throw ParseError("heading is not a string", ln);
      r.headings.push_back(h.get<std::string>());
    }
    out.push_back(std::move(r));
  });
  return out;
}

inline std::string serialize_article(const ArticleHeadingsRecord& r) {
  return nlohmann::json{{"article", r.article_id}, {"headings", r.headings}}.dump();
}

// ---------------------------------------------------------------------------
// Term occurrence rate: for each query, heading component and distinct token
// of that component, the fraction of the query's relevant paragraphs that
// contain the token.

struct OccurrenceRateSample {
  HeadingPosition position;
  double rate;
};

struct PositionSummary {
  std::size_t count = 0;
  double mean = 0.0;
  std::array<double, 9> deciles{};  // 10th..90th, nearest rank
};

struct OccurrenceReport {
  std::vector<OccurrenceRateSample> samples;
  std::array<PositionSummary, 3> by_position{};  // indexed by HeadingPosition
  std::size_t skipped_queries = 0;               // no relevant paragraphs

  const PositionSummary& summary(HeadingPosition p) const {
    return by_position[static_cast<std::size_t>(p)];
  }
};

inline OccurrenceReport term_occurrence_rates(std::span<const CarQuery> queries,
                                              const Qrels& qrels,
                                              std::span<const Document> paragraphs,
                                              int rel_threshold = 1) {
  std::unordered_map<std::string, const Document*> by_id;
  for (const auto& d : paragraphs) by_id.emplace(d.id, &d);

  OccurrenceReport report;
  std::array<std::vector<double>, 3> rates;
  for (const CarQuery& q : queries) {
    std::vector<std::unordered_set<std::string>> relevant;
    for (const auto& [doc, grade] : qrels.for_query(q.qid)) {
      if (grade < rel_threshold) continue;
      auto it = by_id.find(doc);
      if (it == by_id.end()) continue;
      auto toks = tokenize(it->second->text);
      relevant.emplace_back(toks.begin(), toks.end());
    }
    if (relevant.empty()) {
      ++report.skipped_queries;
      continue;
    }
    for (std::size_t c = 0; c < q.component_count(); ++c) {
      const HeadingPosition pos = q.position_of(c);
      auto toks = tokenize(q.component(c));
      std::set<std::string> distinct(toks.begin(), toks.end());
      for (const auto& t : distinct) {
        std::size_t hits = 0;
        for (const auto& para : relevant) hits += para.count(t);
        const double rate = static_cast<double>(hits) / static_cast<double>(relevant.size());
        report.samples.push_back({pos, rate});
        rates[static_cast<std::size_t>(pos)].push_back(rate);
      }
    }
  }
  for (std::size_t p = 0; p < 3; ++p) {
    auto& v = rates[p];
    auto& s = report.by_position[p];
    s.count = v.size();
    if (v.empty()) continue;
    double sum = 0.0;
    for (double r : v) sum += r;
    s.mean = sum / static_cast<double>(v.size());
    std::sort(v.begin(), v.end());
    for (std::size_t k = 0; k < 9; ++k) {
      s.deciles[k] = nearest_rank_percentile(v, 10.0 * static_cast<double>(k + 1));
    }
  }
  return report;
}

}  // namespace facetcar
