#pragma once

// In-memory inverted index with BM25 scoring. Provides the candidate pool
// for re-ranking, IDF features, and negative pools for training.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "facetcar/documents.hpp"
#include "facetcar/error.hpp"
#include "facetcar/query_model.hpp"
#include "facetcar/trec_io.hpp"

namespace facetcar {

struct Posting {
  std::uint32_t doc;  // internal document number
  std::uint32_t tf;
};

class InvertedIndex {
 public:
  static constexpr int kFormatVersion = 1;

  // Documents keep their input order as internal numbering.
  static InvertedIndex build(std::span<const Document> corpus) {
    if (corpus.empty()) throw EmptyCorpus("cannot index an empty corpus");
    InvertedIndex idx;
    for (const Document& d : corpus) idx.add(d.id, tokenize(d.text));
    idx.finish();
    return idx;
  }

  std::size_t num_docs() const noexcept { return ids_.size(); }
  std::size_t vocab_size() const noexcept { return postings_.size(); }
  double avg_doc_len() const noexcept { return avg_doc_len_; }

  const std::string& doc_id(std::uint32_t n) const { return ids_.at(n); }

  std::uint32_t doc_number(const std::string& id) const {
    auto it = numbers_.find(id);
    if (it == numbers_.end()) throw UnknownDocument("unknown document '" + id + "'");
    return it->second;
  }

  bool contains(const std::string& id) const { return numbers_.count(id) > 0; }

  std::size_t doc_len(const std::string& id) const { return lengths_[doc_number(id)]; }
  std::size_t doc_len(std::uint32_t n) const { return lengths_.at(n); }

  const std::vector<std::string>& doc_tokens(const std::string& id) const {
    return tokens_[doc_number(id)];
  }

  std::size_t doc_freq(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
  }

  std::span<const Posting> postings(const std::string& term) const {
    auto it = postings_.find(term);
    if (it == postings_.end()) return {};
    return it->second;
  }

  std::size_t tf(const std::string& term, const std::string& id) const {
    const std::uint32_t n = doc_number(id);
    for (const Posting& p : postings(term)) {
      if (p.doc == n) return p.tf;
    }
    return 0;
  }

  std::size_t total_tokens() const noexcept { return total_tokens_; }

  // {"format": "facetcar-index", "format_version": 1,
  //  "docs": [{"id": ..., "tokens": "space separated tokens"}, ...]}
  // Postings are rebuilt on load.
  nlohmann::json to_json() const {
    nlohmann::json docs = nlohmann::json::array();
    for (std::size_t n = 0; n < ids_.size(); ++n) {
      std::string joined;
      for (const auto& t : tokens_[n]) {
        if (!joined.empty()) joined.push_back(' ');
        joined += t;
      }
      docs.push_back({{"id", ids_[n]}, {"tokens", std::move(joined)}});
    }
    return {{"format", "facetcar-index"},
            {"format_version", kFormatVersion},
            {"docs", std::move(docs)}};
  }

  static InvertedIndex from_json(const nlohmann::json& j) {
    try {
      if (j.at("format").get<std::string>() != "facetcar-index") {
        throw ParseError("not a facetcar index file");
      }
      const int v = j.at("format_version").get<int>();
      if (v != kFormatVersion) {
        throw ParseError("unsupported index format_version " + std::to_string(v));
      }
      InvertedIndex idx;
      for (const auto& d : j.at("docs")) {
        idx.add(d.at("id").get<std::string>(),
                tokenize(d.at("tokens").get<std::string>()));
      }
      if (idx.ids_.empty()) throw EmptyCorpus("index has no documents");
      idx.finish();
      return idx;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("index file: ") + e.what());
    }
  }

 private:
  void add(const std::string& id, std::vector<std::string> toks) {
    const auto n = static_cast<std::uint32_t>(ids_.size());
    if (!numbers_.emplace(id, n).second) {
      throw DuplicateDocument("duplicate document id '" + id + "'");
    }
    ids_.push_back(id);
    std::unordered_map<std::string, std::uint32_t> counts;
    for (const auto& t : toks) ++counts[t];
    // Deterministic posting append order: first occurrence in the document.
    for (const auto& t : toks) {
      auto it = counts.find(t);
      if (it->second == 0) continue;
      postings_[t].push_back({n, it->second});
      it->second = 0;
    }
    lengths_.push_back(static_cast<std::uint32_t>(toks.size()));
    total_tokens_ += toks.size();
    tokens_.push_back(std::move(toks));
  }

  void finish() {
    avg_doc_len_ = static_cast<double>(total_tokens_) / static_cast<double>(ids_.size());
  }

  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::uint32_t> numbers_;
  std::vector<std::uint32_t> lengths_;
  std::vector<std::vector<std::string>> tokens_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  std::size_t total_tokens_ = 0;
  double avg_doc_len_ = 0.0;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;

  void validate() const {
    if (!(k1 >= 0.0)) throw InvalidConfig("BM25 k1 must be >= 0");
    if (!(b >= 0.0 && b <= 1.0)) throw InvalidConfig("BM25 b must be in [0, 1]");
  }
};

struct ScoredDoc {
  std::string doc_id;
  double score;
};

// Always-positive IDF: ln((N - df + 0.5) / (df + 0.5) + 1).
inline double idf(const InvertedIndex& index, const std::string& term) {
  const auto n = static_cast<double>(index.num_docs());
  const auto df = static_cast<double>(index.doc_freq(term));
  return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

namespace detail {

inline double bm25_term(double idf, double tf, double len, double avg,
                        const Bm25Params& p) {
  if (tf == 0.0) return 0.0;
  return idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * len / avg));
}

}  // namespace detail

// Repeated query tokens contribute once per occurrence.
inline double bm25_score(const InvertedIndex& index, const Bm25Params& params,
                         std::span<const std::string> query_tokens,
                         const std::string& doc_id) {
  const double len = static_cast<double>(index.doc_len(doc_id));
  double score = 0.0;
  for (const auto& t : query_tokens) {
    score += detail::bm25_term(idf(index, t), static_cast<double>(index.tf(t, doc_id)),
                               len, index.avg_doc_len(), params);
  }
  return score;
}

// Orders by score descending, then doc_id ascending.
inline bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) {
  return a.score > b.score || (a.score == b.score && a.doc_id < b.doc_id);
}

inline constexpr std::size_t kAllMatches = std::numeric_limits<std::size_t>::max();

// Top-k documents matching at least one query token.
inline std::vector<ScoredDoc> search(const InvertedIndex& index, const Bm25Params& params,
                                     std::span<const std::string> query_tokens,
                                     std::size_t k) {
  params.validate();
  if (k == 0) throw InvalidConfig("search depth k must be >= 1");
  std::vector<double> acc(index.num_docs(), 0.0);
  std::vector<char> touched(index.num_docs(), 0);
  std::vector<std::uint32_t> hits;
  for (const auto& t : query_tokens) {
    const double w = idf(index, t);
    for (const Posting& p : index.postings(t)) {
      acc[p.doc] += detail::bm25_term(w, p.tf, static_cast<double>(index.doc_len(p.doc)),
                                      index.avg_doc_len(), params);
      if (!touched[p.doc]) {
        touched[p.doc] = 1;
        hits.push_back(p.doc);
      }
    }
  }
  std::vector<ScoredDoc> out;
  out.reserve(hits.size());
  for (std::uint32_t d : hits) out.push_back({index.doc_id(d), acc[d]});
  const std::size_t take = std::min(k, out.size());
  std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(take),
                    out.end(), ranks_before);
  out.resize(take);
  return out;
}

struct NegativePool {
  std::vector<std::string> docs;
  bool exhausted = false;  // fewer than pool_size non-relevant candidates
};

// Highest-ranked documents judged below rel_threshold or unjudged.
inline NegativePool negative_pool(const InvertedIndex& index, const Bm25Params& params,
                                  std::span<const std::string> query_tokens,
                                  const QueryQrels& judged, std::size_t pool_size,
                                  int rel_threshold = 1) {
  if (pool_size == 0) throw InvalidConfig("negative pool size must be >= 1");
  NegativePool pool;
  for (const ScoredDoc& sd : search(index, params, query_tokens, kAllMatches)) {
    auto it = judged.find(sd.doc_id);
    if (it != judged.end() && it->second >= rel_threshold) continue;
    pool.docs.push_back(sd.doc_id);
    if (pool.docs.size() == pool_size) break;
  }
  pool.exhausted = pool.docs.size() < pool_size;
  return pool;
}

}  // namespace facetcar
