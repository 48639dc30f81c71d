#pragma once

// Convolutional interaction ranker over query-document similarity matrices,
// in four wirings:
//
//   Base    conv -> channel max -> row k-max per filter size, per-term IDF,
//           dense combination over the flattened per-term features.
//   HP      Base plus a one-hot heading position per query term.
//   HP_HF   HP plus the heading frequency stratum per query term.
//   HI      one matching stack and dense head per heading component
//           (title, intermediate, main); the fixed-width head outputs are
//           concatenated and combined.
//   HI_HF   HI with each component's frequency stratum appended to its
//           pooled features ahead of its head.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "facetcar/corpus_stats.hpp"
#include "facetcar/error.hpp"
#include "facetcar/query_model.hpp"
#include "facetcar/retrieval.hpp"
#include "facetcar/tensor.hpp"

namespace facetcar {

// ---------------------------------------------------------------------------
// Embeddings

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return rows_.size(); }

  // Stored L2-normalised. Zero vectors are dropped and behave as OOV.
  void add(const std::string& token, std::span<const double> vec) {
    if (vec.size() != dim_) {
      throw EmbeddingError("embedding for '" + token + "' has length " +
                           std::to_string(vec.size()) + ", expected " +
                           std::to_string(dim_));
    }
    double norm = 0.0;
    for (double v : vec) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > 0.0) || !std::isfinite(norm)) return;
    auto [it, inserted] = rows_.emplace(token, rows_.size());
    if (!inserted) throw EmbeddingError("duplicate embedding for '" + token + "'");
    for (double v : vec) unit_.push_back(v / norm);
  }

  bool contains(const std::string& token) const { return rows_.count(token) > 0; }

  // Row index into the unit-vector store, or -1 when out of vocabulary.
  std::ptrdiff_t row(const std::string& token) const {
    auto it = rows_.find(token);
    return it == rows_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
  }

  std::span<const double> unit(std::size_t r) const {
    return {unit_.data() + r * dim_, dim_};
  }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::size_t> rows_;
  std::vector<double> unit_;
};

// word2vec text format: header "vocab_size dim", then "token v1 ... vdim".
inline EmbeddingTable read_word2vec_text(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::size_t vocab = 0, dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream hdr(line);
    if (hdr >> vocab >> dim) break;
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      throw ParseError("embeddings header must be 'vocab_size dim'", lineno);
    }
  }
  if (dim == 0) throw ParseError("embeddings file has no usable header", lineno);
  EmbeddingTable table(dim);
  std::size_t records = 0;
  std::vector<double> vec;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    vec.clear();
    double v = 0.0;
    while (fields >> v) vec.push_back(v);
    if (!fields.eof()) throw ParseError("non-numeric embedding component", lineno);
    if (vec.size() != dim) {
      throw EmbeddingError("line " + std::to_string(lineno) + ": '" + token + "' has " +
                           std::to_string(vec.size()) + " components, expected " +
                           std::to_string(dim));
    }
    table.add(token, vec);
    ++records;
  }
  if (records != vocab) {
    throw ParseError("embeddings header declares " + std::to_string(vocab) +
                     " tokens, file has " + std::to_string(records));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Similarity matrices

struct SimilarityMatrix {
  Tensor values;               // q_len x d_len
  std::size_t query_rows = 0;  // leading rows backed by real tokens
  std::size_t doc_cols = 0;    // leading columns backed by real tokens
};

// Cosine similarity of each query/document token pair. Identical strings
// score 1; a pair with an out-of-vocabulary side scores 0 otherwise.
inline SimilarityMatrix build_similarity_matrix(std::span<const std::string> query_tokens,
                                                std::span<const std::string> doc_tokens,
                                                const EmbeddingTable& emb, std::size_t q_len,
                                                std::size_t d_len) {
  SimilarityMatrix m;
  m.values = Tensor({q_len, d_len});
  m.query_rows = std::min(q_len, query_tokens.size());
  m.doc_cols = std::min(d_len, doc_tokens.size());
  std::vector<std::ptrdiff_t> drow(m.doc_cols);
  for (std::size_t j = 0; j < m.doc_cols; ++j) drow[j] = emb.row(doc_tokens[j]);
  for (std::size_t i = 0; i < m.query_rows; ++i) {
    const std::ptrdiff_t qr = emb.row(query_tokens[i]);
    for (std::size_t j = 0; j < m.doc_cols; ++j) {
      double s = 0.0;
      if (query_tokens[i] == doc_tokens[j]) {
        s = 1.0;
      } else if (qr >= 0 && drow[j] >= 0) {
        const auto a = emb.unit(static_cast<std::size_t>(qr));
        const auto b = emb.unit(static_cast<std::size_t>(drow[j]));
        for (std::size_t t = 0; t < a.size(); ++t) s += a[t] * b[t];
        s = std::clamp(s, -1.0, 1.0);
      }
      m.values.at(i, j) = s;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Configuration

enum class Variant { Base, HP, HP_HF, HI, HI_HF };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::Base: return "base";
    case Variant::HP: return "hp";
    case Variant::HP_HF: return "hp-hf";
    case Variant::HI: return "hi";
    case Variant::HI_HF: return "hi-hf";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (Variant v : {Variant::Base, Variant::HP, Variant::HP_HF, Variant::HI, Variant::HI_HF}) {
    if (s == to_string(v)) return v;
  }
  throw InvalidConfig("unknown variant '" + std::string(s) +
                      "' (expected base, hp, hp-hf, hi or hi-hf)");
}

inline bool is_heading_independent(Variant v) {
  return v == Variant::HI || v == Variant::HI_HF;
}
inline bool uses_position(Variant v) { return v == Variant::HP || v == Variant::HP_HF; }
inline bool uses_frequency(Variant v) { return v == Variant::HP_HF || v == Variant::HI_HF; }

inline constexpr std::array<const char*, 3> kComponentNames{"title", "inter", "main"};

struct RankerConfig {
  Variant variant = Variant::Base;
  std::size_t q_len = 16;
  std::size_t d_len = 256;
  std::vector<std::size_t> filter_sizes{2, 3};
  std::size_t filters_per_size = 16;
  std::size_t k = 2;
  std::vector<std::size_t> hidden{32};
  bool include_raw_similarity = true;
  // HI only: query rows given to the title, intermediate and main branches.
  std::array<std::size_t, 3> component_q_len{6, 4, 6};
  // HI only: output width of each component's dense head.
  std::size_t head_width = 8;

  void validate() const {
    if (q_len == 0 || d_len == 0) throw InvalidConfig("q_len and d_len must be >= 1");
    if (k == 0) throw InvalidConfig("k must be >= 1");
    if (filters_per_size == 0 && !filter_sizes.empty()) {
      throw InvalidConfig("filters_per_size must be >= 1");
    }
    for (std::size_t n : filter_sizes) {
      if (n == 0) throw InvalidConfig("filter sizes must be >= 1");
    }
    if (filter_sizes.empty() && !include_raw_similarity) {
      throw InvalidConfig("no matching signal: no filters and raw similarity disabled");
    }
    for (std::size_t h : hidden) {
      if (h == 0) throw InvalidConfig("hidden layer widths must be >= 1");
    }
    if (is_heading_independent(variant)) {
      for (std::size_t c : component_q_len) {
        if (c == 0) throw InvalidConfig("component q_len budgets must be >= 1");
      }
      if (head_width == 0) throw InvalidConfig("head_width must be >= 1");
    }
  }

  // Number of pooled signal maps per branch (raw similarity + filter sizes).
  std::size_t signal_maps() const {
    return filter_sizes.size() + (include_raw_similarity ? 1 : 0);
  }

  // Per-term width before contextual features: k values per map plus IDF.
  std::size_t matching_width() const { return k * signal_maps() + 1; }

  std::size_t context_width() const {
    return (uses_position(variant) ? 3 : 0) + (variant == Variant::HP_HF ? 1 : 0);
  }

  std::size_t branch_rows(std::size_t branch) const {
    return is_heading_independent(variant) ? component_q_len.at(branch) : q_len;
  }

  std::size_t branch_count() const { return is_heading_independent(variant) ? 3 : 1; }
};

inline nlohmann::json to_json(const RankerConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"q_len", c.q_len},
          {"d_len", c.d_len},
          {"filter_sizes", c.filter_sizes},
          {"filters_per_size", c.filters_per_size},
          {"k", c.k},
          {"hidden", c.hidden},
          {"include_raw_similarity", c.include_raw_similarity},
          {"component_q_len", c.component_q_len},
          {"head_width", c.head_width}};
}

inline RankerConfig ranker_config_from_json(const nlohmann::json& j) {
  RankerConfig c;
  try {
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.q_len = j.at("q_len").get<std::size_t>();
    c.d_len = j.at("d_len").get<std::size_t>();
    c.filter_sizes = j.at("filter_sizes").get<std::vector<std::size_t>>();
    c.filters_per_size = j.at("filters_per_size").get<std::size_t>();
    c.k = j.at("k").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    c.include_raw_similarity = j.at("include_raw_similarity").get<bool>();
    c.component_q_len = j.at("component_q_len").get<std::array<std::size_t, 3>>();
    c.head_width = j.at("head_width").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("ranker config: ") + e.what());
  }
  c.validate();
  return c;
}

using ShapeList = std::vector<std::pair<std::string, std::vector<std::size_t>>>;

// Names and shapes of every parameter, in storage order. Fully determined by
// the configuration.
inline ShapeList parameter_shapes(const RankerConfig& c) {
  ShapeList out;
  const auto conv = [&](const std::string& prefix) {
    for (std::size_t n : c.filter_sizes) {
      const std::string p = prefix + "conv" + std::to_string(n);
      out.push_back({p + ".filters", {c.filters_per_size, n, n}});
      out.push_back({p + ".bias", {c.filters_per_size}});
    }
  };
  const auto stack = [&](std::size_t in) {
    for (std::size_t l = 0; l < c.hidden.size(); ++l) {
      const std::string p = "combine.dense" + std::to_string(l);
      out.push_back({p + ".W", {in, c.hidden[l]}});
      out.push_back({p + ".b", {c.hidden[l]}});
      in = c.hidden[l];
    }
    out.push_back({"combine.out.W", {in, 1}});
    out.push_back({"combine.out.b", {1}});
  };
  if (is_heading_independent(c.variant)) {
    for (std::size_t b = 0; b < 3; ++b) {
      const std::string prefix = std::string(kComponentNames[b]) + ".";
      conv(prefix);
      const std::size_t in = c.component_q_len[b] * c.matching_width() +
                             (c.variant == Variant::HI_HF ? 1 : 0);
      out.push_back({prefix + "head.W", {in, c.head_width}});
      out.push_back({prefix + "head.b", {c.head_width}});
    }
    stack(3 * c.head_width);
  } else {
    conv("");
    stack(c.q_len * (c.matching_width() + c.context_width()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model inputs

struct BranchInput {
  Tensor sim;               // rows x d_len
  std::vector<double> idf;  // rows
};

struct ScoringInput {
  std::vector<BranchInput> branches;  // 1 (flat) or 3 (title, inter, main)
  Tensor position;                    // q_len x 3; HP and HP_HF
  std::vector<double> frequency;      // per term (HP_HF) or per branch (HI_HF)
};

// ---------------------------------------------------------------------------
// Model

class RankerModel {
 public:
  static constexpr int kFormatVersion = 1;

  // Parameters are drawn from a Glorot-uniform scheme; biases start at 0.
  explicit RankerModel(RankerConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    for (auto& [name, shape] : parameter_shapes(cfg_)) {
      Tensor t(shape);
      if (shape.size() >= 2) {
        const std::size_t fan_out = shape.back();
        const std::size_t fan_in = t.size() / fan_out;
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (double& v : t.data()) v = u(rng);
      }
      add_param(name, std::move(t));
    }
  }

  const RankerConfig& config() const noexcept { return cfg_; }
  Variant variant() const noexcept { return cfg_.variant; }

  std::vector<Parameter>& params() noexcept { return params_; }
  const std::vector<Parameter>& params() const noexcept { return params_; }

  Parameter& param(const std::string& name) { return params_.at(index_of(name)); }
  const Parameter& param(const std::string& name) const { return params_.at(index_of(name)); }

  std::size_t index_of(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw InvalidConfig("no parameter named '" + name + "'");
    return it->second;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  struct MapCache {
    Tensor preact;                       // f x rows x d (conv maps only)
    Tensor activ;                        // f x rows x d, post-ReLU
    ChannelMax pooled;                   // rows x d
    KMax top;                            // rows x k
  };
  struct BranchCache {
    std::vector<MapCache> maps;          // raw similarity first when enabled
    std::vector<double> features;        // HI: head input
    Tensor head;                         // HI: head output
  };
  struct Cache {
    std::vector<BranchCache> branches;
    std::vector<double> combine_input;
    std::vector<Tensor> layers;          // hidden outputs then the scalar
  };

  void check_input(const ScoringInput& in) const {
    if (in.branches.size() != cfg_.branch_count()) {
      throw VariantError(std::string("variant ") + to_string(cfg_.variant) + " expects " +
                         std::to_string(cfg_.branch_count()) + " similarity input(s), got " +
                         std::to_string(in.branches.size()));
    }
    for (std::size_t b = 0; b < in.branches.size(); ++b) {
      const auto& br = in.branches[b];
      const std::size_t rows = cfg_.branch_rows(b);
      if (br.sim.shape() != std::vector<std::size_t>{rows, cfg_.d_len}) {
        throw ShapeError("similarity input must be " + std::to_string(rows) + " x " +
                         std::to_string(cfg_.d_len));
      }
      if (br.idf.size() != rows) throw ShapeError("idf vector length must match rows");
    }
    if (uses_position(cfg_.variant) &&
        in.position.shape() != std::vector<std::size_t>{cfg_.q_len, 3}) {
      throw MissingContext("heading position vectors (q_len x 3) required");
    }
    if (uses_frequency(cfg_.variant)) {
      const std::size_t want = is_heading_independent(cfg_.variant) ? 3 : cfg_.q_len;
      if (in.frequency.size() != want) {
        throw MissingContext("heading frequency input of length " + std::to_string(want) +
                             " required");
      }
    }
  }

  double score(const ScoringInput& in) const {
    Cache cache;
    return forward(in, cache);
  }

  double forward(const ScoringInput& in, Cache& cache) const {
    check_input(in);
    const bool hi = is_heading_independent(cfg_.variant);
    cache.branches.assign(in.branches.size(), {});
    cache.combine_input.clear();
    for (std::size_t b = 0; b < in.branches.size(); ++b) {
      BranchCache& bc = cache.branches[b];
      match_branch(b, in.branches[b], bc);
      const std::size_t rows = cfg_.branch_rows(b);
      const std::size_t ctx = hi ? 0 : cfg_.context_width();
      std::vector<double> feats;
      feats.reserve(rows * (cfg_.matching_width() + ctx) + 1);
      for (std::size_t i = 0; i < rows; ++i) {
        for (const MapCache& m : bc.maps) {
          for (std::size_t s = 0; s < cfg_.k; ++s) feats.push_back(m.top.out.at(i, s));
        }
        feats.push_back(in.branches[b].idf[i]);
        if (uses_position(cfg_.variant)) {
          for (std::size_t p = 0; p < 3; ++p) feats.push_back(in.position.at(i, p));
        }
        if (cfg_.variant == Variant::HP_HF) feats.push_back(in.frequency[i]);
      }
      if (hi) {
        if (cfg_.variant == Variant::HI_HF) feats.push_back(in.frequency[b]);
        const std::string prefix = std::string(kComponentNames[b]) + ".head.";
        bc.head = dense(feats, param(prefix + "W").value, param(prefix + "b").value,
                        Activation::Tanh);
        bc.features = std::move(feats);
        cache.combine_input.insert(cache.combine_input.end(), bc.head.values().begin(),
                                   bc.head.values().end());
      } else {
        cache.combine_input = std::move(feats);
      }
    }
    cache.layers.clear();
    std::span<const double> x = cache.combine_input;
    for (std::size_t l = 0; l < cfg_.hidden.size(); ++l) {
      const std::string p = "combine.dense" + std::to_string(l);
      cache.layers.push_back(dense(x, param(p + ".W").value, param(p + ".b").value,
                                   Activation::Tanh));
      x = cache.layers.back().data();
    }
    cache.layers.push_back(dense(x, param("combine.out.W").value, param("combine.out.b").value,
                                 Activation::Identity));
    return cache.layers.back()[0];
  }

  // Accumulates d(score)/d(param) * dscore into `grads` (aligned with params()).
  void backward(const ScoringInput& in, const Cache& cache, double dscore,
                std::vector<Tensor>& grads) const {
    if (grads.size() != params_.size()) grads = zero_gradients();
    std::vector<double> g{dscore};
    for (std::size_t l = cache.layers.size(); l-- > 0;) {
      const bool out = l == cfg_.hidden.size();
      const std::string p = out ? "combine.out" : "combine.dense" + std::to_string(l);
      std::span<const double> x =
          l == 0 ? std::span<const double>(cache.combine_input) : cache.layers[l - 1].data();
      const auto dg = dense_backward(x, param(p + ".W").value, cache.layers[l],
                                     out ? Activation::Identity : Activation::Tanh, g);
      accumulate(grads, p + ".W", dg.weights);
      accumulate(grads, p + ".b", dg.bias);
      g = dg.input;
    }

    const bool hi = is_heading_independent(cfg_.variant);
    for (std::size_t b = 0; b < cache.branches.size(); ++b) {
      const BranchCache& bc = cache.branches[b];
      std::span<const double> gfeat;
      std::vector<double> head_grad;
      if (hi) {
        const std::string prefix = std::string(kComponentNames[b]) + ".head.";
        std::span<const double> gh(g.data() + b * cfg_.head_width, cfg_.head_width);
        auto dh = dense_backward(bc.features, param(prefix + "W").value, bc.head,
                                 Activation::Tanh, gh);
        accumulate(grads, prefix + "W", dh.weights);
        accumulate(grads, prefix + "b", dh.bias);
        head_grad = std::move(dh.input);
        gfeat = head_grad;
      } else {
        gfeat = g;
      }
      backward_branch(b, in.branches[b], bc, gfeat, grads);
    }
  }

  std::vector<Tensor> zero_gradients() const {
    std::vector<Tensor> g;
    g.reserve(params_.size());
    for (const auto& p : params_) g.emplace_back(p.value.shape());
    return g;
  }

  // Smallest distance of any pooling or ReLU decision that reaches the score
  // from flipping. Finite-difference checks need this to exceed the step.
  double decision_margin(const Cache& cache) const {
    double margin = std::numeric_limits<double>::infinity();
    for (const BranchCache& bc : cache.branches) {
      for (const MapCache& m : bc.maps) {
        if (m.preact.size() == 0) continue;  // raw similarity: no parameters
        const std::size_t f = m.preact.dim(0), rows = m.preact.dim(1), d = m.preact.dim(2);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t s = 0; s < cfg_.k; ++s) {
            const std::int32_t col = m.top.source[i * cfg_.k + s];
            if (col < 0) continue;
            const auto j = static_cast<std::size_t>(col);
            const std::uint32_t win = m.pooled.argmax[i * d + j];
            double runner = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < f; ++c) {
              margin = std::min(margin, std::abs(m.preact.at(c, i, j)));
              if (c != win) runner = std::max(runner, m.activ.at(c, i, j));
            }
            if (m.activ.at(win, i, j) > 0.0 && f > 1) {
              margin = std::min(margin, m.activ.at(win, i, j) - runner);
            }
          }
          if (d > cfg_.k) {
            // gap between the last kept value and the best discarded one
            std::vector<double> row(&m.pooled.out.data()[i * d], &m.pooled.out.data()[i * d] + d);
            std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(cfg_.k),
                             row.end(), std::greater<>());
            margin = std::min(margin, m.top.out.at(i, cfg_.k - 1) - row[cfg_.k]);
          }
        }
      }
    }
    return margin;
  }

  // {"format_version": 1, "config": {...},
  //  "params": {name: {"shape": [...], "data": [...]}}}
  nlohmann::json to_json() const {
    nlohmann::json params = nlohmann::json::object();
    for (const auto& p : params_) {
      params[p.name] = {{"shape", p.value.shape()}, {"data", p.value.values()}};
    }
    return {{"format_version", kFormatVersion},
            {"config", facetcar::to_json(cfg_)},
            {"params", std::move(params)}};
  }

  static RankerModel from_json(const nlohmann::json& j) {
    try {
      const int v = j.at("format_version").get<int>();
      if (v != kFormatVersion) {
        throw ParseError("unsupported checkpoint format_version " + std::to_string(v));
      }
      RankerModel m(ranker_config_from_json(j.at("config")));
      const auto& params = j.at("params");
      if (params.size() != m.params_.size()) {
        throw ParseError("checkpoint parameter count does not match its config");
      }
      for (auto& p : m.params_) {
        const auto& e = params.at(p.name);
        Tensor t(e.at("shape").get<std::vector<std::size_t>>(),
                 e.at("data").get<std::vector<double>>());
        if (t.shape() != p.value.shape()) {
          throw ParseError("checkpoint shape mismatch for '" + p.name + "'");
        }
        p.value = std::move(t);
      }
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("checkpoint: ") + e.what());
    }
  }

 private:
  void add_param(const std::string& name, Tensor value) {
    by_name_.emplace(name, params_.size());
    params_.emplace_back(name, std::move(value));
  }

  void accumulate(std::vector<Tensor>& grads, const std::string& name, const Tensor& g) const {
    auto dst = grads[index_of(name)].data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  std::string conv_prefix(std::size_t branch, std::size_t n) const {
    std::string p = is_heading_independent(cfg_.variant)
                        ? std::string(kComponentNames[branch]) + "."
                        : std::string();
    return p + "conv" + std::to_string(n);
  }

  void match_branch(std::size_t b, const BranchInput& in, BranchCache& bc) const {
    bc.maps.clear();
    if (cfg_.include_raw_similarity) {
      MapCache raw;
      raw.pooled.out = in.sim;
      raw.top = kmax_rows(in.sim, cfg_.k);
      bc.maps.push_back(std::move(raw));
    }
    for (std::size_t n : cfg_.filter_sizes) {
      const std::string p = conv_prefix(b, n);
      MapCache m;
      m.preact = conv2d_square_linear(in.sim, param(p + ".filters").value,
                                      param(p + ".bias").value);
      m.activ = m.preact;
      for (double& v : m.activ.data()) v = v > 0.0 ? v : 0.0;
      m.pooled = channel_max(m.activ);
      m.top = kmax_rows(m.pooled.out, cfg_.k);
      bc.maps.push_back(std::move(m));
    }
  }

  void backward_branch(std::size_t b, const BranchInput& in, const BranchCache& bc,
                       std::span<const double> gfeat, std::vector<Tensor>& grads) const {
    const bool hi = is_heading_independent(cfg_.variant);
    const std::size_t rows = cfg_.branch_rows(b);
    const std::size_t width = cfg_.matching_width() + (hi ? 0 : cfg_.context_width());
    const std::size_t first_conv = cfg_.include_raw_similarity ? 1 : 0;
    for (std::size_t mi = first_conv; mi < bc.maps.size(); ++mi) {
      const MapCache& m = bc.maps[mi];
      Tensor gtop({rows, cfg_.k});
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t s = 0; s < cfg_.k; ++s) {
          gtop.at(i, s) = gfeat[i * width + mi * cfg_.k + s];
        }
      }
      const Tensor gpool = kmax_rows_backward(gtop, m.top.source, cfg_.d_len);
      const Tensor gact = channel_max_backward(gpool, m.pooled.argmax, cfg_.filters_per_size);
      const std::size_t n = cfg_.filter_sizes[mi - first_conv];
      const std::string p = conv_prefix(b, n);
      const auto cg = conv2d_square_backward(in.sim, param(p + ".filters").value, m.activ,
                                             gact, false);
      accumulate(grads, p + ".filters", cg.filters);
      accumulate(grads, p + ".bias", cg.bias);
    }
  }

  RankerConfig cfg_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> by_name_;
};

// ---------------------------------------------------------------------------
// Scoring entry points, one per wiring.

inline double score_base(const RankerModel& model, const SimilarityMatrix& sim,
                         std::span<const double> idf) {
  if (model.variant() != Variant::Base) {
    throw VariantError(std::string("score_base called on a ") + to_string(model.variant()) +
                       " model");
  }
  ScoringInput in;
  in.branches.push_back({sim.values, {idf.begin(), idf.end()}});
  return model.score(in);
}

inline double score_with_context(const RankerModel& model, const SimilarityMatrix& sim,
                                 std::span<const double> idf, const Tensor& position,
                                 std::optional<std::span<const double>> frequency) {
  if (!uses_position(model.variant())) {
    throw VariantError(std::string("score_with_context called on a ") +
                       to_string(model.variant()) + " model");
  }
  if (model.variant() == Variant::HP_HF && !frequency) {
    throw MissingContext("hp-hf model needs the heading frequency vector");
  }
  ScoringInput in;
  in.branches.push_back({sim.values, {idf.begin(), idf.end()}});
  in.position = position;
  if (model.variant() == Variant::HP_HF) in.frequency.assign(frequency->begin(), frequency->end());
  return model.score(in);
}

struct ComponentMatch {
  SimilarityMatrix sim;     // component_q_len[c] x d_len
  std::vector<double> idf;  // component_q_len[c]
};

inline double score_heading_independent(const RankerModel& model,
                                        const std::array<ComponentMatch, 3>& parts,
                                        std::optional<std::array<double, 3>> frequency) {
  if (!is_heading_independent(model.variant())) {
    throw VariantError(std::string("score_heading_independent called on a ") +
                       to_string(model.variant()) + " model");
  }
  if (model.variant() == Variant::HI_HF && !frequency) {
    throw MissingContext("hi-hf model needs per-component heading frequency strata");
  }
  ScoringInput in;
  for (const auto& p : parts) in.branches.push_back({p.sim.values, p.idf});
  if (model.variant() == Variant::HI_HF) in.frequency.assign(frequency->begin(), frequency->end());
  return model.score(in);
}

// ---------------------------------------------------------------------------
// Building model inputs from a query, a document and corpus resources.

struct QueryFeatures {
  Variant variant;
  std::vector<std::vector<std::string>> branch_tokens;  // per branch
  std::vector<std::vector<double>> branch_idf;          // padded to branch rows
  Tensor position;
  std::vector<double> frequency;
};

// Per-component tokens for the heading-independent wiring. Title and main
// keep their leading tokens; intermediates (concatenated) keep the trailing
// ones, nearest the main heading.
inline std::array<std::vector<std::string>, 3> component_tokens(
    const CarQuery& q, const std::array<std::size_t, 3>& budget) {
  std::array<std::vector<std::string>, 3> out;
  out[0] = tokenize(q.title);
  for (const auto& h : q.intermediates) {
    for (auto& t : tokenize(h)) out[1].push_back(std::move(t));
  }
  out[2] = tokenize(q.main);
  if (out[0].size() > budget[0]) out[0].resize(budget[0]);
  if (out[1].size() > budget[1]) {
    out[1].erase(out[1].begin(),
                 out[1].begin() + static_cast<std::ptrdiff_t>(out[1].size() - budget[1]));
  }
  if (out[2].size() > budget[2]) out[2].resize(budget[2]);
  return out;
}

// Intermediate stratum for HI is the highest stratum among the intermediate
// headings (0 when there are none).
inline std::array<double, 3> component_frequency(const CarQuery& q,
                                                 const HeadingFrequencyTable& table) {
  int inter = 0;
  for (const auto& h : q.intermediates) inter = std::max(inter, bucketize(h, table));
  return {static_cast<double>(bucketize(q.title, table)), static_cast<double>(inter),
          static_cast<double>(bucketize(q.main, table))};
}

inline QueryFeatures prepare_query(const CarQuery& q, const RankerConfig& cfg,
                                   const InvertedIndex& index,
                                   const HeadingFrequencyTable* table) {
  QueryFeatures f;
  f.variant = cfg.variant;
  if (uses_frequency(cfg.variant) && table == nullptr) {
    throw MissingContext(std::string(to_string(cfg.variant)) +
                         " needs a heading frequency table");
  }
  const auto idf_of = [&](const std::vector<std::string>& toks, std::size_t rows) {
    std::vector<double> v(rows, 0.0);
    for (std::size_t i = 0; i < toks.size() && i < rows; ++i) v[i] = idf(index, toks[i]);
    return v;
  };
  if (is_heading_independent(cfg.variant)) {
    auto parts = component_tokens(q, cfg.component_q_len);
    for (std::size_t c = 0; c < 3; ++c) {
      f.branch_idf.push_back(idf_of(parts[c], cfg.component_q_len[c]));
      f.branch_tokens.push_back(std::move(parts[c]));
    }
    if (cfg.variant == Variant::HI_HF) {
      const auto fr = component_frequency(q, *table);
      f.frequency.assign(fr.begin(), fr.end());
    }
  } else {
    const TokenizedQuery tq = flatten_query(q, cfg.q_len);
    f.branch_tokens.push_back(tq.texts());
    f.branch_idf.push_back(idf_of(f.branch_tokens[0], cfg.q_len));
    if (uses_position(cfg.variant)) f.position = heading_position_vectors(tq);
    if (cfg.variant == Variant::HP_HF) {
      const Tensor hf = heading_frequency_vector(q, tq, *table);
      f.frequency.assign(hf.values().begin(), hf.values().end());
    }
  }
  return f;
}

inline ScoringInput make_scoring_input(const QueryFeatures& qf, const RankerConfig& cfg,
                                       std::span<const std::string> doc_tokens,
                                       const EmbeddingTable& emb) {
  ScoringInput in;
  for (std::size_t b = 0; b < qf.branch_tokens.size(); ++b) {
    auto sim = build_similarity_matrix(qf.branch_tokens[b], doc_tokens, emb,
                                       cfg.branch_rows(b), cfg.d_len);
    in.branches.push_back({std::move(sim.values), qf.branch_idf[b]});
  }
  in.position = qf.position;
  in.frequency = qf.frequency;
  return in;
}

}  // namespace facetcar
