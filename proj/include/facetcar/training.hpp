#pragma once

// Pairwise training against BM25 negatives, model selection on validation
// R-Prec, and re-ranking of BM25 candidate pools.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "facetcar/corpus_stats.hpp"
#include "facetcar/error.hpp"
#include "facetcar/metrics.hpp"
#include "facetcar/query_model.hpp"
#include "facetcar/ranker.hpp"
#include "facetcar/retrieval.hpp"
#include "facetcar/tensor.hpp"
#include "facetcar/trec_io.hpp"

namespace facetcar {

// Every heading token, untruncated; this is what BM25 sees.
inline std::vector<std::string> retrieval_tokens(const CarQuery& q) {
  std::vector<std::string> out;
  for (std::size_t c = 0; c < q.component_count(); ++c) {
    for (auto& t : tokenize(q.component(c))) out.push_back(std::move(t));
  }
  return out;
}

struct TrainConfig {
  std::size_t iterations = 80;
  std::size_t pairs_per_iteration = 512;
  std::size_t batch_size = 16;
  std::size_t negative_pool_size = 20;
  std::size_t validation_depth = 100;
  std::uint64_t seed = 1;
  int rel_threshold = 1;
  OptimizerConfig optimizer{};
  Bm25Params bm25{};

  void validate() const {
    if (iterations == 0) throw InvalidConfig("iterations must be >= 1");
    if (pairs_per_iteration == 0) throw InvalidConfig("pairs_per_iteration must be >= 1");
    if (batch_size == 0) throw InvalidConfig("batch_size must be >= 1");
    if (negative_pool_size == 0) throw InvalidConfig("negative pool size must be >= 1");
    if (validation_depth == 0) throw InvalidConfig("validation depth must be >= 1");
    if (!(optimizer.lr > 0.0)) throw InvalidConfig("learning rate must be > 0");
    bm25.validate();
  }
};

struct TrainingPair {
  std::size_t query;  // index into the sampler's query list
  std::string positive;
  std::string negative;
};

// Draws (query, positive, negative) triples: query uniformly among usable
// queries, positive uniformly among its judged-relevant indexed documents,
// negative uniformly from its BM25 negative pool.
class PairSampler {
 public:
  PairSampler(std::span<const CarQuery> queries, const Qrels& qrels,
              const InvertedIndex& index, const TrainConfig& cfg, std::uint64_t seed)
      : queries_(queries.begin(), queries.end()), rng_(seed) {
    for (std::size_t qi = 0; qi < queries_.size(); ++qi) {
      const CarQuery& q = queries_[qi];
      const QueryQrels& judged = qrels.for_query(q.qid);
      std::vector<std::string> pos;
      for (const auto& [doc, g] : judged) {
        if (g >= cfg.rel_threshold && index.contains(doc)) pos.push_back(doc);
      }
      if (pos.empty()) {
        ++skipped_no_positive_;
        continue;
      }
      const auto toks = retrieval_tokens(q);
      NegativePool pool =
          negative_pool(index, cfg.bm25, toks, judged, cfg.negative_pool_size, cfg.rel_threshold);
      if (pool.docs.empty()) {
        ++skipped_no_negative_;
        continue;
      }
      usable_.push_back({qi, std::move(pos), std::move(pool.docs)});
    }
  }

  bool empty() const noexcept { return usable_.empty(); }
  std::size_t usable_queries() const noexcept { return usable_.size(); }
  std::size_t skipped_no_positive() const noexcept { return skipped_no_positive_; }
  std::size_t skipped_no_negative() const noexcept { return skipped_no_negative_; }
  const std::vector<CarQuery>& queries() const noexcept { return queries_; }

  const std::vector<std::string>& positives(std::size_t query) const {
    return find(query).positives;
  }
  const std::vector<std::string>& negatives(std::size_t query) const {
    return find(query).negatives;
  }

  TrainingPair next() {
    if (usable_.empty()) throw InvalidConfig("no query has both positives and negatives");
    const Entry& e = usable_[pick(usable_.size())];
    return {e.query, e.positives[pick(e.positives.size())],
            e.negatives[pick(e.negatives.size())]};
  }

  std::vector<TrainingPair> sample(std::size_t n) {
    std::vector<TrainingPair> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(next());
    return out;
  }

 private:
  struct Entry {
    std::size_t query;
    std::vector<std::string> positives;
    std::vector<std::string> negatives;
  };

  std::size_t pick(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_);
  }

  const Entry& find(std::size_t query) const {
    for (const Entry& e : usable_) {
      if (e.query == query) return e;
    }
    throw InvalidConfig("query " + std::to_string(query) + " has no training pairs");
  }

  std::vector<CarQuery> queries_;
  std::vector<Entry> usable_;
  std::size_t skipped_no_positive_ = 0;
  std::size_t skipped_no_negative_ = 0;
  std::mt19937_64 rng_;
};

inline std::vector<TrainingPair> make_training_pairs(const Qrels& qrels,
                                                     const InvertedIndex& index,
                                                     std::span<const CarQuery> queries,
                                                     const TrainConfig& cfg, std::size_t count,
                                                     std::uint64_t seed) {
  PairSampler sampler(queries, qrels, index, cfg, seed);
  return sampler.sample(count);
}

// Shared read-only resources for scoring.
struct RankingResources {
  const InvertedIndex* index = nullptr;
  const EmbeddingTable* embeddings = nullptr;
  const HeadingFrequencyTable* headings = nullptr;  // required by *-hf variants
  Bm25Params bm25{};
};

// Scores the top-k BM25 candidates of each query with the model. Ties keep
// doc_id order.
inline Run rerank(const RankerModel& model, std::span<const CarQuery> queries,
                  const RankingResources& res, std::size_t k = 100,
                  const std::string& tag = "facetcar") {
  if (k == 0) throw InvalidConfig("rerank depth must be >= 1");
  Run run;
  RankerModel::Cache cache;
  for (const CarQuery& q : queries) {
    const auto candidates = search(*res.index, res.bm25, retrieval_tokens(q), k);
    const QueryFeatures qf = prepare_query(q, model.config(), *res.index, res.headings);
    std::vector<ScoredDoc> scored;
    scored.reserve(candidates.size());
    for (const ScoredDoc& c : candidates) {
      const ScoringInput in = make_scoring_input(qf, model.config(),
                                                 res.index->doc_tokens(c.doc_id), *res.embeddings);
      scored.push_back({c.doc_id, model.forward(in, cache)});
    }
    std::sort(scored.begin(), scored.end(), ranks_before);
    for (std::size_t r = 0; r < scored.size(); ++r) {
      run.push_back({q.qid, scored[r].doc_id, r + 1, scored[r].score, tag});
    }
  }
  return run;
}

struct IterationStats {
  std::size_t iteration = 0;  // 1-based
  double mean_loss = 0.0;
  double train_accuracy = 0.0;  // fraction of pairs with s_pos > s_neg
  double validation_rprec = 0.0;
};

struct TrainResult {
  RankerModel best;
  std::size_t best_iteration = 0;
  std::vector<IterationStats> trace;
};

// Picks the iteration with the highest validation score, earliest on ties.
inline std::size_t select_best_iteration(std::span<const double> validation) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < validation.size(); ++i) {
    if (validation[i] > validation[best]) best = i;
  }
  return best + 1;
}

struct ValidationSet {
  std::vector<CarQuery> queries;
  const Qrels* qrels = nullptr;
};

inline double validation_rprec(const RankerModel& model, const ValidationSet& val,
                               const RankingResources& res, std::size_t depth,
                               int rel_threshold) {
  const Run run = rerank(model, val.queries, res, depth);
  std::set<std::string> only;
  for (const auto& q : val.queries) only.insert(q.qid);
  return evaluate(run, *val.qrels, val.qrels->kind(), &only, rel_threshold)
      .mean.at(Metric::RPrec);
}

// One optimisation pass over a batch of pairs; returns (sum of losses,
// correctly ordered pairs). Gradients are averaged over the batch.
inline std::pair<double, std::size_t> train_batch(RankerModel& model, Optimizer& opt,
                                                  std::span<const TrainingPair> batch,
                                                  std::span<const QueryFeatures> features,
                                                  const RankingResources& res) {
  std::vector<Tensor> grads = model.zero_gradients();
  RankerModel::Cache pos_cache, neg_cache;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (const TrainingPair& p : batch) {
    const QueryFeatures& qf = features[p.query];
    const ScoringInput pos = make_scoring_input(qf, model.config(),
                                                res.index->doc_tokens(p.positive), *res.embeddings);
    const ScoringInput neg = make_scoring_input(qf, model.config(),
                                                res.index->doc_tokens(p.negative), *res.embeddings);
    const double sp = model.forward(pos, pos_cache);
    const double sn = model.forward(neg, neg_cache);
    const PairLoss l = pairwise_softmax_loss(sp, sn);
    if (!std::isfinite(l.loss)) {
      throw NumericalError("non-finite loss for pair (" + p.positive + ", " + p.negative +
                           "): s_pos=" + std::to_string(sp) + " s_neg=" + std::to_string(sn));
    }
    loss_sum += l.loss;
    correct += sp > sn;
    model.backward(pos, pos_cache, l.d_pos, grads);
    model.backward(neg, neg_cache, l.d_neg, grads);
  }
  const double scale = 1.0 / static_cast<double>(batch.size());
  auto& params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].grad.data();
    auto src = grads[i].data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = src[j] * scale;
  }
  opt.step(params);
  return {loss_sum, correct};
}

inline TrainResult train(RankerModel model, PairSampler& sampler, const ValidationSet& val,
                         const RankingResources& res, const TrainConfig& cfg,
                         std::ostream* log = nullptr) {
  cfg.validate();
  if (sampler.empty()) throw InvalidConfig("no usable training queries");
  std::vector<QueryFeatures> features;
  for (const CarQuery& q : sampler.queries()) {
    features.push_back(prepare_query(q, model.config(), *res.index, res.headings));
  }

  Optimizer opt(cfg.optimizer);
  TrainResult result{model, 0, {}};
  double best = -1.0;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    const auto pairs = sampler.sample(cfg.pairs_per_iteration);
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < pairs.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, pairs.size() - start);
      const auto [l, c] = train_batch(model, opt,
                                      std::span<const TrainingPair>(pairs).subspan(start, len),
                                      features, res);
      loss += l;
      correct += c;
    }
    IterationStats st;
    st.iteration = it;
    st.mean_loss = loss / static_cast<double>(pairs.size());
    st.train_accuracy = static_cast<double>(correct) / static_cast<double>(pairs.size());
    st.validation_rprec =
        val.queries.empty()
            ? 0.0
            : validation_rprec(model, val, res, cfg.validation_depth, cfg.rel_threshold);
    result.trace.push_back(st);
    // Without a validation set the latest model is kept.
    if (val.queries.empty() || st.validation_rprec > best) {
      best = st.validation_rprec;
      result.best = model;
      result.best_iteration = it;
    }
    if (log) {
      *log << "iteration " << it << " loss " << st.mean_loss << " acc " << st.train_accuracy
           << " val R-Prec " << st.validation_rprec << '\n';
    }
  }
  return result;
}

inline void write_trace_csv(std::ostream& out, std::span<const IterationStats> trace) {
  out << "iteration,loss_mean,validation_rprec,train_accuracy\n";
  for (const auto& s : trace) {
    out << s.iteration << ',' << format_score(s.mean_loss) << ','
        << format_score(s.validation_rprec) << ',' << format_score(s.train_accuracy) << '\n';
  }
}

}  // namespace facetcar
