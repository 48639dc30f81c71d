#pragma once

// Subcommand bodies for the facetcar command-line tool. Each takes parsed
// options and output streams and returns a process exit code, so they can be
// exercised without spawning a process.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facetcar/corpus_stats.hpp"
#include "facetcar/documents.hpp"
#include "facetcar/error.hpp"
#include "facetcar/metrics.hpp"
#include "facetcar/query_model.hpp"
#include "facetcar/ranker.hpp"
#include "facetcar/retrieval.hpp"
#include "facetcar/synthetic.hpp"
#include "facetcar/training.hpp"
#include "facetcar/trec_io.hpp"

namespace facetcar::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kMissingInput = 2,
  kParseFailure = 3,
  kDegenerateInput = 4,
};

// Runs `body`, reporting library errors on `err` and mapping them to exit
// codes.
template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kMissingInput;
  } catch (const MissingContext& e) {
    err << "error: " << e.what() << '\n';
    return kMissingInput;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kParseFailure;
  } catch (const MalformedQuery& e) {
    err << "error: " << e.what() << '\n';
    return kParseFailure;
  } catch (const DuplicateDocument& e) {
    err << "error: " << e.what() << '\n';
    return kParseFailure;
  } catch (const EmbeddingError& e) {
    err << "error: " << e.what() << '\n';
    return kParseFailure;
  } catch (const EmptyCorpus& e) {
    err << "error: " << e.what() << '\n';
    return kDegenerateInput;
  } catch (const InvalidConfig& e) {
    err << "error: " << e.what() << '\n';
    return kDegenerateInput;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}

namespace detail {

inline std::ifstream open_input(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw IoError("missing input file: " + path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

// Reads `path` with `reader`, prefixing parse errors with the file name.
template <class Reader>
auto load(const std::string& path, Reader&& reader) {
  auto in = open_input(path);
  try {
    return reader(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline nlohmann::json load_json(const std::string& path) {
  return load(path, [&](std::istream& in) {
    try {
      return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what());
    }
  });
}

inline std::vector<CarQuery> load_queries(const std::string& path) {
  return load(path, [](std::istream& in) { return read_queries(in); });
}

inline Qrels load_qrels(const std::string& path, JudgmentKind kind = JudgmentKind::Manual) {
  return load(path, [&](std::istream& in) { return read_qrels(in, kind); });
}

inline InvertedIndex load_index(const std::string& path) {
  return InvertedIndex::from_json(load_json(path));
}

inline EmbeddingTable load_embeddings(const std::string& path) {
  return load(path, [](std::istream& in) { return read_word2vec_text(in); });
}

inline std::optional<HeadingFrequencyTable> load_stats(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return heading_table_from_json(load_json(path));
}

inline Run load_run(const std::string& path) {
  return load(path, [](std::istream& in) {
    Run r = read_run(in);
    validate_run(r);
    return r;
  });
}

inline std::string fmt(double v) { return format_score(v); }

}  // namespace detail

// ---------------------------------------------------------------------------

struct BuildIndexOptions {
  std::string corpus;
  std::string out;
};

inline int cmd_build_index(const BuildIndexOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto docs = detail::load(o.corpus, [](std::istream& in) { return read_documents(in); });
    const auto index = InvertedIndex::build(docs);
    detail::open_output(o.out) << index.to_json().dump() << '\n';
    out << "num_docs=" << index.num_docs() << " vocab_size=" << index.vocab_size()
        << " avg_doc_len=" << detail::fmt(index.avg_doc_len()) << '\n';
    return kOk;
  });
}

struct HeadingStatsOptions {
  std::string articles;
  std::string out;
};

inline int cmd_heading_stats(const HeadingStatsOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto recs =
        detail::load(o.articles, [](std::istream& in) { return read_article_headings(in); });
    const auto table = compute_heading_frequencies(recs);
    detail::open_output(o.out) << to_json(table).dump(1) << '\n';
    out << "articles=" << table.corpus_size << " headings=" << table.freqs.size()
        << " breakpoints=" << detail::fmt(table.breakpoints[0]) << ','
        << detail::fmt(table.breakpoints[1]) << ',' << detail::fmt(table.breakpoints[2]) << '\n';
    return kOk;
  });
}

struct TrainOptions {
  std::string queries;
  std::string qrels;
  std::string index;
  std::string embeddings;
  std::string stats;          // heading table; required by *-hf variants
  std::string valid_queries;  // optional: model selection set
  std::string valid_qrels;    // defaults to `qrels`
  std::string out_model;
  std::string trace;
  RankerConfig ranker;
  TrainConfig train;
  bool verbose = false;
};

inline int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    o.train.validate();
    o.ranker.validate();
    const auto queries = detail::load_queries(o.queries);
    if (queries.empty()) throw EmptyCorpus("no training queries in " + o.queries);
    const Qrels qrels = detail::load_qrels(o.qrels);
    const InvertedIndex index = detail::load_index(o.index);
    const EmbeddingTable emb = detail::load_embeddings(o.embeddings);
    const auto stats = detail::load_stats(o.stats);
    if (uses_frequency(o.ranker.variant) && !stats) {
      throw MissingContext(std::string("--stats is required for variant ") +
                           to_string(o.ranker.variant));
    }

    ValidationSet val;
    std::optional<Qrels> vq;
    if (!o.valid_queries.empty()) {
      val.queries = detail::load_queries(o.valid_queries);
      vq = o.valid_qrels.empty() ? qrels : detail::load_qrels(o.valid_qrels);
      val.qrels = &*vq;
    }
    RankingResources res{&index, &emb, stats ? &*stats : nullptr, o.train.bm25};
    PairSampler sampler(queries, qrels, index, o.train, o.train.seed);
    if (sampler.empty()) {
      throw EmptyCorpus("no training query has both relevant and non-relevant candidates");
    }
    const TrainResult r =
        train(RankerModel(o.ranker, o.train.seed), sampler, val, res, o.train, o.verbose ? &err : nullptr);
    detail::open_output(o.out_model) << r.best.to_json().dump() << '\n';
    if (!o.trace.empty()) {
      auto t = detail::open_output(o.trace);
      write_trace_csv(t, r.trace);
    }
    out << "variant=" << to_string(o.ranker.variant) << " usable_queries=" << sampler.usable_queries()
        << " skipped=" << sampler.skipped_no_positive() + sampler.skipped_no_negative()
        << " best_iteration=" << r.best_iteration
        << " validation_rprec=" << detail::fmt(r.trace[r.best_iteration - 1].validation_rprec)
        << '\n';
    return kOk;
  });
}

struct RerankOptions {
  std::string model;
  std::string queries;
  std::string index;
  std::string embeddings;
  std::string stats;
  std::string out;
  std::size_t depth = 100;
  std::string tag = "facetcar";
  Bm25Params bm25;
};

inline int cmd_rerank(const RerankOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RankerModel model = RankerModel::from_json(detail::load_json(o.model));
    const auto queries = detail::load_queries(o.queries);
    if (queries.empty()) throw EmptyCorpus("no queries in " + o.queries);
    const InvertedIndex index = detail::load_index(o.index);
    const EmbeddingTable emb = detail::load_embeddings(o.embeddings);
    const auto stats = detail::load_stats(o.stats);
    if (uses_frequency(model.variant()) && !stats) {
      throw MissingContext(std::string("--stats is required for variant ") +
                           to_string(model.variant()));
    }
    RankingResources res{&index, &emb, stats ? &*stats : nullptr, o.bm25};
    const Run run = rerank(model, queries, res, o.depth, o.tag);
    validate_run(run);
    auto f = detail::open_output(o.out);
    write_run(f, run);
    out << "queries=" << queries.size() << " entries=" << run.size() << '\n';
    return kOk;
  });
}

struct EvaluateOptions {
  std::string run;
  std::string qrels;
  std::string mode = "manual";
  std::string per_query;  // CSV path
  std::string compare;    // second run for the paired t-test
  std::string report;     // JSON path
  std::string queries;    // restrict to these queries
  int rel_threshold = 1;
};

inline int cmd_evaluate(const EvaluateOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (o.mode != "manual" && o.mode != "automatic") {
      throw InvalidConfig("--mode must be 'manual' or 'automatic'");
    }
    const JudgmentKind kind = o.mode == "manual" ? JudgmentKind::Manual : JudgmentKind::Automatic;
    const Qrels qrels = detail::load_qrels(o.qrels, kind);
    if (qrels.queries().empty()) throw EmptyCorpus("no judgments in " + o.qrels);
    std::set<std::string> only;
    if (!o.queries.empty()) {
      for (const auto& q : detail::load_queries(o.queries)) only.insert(q.qid);
    }
    const std::set<std::string>* filter = o.queries.empty() ? nullptr : &only;
    const Run run = detail::load_run(o.run);
    const MetricReport rep = evaluate(run, qrels, kind, filter, o.rel_threshold);
    if (rep.unknown_run_queries) {
      err << "warning: " << rep.unknown_run_queries << " run queries have no judgments; ignored\n";
    }
    for (Metric m : kAllMetrics) {
      out << to_string(m) << '\t' << detail::fmt(rep.mean.at(m)) << '\n';
    }
    nlohmann::json report = to_json(rep);
    if (!o.per_query.empty()) {
      std::set<std::string> qids;
      for (Metric m : kAllMetrics) {
        for (const auto& [q, v] : rep.per_query.at(m)) qids.insert(q);
      }
      auto f = detail::open_output(o.per_query);
      f << "qid";
      for (Metric m : kAllMetrics) f << ',' << to_string(m);
      f << '\n';
      for (const auto& q : qids) {
        f << q;
        for (Metric m : kAllMetrics) {
          const auto& pq = rep.per_query.at(m);
          f << ',';
          if (auto it = pq.find(q); it != pq.end()) f << detail::fmt(it->second);
        }
        f << '\n';
      }
    }
    if (!o.compare.empty()) {
      const Run other = detail::load_run(o.compare);
      const MetricReport rep2 = evaluate(other, qrels, kind, filter, o.rel_threshold);
      for (Metric m : kAllMetrics) {
        std::vector<double> a, b;
        for (const auto& [q, v] : rep.per_query.at(m)) {
          a.push_back(v);
          b.push_back(rep2.per_query.at(m).at(q));
        }
        const TTest t = paired_t_test(a, b);
        out << "compare " << to_string(m) << '\t' << detail::fmt(rep.mean.at(m)) << " vs "
            << detail::fmt(rep2.mean.at(m)) << " n=" << t.n;
        nlohmann::json jt{{"n", t.n}, {"mean_difference", t.mean_difference}};
        if (t.degenerate) {
          out << " degenerate\n";
          jt["degenerate"] = true;
        } else {
          out << " t=" << detail::fmt(t.t) << " p=" << detail::fmt(*t.p)
              << (*t.p < 0.05 ? " significant" : "") << '\n';
          jt["t"] = t.t;
          jt["p"] = *t.p;
          jt["degenerate"] = false;
        }
        report["compare"][to_string(m)] = jt;
      }
    }
    if (!o.report.empty()) detail::open_output(o.report) << report.dump(1) << '\n';
    return kOk;
  });
}

struct AnalyzeOccurrenceOptions {
  std::string queries;
  std::string qrels;
  std::string corpus;
  std::string out;
  int rel_threshold = 1;
};

inline int cmd_analyze_occurrence(const AnalyzeOccurrenceOptions& o, std::ostream& out,
                                  std::ostream& err) {
  return guarded(err, [&] {
    const auto queries = detail::load_queries(o.queries);
    if (queries.empty()) throw EmptyCorpus("no queries in " + o.queries);
    const Qrels qrels = detail::load_qrels(o.qrels);
    const auto docs = detail::load(o.corpus, [](std::istream& in) { return read_documents(in); });
    const auto rep = term_occurrence_rates(queries, qrels, docs, o.rel_threshold);
    if (rep.samples.empty()) throw EmptyCorpus("no query has a relevant paragraph");
    auto f = detail::open_output(o.out);
    f << "position,rate\n";
    for (const auto& s : rep.samples) f << to_string(s.position) << ',' << detail::fmt(s.rate) << '\n';
    for (HeadingPosition p : {HeadingPosition::Main, HeadingPosition::Title,
                              HeadingPosition::Intermediate}) {
      const auto& s = rep.summary(p);
      out << to_string(p) << "\tn=" << s.count << "\tmean=" << detail::fmt(s.mean) << '\n';
    }
    if (rep.skipped_queries) out << "skipped_queries=" << rep.skipped_queries << '\n';
    return kOk;
  });
}

struct GenSyntheticOptions {
  std::string out_dir;
  SyntheticConfig config;
};

inline int cmd_gen_synthetic(const GenSyntheticOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const SyntheticFixture fx = generate_synthetic(o.config);
    write_fixture(fx, o.out_dir);
    out << "articles=" << fx.articles.size() << " paragraphs=" << fx.corpus.size()
        << " queries=" << fx.queries.size() << " train=" << fx.splits[0].size()
        << " valid=" << fx.splits[1].size() << " test=" << fx.splits[2].size() << '\n';
    return kOk;
  });
}

}  // namespace facetcar::cli
