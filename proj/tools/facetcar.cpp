#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "facetcar/cli.hpp"

namespace {

using namespace facetcar;

void add_ranker_flags(CLI::App* app, RankerConfig& rc, std::string& variant) {
  app->add_option("--variant", variant, "base, hp, hp-hf, hi or hi-hf")
      ->check(CLI::IsMember({"base", "hp", "hp-hf", "hi", "hi-hf"}))
      ->capture_default_str();
  app->add_option("--q-len", rc.q_len, "query rows")->capture_default_str();
  app->add_option("--d-len", rc.d_len, "document columns")->capture_default_str();
  app->add_option("--filters", rc.filters_per_size, "filters per convolution size")
      ->capture_default_str();
  app->add_option("--filter-sizes", rc.filter_sizes, "square filter sizes")
      ->capture_default_str();
  app->add_option("--hidden", rc.hidden, "combination hidden layer widths")
      ->capture_default_str();
}

void add_bm25_flags(CLI::App* app, Bm25Params& p) {
  app->add_option("--k1", p.k1, "BM25 k1")->capture_default_str();
  app->add_option("--b", p.b, "BM25 b")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Facet-aware re-ranking for complex answer retrieval"};
  app.require_subcommand(1);

  cli::BuildIndexOptions bi;
  auto* build = app.add_subcommand("build-index", "index a JSON-lines paragraph corpus");
  build->add_option("--corpus", bi.corpus, "corpus .jsonl")->required();
  build->add_option("--out", bi.out, "index output path")->required();

  cli::HeadingStatsOptions hs;
  auto* stats = app.add_subcommand("heading-stats", "heading usage frequencies and strata");
  stats->add_option("--articles", hs.articles, "article headings .jsonl")->required();
  stats->add_option("--out", hs.out, "table output path")->required();

  cli::TrainOptions tr;
  std::string train_variant = "base";
  auto* train = app.add_subcommand("train", "train a ranker on pairwise preferences");
  train->add_option("--queries", tr.queries, "training queries .jsonl")->required();
  train->add_option("--qrels", tr.qrels, "judgments")->required();
  train->add_option("--index", tr.index, "index from build-index")->required();
  train->add_option("--embeddings", tr.embeddings, "word2vec text embeddings")->required();
  train->add_option("--stats", tr.stats, "heading table from heading-stats");
  train->add_option("--valid-queries", tr.valid_queries, "model selection queries .jsonl");
  train->add_option("--valid-qrels", tr.valid_qrels, "judgments for the selection queries");
  train->add_option("--out", tr.out_model, "checkpoint output path")->required();
  train->add_option("--trace", tr.trace, "per-iteration CSV");
  add_ranker_flags(train, tr.ranker, train_variant);
  train->add_option("--seed", tr.train.seed, "random seed")->capture_default_str();
  train->add_option("--iterations", tr.train.iterations)->capture_default_str();
  train->add_option("--pairs", tr.train.pairs_per_iteration, "pairs per iteration")
      ->capture_default_str();
  train->add_option("--batch", tr.train.batch_size)->capture_default_str();
  train->add_option("--lr", tr.train.optimizer.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--negatives", tr.train.negative_pool_size, "BM25 negative pool size")
      ->capture_default_str();
  train->add_option("--depth", tr.train.validation_depth, "validation re-ranking depth")
      ->capture_default_str();
  train->add_option("--rel-threshold", tr.train.rel_threshold)->capture_default_str();
  add_bm25_flags(train, tr.train.bm25);
  train->add_flag("--verbose", tr.verbose, "log each iteration to stderr");

  cli::RerankOptions rr;
  auto* rerank = app.add_subcommand("rerank", "re-rank BM25 candidates with a trained model");
  rerank->add_option("--model", rr.model, "checkpoint from train")->required();
  rerank->add_option("--queries", rr.queries, "queries .jsonl")->required();
  rerank->add_option("--index", rr.index, "index from build-index")->required();
  rerank->add_option("--embeddings", rr.embeddings, "word2vec text embeddings")->required();
  rerank->add_option("--stats", rr.stats, "heading table from heading-stats");
  rerank->add_option("--out", rr.out, "TREC run output path")->required();
  rerank->add_option("--depth", rr.depth, "BM25 candidates per query")->capture_default_str();
  rerank->add_option("--tag", rr.tag, "run tag")->capture_default_str();
  add_bm25_flags(rerank, rr.bm25);

  cli::EvaluateOptions ev;
  auto* evaluate = app.add_subcommand("evaluate", "MAP, R-Prec, MRR and nDCG of a run");
  evaluate->add_option("--run", ev.run, "TREC run")->required();
  evaluate->add_option("--qrels", ev.qrels, "judgments")->required();
  evaluate->add_option("--mode", ev.mode, "manual or automatic")
      ->check(CLI::IsMember({"manual", "automatic"}))
      ->capture_default_str();
  evaluate->add_option("--per-query", ev.per_query, "per-query CSV output");
  evaluate->add_option("--compare", ev.compare, "second run for a paired t-test");
  evaluate->add_option("--report", ev.report, "JSON report output");
  evaluate->add_option("--queries", ev.queries, "only evaluate these queries");
  evaluate->add_option("--rel-threshold", ev.rel_threshold)->capture_default_str();

  cli::AnalyzeOccurrenceOptions ao;
  auto* analyze = app.add_subcommand("analyze-occurrence",
                                     "heading term occurrence rates in relevant paragraphs");
  analyze->add_option("--queries", ao.queries, "queries .jsonl")->required();
  analyze->add_option("--qrels", ao.qrels, "judgments")->required();
  analyze->add_option("--corpus", ao.corpus, "corpus .jsonl")->required();
  analyze->add_option("--out", ao.out, "position,rate CSV output")->required();
  analyze->add_option("--rel-threshold", ao.rel_threshold)->capture_default_str();

  cli::GenSyntheticOptions gs;
  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic fixture set");
  gen->add_option("--out", gs.out_dir, "output directory")->required();
  gen->add_option("--seed", gs.config.seed)->capture_default_str();
  gen->add_option("--queries", gs.config.queries)->capture_default_str();
  gen->add_option("--paragraphs", gs.config.paragraphs)->capture_default_str();
  gen->add_option("--background-articles", gs.config.background_articles)->capture_default_str();
  gen->add_flag("--separable", gs.config.separable,
                "topical main headings only, always repeated in relevant paragraphs");

  CLI11_PARSE(app, argc, argv);

  if (*build) return cli::cmd_build_index(bi, std::cout, std::cerr);
  if (*stats) return cli::cmd_heading_stats(hs, std::cout, std::cerr);
  if (*train) {
    tr.ranker.variant = parse_variant(train_variant);
    return cli::cmd_train(tr, std::cout, std::cerr);
  }
  if (*rerank) return cli::cmd_rerank(rr, std::cout, std::cerr);
  if (*evaluate) return cli::cmd_evaluate(ev, std::cout, std::cerr);
  if (*analyze) return cli::cmd_analyze_occurrence(ao, std::cout, std::cerr);
  if (*gen) return cli::cmd_gen_synthetic(gs, std::cout, std::cerr);
  return cli::kInternal;
}
