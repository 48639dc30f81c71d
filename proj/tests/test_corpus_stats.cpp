#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "facetcar/corpus_stats.hpp"
#include "oracles.hpp"

namespace facetcar {
namespace {

TEST(NormalizeHeading, FoldsTrimsAndCollapses) {
  EXPECT_EQ(normalize_heading("Nutrition and Health"), "nutrition and health");
  EXPECT_EQ(normalize_heading("  History "), "history");
  EXPECT_EQ(normalize_heading("nutrition and health"), "nutrition and health");
  EXPECT_EQ(normalize_heading("Life \t  Cycle"), "life cycle");
}

TEST(HeadingFrequencies, SingleArticle) {
  const std::vector<ArticleHeadingsRecord> recs{{"a1", {"History"}}};
  const auto t = compute_heading_frequencies(recs);
  EXPECT_EQ(t.corpus_size, 1u);
  EXPECT_EQ(t.frq("history"), 1.0);
}

TEST(HeadingFrequencies, CountsArticlesNotOccurrences) {
  const std::vector<ArticleHeadingsRecord> four{
      {"a1", {"History", "Cheeseboard"}}, {"a2", {"history"}}, {"a3", {"HISTORY"}}, {"a4", {"Economy"}}};
  const auto t = compute_heading_frequencies(four);
  EXPECT_DOUBLE_EQ(*t.frq("history"), 0.75);
  EXPECT_DOUBLE_EQ(*t.frq("cheeseboard"), 0.25);

  const std::vector<ArticleHeadingsRecord> dup{{"a1", {"history", "History"}}, {"a2", {"Other"}}};
  EXPECT_DOUBLE_EQ(*compute_heading_frequencies(dup).frq("history"), 0.5);
}

TEST(HeadingFrequencies, Errors) {
  EXPECT_THROW(compute_heading_frequencies({}), EmptyCorpus);
  const std::vector<ArticleHeadingsRecord> dup{{"a", {"x"}}, {"a", {"y"}}};
  EXPECT_THROW(compute_heading_frequencies(dup), DuplicateDocument);
}

// 100 heading types in 100 articles: 60 with frq 0.01, 30 with 0.5, 10 with 0.9.
std::vector<ArticleHeadingsRecord> stratified_corpus() {
  std::vector<ArticleHeadingsRecord> recs(100);
  for (int a = 0; a < 100; ++a) recs[a].article_id = "a" + std::to_string(a);
  for (int h = 0; h < 60; ++h) recs[h].headings.push_back("rare " + std::to_string(h));
  for (int h = 0; h < 30; ++h) {
    for (int a = 0; a < 50; ++a) recs[a].headings.push_back("mid " + std::to_string(h));
  }
  for (int h = 0; h < 10; ++h) {
    for (int a = 0; a < 90; ++a) recs[a].headings.push_back("common " + std::to_string(h));
  }
  return recs;
}

TEST(Bucketize, NearestRankStrata) {
  const auto t = compute_heading_frequencies(stratified_corpus());
  std::vector<double> values;
  for (const auto& [h, v] : t.freqs) values.push_back(v);
  ASSERT_EQ(values.size(), 100u);
  // Oracle values: P60 = 0.01, P90 = 0.5, P99 = 0.9.
  EXPECT_DOUBLE_EQ(oracle::percentile(values, 60), 0.01);
  EXPECT_DOUBLE_EQ(oracle::percentile(values, 90), 0.5);
  EXPECT_DOUBLE_EQ(oracle::percentile(values, 99), 0.9);
  EXPECT_EQ(t.breakpoints, (std::array<double, 3>{0.01, 0.5, 0.9}));

  EXPECT_EQ(bucketize("mid 3", t), 2);
  EXPECT_EQ(bucketize("Common 0", t), 3);
  EXPECT_EQ(bucketize("rare 7", t), 1);
  EXPECT_EQ(bucketize("cheeseboard-xyz", t), 0);
}

TEST(Bucketize, MatchesOracleAndProperties) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int n_articles = 1 + static_cast<int>(rng() % 30);
    std::vector<ArticleHeadingsRecord> recs;
    std::vector<std::vector<std::string>> raw;
    for (int a = 0; a < n_articles; ++a) {
      std::vector<std::string> hs;
      const int n = static_cast<int>(rng() % 5);
      for (int i = 0; i < n; ++i) {
        std::string h = "Head " + std::to_string(rng() % 12);
        if (rng() % 3 == 0) h = "  " + h;
        hs.push_back(h);
      }
      recs.push_back({"a" + std::to_string(a), hs});
      raw.push_back(hs);
    }
    bool any = false;
    for (const auto& r : raw) any = any || !r.empty();
    if (!any) continue;
    const auto t = compute_heading_frequencies(recs);
    const auto expected = oracle::frequencies(raw);
    ASSERT_EQ(t.freqs.size(), expected.size());

    double incidences = 0.0;
    std::size_t distinct_pairs = 0;
    for (const auto& r : raw) {
      std::set<std::string> s;
      for (const auto& h : r) s.insert(oracle::fold(h));
      distinct_pairs += s.size();
    }
    for (const auto& [h, v] : expected) {
      EXPECT_DOUBLE_EQ(t.freqs.at(h), v);
      EXPECT_EQ(bucketize(h, t), oracle::bucket(expected, h));
      EXPECT_EQ(bucketize("  " + h + " ", t), bucketize(normalize_heading(h), t));
      incidences += v * static_cast<double>(t.corpus_size);
    }
    EXPECT_NEAR(incidences, static_cast<double>(distinct_pairs), 1e-9);
    for (const auto& [h1, v1] : t.freqs) {
      for (const auto& [h2, v2] : t.freqs) {
        if (v1 <= v2) {
          EXPECT_LE(bucketize(h1, t), bucketize(h2, t));
        }
      }
    }
    EXPECT_LE(t.breakpoints[0], t.breakpoints[1]);
    EXPECT_LE(t.breakpoints[1], t.breakpoints[2]);
  }
}

HeadingFrequencyTable table_with(std::map<std::string, double> freqs,
                                 std::array<double, 3> bps) {
  HeadingFrequencyTable t;
  t.corpus_size = 1000;
  t.freqs = std::move(freqs);
  t.breakpoints = bps;
  return t;
}

TEST(HeadingFrequencyVector, WorkedExample) {
  const auto t = table_with({{"ecology and behavior", 0.3}, {"life cycle", 0.2}, {"misc", 0.001}},
                            {0.001, 0.01, 0.1});
  const auto q = parse_query("q2", {"Green sea turtle", "Ecology and behavior", "Life cycle"});
  const auto tq = flatten_query(q, 16);
  const Tensor hf = heading_frequency_vector(q, tq, t);
  const double expected[8] = {0, 0, 0, 3, 3, 3, 3, 3};
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(hf[i], i < 8 ? expected[i] : 0.0) << i;
}

TEST(HeadingFrequencyVector, UnknownAndMidStrata) {
  const auto q1 = parse_query("q1", {"Cheese", "Nutrition and health"});
  const auto tq = flatten_query(q1, 16);
  const auto empty = table_with({{"other", 0.5}}, {0.5, 0.5, 0.5});
  const Tensor unknown = heading_frequency_vector(q1, tq, empty);
  for (double v : unknown.values()) EXPECT_EQ(v, 0.0);

  // Stratum 2 for the main heading: 0.05 clears b60 and b90 but not b99.
  const auto t = table_with({{"nutrition and health", 0.05}}, {0.001, 0.01, 0.1});
  EXPECT_EQ(bucketize("Nutrition and health", t), 2);
  const Tensor hf = heading_frequency_vector(q1, tq, t);
  EXPECT_EQ(std::vector<double>(hf.values().begin(), hf.values().begin() + 4),
            (std::vector<double>{0, 2, 2, 2}));
}

TEST(HeadingTableJson, RoundTripAndValidation) {
  const auto t = compute_heading_frequencies(stratified_corpus());
  const auto back = heading_table_from_json(nlohmann::json::parse(to_json(t).dump()));
  EXPECT_EQ(back.corpus_size, t.corpus_size);
  EXPECT_EQ(back.freqs, t.freqs);
  EXPECT_EQ(back.breakpoints, t.breakpoints);

  auto bad = to_json(t);
  bad["breakpoints"] = {0.5, 0.1, 0.9};
  EXPECT_THROW(heading_table_from_json(bad), ParseError);
  bad = to_json(t);
  bad["freqs"]["zero"] = 0.0;
  EXPECT_THROW(heading_table_from_json(bad), ParseError);
}

TEST(ArticleHeadingsFile, Reads) {
  std::istringstream in(R"({"article":"Cheese","headings":["History","Nutrition and health"]}
{"article":"Beef","headings":["Nutrition and health"]}
)");
  const auto recs = read_article_headings(in);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_DOUBLE_EQ(*compute_heading_frequencies(recs).frq("nutrition and health"), 1.0);
}

// --- term occurrence rates ---------------------------------------------------

TEST(TermOccurrence, FullAndZeroOccurrence) {
  const auto q = parse_query("q", {"Zebra", "Life cycle"});
  Qrels qrels;
  qrels.add("q", "p1", 1);
  qrels.add("q", "p2", 1);
  qrels.add("q", "n1", 0);
  const std::vector<Document> docs{{"p1", "the life cycle begins"},
                                   {"p2", "a cycle of life"},
                                   {"n1", "zebra zebra"}};
  const std::vector<CarQuery> qs{q};
  const auto rep = term_occurrence_rates(qs, qrels, docs);
  ASSERT_EQ(rep.samples.size(), 3u);  // zebra, cycle, life
  for (const auto& s : rep.samples) {
    if (s.position == HeadingPosition::Title) {
      EXPECT_EQ(s.rate, 0.0);
    }
    if (s.position == HeadingPosition::Main) {
      EXPECT_EQ(s.rate, 1.0);
    }
  }
  EXPECT_EQ(rep.summary(HeadingPosition::Main).count, 2u);
  EXPECT_EQ(rep.summary(HeadingPosition::Title).mean, 0.0);
}

TEST(TermOccurrence, SkipsQueriesWithoutRelevantParagraphs) {
  Qrels qrels;
  qrels.add("a", "d", 0);
  const std::vector<CarQuery> qs{parse_query("a", {"T", "M"}), parse_query("b", {"T", "M"})};
  const std::vector<Document> docs{{"d", "t m"}};
  const auto rep = term_occurrence_rates(qs, qrels, docs);
  EXPECT_EQ(rep.skipped_queries, 2u);
  EXPECT_TRUE(rep.samples.empty());
}

// Planted rates: main tokens in 80% of relevant paragraphs, title 50%,
// intermediate 20%. The report must reproduce the ordering, and its means
// must agree with a direct recount.
TEST(TermOccurrence, RecoversPlantedOrdering) {
  std::mt19937 rng(5);
  std::bernoulli_distribution main_p(0.8), title_p(0.5), inter_p(0.2);
  std::vector<CarQuery> qs;
  std::vector<Document> docs;
  Qrels qrels;
  double recount[3] = {0, 0, 0};
  int samples[3] = {0, 0, 0};
  for (int qi = 0; qi < 150; ++qi) {
    const std::string s = std::to_string(qi);
    const std::string t = "title" + s, i = "inter" + s, m = "main" + s;
    qs.push_back(parse_query("q" + s, {t, i, m}));
    int hits[3] = {0, 0, 0};
    const int n_rel = 5;
    for (int p = 0; p < n_rel; ++p) {
      std::string text = "filler words";
      if (title_p(rng)) text += " " + t, ++hits[0];
      if (inter_p(rng)) text += " " + i, ++hits[1];
      if (main_p(rng)) text += " " + m, ++hits[2];
      const std::string id = "q" + s + "p" + std::to_string(p);
      docs.push_back({id, text});
      qrels.add("q" + s, id, 1);
    }
    for (int k = 0; k < 3; ++k) recount[k] += hits[k] / static_cast<double>(n_rel), ++samples[k];
  }
  const auto rep = term_occurrence_rates(qs, qrels, docs);
  const double mt = rep.summary(HeadingPosition::Title).mean;
  const double mi = rep.summary(HeadingPosition::Intermediate).mean;
  const double mm = rep.summary(HeadingPosition::Main).mean;
  EXPECT_GT(mm, mt);
  EXPECT_GT(mt, mi);
  EXPECT_NEAR(mt, recount[0] / samples[0], 1e-12);
  EXPECT_NEAR(mi, recount[1] / samples[1], 1e-12);
  EXPECT_NEAR(mm, recount[2] / samples[2], 1e-12);
  EXPECT_NEAR(mm, 0.8, 0.05);
  EXPECT_NEAR(mt, 0.5, 0.05);
  EXPECT_NEAR(mi, 0.2, 0.05);
  std::size_t total = 0;
  for (const auto& s : rep.by_position) total += s.count;
  EXPECT_EQ(total, rep.samples.size());
  for (const auto& s : rep.samples) {
    EXPECT_GE(s.rate, 0.0);
    EXPECT_LE(s.rate, 1.0);
  }
}

}  // namespace
}  // namespace facetcar
