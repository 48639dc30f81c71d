#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir;

  static Result run(const std::string& args) {
    const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = std::string(FACETCAR_CLI_PATH) + " " + args + " >" + out.string() +
                            " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  static std::string p(const std::string& name) { return (dir / name).string(); }

  static std::string train_args(const std::string& variant, const std::string& model) {
    return "train --queries " + p("fx/train.queries.jsonl") + " --qrels " + p("fx/qrels.txt") +
           " --index " + p("index.json") + " --embeddings " + p("fx/embeddings.txt") +
           " --variant " + variant + " --out " + p(model) +
           " --iterations 3 --pairs 32 --batch 8 --d-len 32 --filters 3 --hidden 6";
  }

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / ("facetcar_cli_test_" + std::to_string(getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    ASSERT_EQ(run("gen-synthetic --out " + p("fx") +
                  " --queries 30 --paragraphs 350 --background-articles 40 --seed 3")
                  .code,
              0);
    ASSERT_EQ(run("build-index --corpus " + p("fx/corpus.jsonl") + " --out " + p("index.json"))
                  .code,
              0);
    ASSERT_EQ(run("heading-stats --articles " + p("fx/articles.jsonl") + " --out " +
                  p("stats.json"))
                  .code,
              0);
  }

  static void TearDownTestSuite() { fs::remove_all(dir); }
};

fs::path Cli::dir;

TEST_F(Cli, BuildIndexReportsCountsAndIsByteStable) {
  const Result r =
      run("build-index --corpus " + p("fx/corpus.jsonl") + " --out " + p("index2.json"));
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("num_docs=350"), std::string::npos) << r.out;
  EXPECT_EQ(slurp(p("index.json")), slurp(p("index2.json")));
}

TEST_F(Cli, HeadingStatsPrintsBreakpoints) {
  const Result r =
      run("heading-stats --articles " + p("fx/articles.jsonl") + " --out " + p("stats2.json"));
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("articles=46"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("breakpoints="), std::string::npos);
  EXPECT_EQ(slurp(p("stats.json")), slurp(p("stats2.json")));
}

TEST_F(Cli, TrainWritesTraceAndDeterministicCheckpoint) {
  const std::string valid = " --valid-queries " + p("fx/valid.queries.jsonl");
  Result a = run(train_args("hp-hf", "m1.json") + " --stats " + p("stats.json") + valid +
                 " --trace " + p("trace.csv"));
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("variant=hp-hf"), std::string::npos) << a.out;
  EXPECT_EQ(line_count(p("trace.csv")), 4u);
  Result b = run(train_args("hp-hf", "m2.json") + " --stats " + p("stats.json") + valid);
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(p("m1.json")), slurp(p("m2.json")));
}

TEST_F(Cli, RerankAndEvaluate) {
  ASSERT_EQ(run(train_args("hi", "hi.json")).code, 0);
  const std::string rr = "rerank --model " + p("hi.json") + " --queries " +
                         p("fx/test.queries.jsonl") + " --index " + p("index.json") +
                         " --embeddings " + p("fx/embeddings.txt") + " --depth 10 --out ";
  Result r = run(rr + p("run1.txt"));
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(run(rr + p("run2.txt")).code, 0);
  EXPECT_EQ(slurp(p("run1.txt")), slurp(p("run2.txt")));

  std::ifstream in(p("run1.txt"));
  std::map<std::string, std::size_t> per_query;
  for (std::string line; std::getline(in, line);) {
    std::istringstream f(line);
    std::string qid;
    f >> qid;
    ++per_query[qid];
  }
  EXPECT_EQ(per_query.size(), 9u);
  for (const auto& [q, n] : per_query) EXPECT_LE(n, 10u) << q;

  Result e = run("evaluate --run " + p("run1.txt") + " --qrels " + p("fx/qrels.txt") +
                 " --compare " + p("run2.txt") + " --per-query " + p("pq.csv") + " --report " +
                 p("report.json") + " --queries " + p("fx/test.queries.jsonl"));
  ASSERT_EQ(e.code, 0) << e.err;
  for (const char* m : {"MAP\t", "R-Prec\t", "MRR\t", "nDCG\t"}) {
    EXPECT_NE(e.out.find(m), std::string::npos) << m;
  }
  EXPECT_NE(e.out.find("degenerate"), std::string::npos) << e.out;
  EXPECT_EQ(line_count(p("pq.csv")), 10u);
  EXPECT_TRUE(fs::exists(p("report.json")));
}

TEST_F(Cli, PerfectRunScoresOne) {
  std::ifstream q(p("fx/qrels.txt"));
  std::ofstream run_file(p("perfect.txt"));
  std::map<std::string, std::size_t> rank;
  for (std::string line; std::getline(q, line);) {
    std::istringstream f(line);
    std::string qid, iter, doc;
    f >> qid >> iter >> doc;
    const std::size_t r = ++rank[qid];
    run_file << qid << " Q0 " << doc << ' ' << r << ' ' << 100 - static_cast<int>(r) << " p\n";
  }
  run_file.close();
  Result e = run("evaluate --run " + p("perfect.txt") + " --qrels " + p("fx/qrels.txt"));
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_EQ(e.out, "MAP\t1\nR-Prec\t1\nMRR\t1\nnDCG\t1\n");
}

TEST_F(Cli, AnalyzeOccurrenceRatesAreFractions) {
  Result r = run("analyze-occurrence --queries " + p("fx/queries.jsonl") + " --qrels " +
                 p("fx/qrels.txt") + " --corpus " + p("fx/corpus.jsonl") + " --out " +
                 p("occ.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("main\t", 0), 0u) << r.out;
  std::ifstream in(p("occ.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "position,rate");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    const double v = std::stod(line.substr(line.find(',') + 1));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    ++rows;
  }
  EXPECT_GT(rows, 30u);
}

TEST_F(Cli, MissingInputsExitTwo) {
  EXPECT_EQ(run("build-index --corpus " + p("nope.jsonl") + " --out " + p("x.json")).code, 2);
  Result r = run(train_args("hi-hf", "x.json"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--stats"), std::string::npos) << r.err;
}

TEST_F(Cli, MalformedInputsExitThreeWithLineNumber) {
  {
    std::ofstream f(p("bad_corpus.jsonl"));
    f << "{\"id\": \"a\", \"text\": \"x\"}\n{\"id\": 3}\n";
  }
  Result r = run("build-index --corpus " + p("bad_corpus.jsonl") + " --out " + p("x.json"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
  {
    std::ofstream f(p("dup_corpus.jsonl"));
    f << "{\"id\": \"a\", \"text\": \"x\"}\n{\"id\": \"a\", \"text\": \"y\"}\n";
  }
  EXPECT_EQ(run("build-index --corpus " + p("dup_corpus.jsonl") + " --out " + p("x.json")).code,
            3);
  {
    std::ofstream f(p("bad_qrels.txt"));
    f << "q1 0 d1 1\nq1 0 d2\n";
    std::ofstream g(p("tiny_run.txt"));
    g << "q1 Q0 d1 1 1 t\n";
  }
  r = run("evaluate --run " + p("tiny_run.txt") + " --qrels " + p("bad_qrels.txt"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
}

TEST_F(Cli, DegenerateInputsExitFour) {
  { std::ofstream f(p("empty.jsonl")); }
  EXPECT_EQ(run("build-index --corpus " + p("empty.jsonl") + " --out " + p("x.json")).code, 4);
  EXPECT_EQ(run("heading-stats --articles " + p("empty.jsonl") + " --out " + p("x.json")).code,
            4);
  Result r = run("train --queries " + p("empty.jsonl") + " --qrels " + p("fx/qrels.txt") +
                 " --index " + p("index.json") + " --embeddings " + p("fx/embeddings.txt") +
                 " --out " + p("x.json"));
  EXPECT_EQ(r.code, 4);
  EXPECT_EQ(run(train_args("base", "x.json") + " --lr 0").code, 4);
}

}  // namespace
