#pragma once

// TREC interchange formats: qrels ("qid 0 doc grade") and runs
// ("qid Q0 doc rank score tag").

#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "facetcar/error.hpp"

namespace facetcar {

using QueryQrels = std::map<std::string, int>;  // doc_id -> grade

enum class JudgmentKind { Automatic, Manual };

inline int min_grade(JudgmentKind k) { return k == JudgmentKind::Manual ? -2 : 0; }
inline int max_grade(JudgmentKind k) { return k == JudgmentKind::Manual ? 3 : 1; }

class Qrels {
 public:
  explicit Qrels(JudgmentKind kind = JudgmentKind::Manual) : kind_(kind) {}

  JudgmentKind kind() const noexcept { return kind_; }

  void add(const std::string& qid, const std::string& doc, int grade) {
    if (grade < min_grade(kind_) || grade > max_grade(kind_)) {
      throw ParseError("grade " + std::to_string(grade) + " for (" + qid +
                       ", " + doc + ") outside [" +
                       std::to_string(min_grade(kind_)) + ", " +
                       std::to_string(max_grade(kind_)) + "]");
    }
    auto [it, inserted] = by_query_[qid].emplace(doc, grade);
    if (!inserted) {
      throw ParseError("duplicate judgment for (" + qid + ", " + doc + ")");
    }
  }

  // Empty map for unjudged queries.
  const QueryQrels& for_query(const std::string& qid) const {
    static const QueryQrels empty;
    auto it = by_query_.find(qid);
    return it == by_query_.end() ? empty : it->second;
  }

  bool contains(const std::string& qid) const { return by_query_.count(qid) > 0; }

  const std::map<std::string, QueryQrels>& queries() const noexcept {
    return by_query_;
  }

  std::size_t relevant_count(const std::string& qid, int threshold = 1) const {
    std::size_t n = 0;
    for (const auto& [doc, g] : for_query(qid)) n += g >= threshold;
    return n;
  }

 private:
  JudgmentKind kind_;
  std::map<std::string, QueryQrels> by_query_;
};

inline Qrels read_qrels(std::istream& in,
                        JudgmentKind kind = JudgmentKind::Manual) {
  Qrels q(kind);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream fields(line);
    std::string qid, iter, doc, grade, extra;
    if (!(fields >> qid)) continue;
    if (!(fields >> iter >> doc >> grade) || (fields >> extra)) {
      throw ParseError("qrels line needs 4 fields: qid 0 doc grade", lineno);
    }
    int g = 0;
    try {
      std::size_t used = 0;
      g = std::stoi(grade, &used);
      if (used != grade.size()) throw std::invalid_argument(grade);
    } catch (const std::exception&) {
      throw ParseError("non-integer grade '" + grade + "'", lineno);
    }
    try {
      q.add(qid, doc, g);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return q;
}

inline void write_qrels(std::ostream& out, const Qrels& qrels) {
  for (const auto& [qid, docs] : qrels.queries()) {
    for (const auto& [doc, g] : docs) out << qid << " 0 " << doc << ' ' << g << '\n';
  }
}

struct RunEntry {
  std::string qid;
  std::string doc_id;
  std::size_t rank = 0;  // 1-based
  double score = 0.0;
  std::string tag;
};

using Run = std::vector<RunEntry>;

// Checks that, per query, ranks are 1..n with no gaps and scores never
// increase with rank. Entries of one query must be contiguous.
inline void validate_run(const Run& run) {
  std::map<std::string, std::size_t> seen;
  std::string current;
  std::size_t expected = 1;
  double last = 0.0;
  for (const RunEntry& e : run) {
    if (e.qid != current) {
      if (seen.count(e.qid)) {
        throw ParseError("run entries for query '" + e.qid +
                         "' are not contiguous");
      }
      current = e.qid;
      seen[e.qid] = 0;
      expected = 1;
    } else if (e.score > last) {
      throw ParseError("scores increase with rank in query '" + e.qid + "'");
    }
    if (e.rank != expected) {
      throw ParseError("query '" + e.qid + "' expected rank " +
                       std::to_string(expected) + ", got " +
                       std::to_string(e.rank));
    }
    ++expected;
    last = e.score;
  }
}

inline std::string format_score(double s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", s);
  return buf;
}

inline void write_run(std::ostream& out, const Run& run) {
  for (const RunEntry& e : run) {
    out << e.qid << " Q0 " << e.doc_id << ' ' << e.rank << ' '
        << format_score(e.score) << ' ' << e.tag << '\n';
  }
}

inline Run read_run(std::istream& in) {
  Run run;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream fields(line);
    RunEntry e;
    std::string q0, rank, score;
    if (!(fields >> e.qid)) continue;
    if (!(fields >> q0 >> e.doc_id >> rank >> score >> e.tag)) {
      throw ParseError("run line needs 6 fields: qid Q0 doc rank score tag",
                       lineno);
    }
    try {
      e.rank = static_cast<std::size_t>(std::stoul(rank));
      e.score = std::stod(score);
    } catch (const std::exception&) {
      throw ParseError("bad rank or score", lineno);
    }
    run.push_back(std::move(e));
  }
  return run;
}

}  // namespace facetcar
