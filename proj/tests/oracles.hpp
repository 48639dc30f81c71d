#pragma once

// Brute-force reference implementations used by the tests. They are written
// from the definitions, deliberately not sharing code paths with the library.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace facetcar::oracle {

inline std::string fold(const std::string& s) {
  std::string out;
  std::string word;
  std::vector<std::string> words;
  for (char ch : s) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!word.empty()) words.push_back(word);
      word.clear();
    } else {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!word.empty()) words.push_back(word);
  for (std::size_t i = 0; i < words.size(); ++i) out += (i ? " " : "") + words[i];
  return out;
}

// frq(h) = #articles containing h / #articles, by scanning every article for
// every heading.
inline std::map<std::string, double> frequencies(
    const std::vector<std::vector<std::string>>& articles) {
  std::set<std::string> all;
  for (const auto& a : articles) {
    for (const auto& h : a) all.insert(fold(h));
  }
  std::map<std::string, double> out;
  for (const auto& h : all) {
    if (h.empty()) continue;
    int n = 0;
    for (const auto& a : articles) {
      bool has = false;
      for (const auto& x : a) has = has || fold(x) == h;
      n += has;
    }
    out[h] = static_cast<double>(n) / static_cast<double>(articles.size());
  }
  return out;
}

// Nearest-rank percentile: the smallest sample value v such that at least
// pct% of the sample is <= v.
inline double percentile(const std::vector<double>& sample, double pct) {
  std::vector<double> candidates(sample);
  std::sort(candidates.begin(), candidates.end());
  for (double v : candidates) {
    std::size_t le = 0;
    for (double x : sample) le += x <= v;
    if (100.0 * static_cast<double>(le) >= pct * static_cast<double>(sample.size())) return v;
  }
  return candidates.back();
}

inline int bucket(const std::map<std::string, double>& freqs, const std::string& heading) {
  auto it = freqs.find(fold(heading));
  if (it == freqs.end()) return 0;
  std::vector<double> values;
  for (const auto& [h, v] : freqs) values.push_back(v);
  int b = 0;
  for (double p : {60.0, 90.0, 99.0}) b += percentile(values, p) <= it->second;
  return b;
}

// --- ranking measures -------------------------------------------------------

using Grades = std::map<std::string, int>;

inline bool relevant(const Grades& g, const std::string& d) {
  auto it = g.find(d);
  return it != g.end() && it->second >= 1;
}

inline double precision_at(const std::vector<std::string>& r, const Grades& g, std::size_t k) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k && i < r.size(); ++i) hits += relevant(g, r[i]);
  return static_cast<double>(hits) / static_cast<double>(k);
}

inline double average_precision(const std::vector<std::string>& r, const Grades& g) {
  double sum = 0.0;
  std::size_t rel = 0;
  for (const auto& [d, grade] : g) {
    if (grade < 1) continue;
    ++rel;
    auto pos = std::find(r.begin(), r.end(), d);
    if (pos != r.end()) sum += precision_at(r, g, static_cast<std::size_t>(pos - r.begin()) + 1);
  }
  return sum / static_cast<double>(rel);
}

inline double r_precision(const std::vector<std::string>& r, const Grades& g) {
  std::size_t rel = 0;
  for (const auto& [d, grade] : g) rel += grade >= 1;
  return precision_at(r, g, rel);
}

inline double reciprocal_rank(const std::vector<std::string>& r, const Grades& g) {
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (relevant(g, r[i])) return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

inline double dcg(const std::vector<std::string>& r, const Grades& g) {
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    auto it = g.find(r[i]);
    const int grade = it == g.end() ? 0 : std::max(it->second, 0);
    s += grade / std::log2(static_cast<double>(i) + 2.0);
  }
  return s;
}

// Ideal DCG by trying every ordering of the judged documents.
inline double ndcg(const std::vector<std::string>& r, const Grades& g) {
  std::vector<std::string> judged;
  for (const auto& [d, grade] : g) judged.push_back(d);
  std::sort(judged.begin(), judged.end());
  double best = 0.0;
  do {
    best = std::max(best, dcg(judged, g));
  } while (std::next_permutation(judged.begin(), judged.end()));
  return dcg(r, g) / best;
}

}  // namespace facetcar::oracle
