#pragma once

// Hierarchical CAR queries: title » intermediate headings » main heading.

#include <cctype>
#include <cstdint>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "facetcar/error.hpp"
#include "facetcar/tensor.hpp"

namespace facetcar {

enum class HeadingPosition : std::uint8_t { Title = 0, Intermediate = 1, Main = 2 };

inline const char* to_string(HeadingPosition p) {
  switch (p) {
    case HeadingPosition::Title: return "title";
    case HeadingPosition::Intermediate: return "intermediate";
    case HeadingPosition::Main: return "main";
  }
  return "?";
}

struct CarQuery {
  std::string qid;
  std::string title;
  std::vector<std::string> intermediates;
  std::string main;

  std::size_t component_count() const { return intermediates.size() + 2; }

  const std::string& component(std::size_t i) const {
    if (i == 0) return title;
    if (i <= intermediates.size()) return intermediates[i - 1];
    return main;
  }

  HeadingPosition position_of(std::size_t i) const {
    if (i == 0) return HeadingPosition::Title;
    if (i <= intermediates.size()) return HeadingPosition::Intermediate;
    return HeadingPosition::Main;
  }

  std::vector<std::string> headings() const {
    std::vector<std::string> out;
    out.reserve(component_count());
    for (std::size_t i = 0; i < component_count(); ++i) {
      out.push_back(component(i));
    }
    return out;
  }

  friend bool operator==(const CarQuery&, const CarQuery&) = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto blank = [](char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
  };
  while (!s.empty() && blank(s.front())) s.remove_prefix(1);
  while (!s.empty() && blank(s.back())) s.remove_suffix(1);
  return s;
}

// ASCII letters and digits are word characters; bytes >= 0x80 are kept as
// word characters so multi-byte UTF-8 sequences are never split.
inline bool is_word_byte(unsigned char c) {
  return std::isalnum(c) != 0 || c >= 0x80;
}

}  // namespace detail

inline CarQuery parse_query(std::string qid,
                            std::span<const std::string> components) {
  if (components.size() < 2) {
    throw MalformedQuery("query '" + qid +
                         "' needs a title and a main heading, got " +
                         std::to_string(components.size()) + " component(s)");
  }
  for (std::size_t i = 0; i < components.size(); ++i) {
    if (detail::trim(components[i]).empty()) {
      throw MalformedQuery("query '" + qid + "' has a blank component at " +
                           std::to_string(i));
    }
  }
  CarQuery q;
  q.qid = std::move(qid);
  q.title = components.front();
  q.intermediates.assign(components.begin() + 1, components.end() - 1);
  q.main = components.back();
  return q;
}

inline CarQuery parse_query(std::string qid,
                            std::initializer_list<std::string> components) {
  std::vector<std::string> v(components);
  return parse_query(std::move(qid), std::span<const std::string>(v));
}

// Case-folds and splits on every run of non-word bytes.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (detail::is_word_byte(c)) {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

struct QueryToken {
  std::string text;
  HeadingPosition position;
  std::size_t component;  // index into CarQuery::headings()

  friend bool operator==(const QueryToken&, const QueryToken&) = default;
};

struct TokenizedQuery {
  std::vector<QueryToken> tokens;
  bool truncated = false;
  std::size_t q_len = 0;

  std::vector<std::string> texts() const {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(t.text);
    return out;
  }
};

// Concatenates all components. When the result exceeds q_len, intermediate
// tokens go first (leftmost first), then title tokens (leftmost first);
// main-heading tokens are only cut when the main heading alone is longer
// than q_len, in which case its leading tokens are dropped.
inline TokenizedQuery flatten_query(const CarQuery& q, std::size_t q_len) {
  if (q_len == 0) throw InvalidConfig("flatten_query: q_len must be >= 1");

  std::vector<QueryToken> title, inter, main;
  for (std::size_t c = 0; c < q.component_count(); ++c) {
    const HeadingPosition pos = q.position_of(c);
    auto& dst = pos == HeadingPosition::Title          ? title
                : pos == HeadingPosition::Intermediate ? inter
                                                       : main;
    for (auto& tok : tokenize(q.component(c))) {
      dst.push_back({std::move(tok), pos, c});
    }
  }

  TokenizedQuery out;
  out.q_len = q_len;
  std::size_t excess = title.size() + inter.size() + main.size();
  excess = excess > q_len ? excess - q_len : 0;
  out.truncated = excess > 0;
  const auto drop_front = [&excess](std::vector<QueryToken>& v) {
    const std::size_t n = std::min(excess, v.size());
    v.erase(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n));
    excess -= n;
  };
  drop_front(inter);
  drop_front(title);
  drop_front(main);

  out.tokens.reserve(title.size() + inter.size() + main.size());
  for (auto* part : {&title, &inter, &main}) {
    for (auto& t : *part) out.tokens.push_back(std::move(t));
  }
  return out;
}

// q_len x 3 one-hot rows in (title, intermediate, main) order; padding rows
// are zero.
inline Tensor heading_position_vectors(const TokenizedQuery& tq) {
  if (tq.tokens.size() > tq.q_len) {
    throw ShapeError("heading_position_vectors: more tokens than q_len");
  }
  Tensor out({tq.q_len, 3});
  for (std::size_t i = 0; i < tq.tokens.size(); ++i) {
    out.at(i, static_cast<std::size_t>(tq.tokens[i].position)) = 1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON-lines interchange: {"qid": "...", "headings": ["title", ..., "main"]}

inline std::string serialize_query(const CarQuery& q) {
  nlohmann::json j;
  j["qid"] = q.qid;
  j["headings"] = q.headings();
  return j.dump();
}

inline CarQuery parse_query_json(std::string_view line, std::size_t lineno = 0) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON in queries file: ") + e.what(),
                     lineno);
  }
  if (!j.is_object() || !j.contains("qid") || !j["qid"].is_string() ||
      !j.contains("headings") || !j["headings"].is_array()) {
    throw ParseError("query record needs string 'qid' and array 'headings'",
                     lineno);
  }
  std::vector<std::string> headings;
  for (const auto& h : j["headings"]) {
    if (!h.is_string()) throw ParseError("heading is not a string", lineno);
    headings.push_back(h.get<std::string>());
  }
  return parse_query(j["qid"].get<std::string>(), headings);
}

inline std::vector<CarQuery> read_queries(std::istream& in) {
  std::vector<CarQuery> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    out.push_back(parse_query_json(line, lineno));
  }
  return out;
}

}  // namespace facetcar
