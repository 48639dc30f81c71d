#pragma once

// Paragraph corpus records: JSON-lines {"id": "...", "text": "..."}.

#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "facetcar/error.hpp"

namespace facetcar {

struct Document {
  std::string id;
  std::string text;
};

namespace detail {

// Calls fn(json, lineno) for each non-blank line.
template <class Fn>
void for_each_jsonl(std::istream& in, const char* what, Fn&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid JSON in ") + what + ": " + e.what(),
                       lineno);
    }
    if (!j.is_object()) throw ParseError(std::string(what) + ": expected object", lineno);
    fn(j, lineno);
  }
}

}  // namespace detail

inline std::vector<Document> read_documents(std::istream& in) {
  std::vector<Document> docs;
  detail::for_each_jsonl(in, "corpus", [&](const nlohmann::json& j, std::size_t ln) {
    if (!j.contains("id") || !j["id"].is_string() || !j.contains("text") ||
        !j["text"].is_string()) {
      throw ParseError("corpus record needs string 'id' and 'text'", ln);
    }
    docs.push_back({j["id"].get<std::string>(), j["text"].get<std::string>()});
  });
  return docs;
}

inline std::string serialize_document(const Document& d) {
  return nlohmann::json{{"id", d.id}, {"text", d.text}}.dump();
}

}  // namespace facetcar
