#pragma once

// Desk-scale fixture generator. Articles are built from sections whose main
// headings are either topical (unique to the article, usually repeated
// verbatim in relevant paragraphs) or structural (recurring across many
// articles, rarely repeated verbatim; relevant paragraphs use related words
// instead, while decoy paragraphs repeat the heading without being relevant).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facetcar/corpus_stats.hpp"
#include "facetcar/documents.hpp"
#include "facetcar/error.hpp"
#include "facetcar/query_model.hpp"
#include "facetcar/trec_io.hpp"

namespace facetcar {

struct SyntheticConfig {
  std::uint64_t seed = 1;
  std::size_t queries = 200;
  std::size_t paragraphs = 2000;
  std::size_t queries_per_article = 5;
  std::size_t relevant_per_query = 5;
  std::size_t background_articles = 360;
  std::size_t structural_headings = 24;
  std::size_t intermediate_headings = 40;
  std::size_t embedding_dim = 50;
  std::size_t filler_words = 1500;
  bool separable = false;

  double structural_share = 0.4;    // queries whose main heading is structural
  double intermediate_share = 0.5;  // queries with an intermediate heading
  double title_rate = 0.45;
  double intermediate_rate = 0.15;
  double topical_main_rate = 0.9;
  double structural_main_rate = 0.2;
  double related_rate = 0.85;       // structural: paragraph uses related words
  double related_cosine = 0.8;
  std::size_t decoys_per_structural = 3;
  std::size_t topical_mentions = 6;  // off-topic paragraphs naming a topical main heading

  void validate() const {
    if (queries == 0 || queries_per_article == 0 || relevant_per_query == 0) {
      throw InvalidConfig("synthetic fixture needs queries, sections and relevant paragraphs");
    }
    if (embedding_dim < 2) throw InvalidConfig("embedding dimension must be >= 2");
    for (double p : {structural_share, intermediate_share, title_rate, intermediate_rate,
                     topical_main_rate, structural_main_rate, related_rate}) {
      if (!(p >= 0.0 && p <= 1.0)) throw InvalidConfig("rates must lie in [0, 1]");
    }
    if (!(related_cosine > 0.0 && related_cosine < 1.0)) {
      throw InvalidConfig("related cosine must lie in (0, 1)");
    }
  }
};

struct SyntheticFixture {
  std::vector<ArticleHeadingsRecord> articles;
  std::vector<Document> corpus;
  std::vector<CarQuery> queries;
  std::array<std::vector<std::string>, 3> splits;  // train, valid, test qids
  Qrels qrels{JudgmentKind::Automatic};
  std::vector<std::pair<std::string, std::vector<double>>> embeddings;
  nlohmann::json manifest;
};

inline constexpr std::array<const char*, 3> kSplitNames{"train", "valid", "test"};

namespace detail {

class WordFactory {
 public:
  explicit WordFactory(std::mt19937_64& rng) : rng_(rng) {}

  std::string make() {
    static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r",
                                   "s", "t", "v", "z", "br", "dr", "kl", "st", "tr", "sh"};
    static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
    static const char* codas[] = {"", "", "", "n", "r", "s", "l", "k"};
    for (;;) {
      std::string w;
      const std::size_t syllables = 2 + pick(2);
      for (std::size_t s = 0; s < syllables; ++s) {
        w += onsets[pick(std::size(onsets))];
        w += vowels[pick(std::size(vowels))];
      }
      w += codas[pick(std::size(codas))];
      if (used_.insert(w).second) return w;
    }
  }

  std::vector<std::string> make(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(make());
    return out;
  }

  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

 private:
  std::mt19937_64& rng_;
  std::set<std::string> used_;
};

inline std::string heading_text(const std::vector<std::string>& words) {
  std::string s;
  for (const auto& w : words) s += (s.empty() ? "" : " ") + w;
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

struct Heading {
  std::vector<std::string> words;
  std::size_t target_articles = 0;
  std::set<std::size_t> articles;  // indices into the article list
};

}  // namespace detail

inline SyntheticFixture generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  detail::WordFactory words(rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto chance = [&](double p) { return unit(rng) < p; };

  const std::size_t real_articles =
      (cfg.queries + cfg.queries_per_article - 1) / cfg.queries_per_article;
  const std::size_t total_articles = real_articles + cfg.background_articles;

  // Vocabulary pools.
  const auto filler = words.make(cfg.filler_words);
  std::vector<detail::Heading> structural(cfg.structural_headings);
  std::map<std::string, std::vector<std::string>> related;
  for (auto& h : structural) {
    h.words = words.make(1 + words.pick(2));
    for (const auto& w : h.words) related[w] = words.make(3);
  }
  std::vector<detail::Heading> inter(cfg.intermediate_headings);
  for (auto& h : inter) h.words = words.make(1 + words.pick(2));

  // Planted article counts: structural headings in 5%..30% of articles,
  // intermediate headings in 1%..3%.
  for (auto& h : structural) {
    h.target_articles = std::max<std::size_t>(
        2, static_cast<std::size_t>(std::lround((0.05 + 0.25 * unit(rng)) * total_articles)));
  }
  for (auto& h : inter) {
    h.target_articles = std::max<std::size_t>(
        2, static_cast<std::size_t>(std::lround((0.01 + 0.02 * unit(rng)) * total_articles)));
  }

  SyntheticFixture fx;
  struct Section {
    std::size_t query;
    std::vector<std::string> main_words;
    bool structural;
    std::vector<std::string> inter_words;
  };
  struct Paragraph {
    std::vector<std::string> tokens;
    std::size_t query = SIZE_MAX;  // relevant to this query, if any
  };
  std::vector<Paragraph> paras;
  std::vector<std::vector<std::string>> article_headings(total_articles);
  std::vector<std::vector<std::string>> titles(real_articles);

  const auto body = [&](std::size_t n) {
    std::vector<std::string> t;
    for (std::size_t i = 0; i < n; ++i) t.push_back(filler[words.pick(filler.size())]);
    return t;
  };
  const auto add_words = [&](std::vector<std::string>& dst, const std::vector<std::string>& src,
                             double p) {
    for (const auto& w : src) {
      if (chance(p)) dst.push_back(w);
    }
  };

  double main_rate_sum = 0.0;
  std::size_t main_terms = 0, title_terms = 0, inter_terms = 0;
  std::vector<std::pair<std::string, int>> topical_headings;  // for the manifest

  std::size_t qn = 0;
  for (std::size_t a = 0; a < real_articles; ++a) {
    titles[a] = words.make(1 + words.pick(3));
    std::set<std::size_t> used_structural;
    for (std::size_t s = 0; s < cfg.queries_per_article && qn < cfg.queries; ++s, ++qn) {
      Section sec{qn, {}, false, {}};
      if (!cfg.separable && chance(cfg.structural_share)) {
        std::size_t h = words.pick(structural.size());
        for (int tries = 0; used_structural.count(h) && tries < 50; ++tries) {
          h = words.pick(structural.size());
        }
        if (!used_structural.count(h)) {
          used_structural.insert(h);
          sec.structural = true;
          sec.main_words = structural[h].words;
          structural[h].articles.insert(a);
        }
      }
      if (!sec.structural) {
        sec.main_words = words.make(1 + words.pick(3));
        topical_headings.emplace_back(detail::heading_text(sec.main_words), 1);
      }
      article_headings[a].push_back(detail::heading_text(sec.main_words));
      if (chance(cfg.intermediate_share)) {
        const std::size_t h = words.pick(inter.size());
        sec.inter_words = inter[h].words;
        inter[h].articles.insert(a);
        article_headings[a].push_back(detail::heading_text(sec.inter_words));
      }

      std::vector<std::string> comps{detail::heading_text(titles[a])};
      if (!sec.inter_words.empty()) comps.push_back(detail::heading_text(sec.inter_words));
      comps.push_back(detail::heading_text(sec.main_words));
      char qid[32];
      std::snprintf(qid, sizeof qid, "q%04zu", qn);
      fx.queries.push_back(parse_query(qid, comps));

      const double main_rate = cfg.separable ? 1.0
                               : sec.structural ? cfg.structural_main_rate
                                                : cfg.topical_main_rate;
      main_rate_sum += main_rate * static_cast<double>(sec.main_words.size());
      main_terms += sec.main_words.size();
      title_terms += titles[a].size();
      inter_terms += sec.inter_words.size();

      for (std::size_t r = 0; r < cfg.relevant_per_query; ++r) {
        Paragraph p{body(22 + words.pick(16)), qn};
        add_words(p.tokens, titles[a], cfg.title_rate);
        add_words(p.tokens, sec.inter_words, cfg.intermediate_rate);
        add_words(p.tokens, sec.main_words, main_rate);
        if (sec.structural) {
          for (const auto& w : sec.main_words) {
            if (chance(cfg.related_rate)) {
              const auto& rel = related[w];
              p.tokens.push_back(rel[words.pick(rel.size())]);
              if (chance(0.5)) p.tokens.push_back(rel[words.pick(rel.size())]);
            }
          }
        }
        paras.push_back(std::move(p));
      }
      if (sec.structural) {
        for (std::size_t d = 0; d < cfg.decoys_per_structural; ++d) {
          Paragraph p{body(22 + words.pick(16))};
          add_words(p.tokens, titles[a], cfg.title_rate);
          p.tokens.insert(p.tokens.end(), sec.main_words.begin(), sec.main_words.end());
          paras.push_back(std::move(p));
        }
      } else if (!cfg.separable) {
        for (std::size_t d = 0; d < cfg.topical_mentions; ++d) {
          Paragraph p{body(22 + words.pick(16))};
          p.tokens.push_back(sec.main_words[words.pick(sec.main_words.size())]);
          paras.push_back(std::move(p));
        }
      }
    }
  }
  if (paras.size() > cfg.paragraphs) {
    throw InvalidConfig("paragraph budget " + std::to_string(cfg.paragraphs) +
                        " is below the " + std::to_string(paras.size()) +
                        " paragraphs the queries need");
  }
  while (paras.size() < cfg.paragraphs) paras.push_back({body(22 + words.pick(16))});

  // Background articles take up the remaining planted heading counts.
  std::vector<std::size_t> background(cfg.background_articles);
  for (std::size_t i = 0; i < background.size(); ++i) background[i] = real_articles + i;
  const auto plant = [&](detail::Heading& h) {
    std::vector<std::size_t> pool = background;
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t i = 0; i < pool.size() && h.articles.size() < h.target_articles; ++i) {
      if (h.articles.insert(pool[i]).second) {
        article_headings[pool[i]].push_back(detail::heading_text(h.words));
      }
    }
  };
  for (auto& h : structural) plant(h);
  for (auto& h : inter) plant(h);
  // A share of background articles also carry one heading of their own.
  for (std::size_t b : background) {
    if (chance(0.3)) {
      const auto w = words.make(1 + words.pick(2));
      article_headings[b].push_back(detail::heading_text(w));
      topical_headings.emplace_back(detail::heading_text(w), 1);
    }
  }

  for (std::size_t a = 0; a < total_articles; ++a) {
    std::string name = a < real_articles ? detail::heading_text(titles[a])
                                         : "Background " + std::to_string(a - real_articles);
    auto hs = article_headings[a];
    std::shuffle(hs.begin(), hs.end(), rng);
    fx.articles.push_back({std::move(name), std::move(hs)});
  }

  // Paragraph ids carry no information about their role.
  std::shuffle(paras.begin(), paras.end(), rng);
  for (std::size_t i = 0; i < paras.size(); ++i) {
    auto& p = paras[i];
    std::shuffle(p.tokens.begin(), p.tokens.end(), rng);
    std::string text;
    for (const auto& t : p.tokens) text += (text.empty() ? "" : " ") + t;
    char id[32];
    std::snprintf(id, sizeof id, "p%05zu", i);
    fx.corpus.push_back({id, text});
    if (p.query != SIZE_MAX) fx.qrels.add(fx.queries[p.query].qid, id, 1);
  }

  // Splits: 60% train, 10% validation, 30% test.
  std::vector<std::size_t> order(fx.queries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = order.size() * 6 / 10;
  const std::size_t n_valid = std::max<std::size_t>(1, order.size() / 10);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t s = i < n_train ? 0 : i < n_train + n_valid ? 1 : 2;
    fx.splits[s].push_back(fx.queries[order[i]].qid);
  }
  for (auto& s : fx.splits) std::sort(s.begin(), s.end());

  // Embeddings: random unit directions; related words lean towards their
  // heading word with the configured cosine.
  const auto random_unit = [&] {
    std::vector<double> v(cfg.embedding_dim);
    double n = 0.0;
    for (double& x : v) {
      x = gauss(rng);
      n += x * x;
    }
    for (double& x : v) x /= std::sqrt(n);
    return v;
  };
  std::set<std::string> vocab;
  for (const auto& d : fx.corpus) {
    for (auto& t : tokenize(d.text)) vocab.insert(std::move(t));
  }
  for (const auto& q : fx.queries) {
    for (const auto& h : q.headings()) {
      for (auto& t : tokenize(h)) vocab.insert(std::move(t));
    }
  }
  std::map<std::string, std::vector<double>> vecs;
  for (const auto& w : vocab) vecs[w] = random_unit();
  const double c = cfg.related_cosine, s = std::sqrt(1.0 - c * c);
  for (const auto& [w, rel] : related) {
    if (!vecs.count(w)) vecs[w] = random_unit();
    for (const auto& r : rel) {
      // orthogonalize a random direction against the heading word
      auto noise = random_unit();
      double dot = 0.0;
      for (std::size_t i = 0; i < noise.size(); ++i) dot += noise[i] * vecs[w][i];
      double n = 0.0;
      for (std::size_t i = 0; i < noise.size(); ++i) {
        noise[i] -= dot * vecs[w][i];
        n += noise[i] * noise[i];
      }
      std::vector<double> v(cfg.embedding_dim);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = c * vecs[w][i] + s * noise[i] / std::sqrt(n);
      vecs[r] = std::move(v);
    }
  }
  fx.embeddings.assign(vecs.begin(), vecs.end());

  // Manifest: planted heading frequencies and expected occurrence means.
  nlohmann::json planted = nlohmann::json::object();
  const auto record = [&](const std::string& text, std::size_t n) {
    planted[normalize_heading(text)] =
        static_cast<double>(n) / static_cast<double>(total_articles);
  };
  for (const auto& h : structural) {
    if (!h.articles.empty()) record(detail::heading_text(h.words), h.articles.size());
  }
  for (const auto& h : inter) {
    if (!h.articles.empty()) record(detail::heading_text(h.words), h.articles.size());
  }
  for (const auto& [text, n] : topical_headings) record(text, static_cast<std::size_t>(n));
  std::vector<std::string> structural_names;
  for (const auto& h : structural) structural_names.push_back(normalize_heading(detail::heading_text(h.words)));

  fx.manifest = {
      {"seed", cfg.seed},
      {"separable", cfg.separable},
      {"articles", total_articles},
      {"paragraphs", fx.corpus.size()},
      {"queries", fx.queries.size()},
      {"planted_frq", planted},
      {"structural_headings", structural_names},
      {"expected_rates",
       {{"title", title_terms ? cfg.title_rate : 0.0},
        {"intermediate", inter_terms ? cfg.intermediate_rate : 0.0},
        {"main", main_terms ? main_rate_sum / static_cast<double>(main_terms) : 0.0}}},
  };
  return fx;
}

inline void write_embeddings(std::ostream& out,
                             const std::vector<std::pair<std::string, std::vector<double>>>& e) {
  const std::size_t dim = e.empty() ? 0 : e.front().second.size();
  out << e.size() << ' ' << dim << '\n';
  char buf[32];
  for (const auto& [w, v] : e) {
    out << w;
    for (double x : v) {
      std::snprintf(buf, sizeof buf, " %.6f", x);
      out << buf;
    }
    out << '\n';
  }
}

inline void write_fixture(const SyntheticFixture& fx, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto open = [&](const char* name) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw IoError("cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("articles.jsonl");
    for (const auto& a : fx.articles) f << serialize_article(a) << '\n';
  }
  {
    auto f = open("corpus.jsonl");
    for (const auto& d : fx.corpus) f << serialize_document(d) << '\n';
  }
  {
    auto f = open("queries.jsonl");
    for (const auto& q : fx.queries) f << serialize_query(q) << '\n';
  }
  std::map<std::string, const CarQuery*> by_id;
  for (const auto& q : fx.queries) by_id[q.qid] = &q;
  for (std::size_t s = 0; s < 3; ++s) {
    auto f = open((std::string(kSplitNames[s]) + ".queries.jsonl").c_str());
    for (const auto& qid : fx.splits[s]) f << serialize_query(*by_id.at(qid)) << '\n';
  }
  {
    auto f = open("qrels.txt");
    write_qrels(f, fx.qrels);
  }
  {
    auto f = open("embeddings.txt");
    write_embeddings(f, fx.embeddings);
  }
  {
    auto f = open("manifest.json");
    f << fx.manifest.dump(2) << '\n';
  }
}

}  // namespace facetcar
