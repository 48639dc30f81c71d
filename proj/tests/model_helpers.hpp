#pragma once

#include <random>

#include "facetcar/ranker.hpp"

namespace facetcar::testing {

inline RankerConfig small_config(Variant v) {
  RankerConfig c;
  c.variant = v;
  c.q_len = 5;
  c.d_len = 7;
  c.filter_sizes = {2, 3};
  c.filters_per_size = 3;
  c.hidden = {4};
  c.component_q_len = {2, 2, 2};
  c.head_width = 3;
  return c;
}

// Random similarity rows in [-1, 1] with trailing zero padding, random idf,
// one-hot positions and strata in 0..3.
inline ScoringInput random_input(const RankerConfig& c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> sim(-1.0, 1.0), pos(0.1, 3.0);
  ScoringInput in;
  for (std::size_t b = 0; b < c.branch_count(); ++b) {
    const std::size_t rows = c.branch_rows(b);
    BranchInput br{Tensor({rows, c.d_len}), std::vector<double>(rows, 0.0)};
    const std::size_t real_rows = 1 + rng() % rows;
    const std::size_t real_cols = 1 + rng() % c.d_len;
    for (std::size_t i = 0; i < real_rows; ++i) {
      br.idf[i] = pos(rng);
      for (std::size_t j = 0; j < real_cols; ++j) br.sim.at(i, j) = sim(rng);
    }
    in.branches.push_back(std::move(br));
  }
  if (uses_position(c.variant)) {
    in.position = Tensor({c.q_len, 3});
    std::size_t p = 0;
    for (std::size_t i = 0; i < c.q_len; ++i) {
      p = std::min<std::size_t>(2, p + rng() % 2);
      in.position.at(i, p) = 1.0;
    }
  }
  if (uses_frequency(c.variant)) {
    const std::size_t n = is_heading_independent(c.variant) ? 3 : c.q_len;
    for (std::size_t i = 0; i < n; ++i) in.frequency.push_back(static_cast<double>(rng() % 4));
  }
  return in;
}

// Zeroes the first-layer rows that read contextual features of `model` and
// returns a base-variant model computing the same function.
inline RankerModel strip_context(RankerModel& model) {
  RankerConfig bc = model.config();
  bc.variant = Variant::Base;
  RankerModel base(bc, 0);
  const std::size_t mw = bc.matching_width();
  const std::size_t full = mw + model.config().context_width();
  const std::string first = bc.hidden.empty() ? "combine.out.W" : "combine.dense0.W";
  Tensor& w = model.param(first).value;
  const std::size_t cols = w.dim(1);
  for (std::size_t i = 0; i < bc.q_len; ++i) {
    for (std::size_t t = mw; t < full; ++t) {
      for (std::size_t j = 0; j < cols; ++j) w.at(i * full + t, j) = 0.0;
    }
  }
  for (auto& p : base.params()) {
    if (p.name != first) {
      p.value = model.param(p.name).value;
      continue;
    }
    for (std::size_t i = 0; i < bc.q_len; ++i) {
      for (std::size_t t = 0; t < mw; ++t) {
        for (std::size_t j = 0; j < cols; ++j) p.value.at(i * mw + t, j) = w.at(i * full + t, j);
      }
    }
  }
  return base;
}

// Nudge biases up so most ReLUs are active, then draw inputs until every
// pooling and ReLU decision sits at least `margin` away from a tie.
inline ScoringInput nondegenerate_input(const RankerModel& m, std::mt19937_64& rng,
                                        double margin = 1e-3) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    ScoringInput in = random_input(m.config(), rng);
    RankerModel::Cache cache;
    m.forward(in, cache);
    if (m.decision_margin(cache) > margin) return in;
  }
  throw std::runtime_error("no non-degenerate input found");
}

inline void raise_conv_biases(RankerModel& m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.4);
  for (auto& p : m.params()) {
    if (p.name.find("conv") != std::string::npos && p.name.ends_with(".bias")) {
      for (double& v : p.value.data()) v = u(rng);
    } else if (p.name.ends_with(".b")) {
      for (double& v : p.value.data()) v = u(rng) - 0.2;
    }
  }
}

struct CheckResult {
  double max_error = 0.0;
  std::string worst;
};

// Compares backward() against central differences over every parameter.
inline CheckResult check_model_gradients(RankerModel& m, const ScoringInput& in) {
  RankerModel::Cache cache;
  m.forward(in, cache);
  std::vector<Tensor> grads = m.zero_gradients();
  m.backward(in, cache, 1.0, grads);
  CheckResult r;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    auto& p = m.params()[i];
    const auto gc = gradient_check(p.value.data(), grads[i].data(), [&] { return m.score(in); });
    if (gc.max_relative_error > r.max_error) {
      r.max_error = gc.max_relative_error;
      r.worst = p.name + "[" + std::to_string(gc.worst_index) + "]";
    }
  }
  return r;
}

}  // namespace facetcar::testing
