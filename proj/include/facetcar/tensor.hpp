#pragma once

// Dense row-major tensors and the handful of differentiable kernels the
// re-ranker is built from. Every kernel is a forward/backward pair; the
// backward takes whatever the forward cached (argmax indices, outputs) and
// the gradient of the loss w.r.t. the forward output.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "facetcar/error.hpp"

namespace facetcar {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape volume " +
                       std::to_string(element_count(shape_)));
    }
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  double& at(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  double at(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline void require_shape(const Tensor& t, std::size_t rank,
                          const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " +
                     std::to_string(rank) + ", got " +
                     std::to_string(t.rank()));
  }
}

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

// ---------------------------------------------------------------------------
// Square convolution, "same" extents, zero padding, fused ReLU.
//
// A filter of size n covers rows [i - (n-1)/2, i - (n-1)/2 + n) and the same
// for columns, so odd sizes are centred and even sizes lean towards the
// bottom-right. Out-of-range cells read as zero.

inline std::ptrdiff_t window_origin(std::size_t n) {
  return -static_cast<std::ptrdiff_t>((n - 1) / 2);
}

// Pre-activation convolution (no ReLU).
inline Tensor conv2d_square_linear(const Tensor& input, const Tensor& filters,
                                   const Tensor& bias) {
  require_shape(input, 2, "conv2d_square input");
  require_shape(filters, 3, "conv2d_square filters");
  require_shape(bias, 1, "conv2d_square bias");
  const std::size_t f = filters.dim(0), n = filters.dim(1);
  if (n == 0 || filters.dim(2) != n) {
    throw ShapeError("conv2d_square: filters must be f x n x n with n >= 1");
  }
  if (bias.dim(0) != f) throw ShapeError("conv2d_square: bias length != f");

  const auto q = static_cast<std::ptrdiff_t>(input.dim(0));
  const auto d = static_cast<std::ptrdiff_t>(input.dim(1));
  const std::ptrdiff_t o = window_origin(n);
  Tensor out({f, input.dim(0), input.dim(1)});
  const double* src = input.data().data();
  for (std::size_t c = 0; c < f; ++c) {
    double* plane = &out.data()[c * static_cast<std::size_t>(q * d)];
    std::fill(plane, plane + q * d, bias[c]);
    const double* w = &filters.data()[c * n * n];
    // Accumulate one filter tap at a time over the cells where it lands
    // inside the input; the inner loop is a contiguous axpy.
    for (std::size_t a = 0; a < n; ++a) {
      const std::ptrdiff_t dr = o + static_cast<std::ptrdiff_t>(a);
      const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, -dr);
      const std::ptrdiff_t i1 = std::min(q, q - dr);
      for (std::size_t b = 0; b < n; ++b) {
        const std::ptrdiff_t dc = o + static_cast<std::ptrdiff_t>(b);
        const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dc);
        const std::ptrdiff_t j1 = std::min(d, d - dc);
        const double wt = w[a * n + b];
        for (std::ptrdiff_t i = i0; i < i1; ++i) {
          double* dst = plane + i * d;
          const double* row = src + (i + dr) * d + dc;
          for (std::ptrdiff_t j = j0; j < j1; ++j) dst[j] += wt * row[j];
        }
      }
    }
  }
  return out;
}

inline Tensor conv2d_square(const Tensor& input, const Tensor& filters,
                            const Tensor& bias) {
  Tensor out = conv2d_square_linear(input, filters, bias);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

struct ConvGrads {
  Tensor input;  // empty unless requested
  Tensor filters;
  Tensor bias;
};

// `output` is the forward result (post-ReLU); cells where it is zero pass no
// gradient. Zero entries of grad_out are skipped, which keeps the pass cheap
// when the gradient arrives through a channel max.
inline ConvGrads conv2d_square_backward(const Tensor& input,
                                        const Tensor& filters,
                                        const Tensor& output,
                                        const Tensor& grad_out,
                                        bool need_input_grad) {
  const std::size_t f = filters.dim(0), n = filters.dim(1);
  const std::size_t q = input.dim(0), d = input.dim(1);
  if (grad_out.shape() != output.shape() ||
      output.shape() != std::vector<std::size_t>{f, q, d}) {
    throw ShapeError("conv2d_square_backward: gradient shape mismatch");
  }
  const std::ptrdiff_t o = window_origin(n);
  ConvGrads g{need_input_grad ? Tensor({q, d}) : Tensor(),
              Tensor(filters.shape()), Tensor({f})};
  for (std::size_t c = 0; c < f; ++c) {
    double* dw = &g.filters.data()[c * n * n];
    const double* w = &filters.data()[c * n * n];
    for (std::size_t i = 0; i < q; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double go = grad_out.at(c, i, j);
        if (go == 0.0 || output.at(c, i, j) <= 0.0) continue;
        g.bias[c] += go;
        for (std::size_t a = 0; a < n; ++a) {
          const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i) + o +
                                   static_cast<std::ptrdiff_t>(a);
          if (r < 0 || r >= static_cast<std::ptrdiff_t>(q)) continue;
          for (std::size_t b = 0; b < n; ++b) {
            const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(j) + o +
                                     static_cast<std::ptrdiff_t>(b);
            if (s < 0 || s >= static_cast<std::ptrdiff_t>(d)) continue;
            const auto ru = static_cast<std::size_t>(r);
            const auto su = static_cast<std::size_t>(s);
            dw[a * n + b] += go * input.at(ru, su);
            if (need_input_grad) g.input.at(ru, su) += go * w[a * n + b];
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Max over the channel axis. Ties go to the lowest channel index.

struct ChannelMax {
  Tensor out;                        // q x d
  std::vector<std::uint32_t> argmax; // q*d, channel index
};

inline ChannelMax channel_max(const Tensor& x) {
  require_shape(x, 3, "channel_max");
  const std::size_t f = x.dim(0), q = x.dim(1), d = x.dim(2);
  if (f == 0) throw ShapeError("channel_max: no channels");
  ChannelMax r{Tensor({q, d}), std::vector<std::uint32_t>(q * d, 0)};
  const std::size_t plane = q * d;
  for (std::size_t cell = 0; cell < plane; ++cell) {
    double best = x[cell];
    std::uint32_t arg = 0;
    for (std::size_t c = 1; c < f; ++c) {
      const double v = x[c * plane + cell];
      if (v > best) {
        best = v;
        arg = static_cast<std::uint32_t>(c);
      }
    }
    r.out[cell] = best;
    r.argmax[cell] = arg;
  }
  return r;
}

inline Tensor channel_max_backward(const Tensor& grad_out,
                                   std::span<const std::uint32_t> argmax,
                                   std::size_t channels) {
  const std::size_t q = grad_out.dim(0), d = grad_out.dim(1);
  Tensor g({channels, q, d});
  const std::size_t plane = q * d;
  for (std::size_t cell = 0; cell < plane; ++cell) {
    g[argmax[cell] * plane + cell] = grad_out[cell];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Row-wise k-max pooling. Each output row holds the k largest entries of the
// source row in descending order, zero-padded on the right when d < k.
// `source[i*k + s]` is the column feeding slot s, or -1 for padding.

struct KMax {
  Tensor out;
  std::vector<std::int32_t> source;
};

inline KMax kmax_rows(const Tensor& x, std::size_t k) {
  require_shape(x, 2, "kmax_rows");
  if (k == 0) throw InvalidConfig("kmax_rows: k must be >= 1");
  const std::size_t q = x.dim(0), d = x.dim(1);
  KMax r{Tensor({q, k}), std::vector<std::int32_t>(q * k, -1)};
  std::vector<std::int32_t> order(d);
  for (std::size_t i = 0; i < q; ++i) {
    const double* row = &x.data()[i * d];
    std::iota(order.begin(), order.end(), 0);
    const std::size_t take = std::min(k, d);
    // Stable: among equal values the lower column wins the earlier slot.
    std::partial_sort(order.begin(), order.begin() + take, order.end(),
                      [row](std::int32_t a, std::int32_t b) {
                        return row[a] > row[b] || (row[a] == row[b] && a < b);
                      });
    for (std::size_t s = 0; s < take; ++s) {
      r.out.at(i, s) = row[order[s]];
      r.source[i * k + s] = order[s];
    }
  }
  return r;
}

inline Tensor kmax_rows_backward(const Tensor& grad_out,
                                 std::span<const std::int32_t> source,
                                 std::size_t d) {
  const std::size_t q = grad_out.dim(0), k = grad_out.dim(1);
  Tensor g({q, d});
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t s = 0; s < k; ++s) {
      const std::int32_t col = source[i * k + s];
      if (col >= 0) g.at(i, static_cast<std::size_t>(col)) += grad_out.at(i, s);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Fully connected layer: activation(x^T W + b).

enum class Activation { Identity, Relu, Tanh };

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::Relu: return z > 0.0 ? z : 0.0;
    case Activation::Tanh: return std::tanh(z);
    case Activation::Identity: break;
  }
  return z;
}

// Derivative expressed through the activation output y.
inline double activation_slope(Activation a, double y) {
  switch (a) {
    case Activation::Relu: return y > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: return 1.0 - y * y;
    case Activation::Identity: break;
  }
  return 1.0;
}

inline Tensor dense(std::span<const double> x, const Tensor& W,
                    const Tensor& b, Activation act) {
  require_shape(W, 2, "dense weights");
  require_shape(b, 1, "dense bias");
  const std::size_t m = W.dim(0), n = W.dim(1);
  if (x.size() != m || b.dim(0) != n) {
    throw ShapeError("dense: input " + std::to_string(x.size()) + " vs W " +
                     std::to_string(m) + "x" + std::to_string(n) +
                     " vs b " + std::to_string(b.dim(0)));
  }
  Tensor out({n}, std::vector<double>(b.values()));
  for (std::size_t i = 0; i < m; ++i) {
    const double xi = x[i];
    const double* w = &W.data()[i * n];
    for (std::size_t j = 0; j < n; ++j) out[j] += xi * w[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] = activate(act, out[j]);
  return out;
}

struct DenseGrads {
  std::vector<double> input;
  Tensor weights;
  Tensor bias;
};

inline DenseGrads dense_backward(std::span<const double> x, const Tensor& W,
                                 const Tensor& out, Activation act,
                                 std::span<const double> grad_out) {
  const std::size_t m = W.dim(0), n = W.dim(1);
  DenseGrads g{std::vector<double>(m, 0.0), Tensor(W.shape()), Tensor({n})};
  std::vector<double> dz(n);
  for (std::size_t j = 0; j < n; ++j) {
    dz[j] = grad_out[j] * activation_slope(act, out[j]);
    g.bias[j] = dz[j];
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double* w = &W.data()[i * n];
    double* dw = &g.weights.data()[i * n];
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dw[j] = x[i] * dz[j];
      acc += w[j] * dz[j];
    }
    g.input[i] = acc;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Two-way softmax cross-entropy over a (positive, negative) score pair.

struct PairLoss {
  double loss;
  double d_pos;
  double d_neg;
};

inline PairLoss pairwise_softmax_loss(double s_pos, double s_neg) {
  // loss = softplus(s_neg - s_pos)
  const double z = s_neg - s_pos;
  const double loss = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
  const double p_pos = z >= 0.0 ? std::exp(-z) / (1.0 + std::exp(-z))
                                : 1.0 / (1.0 + std::exp(z));
  return {loss, p_pos - 1.0, 1.0 - p_pos};
}

// ---------------------------------------------------------------------------
// Optimizers. Adam moments live here, keyed by parameter name.

enum class OptimizerMethod { Sgd, Adam };

struct OptimizerConfig {
  OptimizerMethod method = OptimizerMethod::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg = {}) : cfg_(cfg) {}

  const OptimizerConfig& config() const noexcept { return cfg_; }
  std::uint64_t steps() const noexcept { return t_; }

  void step(std::span<Parameter> params) {
    ++t_;
    for (Parameter& p : params) {
      auto v = p.value.data();
      auto g = p.grad.data();
      if (cfg_.method == OptimizerMethod::Sgd) {
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= cfg_.lr * g[i];
      } else {
        auto& st = moments_[p.name];
        if (st.first.size() != v.size()) {
          st.first.assign(v.size(), 0.0);
          st.second.assign(v.size(), 0.0);
        }
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < v.size(); ++i) {
          double& m = st.first[i];
          double& s = st.second[i];
          m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g[i];
          s = cfg_.beta2 * s + (1.0 - cfg_.beta2) * g[i] * g[i];
          v[i] -= cfg_.lr * (m / c1) / (std::sqrt(s / c2) + cfg_.eps);
        }
      }
      p.grad.fill(0.0);
    }
  }

 private:
  OptimizerConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>
      moments_;
};

// ---------------------------------------------------------------------------
// Central finite differences against an analytic gradient.

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// `f` must read the current contents of `point`; each coordinate is nudged
// in place and restored.
template <class F>
GradientCheck gradient_check(std::span<double> point,
                             std::span<const double> analytic, F&& f,
                             double eps = 1e-5) {
  if (point.size() != analytic.size()) {
    throw ShapeError("gradient_check: point and gradient lengths differ");
  }
  GradientCheck r;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + eps;
    const double up = f();
    point[i] = saved - eps;
    const double down = f();
    point[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double err = relative_error(analytic[i], numeric);
    if (i == 0 || err > r.max_relative_error) {
      r = {err, i, analytic[i], numeric};
    }
  }
  return r;
}

}  // namespace facetcar
