#pragma once

// Tiny classifiers with hand-written backprop.
//
// Canonical parameter layout (every flat vector in the library uses it):
//   hidden_dim == 0 (logistic regression):
//     W [num_classes x input_dim] row-major, then b [num_classes]
//   hidden_dim > 0 (one hidden layer):
//     W1 [hidden_dim x input_dim] row-major, b1 [hidden_dim],
//     W2 [num_classes x hidden_dim] row-major, b2 [num_classes]

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fedalign/error.hpp"
#include "fedalign/numcore.hpp"

namespace fedalign {

enum class Activation { relu, tanh };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

struct ModelSpec {
  std::size_t input_dim = 2;
  std::size_t hidden_dim = 0;
  std::size_t num_classes = 2;
  Activation activation = Activation::tanh;

  void validate() const {
    if (input_dim == 0) throw Error(ErrorKind::InvalidSpec, "input_dim must be positive");
    if (num_classes < 2) throw Error(ErrorKind::InvalidSpec, "num_classes must be >= 2");
  }

  std::size_t param_count() const {
    if (hidden_dim == 0) return num_classes * input_dim + num_classes;
    return hidden_dim * input_dim + hidden_dim + num_classes * hidden_dim + num_classes;
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct ParamVector {
  ModelSpec spec;
  RealVec values;

  ParamVector(ModelSpec s, RealVec v) : spec(s), values(std::move(v)) {
    if (values.size() != spec.param_count()) {
      throw Error(ErrorKind::DimensionMismatch,
                  "ParamVector: " + std::to_string(values.size()) + " values for spec with " +
                      std::to_string(spec.param_count()) + " parameters");
    }
  }

  static ParamVector zeros(const ModelSpec& s) { return {s, RealVec::zeros(s.param_count())}; }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

// Gradient in canonical parameter order, tagged with the client that produced it.
struct GradientVector {
  RealVec values;
  std::string source;

  std::size_t size() const noexcept { return values.size(); }
  friend bool operator==(const GradientVector&, const GradientVector&) = default;
};

struct CrossEntropy {};

// Per-sample loss is multiplied by the weight of the sample's class.
struct WeightedCrossEntropy {
  std::vector<double> class_weights;
};

using LossKind = std::variant<CrossEntropy, WeightedCrossEntropy>;

inline void validate_loss(const LossKind& loss, std::size_t num_classes) {
  if (const auto* w = std::get_if<WeightedCrossEntropy>(&loss)) {
    if (w->class_weights.size() != num_classes) {
      throw Error(ErrorKind::InvalidSpec, "class_weights must have one entry per class");
    }
    for (double x : w->class_weights) {
      if (!(x > 0.0) || !std::isfinite(x)) {
        throw Error(ErrorKind::InvalidSpec, "class weights must be positive and finite");
      }
    }
  }
}

struct Batch {
  RealMat features;
  std::vector<int> labels;
};

struct LossAndGrad {
  double loss = 0.0;
  GradientVector grad;
};

struct Metrics {
  double accuracy = 0.0;
  double loss = 0.0;
  friend bool operator==(const Metrics&, const Metrics&) = default;
};

namespace detail {

// Read-only views of the four parameter blocks.
struct Layout {
  std::span<const double> w1, b1, w2, b2;  // w2/b2 empty for logistic regression
};

inline Layout layout(const ModelSpec& s, std::span<const double> p) {
  Layout l;
  std::size_t off = 0;
  const std::size_t first_out = s.hidden_dim == 0 ? s.num_classes : s.hidden_dim;
  l.w1 = p.subspan(off, first_out * s.input_dim);
  off += first_out * s.input_dim;
  l.b1 = p.subspan(off, first_out);
  off += first_out;
  if (s.hidden_dim > 0) {
    l.w2 = p.subspan(off, s.num_classes * s.hidden_dim);
    off += s.num_classes * s.hidden_dim;
    l.b2 = p.subspan(off, s.num_classes);
  }
  return l;
}

inline double activate(Activation a, double z) { return a == Activation::relu ? (z > 0.0 ? z : 0.0) : std::tanh(z); }

// Derivative expressed through the pre-activation z and the activation value h.
inline double activate_grad(Activation a, double z, double h) {
  return a == Activation::relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - h * h;
}

// out[r] = W[r,:] . x + b[r]
inline void affine(std::span<const double> w, std::span<const double> b, std::span<const double> x,
                   std::span<double> out) {
  const std::size_t in = x.size();
  for (std::size_t r = 0; r < out.size(); ++r) {
    double acc = b[r];
    for (std::size_t c = 0; c < in; ++c) acc += w[r * in + c] * x[c];
    out[r] = acc;
  }
}

inline double class_weight(const LossKind& loss, int label) {
  if (const auto* w = std::get_if<WeightedCrossEntropy>(&loss)) {
    return w->class_weights[static_cast<std::size_t>(label)];
  }
  return 1.0;
}

inline double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

inline void check_batch(const ModelSpec& s, const RealMat& x, std::span<const int> labels) {
  if (x.cols() != s.input_dim) {
    throw Error(ErrorKind::DimensionMismatch,
                "features have " + std::to_string(x.cols()) + " columns, model expects " +
                    std::to_string(s.input_dim));
  }
  if (labels.size() != x.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "labels length differs from feature rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= s.num_classes) {
      throw Error(ErrorKind::DimensionMismatch, "label " + std::to_string(y) + " out of range");
    }
  }
}

}  // namespace detail

// Structured view of the parameter blocks. For logistic regression only
// w1/b1 are populated.
struct Layers {
  RealMat w1;
  std::vector<double> b1;
  RealMat w2;
  std::vector<double> b2;
};

inline Layers unflatten(const ParamVector& p) {
  const ModelSpec& s = p.spec;
  const auto l = detail::layout(s, p.values.span());
  const std::size_t first_out = s.hidden_dim == 0 ? s.num_classes : s.hidden_dim;
  Layers out;
  out.w1 = RealMat(first_out, s.input_dim, {l.w1.begin(), l.w1.end()});
  out.b1.assign(l.b1.begin(), l.b1.end());
  if (s.hidden_dim > 0) {
    out.w2 = RealMat(s.num_classes, s.hidden_dim, {l.w2.begin(), l.w2.end()});
    out.b2.assign(l.b2.begin(), l.b2.end());
  }
  return out;
}

inline ParamVector flatten(const ModelSpec& s, const Layers& layers) {
  std::vector<double> v(layers.w1.data());
  v.insert(v.end(), layers.b1.begin(), layers.b1.end());
  v.insert(v.end(), layers.w2.data().begin(), layers.w2.data().end());
  v.insert(v.end(), layers.b2.begin(), layers.b2.end());
  return {s, RealVec(std::move(v))};
}

// Glorot-uniform weights, zero biases.
inline ParamVector init_params(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  std::vector<double> v;
  v.reserve(spec.param_count());
  auto layer = [&](std::size_t fan_in, std::size_t fan_out) {
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < fan_in * fan_out; ++i) v.push_back(rng.uniform(-s, s));
    v.insert(v.end(), fan_out, 0.0);
  };
  if (spec.hidden_dim == 0) {
    layer(spec.input_dim, spec.num_classes);
  } else {
    layer(spec.input_dim, spec.hidden_dim);
    layer(spec.hidden_dim, spec.num_classes);
  }
  return {spec, RealVec(std::move(v))};
}

inline RealMat forward(const ParamVector& params, const RealMat& x) {
  const ModelSpec& s = params.spec;
  if (x.cols() != s.input_dim) {
    throw Error(ErrorKind::DimensionMismatch,
                "forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                    std::to_string(s.input_dim));
  }
  const auto l = detail::layout(s, params.values.span());
  RealMat logits(x.rows(), s.num_classes);
  std::vector<double> hidden(s.hidden_dim);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (s.hidden_dim == 0) {
      detail::affine(l.w1, l.b1, x.row(r), logits.row(r));
    } else {
      detail::affine(l.w1, l.b1, x.row(r), hidden);
      for (double& h : hidden) h = detail::activate(s.activation, h);
      detail::affine(l.w2, l.b2, hidden, logits.row(r));
    }
  }
  return logits;
}

// Mean (class-weighted) softmax cross-entropy over the batch and its gradient.
inline LossAndGrad loss_and_grad(const ParamVector& params, const RealMat& x, std::span<const int> labels,
                                 const LossKind& loss = CrossEntropy{}) {
  const ModelSpec& s = params.spec;
  if (x.rows() == 0) throw Error(ErrorKind::EmptyBatch, "loss_and_grad needs at least one sample");
  detail::check_batch(s, x, labels);
  validate_loss(loss, s.num_classes);

  const auto l = detail::layout(s, params.values.span());
  std::vector<double> grad(s.param_count(), 0.0);
  const std::size_t first_out = s.hidden_dim == 0 ? s.num_classes : s.hidden_dim;
  double* g_w1 = grad.data();
  double* g_b1 = g_w1 + first_out * s.input_dim;
  double* g_w2 = g_b1 + first_out;
  double* g_b2 = g_w2 + s.num_classes * s.hidden_dim;

  const double inv_n = 1.0 / static_cast<double>(x.rows());
  std::vector<double> z1(s.hidden_dim), h1(s.hidden_dim), dh(s.hidden_dim);
  std::vector<double> logits(s.num_classes), dlogit(s.num_classes);
  double total = 0.0;

  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto xr = x.row(r);
    if (s.hidden_dim == 0) {
      detail::affine(l.w1, l.b1, xr, logits);
    } else {
      detail::affine(l.w1, l.b1, xr, z1);
      for (std::size_t k = 0; k < s.hidden_dim; ++k) h1[k] = detail::activate(s.activation, z1[k]);
      detail::affine(l.w2, l.b2, h1, logits);
    }
    const int y = labels[r];
    const double w = detail::class_weight(loss, y);
    const double lse = detail::log_sum_exp(logits);
    total += w * (lse - logits[static_cast<std::size_t>(y)]);

    for (std::size_t c = 0; c < s.num_classes; ++c) {
      const double p = std::exp(logits[c] - lse);
      dlogit[c] = w * inv_n * (p - (static_cast<int>(c) == y ? 1.0 : 0.0));
    }

    if (s.hidden_dim == 0) {
      for (std::size_t c = 0; c < s.num_classes; ++c) {
        for (std::size_t i = 0; i < s.input_dim; ++i) g_w1[c * s.input_dim + i] += dlogit[c] * xr[i];
        g_b1[c] += dlogit[c];
      }
      continue;
    }
    std::fill(dh.begin(), dh.end(), 0.0);
    for (std::size_t c = 0; c < s.num_classes; ++c) {
      for (std::size_t k = 0; k < s.hidden_dim; ++k) {
        g_w2[c * s.hidden_dim + k] += dlogit[c] * h1[k];
        dh[k] += dlogit[c] * l.w2[c * s.hidden_dim + k];
      }
      g_b2[c] += dlogit[c];
    }
    for (std::size_t k = 0; k < s.hidden_dim; ++k) {
      const double dz = dh[k] * detail::activate_grad(s.activation, z1[k], h1[k]);
      for (std::size_t i = 0; i < s.input_dim; ++i) g_w1[k * s.input_dim + i] += dz * xr[i];
      g_b1[k] += dz;
    }
  }
  return {total * inv_n, GradientVector{RealVec(std::move(grad)), {}}};
}

inline LossAndGrad loss_and_grad(const ParamVector& params, const Batch& batch,
                                 const LossKind& loss = CrossEntropy{}) {
  return loss_and_grad(params, batch.features, batch.labels, loss);
}

inline ParamVector sgd_step(const ParamVector& params, const RealVec& grad, double lr) {
  if (!(lr > 0.0)) throw Error(ErrorKind::InvalidSpec, "learning rate must be positive");
  return {params.spec, axpby(1.0, params.values, -lr, grad)};
}

inline ParamVector sgd_step(const ParamVector& params, const GradientVector& grad, double lr) {
  return sgd_step(params, grad.values, lr);
}

// Accuracy uses argmax with ties going to the lowest class index.
inline Metrics evaluate(const ParamVector& params, const RealMat& x, std::span<const int> labels,
                        const LossKind& loss = CrossEntropy{}) {
  if (x.rows() == 0) throw Error(ErrorKind::EmptyDataset, "evaluate needs at least one sample");
  detail::check_batch(params.spec, x, labels);
  const RealMat logits = forward(params, x);
  std::size_t correct = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = logits.row(r);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    const int y = labels[r];
    if (best == static_cast<std::size_t>(y)) ++correct;
    total += detail::class_weight(loss, y) * (detail::log_sum_exp(row) - row[static_cast<std::size_t>(y)]);
  }
  const double n = static_cast<double>(x.rows());
  return {static_cast<double>(correct) / n, total / n};
}

}  // namespace fedalign
