#pragma once

// Test-only reference computations, written independently of the library's
// implementation paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fedalign/models.hpp"

namespace fedalign::testing {

// Central finite differences of the mean loss with respect to every parameter.
inline std::vector<double> finite_difference_grad(const ParamVector& p, const RealMat& x, std::span<const int> y,
                                                  const LossKind& loss, double h = 1e-6) {
  std::vector<double> base = p.values.values();
  std::vector<double> out(base.size());
  for (std::size_t k = 0; k < base.size(); ++k) {
    std::vector<double> plus = base, minus = base;
    plus[k] += h;
    minus[k] -= h;
    const double lp = loss_and_grad(ParamVector(p.spec, RealVec(plus)), x, y, loss).loss;
    const double lm = loss_and_grad(ParamVector(p.spec, RealVec(minus)), x, y, loss).loss;
    out[k] = (lp - lm) / (2.0 * h);
  }
  return out;
}

// Relative error with a floor on the denominator so entries that are
// analytically ~0 are judged on absolute error instead.
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-3) {
  double worst = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    const double denom = std::max({std::fabs(analytic[k]), std::fabs(numeric[k]), floor});
    worst = std::max(worst, std::fabs(analytic[k] - numeric[k]) / denom);
  }
  return worst;
}

struct RandomProblem {
  ParamVector params;
  RealMat x;
  std::vector<int> y;
  LossKind loss;
};

// Random spec (logistic or MLP, relu or tanh), random params and batch.
inline RandomProblem random_problem(Rng& rng) {
  ModelSpec s;
  s.input_dim = 1 + rng.uniform_int(4);
  s.hidden_dim = rng.uniform_int(2) == 0 ? 0 : 1 + rng.uniform_int(6);
  s.num_classes = 2 + rng.uniform_int(3);
  s.activation = rng.uniform_int(2) == 0 ? Activation::relu : Activation::tanh;
  std::vector<double> w(s.param_count());
  for (auto& v : w) v = rng.uniform(-1.5, 1.5);
  const std::size_t n = 1 + rng.uniform_int(8);
  RealMat x(n, s.input_dim);
  std::vector<int> y(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < s.input_dim; ++c) x(r, c) = rng.uniform(-2.0, 2.0);
    y[r] = static_cast<int>(rng.uniform_int(s.num_classes));
  }
  LossKind loss = CrossEntropy{};
  if (rng.uniform_int(2) == 0) {
    WeightedCrossEntropy wce;
    for (std::size_t c = 0; c < s.num_classes; ++c) wce.class_weights.push_back(rng.uniform(0.2, 3.0));
    loss = wce;
  }
  return {ParamVector(s, RealVec(std::move(w))), std::move(x), std::move(y), std::move(loss)};
}

}  // namespace fedalign::testing
