#pragma once

// Server-side gradient combination: conflict-aware gradient alignment,
// weighted averaging, and the pairwise domain-variance diagnostic.

#include <cstddef>
#include <string>
#include <vector>

#include "fedalign/error.hpp"
#include "fedalign/models.hpp"
#include "fedalign/numcore.hpp"

namespace fedalign {

enum class Strategy { fedavg, fedprox, aligned, deepall };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::fedavg: return "fedavg";
    case Strategy::fedprox: return "fedprox";
    case Strategy::aligned: return "aligned";
    case Strategy::deepall: return "deepall";
  }
  return "unknown";
}

// uniform: 1/K per client. sample_weighted: p_k = n_k / n.
enum class Weighting { uniform, sample_weighted };

inline std::string to_string(Weighting w) { return w == Weighting::uniform ? "uniform" : "sample_weighted"; }

// Which vector a client is tested and pulled against: the gradient the
// other client sent, or that client's own in-progress aligned copy.
enum class AlignTarget { original, current };

inline std::string to_string(AlignTarget t) { return t == AlignTarget::original ? "original" : "current"; }

// random: outer and inner visiting orders are drawn from the rng.
// fixed: index order, i.e. the loops exactly as printed in the algorithm.
enum class VisitOrder { random, fixed };

inline std::string to_string(VisitOrder o) { return o == VisitOrder::random ? "random" : "fixed"; }

struct AlignConfig {
  double lambda = 0.1;
  Weighting weighting = Weighting::uniform;
  // true: corrections compound on a working copy. false: each conflicting j
  // restarts from the original gradient and the last one wins.
  bool accumulate = true;
  AlignTarget target = AlignTarget::original;
  VisitOrder order = VisitOrder::random;

  void validate() const {
    if (!(lambda > 0.0 && lambda <= 0.5)) {
      throw Error(ErrorKind::InvalidLambda, "lambda must lie in (0, 0.5], got " + std::to_string(lambda));
    }
  }
};

struct ClientUpdate {
  std::string client_id;
  GradientVector gradient;
  std::size_t num_samples = 1;
  double local_loss = 0.0;
};

struct ConflictPair {
  std::size_t i = 0;
  std::size_t j = 0;
  double inner_product = 0.0;
  friend bool operator==(const ConflictPair&, const ConflictPair&) = default;
};

// One (i, j) inner-product test, in the order it was performed.
struct TestedPair {
  std::size_t i = 0;
  std::size_t j = 0;
  double inner_product = 0.0;
  bool conflict = false;
  friend bool operator==(const TestedPair&, const TestedPair&) = default;
};

struct AggregationReport {
  Strategy strategy = Strategy::fedavg;
  GradientVector aggregated;
  std::vector<GradientVector> aligned;
  std::vector<ConflictPair> conflict_pairs;
  std::vector<TestedPair> tested_pairs;
  double variance_before = 0.0;
  double variance_after = 0.0;
  std::vector<std::size_t> outer_order;
  std::vector<std::vector<std::size_t>> inner_orders;  // indexed by position in outer_order
  std::vector<double> weights;
  // Semantics that produced this report.
  double lambda = 0.0;
  Weighting weighting = Weighting::uniform;
  bool accumulate = true;
  AlignTarget target = AlignTarget::original;
  VisitOrder order = VisitOrder::fixed;

  friend bool operator==(const AggregationReport&, const AggregationReport&) = default;
};

struct ConflictTest {
  bool conflict = false;
  double inner_product = 0.0;
};

// Strict: an inner product of exactly zero is not a conflict.
inline ConflictTest detect_conflict(const RealVec& gi, const RealVec& gj) {
  const double d = dot(gi, gj);
  return {d < 0.0, d};
}

inline ConflictTest detect_conflict(const GradientVector& gi, const GradientVector& gj) {
  return detect_conflict(gi.values, gj.values);
}

namespace detail {

inline void check_lambda(double lambda) {
  if (!(lambda > 0.0 && lambda <= 0.5)) {
    throw Error(ErrorKind::InvalidLambda, "lambda must lie in (0, 0.5], got " + std::to_string(lambda));
  }
}

// base - 2*lambda*(base - toward), elementwise.
inline std::vector<double> align_step(std::span<const double> base, std::span<const double> toward, double lambda) {
  std::vector<double> out(base.size());
  for (std::size_t k = 0; k < base.size(); ++k) out[k] = base[k] - 2.0 * lambda * (base[k] - toward[k]);
  return out;
}

inline std::size_t common_length(const std::vector<ClientUpdate>& updates) {
  if (updates.empty()) throw Error(ErrorKind::EmptyUpdateSet, "no client updates to aggregate");
  const std::size_t n = updates.front().gradient.size();
  for (const auto& u : updates) {
    if (u.gradient.size() != n) {
      throw Error(ErrorKind::DimensionMismatch, "client '" + u.client_id + "' sent " +
                                                    std::to_string(u.gradient.size()) + " values, expected " +
                                                    std::to_string(n));
    }
    if (u.num_samples == 0) {
      throw Error(ErrorKind::InvalidSpec, "client '" + u.client_id + "' reports zero samples");
    }
  }
  return n;
}

}  // namespace detail

// One alignment of g_i toward g_j: g_i - 2*lambda*(g_i - g_j).
inline GradientVector align_pair(const GradientVector& gi, const GradientVector& gj, double lambda) {
  detail::check_lambda(lambda);
  detail::require_same_length(gi.size(), gj.size(), "align_pair");
  return {RealVec(detail::align_step(gi.values.span(), gj.values.span(), lambda)), gi.source};
}

inline std::vector<double> aggregation_weights(const std::vector<ClientUpdate>& updates, Weighting w) {
  std::vector<double> out(updates.size());
  if (w == Weighting::uniform) {
    const double p = 1.0 / static_cast<double>(updates.size());
    for (auto& x : out) x = p;
    return out;
  }
  double n = 0.0;
  for (const auto& u : updates) n += static_cast<double>(u.num_samples);
  for (std::size_t k = 0; k < updates.size(); ++k) out[k] = static_cast<double>(updates[k].num_samples) / n;
  return out;
}

// sum_k weights[k] * vecs[k], accumulated in index order.
inline RealVec weighted_sum(const std::vector<GradientVector>& vecs, const std::vector<double>& weights) {
  detail::require_same_length(vecs.size(), weights.size(), "weighted_sum");
  if (vecs.empty()) throw Error(ErrorKind::EmptyUpdateSet, "nothing to sum");
  std::vector<double> acc(vecs.front().size(), 0.0);
  for (std::size_t k = 0; k < vecs.size(); ++k) {
    detail::require_same_length(vecs[k].size(), acc.size(), "weighted_sum");
    for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += weights[k] * vecs[k].values[c];
  }
  return RealVec(std::move(acc));
}

// Sum over unordered pairs i < j of ||g_i - g_j||^2.
inline double domain_variance(const std::vector<GradientVector>& grads) {
  if (grads.empty()) throw Error(ErrorKind::EmptyUpdateSet, "domain_variance needs at least one gradient");
  double total = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    for (std::size_t j = i + 1; j < grads.size(); ++j) total += squared_distance(grads[i].values, grads[j].values);
  }
  return total;
}

inline std::vector<GradientVector> gradients_of(const std::vector<ClientUpdate>& updates) {
  std::vector<GradientVector> out;
  out.reserve(updates.size());
  for (const auto& u : updates) out.push_back(u.gradient);
  return out;
}

// Plain weighted averaging. Conflicts are still tested (all ordered pairs,
// index order, original gradients) and reported as a diagnostic.
inline AggregationReport aggregate_fedavg(const std::vector<ClientUpdate>& updates,
                                          Weighting weighting = Weighting::sample_weighted) {
  detail::common_length(updates);
  AggregationReport rep;
  rep.strategy = Strategy::fedavg;
  rep.weighting = weighting;
  rep.accumulate = false;
  rep.order = VisitOrder::fixed;
  rep.aligned = gradients_of(updates);
  const std::size_t k = updates.size();
  for (std::size_t i = 0; i < k; ++i) {
    rep.outer_order.push_back(i);
    std::vector<std::size_t> inner;
    for (std::size_t j = 0; j < k; ++j) {
      if (j == i) continue;
      inner.push_back(j);
      const auto t = detect_conflict(rep.aligned[i], rep.aligned[j]);
      rep.tested_pairs.push_back({i, j, t.inner_product, t.conflict});
      if (t.conflict) rep.conflict_pairs.push_back({i, j, t.inner_product});
    }
    rep.inner_orders.push_back(std::move(inner));
  }
  rep.weights = aggregation_weights(updates, weighting);
  rep.aggregated = {weighted_sum(rep.aligned, rep.weights), "server"};
  rep.variance_before = domain_variance(rep.aligned);
  rep.variance_after = rep.variance_before;
  return rep;
}

// Visiting order: outer over clients, inner over the other clients, either
// drawn from rng or in index order.
struct VisitPlan {
  std::vector<std::size_t> outer;
  std::vector<std::vector<std::size_t>> inner;
};

inline VisitPlan plan_visits(std::size_t k, VisitOrder order, Rng& rng) {
  VisitPlan plan;
  if (order == VisitOrder::fixed) {
    for (std::size_t i = 0; i < k; ++i) plan.outer.push_back(i);
  } else {
    plan.outer = shuffle(rng, k);
  }
  for (std::size_t i : plan.outer) {
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < k; ++j) {
      if (j != i) others.push_back(j);
    }
    if (order == VisitOrder::random) {
      const auto perm = shuffle(rng, others.size());
      std::vector<std::size_t> shuffled(others.size());
      for (std::size_t p = 0; p < perm.size(); ++p) shuffled[p] = others[perm[p]];
      others = std::move(shuffled);
    }
    plan.inner.push_back(std::move(others));
  }
  return plan;
}

// Conflict-aware alignment. For each client i (outer order) and each other
// client j (inner order): if <base_i, t_j> < 0 then
//   h_i = base_i - 2*lambda*(base_i - t_j)
// where base_i is h_i when accumulating (else the original g_i) and t_j is
// g_j (target == original) or h_j (target == current). The aggregate is the
// weighted sum of the h_i in client-index order.
inline AggregationReport aggregate_aligned(const std::vector<ClientUpdate>& updates, const AlignConfig& cfg, Rng& rng) {
  cfg.validate();
  detail::common_length(updates);
  const std::size_t k = updates.size();

  AggregationReport rep;
  rep.strategy = Strategy::aligned;
  rep.lambda = cfg.lambda;
  rep.weighting = cfg.weighting;
  rep.accumulate = cfg.accumulate;
  rep.target = cfg.target;
  rep.order = cfg.order;

  const std::vector<GradientVector> original = gradients_of(updates);
  std::vector<GradientVector> working = original;

  const VisitPlan plan = plan_visits(k, cfg.order, rng);
  for (std::size_t pos = 0; pos < plan.outer.size(); ++pos) {
    const std::size_t i = plan.outer[pos];
    for (std::size_t j : plan.inner[pos]) {
      const RealVec& base = cfg.accumulate ? working[i].values : original[i].values;
      const RealVec& toward = cfg.target == AlignTarget::original ? original[j].values : working[j].values;
      const auto t = detect_conflict(base, toward);
      rep.tested_pairs.push_back({i, j, t.inner_product, t.conflict});
      if (!t.conflict) continue;
      rep.conflict_pairs.push_back({i, j, t.inner_product});
      working[i].values = RealVec(detail::align_step(base.span(), toward.span(), cfg.lambda));
    }
  }

  rep.outer_order = plan.outer;
  rep.inner_orders = plan.inner;
  rep.weights = aggregation_weights(updates, cfg.weighting);
  rep.aggregated = {weighted_sum(working, rep.weights), "server"};
  rep.variance_before = domain_variance(original);
  rep.variance_after = domain_variance(working);
  rep.aligned = std::move(working);
  return rep;
}

}  // namespace fedalign
