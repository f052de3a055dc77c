#pragma once

// Simulated federated rounds: one client per source domain, gradient
// exchange (optionally through the operator facade), server-side
// aggregation, and per-round leave-one-domain-out evaluation.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedalign/aggregation.hpp"
#include "fedalign/domains.hpp"
#include "fedalign/error.hpp"
#include "fedalign/hekit.hpp"
#include "fedalign/models.hpp"
#include "fedalign/numcore.hpp"

namespace fedalign {

struct LrDecay {
  std::size_t every_n_rounds = 80;
  double factor = 0.1;
  friend bool operator==(const LrDecay&, const LrDecay&) = default;
};

struct FedConfig {
  Strategy strategy = Strategy::aligned;
  std::size_t rounds = 2000;
  std::size_t local_steps = 1;
  std::size_t batch_size = 6;
  double lr = 0.001;
  std::optional<LrDecay> lr_decay;
  std::optional<double> lambda;                   // aligned only
  std::optional<double> mu;                       // fedprox only
  std::optional<std::size_t> pooled_batch_size;   // deepall only; default batch_size * sources
  Weighting weighting = Weighting::uniform;
  bool accumulate = true;
  AlignTarget target = AlignTarget::original;
  VisitOrder order = VisitOrder::random;
  std::uint64_t seed = 0;
  bool encrypt = false;
  std::int64_t cipher_scale = he::FixedPointCodec::kDefaultScale;

  static constexpr double kDefaultLambda = 0.1;
  static constexpr double kDefaultMu = 0.01;

  // Defaults for a strategy: lambda 0.1 (aligned), mu 0.01 (fedprox),
  // 1/K weighting for aligned and n_k/n weighting otherwise.
  static FedConfig defaults(Strategy s) {
    FedConfig c;
    c.strategy = s;
    if (s == Strategy::aligned) c.lambda = kDefaultLambda;
    if (s == Strategy::fedprox) c.mu = kDefaultMu;
    c.weighting = s == Strategy::aligned ? Weighting::uniform : Weighting::sample_weighted;
    return c;
  }

  AlignConfig align_config() const {
    return {lambda.value_or(kDefaultLambda), weighting, accumulate, target, order};
  }

  double lr_at(std::size_t round) const {
    double out = lr;
    if (lr_decay) {
      for (std::size_t k = 0; k < round / lr_decay->every_n_rounds; ++k) out *= lr_decay->factor;
    }
    return out;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidSpec, m); };
    if (local_steps == 0) fail("local_steps must be >= 1");
    if (batch_size == 0) fail("batch_size must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
    if (lr_decay) {
      if (lr_decay->every_n_rounds == 0) fail("lr_decay.every_n_rounds must be >= 1");
      if (!(lr_decay->factor > 0.0) || !std::isfinite(lr_decay->factor)) fail("lr_decay.factor must be positive");
    }
    if (lambda.has_value() != (strategy == Strategy::aligned)) fail("lambda is set exactly when strategy is aligned");
    if (lambda) align_config().validate();
    if (mu.has_value() != (strategy == Strategy::fedprox)) fail("mu is set exactly when strategy is fedprox");
    if (mu && (!(*mu >= 0.0) || !std::isfinite(*mu))) fail("mu must be nonnegative");
    if (pooled_batch_size.has_value() && strategy != Strategy::deepall) fail("pooled_batch_size is deepall only");
    if (pooled_batch_size && *pooled_batch_size == 0) fail("pooled_batch_size must be >= 1");
    he::FixedPointCodec check(cipher_scale);
    (void)check;
  }
};

struct ClientState {
  std::string client_id;
  DomainDataset dataset;
  std::size_t index = 0;
};

struct ServerState {
  ParamVector params;
  std::size_t round = 0;
};

struct ClientRoundStat {
  std::string client_id;
  double local_loss = 0.0;
  double grad_norm = 0.0;
  friend bool operator==(const ClientRoundStat&, const ClientRoundStat&) = default;
};

struct DomainMetrics {
  std::string domain_id;
  Metrics metrics;
};

struct RoundRecord {
  std::size_t round = 0;
  double lr = 0.0;
  std::vector<ClientRoundStat> per_client;
  AggregationReport aggregation;
  std::optional<he::TraceAudit> trace_audit;
  Metrics target_metrics;
  std::vector<DomainMetrics> source_metrics;
};

struct ExperimentResult {
  Strategy strategy = Strategy::fedavg;
  std::string target;
  std::vector<std::string> sources;
  ParamVector initial_params{ModelSpec{}, RealVec::zeros(ModelSpec{}.param_count())};
  ParamVector final_params{ModelSpec{}, RealVec::zeros(ModelSpec{}.param_count())};
  Metrics initial_target_metrics;
  Metrics final_target_metrics;
  std::vector<DomainMetrics> final_source_metrics;
  std::vector<RoundRecord> rounds;

  std::size_t rounds_with_conflict() const {
    std::size_t n = 0;
    for (const auto& r : rounds) n += r.aggregation.conflict_pairs.empty() ? 0 : 1;
    return n;
  }
};

// Stream tags under the run seed.
inline constexpr std::uint64_t kClientStreamTag = 1;
inline constexpr std::uint64_t kInitStreamTag = 2;
inline constexpr std::uint64_t kOrderStreamTag = 3;

// Batch stream of client `index` in `round`; independent of execution order.
inline Rng client_rng(std::uint64_t seed, std::size_t index, std::size_t round) {
  return Rng(derive_seed(derive_seed(seed, kClientStreamTag), index, round));
}

inline Rng order_rng(std::uint64_t seed, std::size_t round) {
  return Rng(derive_seed(derive_seed(seed, kOrderStreamTag), round));
}

inline ParamVector initial_params(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kInitStreamTag));
  return init_params(spec, rng);
}

// One client's contribution at the current global parameters. With
// local_steps > 1 the returned gradient is the local displacement divided by
// lr, so a single server step with lr lands on the local endpoint.
inline ClientUpdate client_local_step(const ClientState& state, const ParamVector& global, const FedConfig& cfg,
                                      std::size_t round, const LossKind& loss = CrossEntropy{},
                                      std::optional<std::size_t> batch_size = std::nullopt) {
  if (state.dataset.size() == 0) throw Error(ErrorKind::EmptyDataset, "client '" + state.client_id + "' has no data");
  Rng rng = client_rng(cfg.seed, state.index, round);
  const double lr = cfg.lr_at(round);
  const std::size_t bs = batch_size.value_or(cfg.batch_size);
  const bool prox = cfg.strategy == Strategy::fedprox;
  const double mu = cfg.mu.value_or(0.0);

  ParamVector w = global;
  double first_loss = 0.0;
  std::optional<RealVec> single_grad;
  for (std::size_t step = 0; step < cfg.local_steps; ++step) {
    const Batch batch = minibatch(state.dataset, bs, rng);
    LossAndGrad lg = loss_and_grad(w, batch, loss);
    if (step == 0) first_loss = lg.loss;
    RealVec g = std::move(lg.grad.values);
    if (prox) g = axpby(1.0, g, mu, axpby(1.0, w.values, -1.0, global.values));
    if (cfg.local_steps == 1) {
      single_grad = std::move(g);
      break;
    }
    w = sgd_step(w, g, lr);
  }
  RealVec eff = single_grad ? std::move(*single_grad) : scale(1.0 / lr, axpby(1.0, global.values, -1.0, w.values));
  return {state.client_id, GradientVector{std::move(eff), state.client_id}, state.dataset.size(), first_loss};
}

namespace detail {

inline AggregationReport aggregate_for(const std::vector<ClientUpdate>& updates, const FedConfig& cfg,
                                       std::size_t round) {
  if (cfg.strategy == Strategy::aligned) {
    Rng rng = order_rng(cfg.seed, round);
    return aggregate_aligned(updates, cfg.align_config(), rng);
  }
  AggregationReport rep = aggregate_fedavg(updates, cfg.weighting);
  rep.strategy = cfg.strategy;
  return rep;
}

// Clients encrypt; the server combines handles using the plaintext report
// only as the trusted comparator's conflict schedule; clients decrypt.
inline he::TraceAudit encrypted_roundtrip(const std::vector<ClientUpdate>& updates, AggregationReport& rep,
                                          const FedConfig& cfg) {
  const he::TransparentCipher cipher = he::transparent_cipher(cfg.cipher_scale);
  std::vector<std::vector<he::CipherHandle>> enc;
  enc.reserve(updates.size());
  for (const auto& u : updates) enc.push_back(he::enc_vec(cipher, u.gradient.values));
  const std::vector<TestedPair> none;
  const std::span<const TestedPair> schedule =
      rep.strategy == Strategy::aligned ? std::span<const TestedPair>(rep.tested_pairs) : std::span<const TestedPair>(none);
  const double lambda = rep.strategy == Strategy::aligned ? rep.lambda : FedConfig::kDefaultLambda;
  auto out = he::aligned_aggregate_encrypted(enc, lambda, schedule, cipher, rep.weights, rep.accumulate, rep.target);
  rep.aggregated = {he::dec_vec(cipher, out.aggregated), "server"};
  return out.audit;
}

inline std::vector<DomainMetrics> evaluate_all(const ParamVector& p, const std::vector<DomainDataset>& domains,
                                               const LossKind& loss) {
  std::vector<DomainMetrics> out;
  for (const auto& d : domains) out.push_back({d.domain_id, evaluate(p, d.features, d.labels, loss)});
  return out;
}

}  // namespace detail

inline RoundRecord run_round(ServerState& server, const std::vector<ClientState>& clients, const DomainDataset& target,
                             const FedConfig& cfg, const LossKind& loss = CrossEntropy{},
                             const std::vector<DomainDataset>* source_eval = nullptr) {
  if (clients.empty()) throw Error(ErrorKind::EmptyUpdateSet, "run_round needs at least one client");
  RoundRecord rec;
  rec.round = server.round;
  rec.lr = cfg.lr_at(server.round);

  std::vector<ClientUpdate> updates;
  updates.reserve(clients.size());
  for (const auto& c : clients) {
    updates.push_back(client_local_step(c, server.params, cfg, server.round, loss));
    rec.per_client.push_back({c.client_id, updates.back().local_loss, norm(updates.back().gradient.values)});
  }

  rec.aggregation = detail::aggregate_for(updates, cfg, server.round);
  if (cfg.encrypt) rec.trace_audit = detail::encrypted_roundtrip(updates, rec.aggregation, cfg);

  server.params = sgd_step(server.params, rec.aggregation.aggregated, rec.lr);
  ++server.round;

  rec.target_metrics = evaluate(server.params, target.features, target.labels, loss);
  if (source_eval) {
    rec.source_metrics = detail::evaluate_all(server.params, *source_eval, loss);
  } else {
    for (const auto& c : clients) {
      rec.source_metrics.push_back({c.client_id, evaluate(server.params, c.dataset.features, c.dataset.labels, loss)});
    }
  }
  return rec;
}

namespace detail {

inline LeaveOneOut prepare(const DomainSuite& suite, const std::string& target, const ModelSpec& model,
                           const FedConfig& cfg) {
  suite.validate();
  model.validate();
  cfg.validate();
  if (model.input_dim != suite.domains.front().dim()) {
    throw Error(ErrorKind::DimensionMismatch, "model input_dim " + std::to_string(model.input_dim) +
                                                  " does not match feature dimension " +
                                                  std::to_string(suite.domains.front().dim()));
  }
  if (model.num_classes != suite.num_classes) {
    throw Error(ErrorKind::DimensionMismatch, "model num_classes does not match the suite");
  }
  return leave_one_out(suite, target);
}

inline void finish(ExperimentResult& res, const ServerState& server, const DomainDataset& target,
                   const std::vector<DomainDataset>& sources, const LossKind& loss) {
  res.final_params = server.params;
  res.final_target_metrics = evaluate(server.params, target.features, target.labels, loss);
  res.final_source_metrics = evaluate_all(server.params, sources, loss);
}

}  // namespace detail

inline ExperimentResult run_experiment(const DomainSuite& suite, const std::string& target, const ModelSpec& model,
                                       const FedConfig& cfg, const LossKind& loss = CrossEntropy{}) {
  if (cfg.strategy == Strategy::deepall) {
    throw Error(ErrorKind::InvalidSpec, "deepall is centralized; use run_deepall");
  }
  const LeaveOneOut split = detail::prepare(suite, target, model, cfg);

  std::vector<ClientState> clients;
  for (std::size_t k = 0; k < split.sources.size(); ++k) {
    clients.push_back({split.sources[k].domain_id, split.sources[k], k});
  }

  ExperimentResult res;
  res.strategy = cfg.strategy;
  res.target = target;
  for (const auto& s : split.sources) res.sources.push_back(s.domain_id);
  ServerState server{initial_params(model, cfg.seed), 0};
  res.initial_params = server.params;
  res.initial_target_metrics = evaluate(server.params, split.target.features, split.target.labels, loss);
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    res.rounds.push_back(run_round(server, clients, split.target, cfg, loss));
  }
  detail::finish(res, server, split.target, split.sources, loss);
  return res;
}

// Centralized baseline: all source domains pooled into one client that
// draws batches of pooled_batch_size (default batch_size * #sources) from the
// same stream client 0 would use, with the same step count per round.
inline ExperimentResult run_deepall(const DomainSuite& suite, const std::string& target, const ModelSpec& model,
                                    const FedConfig& cfg, const LossKind& loss = CrossEntropy{}) {
  const LeaveOneOut split = detail::prepare(suite, target, model, cfg);
  FedConfig pooled_cfg = cfg;
  pooled_cfg.strategy = Strategy::deepall;
  pooled_cfg.lambda.reset();
  pooled_cfg.mu.reset();
  pooled_cfg.encrypt = false;
  pooled_cfg.batch_size = cfg.pooled_batch_size.value_or(cfg.batch_size * split.sources.size());
  pooled_cfg.pooled_batch_size.reset();

  const std::vector<ClientState> clients{{"pooled", pool(split.sources, "pooled"), 0}};

  ExperimentResult res;
  res.strategy = Strategy::deepall;
  res.target = target;
  for (const auto& s : split.sources) res.sources.push_back(s.domain_id);
  ServerState server{initial_params(model, cfg.seed), 0};
  res.initial_params = server.params;
  res.initial_target_metrics = evaluate(server.params, split.target.features, split.target.labels, loss);
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    res.rounds.push_back(run_round(server, clients, split.target, pooled_cfg, loss, &split.sources));
  }
  detail::finish(res, server, split.target, split.sources, loss);
  return res;
}

inline ExperimentResult run_any(const DomainSuite& suite, const std::string& target, const ModelSpec& model,
                                const FedConfig& cfg, const LossKind& loss = CrossEntropy{}) {
  return cfg.strategy == Strategy::deepall ? run_deepall(suite, target, model, cfg, loss)
                                           : run_experiment(suite, target, model, cfg, loss);
}

}  // namespace fedalign
