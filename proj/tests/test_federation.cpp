#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fedalign/federation.hpp"

using namespace fedalign;

namespace {

SyntheticSpec bench_spec(std::size_t n = 60) {
  SyntheticSpec s;
  s.samples_per_domain = n;
  s.seed = 3;
  return s;
}

const ModelSpec kMlp{2, 8, 2, Activation::tanh};

FedConfig quick(Strategy s, std::size_t rounds = 5) {
  FedConfig c = FedConfig::defaults(s);
  c.rounds = rounds;
  c.lr = 0.05;
  c.seed = 11;
  return c;
}

ClientState client_of(const DomainSuite& suite, std::size_t idx) {
  return {suite.domains[idx].domain_id, suite.domains[idx], idx};
}

// Two-domain suite: the given source plus a copy as target.
DomainSuite pair_suite(const DomainDataset& source) {
  DomainSuite s;
  s.domains = {source, DomainDataset("target", source.features, source.labels)};
  s.num_classes = 2;
  return s;
}

void expect_same_trajectory(const ExperimentResult& a, const ExperimentResult& b) {
  ASSERT_EQ(a.rounds.size(), b.rounds.size());
  EXPECT_EQ(a.initial_params, b.initial_params);
  for (std::size_t r = 0; r < a.rounds.size(); ++r) {
    EXPECT_EQ(a.rounds[r].aggregation.aggregated.values, b.rounds[r].aggregation.aggregated.values) << "round " << r;
    EXPECT_EQ(a.rounds[r].target_metrics, b.rounds[r].target_metrics);
  }
  EXPECT_EQ(a.final_params, b.final_params);
}

}  // namespace

TEST(ClientLocalStep, SingleStepIsTheBatchGradient) {
  const DomainSuite suite = generate(bench_spec());
  const ClientState c = client_of(suite, 1);
  const ParamVector w = initial_params(kMlp, 4);
  const FedConfig cfg = quick(Strategy::fedavg);
  const ClientUpdate u = client_local_step(c, w, cfg, 3);
  Rng rng = client_rng(cfg.seed, 1, 3);
  const auto lg = loss_and_grad(w, minibatch(c.dataset, cfg.batch_size, rng));
  EXPECT_EQ(u.gradient.values, lg.grad.values);
  EXPECT_EQ(u.local_loss, lg.loss);
  EXPECT_EQ(u.num_samples, c.dataset.size());
}

TEST(ClientLocalStep, FedProxSingleStepEqualsFedAvg) {
  const DomainSuite suite = generate(bench_spec());
  const ParamVector w = initial_params(kMlp, 5);
  FedConfig prox = quick(Strategy::fedprox);
  for (double mu : {0.0, 0.01, 10.0}) {
    prox.mu = mu;
    EXPECT_EQ(client_local_step(client_of(suite, 0), w, prox, 2).gradient.values,
              client_local_step(client_of(suite, 0), w, quick(Strategy::fedavg), 2).gradient.values);
  }
}

TEST(ClientLocalStep, TwoStepsMatchComposedSgd) {
  const DomainSuite suite = generate(bench_spec());
  const ClientState c = client_of(suite, 2);
  const ParamVector w0 = initial_params(kMlp, 6);
  for (Strategy s : {Strategy::fedavg, Strategy::fedprox}) {
    FedConfig cfg = quick(s);
    cfg.local_steps = 2;
    if (s == Strategy::fedprox) cfg.mu = 0.5;
    const ClientUpdate u = client_local_step(c, w0, cfg, 0);

    Rng rng = client_rng(cfg.seed, 2, 0);
    const auto g1 = loss_and_grad(w0, minibatch(c.dataset, cfg.batch_size, rng)).grad.values;
    const ParamVector w1 = sgd_step(w0, g1, cfg.lr);
    RealVec g2 = loss_and_grad(w1, minibatch(c.dataset, cfg.batch_size, rng)).grad.values;
    if (s == Strategy::fedprox) g2 = axpby(1.0, g2, 0.5, axpby(1.0, w1.values, -1.0, w0.values));
    const ParamVector w2 = sgd_step(w1, g2, cfg.lr);
    for (std::size_t k = 0; k < w0.values.size(); ++k) {
      EXPECT_NEAR(u.gradient.values[k], (w0.values[k] - w2.values[k]) / cfg.lr, 1e-9);
    }
    // One server step with lr lands on the local endpoint.
    const ParamVector landed = sgd_step(w0, u.gradient.values, cfg.lr);
    for (std::size_t k = 0; k < w0.values.size(); ++k) EXPECT_NEAR(landed.values[k], w2.values[k], 1e-12);
  }
}

TEST(ClientLocalStep, EmptyDatasetRejected) {
  const ClientState c{"empty", DomainDataset("empty", RealMat(0, 2), {}), 0};
  try {
    client_local_step(c, initial_params(kMlp, 1), quick(Strategy::fedavg), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyDataset);
  }
}

TEST(RunRound, SingleClientFullBatchIsCentralizedStep) {
  const DomainSuite suite = generate(bench_spec(40));
  const ClientState c = client_of(suite, 0);
  FedConfig cfg = quick(Strategy::fedavg);
  cfg.batch_size = c.dataset.size();
  ServerState server{initial_params(kMlp, 9), 0};
  const ParamVector w0 = server.params;
  const RoundRecord rec = run_round(server, {c}, suite.domains[3], cfg);
  const ParamVector expect = sgd_step(w0, loss_and_grad(w0, c.dataset.features, c.dataset.labels).grad.values, cfg.lr);
  for (std::size_t k = 0; k < w0.values.size(); ++k) EXPECT_NEAR(server.params.values[k], expect.values[k], 1e-12);
  EXPECT_EQ(server.round, 1u);
  EXPECT_EQ(rec.per_client.size(), 1u);
}

TEST(RunRound, AlignedEqualsFedAvgOnIdenticalClients) {
  const DomainSuite suite = generate(bench_spec());
  const DomainDataset& d = suite.domains[0];
  // Identical data and identical batch streams: every pair has <g, g> >= 0.
  FedConfig al = quick(Strategy::aligned);
  FedConfig fa = quick(Strategy::fedavg);
  fa.weighting = Weighting::uniform;
  for (FedConfig* cfg : {&al, &fa}) cfg->batch_size = d.size();
  const std::vector<ClientState> clients{{"a", d, 0}, {"b", d, 1}, {"c", d, 2}};
  ServerState s1{initial_params(kMlp, 2), 0}, s2 = s1;
  for (int r = 0; r < 3; ++r) {
    run_round(s1, clients, suite.domains[1], al);
    run_round(s2, clients, suite.domains[1], fa);
  }
  EXPECT_EQ(s1.params, s2.params);
}

TEST(RunExperiment, ZeroRoundsLeavesModelUntrained) {
  const DomainSuite suite = generate(bench_spec());
  for (Strategy s : {Strategy::fedavg, Strategy::aligned, Strategy::deepall}) {
    const auto res = run_any(suite, "domain3", kMlp, quick(s, 0));
    EXPECT_EQ(res.final_params, res.initial_params);
    EXPECT_EQ(res.final_target_metrics, res.initial_target_metrics);
    EXPECT_TRUE(res.rounds.empty());
  }
}

TEST(RunExperiment, ReplayIsIdentical) {
  const DomainSuite suite = generate(bench_spec());
  for (Strategy s : {Strategy::fedavg, Strategy::fedprox, Strategy::aligned, Strategy::deepall}) {
    FedConfig cfg = quick(s, 8);
    cfg.local_steps = 2;
    const auto a = run_any(suite, "domain1", kMlp, cfg);
    const auto b = run_any(suite, "domain1", kMlp, cfg);
    expect_same_trajectory(a, b);
    for (std::size_t r = 0; r < a.rounds.size(); ++r) EXPECT_EQ(a.rounds[r].aggregation, b.rounds[r].aggregation);
  }
}

TEST(RunExperiment, SingleSourceStrategiesCoincide) {
  const DomainSuite base = generate(bench_spec());
  const DomainSuite suite = pair_suite(base.domains[2]);
  const auto ref = run_any(suite, "target", kMlp, quick(Strategy::fedavg, 10));
  for (Strategy s : {Strategy::fedprox, Strategy::aligned, Strategy::deepall}) {
    expect_same_trajectory(ref, run_any(suite, "target", kMlp, quick(s, 10)));
  }
}

TEST(RunExperiment, EncryptedMatchesPlaintext) {
  const DomainSuite suite = generate(bench_spec());
  for (Strategy s : {Strategy::aligned, Strategy::fedavg}) {
    FedConfig cfg = quick(s, 10);
    const auto plain = run_any(suite, "domain0", kMlp, cfg);
    cfg.encrypt = true;
    const auto enc = run_any(suite, "domain0", kMlp, cfg);
    for (std::size_t k = 0; k < plain.final_params.values.size(); ++k) {
      EXPECT_NEAR(enc.final_params.values[k], plain.final_params.values[k], 1e-6);
    }
    for (const auto& r : enc.rounds) {
      ASSERT_TRUE(r.trace_audit.has_value());
      EXPECT_TRUE(r.trace_audit->only_allowed_tags);
    }
  }
}

TEST(RunExperiment, ConflictsOccurOnRotatedBenchmark) {
  const DomainSuite suite = generate(bench_spec(200));
  const auto res = run_any(suite, "domain3", kMlp, quick(Strategy::aligned, 40));
  EXPECT_GT(res.rounds_with_conflict(), 0u);
  for (const auto& r : res.rounds) {
    for (double v : r.aggregation.aggregated.values) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(RunExperiment, ErrorPaths) {
  const DomainSuite suite = generate(bench_spec());
  try {
    run_any(suite, "domain9", kMlp, quick(Strategy::fedavg));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnknownDomain);
  }
  DomainSuite single;
  single.domains = {suite.domains[0]};
  single.num_classes = 2;
  try {
    run_any(single, "domain0", kMlp, quick(Strategy::fedavg));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientDomains);
  }
  EXPECT_THROW(run_experiment(suite, "domain0", kMlp, quick(Strategy::deepall)), Error);
  FedConfig bad = quick(Strategy::fedavg);
  bad.lambda = 0.1;
  EXPECT_THROW(run_any(suite, "domain0", kMlp, bad), Error);
}

TEST(FedConfig, DefaultsAndLrSchedule) {
  const FedConfig al = FedConfig::defaults(Strategy::aligned);
  EXPECT_EQ(al.lambda, 0.1);
  EXPECT_EQ(al.local_steps, 1u);
  EXPECT_EQ(al.lr, 0.001);
  EXPECT_EQ(al.weighting, Weighting::uniform);
  EXPECT_EQ(FedConfig::defaults(Strategy::fedprox).mu, 0.01);
  EXPECT_EQ(FedConfig::defaults(Strategy::fedavg).weighting, Weighting::sample_weighted);

  FedConfig c = al;
  c.lr = 1.0;
  c.lr_decay = LrDecay{80, 0.1};
  EXPECT_EQ(c.lr_at(0), 1.0);
  EXPECT_EQ(c.lr_at(79), 1.0);
  EXPECT_DOUBLE_EQ(c.lr_at(80), 0.1);
  EXPECT_DOUBLE_EQ(c.lr_at(159), 0.1);
  EXPECT_DOUBLE_EQ(c.lr_at(160), 0.01);
}

TEST(RunExperiment, LrDecayAppliedAtBoundaries) {
  const DomainSuite suite = generate(bench_spec());
  FedConfig cfg = quick(Strategy::fedavg, 7);
  cfg.lr_decay = LrDecay{3, 0.5};
  const auto res = run_any(suite, "domain2", kMlp, cfg);
  const std::vector<double> want{0.05, 0.05, 0.05, 0.025, 0.025, 0.025, 0.0125};
  for (std::size_t r = 0; r < want.size(); ++r) EXPECT_EQ(res.rounds[r].lr, want[r]);
}

TEST(RunDeepall, PooledBatchDefaultsToSumOfClientBatches) {
  const DomainSuite suite = generate(bench_spec());
  FedConfig cfg = quick(Strategy::deepall, 1);
  const auto res = run_deepall(suite, "domain3", kMlp, cfg);
  ASSERT_EQ(res.rounds.size(), 1u);
  EXPECT_EQ(res.rounds[0].per_client.size(), 1u);
  EXPECT_EQ(res.rounds[0].source_metrics.size(), 3u);
  EXPECT_EQ(res.sources.size(), 3u);
}
