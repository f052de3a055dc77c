#pragma once

// JSON views of reports and results, plus the per-round CSV stream.

#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedalign/aggregation.hpp"
#include "fedalign/federation.hpp"
#include "fedalign/format.hpp"
#include "fedalign/hekit.hpp"

namespace fedalign {

using Json = nlohmann::json;

inline Json to_json(const RealVec& v) { return Json(v.values()); }

inline Json to_json(const Metrics& m) { return Json{{"accuracy", m.accuracy}, {"loss", m.loss}}; }

inline Json to_json(const AggregationReport& r) {
  Json aligned = Json::array();
  for (const auto& g : r.aligned) aligned.push_back({{"source", g.source}, {"values", to_json(g.values)}});
  Json conflicts = Json::array();
  for (const auto& c : r.conflict_pairs) conflicts.push_back({{"i", c.i}, {"j", c.j}, {"inner_product", c.inner_product}});
  Json tested = Json::array();
  for (const auto& t : r.tested_pairs) {
    tested.push_back({{"i", t.i}, {"j", t.j}, {"inner_product", t.inner_product}, {"conflict", t.conflict}});
  }
  return Json{
      {"strategy", to_string(r.strategy)},
      {"aggregated", to_json(r.aggregated.values)},
      {"aligned", std::move(aligned)},
      {"conflict_pairs", std::move(conflicts)},
      {"tested_pairs", std::move(tested)},
      {"variance_before", r.variance_before},
      {"variance_after", r.variance_after},
      {"order_used", {{"outer", r.outer_order}, {"inner", r.inner_orders}, {"mode", to_string(r.order)}}},
      {"weights", r.weights},
      {"semantics",
       {{"lambda", r.lambda},
        {"weighting", to_string(r.weighting)},
        {"accumulate", r.accumulate},
        {"target", to_string(r.target)}}},
  };
}

inline Json to_json(const he::TraceAudit& a) {
  Json counts = Json::object();
  for (std::size_t t = 0; t < a.op_counts.size(); ++t) {
    counts[he::to_string(static_cast<he::OpTag>(t))] = a.op_counts[t];
  }
  Json allowed = Json::array();
  for (auto t : he::kAllowedTags) allowed.push_back(he::to_string(t));
  return Json{{"op_counts", counts},
              {"coordinates", a.coordinates},
              {"max_trace_length", a.max_trace_length},
              {"plaintext_accesses", a.plaintext_accesses},
              {"only_allowed_tags", a.only_allowed_tags},
              {"allowed_tags", allowed}};
}

inline Json to_json(const std::vector<DomainMetrics>& ms) {
  Json out = Json::array();
  for (const auto& m : ms) out.push_back({{"domain", m.domain_id}, {"accuracy", m.metrics.accuracy}, {"loss", m.metrics.loss}});
  return out;
}

inline Json to_json(const RoundRecord& r) {
  Json clients = Json::array();
  for (const auto& c : r.per_client) {
    clients.push_back({{"client_id", c.client_id}, {"local_loss", c.local_loss}, {"grad_norm", c.grad_norm}});
  }
  Json j{{"round", r.round},
         {"lr", r.lr},
         {"per_client", std::move(clients)},
         {"aggregation", to_json(r.aggregation)},
         {"target_metrics", to_json(r.target_metrics)},
         {"source_metrics", to_json(r.source_metrics)}};
  if (r.trace_audit) j["trace_audit"] = to_json(*r.trace_audit);
  return j;
}

// Conflict statistics over a trajectory: fraction of rounds with at least
// one conflicting pair, and mean variance before/after over those rounds.
struct ConflictStats {
  std::size_t rounds = 0;
  std::size_t conflict_rounds = 0;
  double mean_variance_before = 0.0;
  double mean_variance_after = 0.0;

  double conflict_fraction() const { return rounds == 0 ? 0.0 : static_cast<double>(conflict_rounds) / rounds; }
};

inline ConflictStats conflict_stats(const ExperimentResult& res) {
  ConflictStats s;
  s.rounds = res.rounds.size();
  for (const auto& r : res.rounds) {
    if (r.aggregation.conflict_pairs.empty()) continue;
    ++s.conflict_rounds;
    s.mean_variance_before += r.aggregation.variance_before;
    s.mean_variance_after += r.aggregation.variance_after;
  }
  if (s.conflict_rounds > 0) {
    s.mean_variance_before /= static_cast<double>(s.conflict_rounds);
    s.mean_variance_after /= static_cast<double>(s.conflict_rounds);
  }
  return s;
}

inline Json summary_json(const ExperimentResult& res) {
  const ConflictStats cs = conflict_stats(res);
  return Json{{"strategy", to_string(res.strategy)},
              {"target", res.target},
              {"sources", res.sources},
              {"rounds", res.rounds.size()},
              {"initial_target", to_json(res.initial_target_metrics)},
              {"final_target", to_json(res.final_target_metrics)},
              {"final_sources", to_json(res.final_source_metrics)},
              {"final_params", to_json(res.final_params.values)},
              {"conflicts",
               {{"rounds_with_conflict", cs.conflict_rounds},
                {"fraction", cs.conflict_fraction()},
                {"mean_variance_before", cs.mean_variance_before},
                {"mean_variance_after", cs.mean_variance_after}}}};
}

inline Json to_json(const ExperimentResult& res) {
  Json j = summary_json(res);
  j["initial_params"] = to_json(res.initial_params.values);
  Json rounds = Json::array();
  for (const auto& r : res.rounds) rounds.push_back(to_json(r));
  j["round_records"] = std::move(rounds);
  return j;
}

// One row per round, fixed column order.
inline void write_rounds_csv(const ExperimentResult& res, std::ostream& out) {
  out << "round,lr,target_accuracy,target_loss,mean_local_loss,num_conflicts,variance_before,variance_after,"
         "aggregated_norm";
  for (const auto& s : res.sources) out << ",source_" << s << "_accuracy";
  out << '\n';
  for (const auto& r : res.rounds) {
    double mean_loss = 0.0;
    for (const auto& c : r.per_client) mean_loss += c.local_loss;
    if (!r.per_client.empty()) mean_loss /= static_cast<double>(r.per_client.size());
    out << r.round << ',' << format_real(r.lr) << ',' << format_real(r.target_metrics.accuracy) << ','
        << format_real(r.target_metrics.loss) << ',' << format_real(mean_loss) << ','
        << r.aggregation.conflict_pairs.size() << ',' << format_real(r.aggregation.variance_before) << ','
        << format_real(r.aggregation.variance_after) << ',' << format_real(norm(r.aggregation.aggregated.values));
    for (const auto& m : r.source_metrics) out << ',' << format_real(m.metrics.accuracy);
    out << '\n';
  }
}

}  // namespace fedalign
