#pragma once

// Run and sweep configuration documents (JSON). Parsing is strict: unknown
// keys and out-of-range values raise ConfigError naming the offending field.

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fedalign/aggregation.hpp"
#include "fedalign/domains.hpp"
#include "fedalign/error.hpp"
#include "fedalign/federation.hpp"
#include "fedalign/models.hpp"

namespace fedalign {

using Json = nlohmann::json;

inline constexpr const char* kToolVersion = "0.1.0";

class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(ErrorKind::ConfigError, (field.empty() ? std::string{} : "field '" + field + "': ") + message),
        field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

struct CsvSource {
  std::string path;
  CsvSchema schema;
};

using DataSource = std::variant<SyntheticSpec, CsvSource>;

struct ModelConfig {
  std::size_t hidden_dim = 16;
  Activation activation = Activation::tanh;
  LossKind loss = CrossEntropy{};
};

struct RunConfig {
  DataSource data = SyntheticSpec{};
  std::string target = "domain3";
  ModelConfig model;
  FedConfig federation = FedConfig::defaults(Strategy::aligned);
};

namespace config_detail {

inline std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

inline void reject_unknown(const Json& obj, const std::string& path, std::initializer_list<const char*> known) {
  if (!obj.is_object()) throw ConfigError(path, "expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(join(path, it.key()), "unknown field");
  }
}

inline double get_real(const Json& obj, const std::string& path, const char* key, double fallback) {
  if (!obj.contains(key) || obj[key].is_null()) return fallback;
  if (!obj[key].is_number()) throw ConfigError(join(path, key), "expected a number");
  return obj[key].get<double>();
}

inline std::uint64_t get_uint(const Json& obj, const std::string& path, const char* key, std::uint64_t fallback) {
  if (!obj.contains(key) || obj[key].is_null()) return fallback;
  const Json& v = obj[key];
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ConfigError(join(path, key), "expected a nonnegative integer");
  }
  return v.get<std::uint64_t>();
}

inline bool get_bool(const Json& obj, const std::string& path, const char* key, bool fallback) {
  if (!obj.contains(key) || obj[key].is_null()) return fallback;
  if (!obj[key].is_boolean()) throw ConfigError(join(path, key), "expected true or false");
  return obj[key].get<bool>();
}

inline std::string get_string(const Json& obj, const std::string& path, const char* key, const std::string& fallback) {
  if (!obj.contains(key) || obj[key].is_null()) return fallback;
  if (!obj[key].is_string()) throw ConfigError(join(path, key), "expected a string");
  return obj[key].get<std::string>();
}

template <typename E>
E get_enum(const Json& obj, const std::string& path, const char* key, E fallback,
           std::initializer_list<std::pair<const char*, E>> names) {
  if (!obj.contains(key) || obj[key].is_null()) return fallback;
  const std::string s = get_string(obj, path, key, "");
  std::string valid;
  for (const auto& [n, e] : names) {
    if (s == n) return e;
    valid += valid.empty() ? n : std::string(", ") + n;
  }
  throw ConfigError(join(path, key), "'" + s + "' is not one of {" + valid + "}");
}

inline std::vector<std::string> get_strings(const Json& obj, const std::string& path, const char* key) {
  std::vector<std::string> out;
  if (!obj.contains(key) || obj[key].is_null()) return out;
  if (!obj[key].is_array()) throw ConfigError(join(path, key), "expected an array of strings");
  for (const auto& v : obj[key]) {
    if (!v.is_string()) throw ConfigError(join(path, key), "expected an array of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

inline std::vector<double> get_reals(const Json& obj, const std::string& path, const char* key,
                                     std::vector<double> fallback) {
  if (!obj.contains(key) || obj[key].is_null()) return fallback;
  if (!obj[key].is_array()) throw ConfigError(join(path, key), "expected an array of numbers");
  std::vector<double> out;
  for (const auto& v : obj[key]) {
    if (!v.is_number()) throw ConfigError(join(path, key), "expected an array of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

inline std::optional<std::uint64_t> get_opt_uint(const Json& obj, const std::string& path, const char* key) {
  if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
  return get_uint(obj, path, key, 0);
}

inline std::optional<double> get_opt_real(const Json& obj, const std::string& path, const char* key) {
  if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
  return get_real(obj, path, key, 0.0);
}

}  // namespace config_detail

inline Strategy parse_strategy(const std::string& s, const std::string& field) {
  if (s == "fedavg") return Strategy::fedavg;
  if (s == "fedprox") return Strategy::fedprox;
  if (s == "aligned") return Strategy::aligned;
  if (s == "deepall") return Strategy::deepall;
  throw ConfigError(field, "'" + s + "' is not one of {deepall, fedavg, fedprox, aligned}");
}

inline SyntheticSpec parse_synthetic(const Json& j, const std::string& path) {
  using namespace config_detail;
  reject_unknown(j, path, {"family", "num_domains", "samples_per_domain", "rotation_degrees", "noise_sigma", "seed"});
  SyntheticSpec s;
  s.family = get_enum(j, path, "family", s.family,
                      {{"rotated_gaussians", SyntheticFamily::rotated_gaussians},
                       {"rotated_two_moons", SyntheticFamily::rotated_two_moons}});
  s.num_domains = get_uint(j, path, "num_domains", s.num_domains);
  s.samples_per_domain = get_uint(j, path, "samples_per_domain", s.samples_per_domain);
  s.rotation_degrees = get_reals(j, path, "rotation_degrees", s.rotation_degrees);
  s.noise_sigma = get_real(j, path, "noise_sigma", s.noise_sigma);
  s.seed = get_uint(j, path, "seed", s.seed);
  if (s.num_domains < 2) throw ConfigError(join(path, "num_domains"), "must be >= 2");
  if (s.samples_per_domain == 0) throw ConfigError(join(path, "samples_per_domain"), "must be >= 1");
  if (s.rotation_degrees.size() != s.num_domains) {
    throw ConfigError(join(path, "rotation_degrees"), "needs exactly num_domains (" + std::to_string(s.num_domains) +
                                                          ") entries");
  }
  if (!(s.noise_sigma >= 0.0)) throw ConfigError(join(path, "noise_sigma"), "must be >= 0");
  return s;
}

inline Json to_json(const SyntheticSpec& s) {
  return Json{{"family", to_string(s.family)},        {"num_domains", s.num_domains},
              {"samples_per_domain", s.samples_per_domain}, {"rotation_degrees", s.rotation_degrees},
              {"noise_sigma", s.noise_sigma},         {"seed", s.seed}};
}

inline FedConfig parse_federation(const Json& j, const std::string& path) {
  using namespace config_detail;
  reject_unknown(j, path,
                 {"strategy", "rounds", "local_steps", "batch_size", "lr", "lr_decay", "lambda", "mu",
                  "pooled_batch_size", "weighting", "accumulate", "align_target", "order", "seed", "encrypt",
                  "cipher_scale"});
  const Strategy strategy = parse_strategy(get_string(j, path, "strategy", "aligned"), join(path, "strategy"));
  FedConfig c = FedConfig::defaults(strategy);
  c.rounds = get_uint(j, path, "rounds", c.rounds);
  c.local_steps = get_uint(j, path, "local_steps", c.local_steps);
  c.batch_size = get_uint(j, path, "batch_size", c.batch_size);
  c.lr = get_real(j, path, "lr", c.lr);
  if (j.contains("lr_decay") && !j["lr_decay"].is_null()) {
    const std::string p = join(path, "lr_decay");
    reject_unknown(j["lr_decay"], p, {"every_n_rounds", "factor"});
    LrDecay d;
    d.every_n_rounds = get_uint(j["lr_decay"], p, "every_n_rounds", d.every_n_rounds);
    d.factor = get_real(j["lr_decay"], p, "factor", d.factor);
    if (d.every_n_rounds == 0) throw ConfigError(join(p, "every_n_rounds"), "must be >= 1");
    if (!(d.factor > 0.0)) throw ConfigError(join(p, "factor"), "must be > 0");
    c.lr_decay = d;
  }
  if (auto l = get_opt_real(j, path, "lambda")) {
    if (strategy != Strategy::aligned) throw ConfigError(join(path, "lambda"), "only valid with strategy 'aligned'");
    if (!(*l > 0.0 && *l <= 0.5)) {
      throw ConfigError(join(path, "lambda"), "must lie in (0, 0.5], got " + std::to_string(*l));
    }
    c.lambda = *l;
  }
  if (auto m = get_opt_real(j, path, "mu")) {
    if (strategy != Strategy::fedprox) throw ConfigError(join(path, "mu"), "only valid with strategy 'fedprox'");
    if (!(*m >= 0.0)) throw ConfigError(join(path, "mu"), "must be >= 0");
    c.mu = *m;
  }
  if (auto b = get_opt_uint(j, path, "pooled_batch_size")) {
    if (strategy != Strategy::deepall) {
      throw ConfigError(join(path, "pooled_batch_size"), "only valid with strategy 'deepall'");
    }
    if (*b == 0) throw ConfigError(join(path, "pooled_batch_size"), "must be >= 1");
    c.pooled_batch_size = *b;
  }
  c.weighting = get_enum(j, path, "weighting", c.weighting,
                         {{"uniform", Weighting::uniform}, {"sample_weighted", Weighting::sample_weighted}});
  c.accumulate = get_bool(j, path, "accumulate", c.accumulate);
  c.target = get_enum(j, path, "align_target", c.target,
                      {{"original", AlignTarget::original}, {"current", AlignTarget::current}});
  c.order = get_enum(j, path, "order", c.order, {{"random", VisitOrder::random}, {"fixed", VisitOrder::fixed}});
  c.seed = get_uint(j, path, "seed", c.seed);
  c.encrypt = get_bool(j, path, "encrypt", c.encrypt);
  c.cipher_scale = static_cast<std::int64_t>(get_uint(j, path, "cipher_scale", static_cast<std::uint64_t>(c.cipher_scale)));

  if (c.local_steps == 0) throw ConfigError(join(path, "local_steps"), "must be >= 1");
  if (c.batch_size == 0) throw ConfigError(join(path, "batch_size"), "must be >= 1");
  if (!(c.lr > 0.0)) throw ConfigError(join(path, "lr"), "must be > 0");
  if (c.cipher_scale <= 0 || (c.cipher_scale & (c.cipher_scale - 1)) != 0) {
    throw ConfigError(join(path, "cipher_scale"), "must be a positive power of two");
  }
  if (c.encrypt && strategy == Strategy::deepall) {
    throw ConfigError(join(path, "encrypt"), "deepall is centralized and has nothing to encrypt");
  }
  return c;
}

inline Json to_json(const FedConfig& c) {
  Json j{{"strategy", to_string(c.strategy)},
         {"rounds", c.rounds},
         {"local_steps", c.local_steps},
         {"batch_size", c.batch_size},
         {"lr", c.lr},
         {"lr_decay", nullptr},
         {"weighting", to_string(c.weighting)},
         {"accumulate", c.accumulate},
         {"align_target", to_string(c.target)},
         {"order", to_string(c.order)},
         {"seed", c.seed},
         {"encrypt", c.encrypt},
         {"cipher_scale", c.cipher_scale}};
  if (c.lr_decay) j["lr_decay"] = {{"every_n_rounds", c.lr_decay->every_n_rounds}, {"factor", c.lr_decay->factor}};
  if (c.lambda) j["lambda"] = *c.lambda;
  if (c.mu) j["mu"] = *c.mu;
  if (c.pooled_batch_size) j["pooled_batch_size"] = *c.pooled_batch_size;
  return j;
}

inline RunConfig parse_run_config(const Json& j) {
  using namespace config_detail;
  reject_unknown(j, "", {"data", "target", "model", "federation"});
  RunConfig rc;

  if (j.contains("data")) {
    const Json& d = j["data"];
    reject_unknown(d, "data", {"synthetic", "csv"});
    if (d.contains("synthetic") == d.contains("csv")) {
      throw ConfigError("data", "exactly one of 'synthetic' or 'csv' is required");
    }
    if (d.contains("synthetic")) {
      rc.data = parse_synthetic(d["synthetic"], "data.synthetic");
    } else {
      const Json& c = d["csv"];
      reject_unknown(c, "data.csv", {"path", "feature_cols", "label_col", "domain_col"});
      CsvSource src;
      src.path = get_string(c, "data.csv", "path", "");
      if (src.path.empty()) throw ConfigError("data.csv.path", "is required");
      src.schema.feature_cols = get_strings(c, "data.csv", "feature_cols");
      src.schema.label_col = get_string(c, "data.csv", "label_col", src.schema.label_col);
      src.schema.domain_col = get_string(c, "data.csv", "domain_col", src.schema.domain_col);
      rc.data = src;
    }
  }
  rc.target = get_string(j, "", "target", rc.target);

  if (j.contains("model")) {
    const Json& m = j["model"];
    reject_unknown(m, "model", {"hidden_dim", "activation", "loss", "class_weights"});
    rc.model.hidden_dim = get_uint(m, "model", "hidden_dim", rc.model.hidden_dim);
    rc.model.activation =
        get_enum(m, "model", "activation", rc.model.activation, {{"relu", Activation::relu}, {"tanh", Activation::tanh}});
    const std::string loss = get_string(m, "model", "loss", "cross_entropy");
    if (loss == "cross_entropy") {
      if (m.contains("class_weights")) throw ConfigError("model.class_weights", "only valid with weighted_cross_entropy");
      rc.model.loss = CrossEntropy{};
    } else if (loss == "weighted_cross_entropy") {
      WeightedCrossEntropy w{get_reals(m, "model", "class_weights", {})};
      if (w.class_weights.empty()) throw ConfigError("model.class_weights", "required for weighted_cross_entropy");
      for (double x : w.class_weights) {
        if (!(x > 0.0)) throw ConfigError("model.class_weights", "all weights must be > 0");
      }
      rc.model.loss = w;
    } else {
      throw ConfigError("model.loss", "'" + loss + "' is not one of {cross_entropy, weighted_cross_entropy}");
    }
  }

  if (j.contains("federation")) rc.federation = parse_federation(j["federation"], "federation");
  return rc;
}

inline Json to_json(const RunConfig& rc) {
  Json data;
  if (const auto* s = std::get_if<SyntheticSpec>(&rc.data)) {
    data = {{"synthetic", to_json(*s)}};
  } else {
    const auto& c = std::get<CsvSource>(rc.data);
    data = {{"csv",
             {{"path", c.path},
              {"feature_cols", c.schema.feature_cols},
              {"label_col", c.schema.label_col},
              {"domain_col", c.schema.domain_col}}}};
  }
  Json model{{"hidden_dim", rc.model.hidden_dim}, {"activation", to_string(rc.model.activation)}};
  if (const auto* w = std::get_if<WeightedCrossEntropy>(&rc.model.loss)) {
    model["loss"] = "weighted_cross_entropy";
    model["class_weights"] = w->class_weights;
  } else {
    model["loss"] = "cross_entropy";
  }
  return Json{{"data", data}, {"target", rc.target}, {"model", model}, {"federation", to_json(rc.federation)}};
}

// Parses text, converting JSON syntax errors into line/column diagnostics.
inline Json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError("", origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": invalid JSON (" +
                              e.what() + ")");
  }
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json_text(ss.str(), path);
}

inline DomainSuite load_data(const DataSource& src) {
  if (const auto* s = std::get_if<SyntheticSpec>(&src)) return generate(*s);
  const auto& c = std::get<CsvSource>(src);
  return load_csv(c.path, c.schema);
}

inline ModelSpec model_spec_for(const ModelConfig& m, const DomainSuite& suite) {
  ModelSpec spec;
  spec.input_dim = suite.domains.front().dim();
  spec.hidden_dim = m.hidden_dim;
  spec.num_classes = suite.num_classes;
  spec.activation = m.activation;
  return spec;
}

}  // namespace fedalign
