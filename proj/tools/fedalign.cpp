#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fedalign/runner.hpp"

namespace {

// --out falls back to $FEDALIGN_OUT/<leaf>.
std::optional<std::string> resolve_out(const std::string& given, const std::string& leaf) {
  if (!given.empty()) return given;
  if (const char* root = std::getenv("FEDALIGN_OUT"); root && *root) return std::string(root) + "/" + leaf;
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedalign: federated gradient-alignment simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", fedalign::kToolVersion);

  std::optional<std::uint64_t> seed;
  bool quiet = false;
  std::size_t jobs = 1;
  app.add_option("--seed", seed, "Override the configured seed");
  app.add_flag("--quiet", quiet, "Suppress progress lines");

  std::string config_path, spec_path, data_spec_path, run_out, sweep_out, data_out;

  auto* run = app.add_subcommand("run", "Run one leave-one-domain-out experiment");
  run->add_option("--config", config_path, "Run config or manifest JSON")->required();
  run->add_option("--out", run_out, "Output directory (default $FEDALIGN_OUT/run)");

  auto* sweep = app.add_subcommand("sweep", "Run a strategies x targets x seeds grid");
  sweep->add_option("--spec", spec_path, "Sweep spec JSON")->required();
  sweep->add_option("--out", sweep_out, "Output directory (default $FEDALIGN_OUT/sweep)");
  sweep->add_option("--jobs", jobs, "Cells to run concurrently")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic multi-domain dataset as CSV");
  gen->add_option("--spec", data_spec_path, "Synthetic dataset spec JSON")->required();
  gen->add_option("--out", data_out, "Output CSV (default $FEDALIGN_OUT/data.csv)");

  for (auto* sub : {run, sweep, gen}) {
    sub->add_option("--seed", seed, "Override the configured seed");
    sub->add_flag("--quiet", quiet, "Suppress progress lines");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : fedalign::kExitConfig;
  }

  fedalign::CommandOptions opts;
  opts.seed_override = seed;
  opts.quiet = quiet;
  opts.jobs = jobs;

  auto missing_out = [] {
    std::cerr << "error: --out not given and FEDALIGN_OUT is not set\n";
    return fedalign::kExitConfig;
  };

  if (run->parsed()) {
    const auto out = resolve_out(run_out, "run");
    return out ? fedalign::cmd_run(config_path, *out, opts) : missing_out();
  }
  if (sweep->parsed()) {
    const auto out = resolve_out(sweep_out, "sweep");
    return out ? fedalign::cmd_sweep(spec_path, *out, opts) : missing_out();
  }
  const auto out = resolve_out(data_out, "data.csv");
  return out ? fedalign::cmd_gen_data(data_spec_path, *out, opts) : missing_out();
}
