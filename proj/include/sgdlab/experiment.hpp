#pragma once

#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgdlab/escape.hpp"
#include "sgdlab/study.hpp"

namespace sgdlab {

// Malformed or invalid configuration; the CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RateParams {
  double horizon = 1.0;
  long segments = 200;
  Eigen::VectorXd psi0;
  Eigen::VectorXd psi_hold;
  int legendre_instances = 100;
  std::uint64_t legendre_seed = 7;
  FlowDriftMode drift_mode = FlowDriftMode::NegativeGradient;
};

struct ExperimentConfig {
  std::string kind;  // mse | regret | lyapunov | escape | rate | oracle-check
  std::uint64_t seed = 1;
  int workers = 0;
  std::string out_dir;
  std::string resolved;  // fully resolved config echo, serialized JSON

  std::optional<RunConfig> run;
  StudyOptions study;
  std::optional<EscapeConfig> escape;
  std::optional<RateParams> rate;
  std::vector<long> oracle_checkpoints;
};

struct CliOverrides {
  std::optional<std::string> out;
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
};

// Parses and fully resolves a config file: defaults are filled in, every
// constraint is validated up front (violations name the model assumption),
// and unknown keys are errors.
ExperimentConfig parse_config(const std::string& path, const CliOverrides& overrides = {});
ExperimentConfig parse_config_json(const nlohmann::json& j, const CliOverrides& overrides = {});

// Executes the experiment and writes CSV data, a JSON summary with per-check
// pass flags, and the resolved-config provenance echo into out_dir.  Partial
// outputs from a failed run are moved to out_dir/quarantine.  Identical
// config and seed produce byte-identical outputs for any worker count.
void run_experiment(const ExperimentConfig& config);

}  // namespace sgdlab
