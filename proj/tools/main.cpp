#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "sgdlab/experiment.hpp"
#include "sgdlab/version.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::string> out;
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config file (JSON)")
      ->required();
  cmd->add_option("--out", args.out, "output directory (overrides the config)");
  cmd->add_option("--workers", args.workers, "worker count (0 = hardware)");
  cmd->add_option("--seed", args.seed, "base seed override");
}

int execute(const std::string& kind, const CommonArgs& args) {
  sgdlab::CliOverrides overrides;
  overrides.out = args.out;
  overrides.workers = args.workers;
  overrides.seed = args.seed;
  try {
    sgdlab::ExperimentConfig cfg = sgdlab::parse_config(args.config_path, overrides);
    if (cfg.kind != kind) {
      std::cerr << "config error: config declares experiment \"" << cfg.kind
                << "\" but the \"" << kind << "\" subcommand was invoked\n";
      return 1;
    }
    sgdlab::run_experiment(cfg);
    std::cout << "wrote " << cfg.out_dir << "\n";
    return 0;
  } catch (const sgdlab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"simulation lab for projected decreasing-step stochastic gradient descent "
               "under correlated mixing noise"};
  app.set_version_flag("--version", std::string(sgdlab::kVersion));
  app.require_subcommand(1);

  const char* kinds[] = {"mse", "regret", "lyapunov", "escape", "rate", "oracle-check"};
  const char* descriptions[] = {
      "mean-square-error decay study with power-law fit",
      "cumulative regret study with logarithmic fit",
      "perturbed Lyapunov function verification",
      "first-exit-time Monte Carlo over start scales",
      "Gaussian rate functional: Legendre transform and path actions",
      "Monte Carlo error moments against the exact 1-D oracle",
  };
  CommonArgs args[6];
  for (int i = 0; i < 6; ++i) add_common(app.add_subcommand(kinds[i], descriptions[i]), args[i]);

  CLI11_PARSE(app, argc, argv);

  for (int i = 0; i < 6; ++i)
    if (app.get_subcommand(kinds[i])->parsed()) return execute(kinds[i], args[i]);
  std::cerr << "no subcommand selected\n";
  return 1;
}
