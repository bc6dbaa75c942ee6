#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "odenorm/commands.hpp"
#include "odenorm/csv.hpp"

using namespace odenorm;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("-c,--config", c.config_path, "experiment config (INI)");
  if (config_required) opt->required();
  cmd->add_option("--set", c.overrides, "override a config value: section.key=value");
  cmd->add_flag("-q,--quiet", c.quiet, "no progress on stderr");
}

ConfigFile resolve(const Common& c) {
  ConfigFile file;
  if (c.config_path.empty()) {
    // Without a config file a data.preset override picks the starting defaults.
    DataPreset preset = DataPreset::kSpirals;
    for (const auto& o : c.overrides) {
      auto eq = o.find('=');
      if (eq != std::string::npos && trim(o.substr(0, eq)) == "data.preset") {
        preset = parse_preset(trim(o.substr(eq + 1)));
      }
    }
    file.base = preset_defaults(preset);
  } else {
    file = load_config(c.config_path);
  }
  for (const auto& o : c.overrides) {
    apply_override(file.base, o);
    for (auto& v : file.variants) apply_override(v.config, o);
  }
  return file;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural ODE training with pluggable normalization and the (S,n) smoothness criterion"};
  app.require_subcommand(1);

  Common train_opts;
  std::string train_out;
  auto* train_cmd = app.add_subcommand("train", "train a model; writes checkpoints and metrics.csv");
  add_common(train_cmd, train_opts, false);
  train_cmd->add_option("-o,--out", train_out, "output directory")->required();

  Common eval_opts;
  std::string eval_ckpt, eval_scheme;
  int eval_n = 0;
  auto* eval_cmd = app.add_subcommand("eval", "test accuracy of a checkpoint");
  add_common(eval_cmd, eval_opts, false);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
  eval_cmd->add_option("--scheme", eval_scheme, "Euler, RK2 or RK4 (default: training solver)");
  eval_cmd->add_option("--n-evals", eval_n, "right-hand side evaluations");

  Common crit_opts;
  std::string crit_ckpt, crit_out;
  int crit_jobs = 0;
  auto* crit_cmd = app.add_subcommand("criterion", "evaluate a checkpoint over the solver grid");
  add_common(crit_cmd, crit_opts, false);
  crit_cmd->add_option("--checkpoint", crit_ckpt, "checkpoint directory")->required();
  crit_cmd->add_option("-o,--out", crit_out, "report CSV path")->required();
  crit_cmd->add_option("-j,--jobs", crit_jobs, "parallel grid evaluations (default: ODENORM_THREADS or 1)");

  Common sweep_opts;
  std::string sweep_out;
  int sweep_jobs = 0;
  auto* sweep_cmd = app.add_subcommand("sweep", "train and evaluate every [variant] of a config");
  add_common(sweep_cmd, sweep_opts, true);
  sweep_cmd->add_option("-o,--out", sweep_out, "output directory")->required();
  sweep_cmd->add_option("-j,--jobs", sweep_jobs, "parallel grid evaluations (default: ODENORM_THREADS or 1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_cmd) {
      ConfigFile cfg = resolve(train_opts);
      TrainOutcome r = cmd_train(cfg.base, train_out, train_opts.quiet ? nullptr : &std::cerr);
      std::cout << "test_acc=" << format_double(r.test_acc) << "\n";
    } else if (*eval_cmd) {
      ConfigFile cfg = resolve(eval_opts);
      std::optional<SolverSpec> spec;
      if (!eval_scheme.empty() || eval_n > 0) {
        if (eval_scheme.empty() || eval_n <= 0) throw ConfigError("--scheme and --n-evals go together");
        spec = SolverSpec(parse_scheme(eval_scheme), eval_n);
      }
      std::cout << "accuracy=" << format_double(cmd_eval(eval_ckpt, cfg.base, spec)) << "\n";
    } else if (*crit_cmd) {
      ConfigFile cfg = resolve(crit_opts);
      int jobs = crit_jobs > 0 ? crit_jobs : env_threads();
      if (!crit_opts.quiet) std::cerr << kCriterionLimitation << "\n";
      CriterionReport r = cmd_criterion(crit_ckpt, cfg.base, crit_out, jobs);
      std::cout << "verdict=" << to_string(r.verdict) << "\n";
    } else if (*sweep_cmd) {
      ConfigFile cfg = resolve(sweep_opts);
      int jobs = sweep_jobs > 0 ? sweep_jobs : env_threads();
      SweepResult r = cmd_sweep(cfg, sweep_out, jobs, sweep_opts.quiet ? nullptr : &std::cerr);
      std::cout << format_summary(r.rows);
      return r.exit_code;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitOk;
}
