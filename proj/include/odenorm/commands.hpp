#pragma once

#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "odenorm/config.hpp"

namespace odenorm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

// Exit code for an exception escaping a command.
int exit_code_for(const std::exception& e);

struct TrainOutcome {
  std::vector<EpochMetrics> metrics;
  std::filesystem::path checkpoint;  // <out>/final
  double test_acc = 0.0;
};

// Writes <out>/config.ini (resolved), <out>/metrics.csv and checkpoints under
// <out> (final and one per lr drop). Progress goes to `log` when given.
TrainOutcome cmd_train(const ExperimentConfig& config, const std::filesystem::path& out, std::ostream* log = nullptr);

// Test accuracy of a checkpoint with the given solver, or its training solver.
double cmd_eval(const std::filesystem::path& checkpoint, const ExperimentConfig& config,
                std::optional<SolverSpec> spec = std::nullopt);

// Runs the criterion grid of `config` on the test split and writes the report.
CriterionReport cmd_criterion(const std::filesystem::path& checkpoint, const ExperimentConfig& config,
                              const std::filesystem::path& out, int jobs = 1);

struct SweepRow {
  std::string variant;
  NormSchedule schedule;
  Scheme train_scheme = Scheme::kEuler;
  int train_n = 0;
  double test_acc = 0.0;     // NaN when failed
  std::string verdict;       // smooth, not_smooth or failed
};

struct SweepResult {
  std::vector<SweepRow> rows;
  int exit_code = kExitOk;  // of the first failed variant
};

// One directory per variant (<out>/<variant>/) holding the training outputs
// and report.csv, plus <out>/summary.csv. A failing variant is recorded and
// the rest still run. Without variant sections the base config runs as
// variant "base".
SweepResult cmd_sweep(const ConfigFile& config, const std::filesystem::path& out, int jobs = 1,
                      std::ostream* log = nullptr);

inline constexpr const char* kSummaryHeader = "variant,norm_first,norm_resnet,norm_ode,train_scheme,train_n,test_acc,verdict";
std::string format_summary(const std::vector<SweepRow>& rows);
std::vector<SweepRow> parse_summary(const std::string& text);

// ODENORM_THREADS, or 1.
int env_threads();

}  // namespace odenorm
