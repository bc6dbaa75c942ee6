#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "odenorm/dataset.hpp"
#include "odenorm/models.hpp"

namespace odenorm {

// An invalid evaluation grid, e.g. one with no solver more powerful than the
// training solver.
class CriterionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kDefaultEpsilon = 0.005;

struct EvalGrid {
  std::vector<Scheme> schemes;
  std::vector<int> eval_budgets;  // strictly increasing

  // Divisibility of every (scheme, n) pair and strictly increasing budgets.
  void validate() const;
};

struct GridPoint {
  Scheme scheme;
  int n_evals;
  double accuracy;

  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

enum class Verdict { kSmooth, kNotSmooth };
std::string_view to_string(Verdict v);
Verdict parse_verdict(std::string_view text);

struct CriterionReport {
  SolverSpec train_spec{Scheme::kEuler, 1};
  double baseline_accuracy = 0.0;
  // Only solvers with more evaluations than the training solver.
  std::vector<GridPoint> grid;
  double epsilon = kDefaultEpsilon;
  Verdict verdict = Verdict::kSmooth;
  // max(0, baseline - min grid accuracy)
  double worst_drop = 0.0;
  // Accuracy at (RK4, largest budget), the converged-flow proxy, when that
  // budget admits RK4.
  std::optional<double> reference_accuracy;
};

// Fraction of argmax-correct predictions in eval mode with the given solver
// (the model's training solver when absent). Recording is disabled and no
// model state changes.
double evaluate_accuracy(const Model& model, const Dataset& data, std::optional<SolverSpec> spec = std::nullopt,
                         int64_t batch_size = 256);

// Smooth iff every grid accuracy >= baseline - epsilon.
Verdict decide_verdict(const std::vector<GridPoint>& grid, double baseline, double epsilon);
double worst_drop(const std::vector<GridPoint>& grid, double baseline);

// Grid points run independently on up to `jobs` threads.
CriterionReport run_criterion(const Model& model, const Dataset& data, const EvalGrid& grid,
                              double epsilon = kDefaultEpsilon, int jobs = 1);

// The criterion only holds when the solution of the IVP is Lipschitz in the
// right-hand side parameters and inputs; it is not checked.
inline constexpr const char* kCriterionLimitation =
    "note: the (S,n) criterion assumes the block solution is Lipschitz in parameters and inputs; not verified";

// CSV: "scheme,n_evals,accuracy" then one row per grid point, then the
// footer rows "baseline,<v>", "epsilon,<v>", "verdict,<smooth|not_smooth>".
std::string format_report(const CriterionReport& report);
void emit_report(const CriterionReport& report, const std::filesystem::path& path);

struct ParsedReport {
  std::vector<GridPoint> grid;
  double baseline = 0.0;
  double epsilon = 0.0;
  Verdict verdict = Verdict::kSmooth;
};

ParsedReport parse_report(const std::string& text);
ParsedReport read_report(const std::filesystem::path& path);

}  // namespace odenorm
