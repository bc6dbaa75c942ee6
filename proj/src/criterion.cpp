#include "odenorm/criterion.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include "odenorm/csv.hpp"

namespace odenorm {

std::string_view to_string(Verdict v) { return v == Verdict::kSmooth ? "smooth" : "not_smooth"; }

Verdict parse_verdict(std::string_view text) {
  if (text == "smooth") return Verdict::kSmooth;
  if (text == "not_smooth") return Verdict::kNotSmooth;
  throw std::invalid_argument("unknown verdict '" + std::string(text) + "'");
}

void EvalGrid::validate() const {
  if (schemes.empty() || eval_budgets.empty()) throw CriterionError("criterion grid: schemes and budgets must be nonempty");
  for (size_t i = 1; i < eval_budgets.size(); ++i) {
    if (eval_budgets[i] <= eval_budgets[i - 1]) throw CriterionError("criterion grid: budgets must be strictly increasing");
  }
  for (Scheme s : schemes) {
    for (int n : eval_budgets) {
      try {
        steps_for_budget(s, n);
      } catch (const std::invalid_argument& e) {
        throw CriterionError("criterion grid: (" + std::string(to_string(s)) + "," + std::to_string(n) + "): " + e.what());
      }
    }
  }
}

double evaluate_accuracy(const Model& model, const Dataset& data, std::optional<SolverSpec> spec, int64_t batch_size) {
  if (data.size() == 0) throw DataError("evaluate_accuracy: dataset is empty");
  int64_t correct = 0;
  for (int64_t start = 0; start < data.size(); start += batch_size) {
    int64_t stop = std::min(data.size(), start + batch_size);
    std::vector<int64_t> idx;
    for (int64_t i = start; i < stop; ++i) idx.push_back(i);
    auto [x, y] = data.gather(idx);
    Tensor logits = model.infer(x, spec);
    int64_t classes = logits.dim(1);
    auto d = logits.data();
    for (size_t b = 0; b < y.size(); ++b) {
      auto row = d.subspan(b * static_cast<size_t>(classes), static_cast<size_t>(classes));
      int64_t pred = std::max_element(row.begin(), row.end()) - row.begin();
      if (pred == y[b]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

Verdict decide_verdict(const std::vector<GridPoint>& grid, double baseline, double epsilon) {
  for (const GridPoint& p : grid) {
    if (p.accuracy < baseline - epsilon) return Verdict::kNotSmooth;
  }
  return Verdict::kSmooth;
}

double worst_drop(const std::vector<GridPoint>& grid, double baseline) {
  double drop = 0.0;
  for (const GridPoint& p : grid) drop = std::max(drop, baseline - p.accuracy);
  return drop;
}

CriterionReport run_criterion(const Model& model, const Dataset& data, const EvalGrid& grid, double epsilon, int jobs) {
  grid.validate();
  if (!(epsilon >= 0.0)) throw CriterionError("criterion: epsilon must be nonnegative");
  CriterionReport report;
  report.train_spec = model.config().train_spec;
  report.epsilon = epsilon;
  int n0 = report.train_spec.n_evals();
  std::vector<SolverSpec> specs;
  for (Scheme s : grid.schemes) {
    for (int n : grid.eval_budgets) {
      if (n > n0) specs.emplace_back(s, n);
    }
  }
  if (specs.empty()) {
    throw CriterionError("criterion grid: no more powerful solver in grid (all budgets <= training budget " +
                         std::to_string(n0) + ")");
  }
  std::optional<SolverSpec> reference;
  int max_budget = grid.eval_budgets.back();
  if (max_budget % evals_per_step(Scheme::kRK4) == 0) reference = SolverSpec(Scheme::kRK4, max_budget);
  bool reference_in_grid = reference && std::find(specs.begin(), specs.end(), *reference) != specs.end();

  std::vector<SolverSpec> work = specs;
  work.push_back(report.train_spec);
  if (reference && !reference_in_grid) work.push_back(*reference);
  std::vector<double> acc(work.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t i = next++; i < work.size(); i = next++) acc[i] = evaluate_accuracy(model, data, work[i]);
  };
  int threads = std::max(1, std::min<int>(jobs, static_cast<int>(work.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          worker();
        } catch (...) {
          errors[static_cast<size_t>(t)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  for (size_t i = 0; i < specs.size(); ++i) report.grid.push_back({specs[i].scheme(), specs[i].n_evals(), acc[i]});
  report.baseline_accuracy = acc[specs.size()];
  if (reference) {
    report.reference_accuracy = reference_in_grid
                                    ? acc[static_cast<size_t>(std::find(specs.begin(), specs.end(), *reference) - specs.begin())]
                                    : acc.back();
  }
  report.verdict = decide_verdict(report.grid, report.baseline_accuracy, epsilon);
  report.worst_drop = worst_drop(report.grid, report.baseline_accuracy);
  return report;
}

std::string format_report(const CriterionReport& report) {
  std::ostringstream os;
  os << "scheme,n_evals,accuracy\n";
  for (const GridPoint& p : report.grid) {
    os << to_string(p.scheme) << ',' << p.n_evals << ',' << format_double(p.accuracy) << '\n';
  }
  os << "baseline," << format_double(report.baseline_accuracy) << '\n';
  os << "epsilon," << format_double(report.epsilon) << '\n';
  os << "verdict," << to_string(report.verdict) << '\n';
  return os.str();
}

void emit_report(const CriterionReport& report, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("criterion: cannot write report to " + path.string());
  os << format_report(report);
  if (!os) throw std::runtime_error("criterion: write failed for " + path.string());
}

ParsedReport parse_report(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "scheme,n_evals,accuracy") {
    throw std::invalid_argument("report: missing header 'scheme,n_evals,accuracy'");
  }
  ParsedReport out;
  int footer = 0;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    auto fields = split(line, ',');
    auto where = " on report line " + std::to_string(lineno);
    if (fields.size() == 2 && footer == 0 && fields[0] == "baseline") {
      out.baseline = parse_double(fields[1]);
      footer = 1;
    } else if (fields.size() == 2 && footer == 1 && fields[0] == "epsilon") {
      out.epsilon = parse_double(fields[1]);
      footer = 2;
    } else if (fields.size() == 2 && footer == 2 && fields[0] == "verdict") {
      out.verdict = parse_verdict(fields[1]);
      footer = 3;
    } else if (fields.size() == 3 && footer == 0) {
      out.grid.push_back({parse_scheme(fields[0]), parse_int(fields[1]), parse_double(fields[2])});
    } else {
      throw std::invalid_argument("report: unexpected row '" + line + "'" + where);
    }
  }
  if (footer != 3) throw std::invalid_argument("report: incomplete footer");
  return out;
}

ParsedReport read_report(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("report: cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_report(ss.str());
}

}  // namespace odenorm
