#include "odenorm/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "odenorm/csv.hpp"

namespace odenorm {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e)) return kExitNumerical;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const CheckpointError*>(&e)) return kExitData;
  return kExitConfig;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

Model load_model(const std::filesystem::path& checkpoint, const Dataset& data) {
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
  const ModelConfig& mc = ckpt.model.config();
  const Shape& s = data.images.shape();
  if (mc.in_channels != s[1] || mc.num_classes != data.num_classes) {
    throw DataError("checkpoint " + checkpoint.string() + " expects " + std::to_string(mc.in_channels) +
                    " input channels and " + std::to_string(mc.num_classes) + " classes, data has " +
                    std::to_string(s[1]) + " and " + std::to_string(data.num_classes));
  }
  return std::move(ckpt.model);
}

}  // namespace

TrainOutcome cmd_train(const ExperimentConfig& config, const std::filesystem::path& out, std::ostream* log) {
  config.validate();
  auto [train_set, test_set] = load_data(config.data);
  ModelConfig mc = config.model_config(static_cast<int>(train_set.images.dim(1)), train_set.num_classes);
  Model model = build(mc);
  std::filesystem::create_directories(out);
  write_text(out / "config.ini", format_config(config));
  TrainOptions opts;
  opts.checkpoint_dir = out;
  opts.checkpoint_ode = config.checkpoint_ode;
  if (log) {
    opts.on_epoch = [log](const EpochMetrics& m) {
      *log << "epoch " << m.epoch << " lr " << format_double(m.lr) << " loss " << m.train_loss << " train_acc "
           << m.train_acc << " test_acc " << m.test_acc << std::endl;
    };
  }
  TrainOutcome outcome;
  outcome.metrics = train(model, config.plan, train_set, &test_set, opts);
  write_metrics(outcome.metrics, out / "metrics.csv");
  outcome.checkpoint = out / "final";
  outcome.test_acc = outcome.metrics.back().test_acc;
  return outcome;
}

double cmd_eval(const std::filesystem::path& checkpoint, const ExperimentConfig& config, std::optional<SolverSpec> spec) {
  auto [train_set, test_set] = load_data(config.data);
  Model model = load_model(checkpoint, test_set);
  return evaluate_accuracy(model, test_set, spec);
}

CriterionReport cmd_criterion(const std::filesystem::path& checkpoint, const ExperimentConfig& config,
                              const std::filesystem::path& out, int jobs) {
  config.criterion.grid.validate();
  auto [train_set, test_set] = load_data(config.data);
  Model model = load_model(checkpoint, test_set);
  CriterionReport report = run_criterion(model, test_set, config.criterion.grid, config.criterion.epsilon, jobs);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  emit_report(report, out);
  return report;
}

SweepResult cmd_sweep(const ConfigFile& config, const std::filesystem::path& out, int jobs, std::ostream* log) {
  std::vector<Variant> variants = config.variants;
  if (variants.empty()) variants.push_back({"base", config.base});
  std::filesystem::create_directories(out);
  SweepResult result;
  for (const Variant& v : variants) {
    SweepRow row;
    row.variant = v.name;
    row.schedule = v.config.schedule;
    row.train_scheme = v.config.solver.scheme;
    row.train_n = v.config.solver.n_evals;
    if (log) *log << "variant " << v.name << std::endl;
    try {
      std::filesystem::path dir = out / v.name;
      TrainOutcome trained = cmd_train(v.config, dir, log);
      CriterionReport report = cmd_criterion(trained.checkpoint, v.config, dir / "report.csv", jobs);
      row.test_acc = trained.test_acc;
      row.verdict = std::string(to_string(report.verdict));
    } catch (const std::exception& e) {
      row.test_acc = std::numeric_limits<double>::quiet_NaN();
      row.verdict = "failed";
      if (result.exit_code == kExitOk) result.exit_code = exit_code_for(e);
      if (log) *log << "variant " << v.name << " failed: " << e.what() << std::endl;
    }
    result.rows.push_back(row);
    write_text(out / "summary.csv", format_summary(result.rows));
  }
  return result;
}

std::string format_summary(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << kSummaryHeader << '\n';
  for (const auto& r : rows) {
    os << r.variant << ',' << to_string(r.schedule.after_first_conv) << ',' << to_string(r.schedule.resnet_blocks) << ','
       << to_string(r.schedule.ode_blocks) << ',' << to_string(r.train_scheme) << ',' << r.train_n << ','
       << format_double(r.test_acc) << ',' << r.verdict << '\n';
  }
  return os.str();
}

std::vector<SweepRow> parse_summary(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kSummaryHeader) {
    throw std::invalid_argument(std::string("summary: missing header '") + kSummaryHeader + "'");
  }
  std::vector<SweepRow> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    auto f = split(line, ',');
    if (f.size() != 8) {
      throw std::invalid_argument("summary: line " + std::to_string(lineno) + " has " + std::to_string(f.size()) +
                                  " fields, expected 8");
    }
    SweepRow r;
    r.variant = f[0];
    r.schedule = {parse_norm_kind(f[1]), parse_norm_kind(f[2]), parse_norm_kind(f[3])};
    r.train_scheme = parse_scheme(f[4]);
    r.train_n = parse_int(f[5]);
    r.test_acc = parse_double(f[6]);
    if (f[7] != "smooth" && f[7] != "not_smooth" && f[7] != "failed") {
      throw std::invalid_argument("summary: line " + std::to_string(lineno) + ": unknown verdict '" + f[7] + "'");
    }
    r.verdict = f[7];
    rows.push_back(std::move(r));
  }
  return rows;
}

int env_threads() {
  const char* v = std::getenv("ODENORM_THREADS");
  if (!v || !*v) return 1;
  try {
    int n = parse_int(v);
    if (n < 1) throw std::invalid_argument("must be >= 1");
    return n;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("ODENORM_THREADS: ") + e.what());
  }
}

}  // namespace odenorm
