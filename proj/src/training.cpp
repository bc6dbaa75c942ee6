#include "odenorm/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "odenorm/criterion.hpp"
#include "odenorm/csv.hpp"
#include "odenorm/ops.hpp"

namespace odenorm {

void TrainPlan::validate() const {
  if (epochs < 1) throw std::invalid_argument("plan: epochs must be >= 1");
  if (batch_size < 2) throw std::invalid_argument("plan: batch_size must be >= 2");
  if (!(lr0 >= 0.0)) throw std::invalid_argument("plan: lr0 must be >= 0");
  if (!(lr_factor > 0.0)) throw std::invalid_argument("plan: lr_factor must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("plan: momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("plan: weight_decay must be >= 0");
  for (int d : lr_drops) {
    if (d < 0 || d >= epochs) {
      throw std::invalid_argument("plan: lr drop at epoch " + std::to_string(d) + " outside [0, " +
                                  std::to_string(epochs) + ")");
    }
  }
}

double lr_at_epoch(const TrainPlan& plan, int epoch) {
  if (epoch < 0 || epoch >= plan.epochs) {
    throw std::out_of_range("lr_at_epoch: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(plan.epochs) + ")");
  }
  int k = static_cast<int>(std::count_if(plan.lr_drops.begin(), plan.lr_drops.end(), [&](int d) { return d <= epoch; }));
  double inv = 1.0 / plan.lr_factor;
  if (std::abs(inv - std::round(inv)) < 1e-9 * inv) return plan.lr0 / std::pow(std::round(inv), k);
  return plan.lr0 * std::pow(plan.lr_factor, k);
}

void sgd_momentum_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double momentum,
                       double weight_decay) {
  if (param.shape() != grad.shape() || param.shape() != velocity.shape()) {
    throw ShapeError("sgd_momentum_step: param " + shape_str(param.shape()) + ", grad " + shape_str(grad.shape()) +
                     ", velocity " + shape_str(velocity.shape()));
  }
  auto p = param.mutable_data();
  auto v = velocity.mutable_data();
  auto g = grad.data();
  for (size_t i = 0; i < p.size(); ++i) {
    v[i] = momentum * v[i] + g[i] + weight_decay * p[i];
    p[i] -= lr * v[i];
  }
}

void SgdMomentum::step(const std::vector<Parameter*>& params, const Gradients& grads, double lr) {
  for (Parameter* p : params) {
    auto it = velocity_.find(p);
    if (it == velocity_.end()) it = velocity_.emplace(p, Tensor::zeros(p->value.shape())).first;
    sgd_momentum_step(p->value, grads.of(*p), it->second, lr, momentum_, weight_decay_);
  }
}

const Tensor* SgdMomentum::velocity(const Parameter& p) const {
  auto it = velocity_.find(&p);
  return it == velocity_.end() ? nullptr : &it->second;
}

BatchResult loss_and_gradients(const Model& model, const Tensor& images, const std::vector<int>& labels, Phase phase,
                               bool checkpoint_ode) {
  Graph graph;
  Var loss;
  Tensor logits;
  {
    RecordingScope scope(graph);
    ForwardContext ctx;
    ctx.phase = phase;
    ctx.checkpoint_ode = checkpoint_ode;
    Var out = model.forward(Var(images), ctx);
    logits = out.value();
    loss = softmax_cross_entropy(out, labels);
  }
  BatchResult r;
  r.loss = loss.value().item();
  if (!std::isfinite(r.loss)) return r;
  r.grads = graph.backward(loss);
  int64_t classes = logits.dim(1);
  auto d = logits.data();
  for (size_t b = 0; b < labels.size(); ++b) {
    auto row = d.subspan(b * static_cast<size_t>(classes), static_cast<size_t>(classes));
    if (std::max_element(row.begin(), row.end()) - row.begin() == labels[b]) ++r.correct;
  }
  return r;
}

std::vector<EpochMetrics> train(Model& model, const TrainPlan& plan, const Dataset& train_set, const Dataset* test_set,
                                const TrainOptions& options) {
  plan.validate();
  train_set.validate();
  if (test_set) test_set->validate();
  std::mt19937_64 shuffle_rng = make_rng(plan.seed, "shuffle");
  std::mt19937_64 augment_rng = make_rng(plan.seed, "augment");
  SgdMomentum opt(plan.momentum, plan.weight_decay);
  std::vector<Parameter*> params = model.trainable_parameters();
  std::vector<int64_t> order(static_cast<size_t>(train_set.size()));
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochMetrics> log;

  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    if (options.checkpoint_dir && epoch > 0 &&
        std::find(plan.lr_drops.begin(), plan.lr_drops.end(), epoch) != plan.lr_drops.end()) {
      model.set_mode(Mode::kEval);
      save_checkpoint(model, *options.checkpoint_dir / ("epoch_" + std::to_string(epoch)), epoch);
    }
    model.set_mode(Mode::kTrain);
    double lr = lr_at_epoch(plan, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    int64_t batches = 0, seen = 0, correct = 0;
    for (int64_t start = 0; start < train_set.size(); start += plan.batch_size) {
      int64_t stop = std::min(train_set.size(), start + plan.batch_size);
      if (stop - start < 2) break;
      std::vector<int64_t> idx(order.begin() + start, order.begin() + stop);
      auto [x, y] = train_set.gather(idx);
      x = augment(x, augment_rng, plan.augment);
      BatchResult r;
      try {
        r = loss_and_gradients(model, x, y, Phase::kTrain, options.checkpoint_ode);
      } catch (const NumericalError& e) {
        throw NumericalError("train: epoch " + std::to_string(epoch) + " batch " + std::to_string(batches) + ": " +
                             e.what());
      }
      if (!std::isfinite(r.loss)) {
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                             std::to_string(batches));
      }
      opt.step(params, r.grads, lr);
      loss_sum += r.loss;
      correct += r.correct;
      seen += stop - start;
      ++batches;
    }
    model.set_mode(Mode::kEval);
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(std::max<int64_t>(batches, 1));
    m.train_acc = static_cast<double>(correct) / static_cast<double>(std::max<int64_t>(seen, 1));
    m.test_acc = test_set ? evaluate_accuracy(model, *test_set, std::nullopt, options.eval_batch_size)
                          : std::numeric_limits<double>::quiet_NaN();
    log.push_back(m);
    if (options.on_epoch) options.on_epoch(m);
  }
  model.set_mode(Mode::kEval);
  if (options.checkpoint_dir) save_checkpoint(model, *options.checkpoint_dir / "final", plan.epochs);
  return log;
}

std::string format_metrics(const std::vector<EpochMetrics>& rows) {
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  for (const auto& m : rows) {
    os << m.epoch << ',' << format_double(m.lr) << ',' << format_double(m.train_loss) << ','
       << format_double(m.train_acc) << ',' << format_double(m.test_acc) << '\n';
  }
  return os.str();
}

std::vector<EpochMetrics> parse_metrics(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader) {
    throw std::invalid_argument(std::string("metrics: missing header '") + kMetricsHeader + "'");
  }
  std::vector<EpochMetrics> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    auto f = split(line, ',');
    if (f.size() != 5) throw std::invalid_argument("metrics: line " + std::to_string(lineno) + " has " +
                                                   std::to_string(f.size()) + " fields, expected 5");
    rows.push_back({parse_int(f[0]), parse_double(f[1]), parse_double(f[2]), parse_double(f[3]), parse_double(f[4])});
  }
  return rows;
}

void write_metrics(const std::vector<EpochMetrics>& rows, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("metrics: cannot write " + path.string());
  os << format_metrics(rows);
}

std::vector<EpochMetrics> read_metrics(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("metrics: cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_metrics(ss.str());
}

}  // namespace odenorm
