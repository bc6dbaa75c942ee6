#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <chrono>
#include <cmath>
#include <numeric>
#include <vector>

#include "odenorm/config.hpp"
#include "odenorm/criterion.hpp"
#include "odenorm/normalization.hpp"
#include "odenorm/odeblock.hpp"
#include "odenorm/ops.hpp"
#include "odenorm/training.hpp"
#include "support.hpp"

// Measurements shared by the unit tests and the acceptance runner.
namespace oracles {

using namespace odenorm;
using testing_support::random_tensor;

// Least-squares slope of y against x.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double n = static_cast<double>(x.size());
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

// dz/dt = -2z + sin t
inline Rhs decay_with_forcing() {
  return [](const Var& z, double t) { return add(scale(z, -2.0), Var(Tensor::full(z.shape(), std::sin(t)))); };
}

inline double solve_decay(const SolverSpec& spec) {
  return integrate(decay_with_forcing(), Var(Tensor::scalar(1.0)), 0.0, 1.0, spec, false).z1.value().item();
}

// Observed order on [0,1] against an (RK4, 4096) reference.
inline double solver_order_slope(Scheme scheme) {
  double reference = solve_decay(SolverSpec(Scheme::kRK4, 4096));
  std::vector<int> steps = scheme == Scheme::kRK4 ? std::vector<int>{4, 8, 16, 32} : std::vector<int>{8, 16, 32, 64, 128};
  std::vector<double> log_h, log_err;
  for (int s : steps) {
    double z1 = solve_decay(SolverSpec(scheme, s * evals_per_step(scheme)));
    log_h.push_back(std::log(1.0 / s));
    log_err.push_back(std::log(std::abs(z1 - reference)));
  }
  return fit_slope(log_h, log_err);
}

struct GradientAgreement {
  double fd_relative = 0.0;       // max |ad - fd| / max(1, |fd|) over every trainable scalar
  double full_graph_abs = 0.0;    // max |checkpointed - full tape|
  int64_t coordinates = 0;
};

// Tiny ODENet4 on a spirals batch of 16. SN runs one training forward to set
// its vectors; every comparison then uses replay so no state moves.
inline GradientAgreement ode_gradient_agreement(NormKind kind, int channels = 8, int n_evals = 4,
                                                bool full_sweep = true, double step = 1e-6) {
  ModelConfig config = testing_support::tiny_config(kind, channels, n_evals);
  Model model = build(config);
  Dataset data = make_spirals(8, 0.0, 5);
  std::vector<int64_t> idx(16);
  std::iota(idx.begin(), idx.end(), 0);
  auto [x, y] = data.gather(idx);
  loss_and_gradients(model, x, y, Phase::kTrain);

  BatchResult ckpt = loss_and_gradients(model, x, y, Phase::kReplay, true);
  BatchResult full = loss_and_gradients(model, x, y, Phase::kReplay, false);
  GradientAgreement out;
  for (Parameter* p : model.trainable_parameters()) {
    Tensor g = ckpt.grads.of(*p);
    out.full_graph_abs = std::max(out.full_graph_abs, max_abs_diff(g, full.grads.of(*p)));
    int64_t stride = full_sweep ? 1 : std::max<int64_t>(1, p->value.size() / 7);
    for (int64_t i = 0; i < p->value.size(); i += stride) {
      double original = p->value[i];
      p->value.mutable_data()[static_cast<size_t>(i)] = original + step;
      double up = loss_and_gradients(model, x, y, Phase::kReplay).loss;
      p->value.mutable_data()[static_cast<size_t>(i)] = original - step;
      double down = loss_and_gradients(model, x, y, Phase::kReplay).loss;
      p->value.mutable_data()[static_cast<size_t>(i)] = original;
      double fd = (up - down) / (2.0 * step);
      out.fd_relative = std::max(out.fd_relative, std::abs(g[i] - fd) / std::max(1.0, std::abs(fd)));
      ++out.coordinates;
    }
  }
  return out;
}

inline Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& a) {
  Eigen::MatrixXd m(a.size(), a.size());
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < a.size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a[i][j];
  return m;
}

// Frozen f(z) = A z through an ODE block against expm(A) z0 at every pixel.
inline double linear_flow_error(const std::vector<std::vector<double>>& a, const SolverSpec& spec, uint64_t seed = 1) {
  int64_t c = static_cast<int64_t>(a.size());
  OdeBlock block(std::make_unique<testing_support::PointwiseLinearRhs>(a, false), spec);
  Tensor z0 = random_tensor({2, c, 3, 3}, seed);
  Tensor z1 = block.solve(Var(z0), spec, Phase::kEval, false).value();
  Eigen::MatrixXd e = to_matrix(a).exp();
  double worst = 0.0;
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t q = 0; q < 9; ++q) {
      Eigen::VectorXd v(c);
      for (int64_t k = 0; k < c; ++k) v(k) = z0[(n * c + k) * 9 + q];
      Eigen::VectorXd w = e * v;
      for (int64_t k = 0; k < c; ++k) worst = std::max(worst, std::abs(w(k) - z1[(n * c + k) * 9 + q]));
    }
  return worst;
}

inline double largest_singular_value(const Tensor& w) {
  int64_t rows = w.dim(0), cols = w.size() / rows;
  Eigen::MatrixXd m(rows, cols);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) m(i, j) = w[i * cols + j];
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

struct NormSuite {
  double ln_mean = 0.0;   // max per-sample |mean|
  double ln_var = 0.0;    // max per-sample |var - 1|
  double wn_norm = 0.0;   // max | ||w_c|| - |g_c| |
  double sn_sigma = 0.0;  // | sigma(W_hat) - 1 |
  double bn_mean = 0.0;   // max per-channel |mean|
  double bn_var = 0.0;    // max per-channel |var - 1|
};

// Statistics are measured with eps = 0, the quantity the tolerances describe.
inline NormSuite normalization_suite(uint64_t seed) {
  NormSuite s;
  Tensor x = random_tensor({6, 4, 5, 5}, seed, 4.0);
  auto d = x.mutable_data();
  for (size_t i = 0; i < d.size(); ++i) d[i] += static_cast<double>(i % 7) - 3.0;

  Tensor ln = layernorm(Var(x), Var(Tensor::ones({4})), Var(Tensor::zeros({4})), 0.0).value();
  int64_t per = 100;
  for (int64_t n = 0; n < 6; ++n) {
    double m = 0.0, v = 0.0;
    for (int64_t k = 0; k < per; ++k) m += ln[n * per + k];
    m /= static_cast<double>(per);
    for (int64_t k = 0; k < per; ++k) v += (ln[n * per + k] - m) * (ln[n * per + k] - m);
    s.ln_mean = std::max(s.ln_mean, std::abs(m));
    s.ln_var = std::max(s.ln_var, std::abs(v / static_cast<double>(per) - 1.0));
  }

  BatchNormState bn = BatchNormState::make("bn", 4);
  bn.eps = 0.0;
  Tensor b = batchnorm(Var(x), bn, Phase::kTrain).value();
  for (int64_t c = 0; c < 4; ++c) {
    double m = 0.0, v = 0.0;
    for (int64_t n = 0; n < 6; ++n)
      for (int64_t q = 0; q < 25; ++q) m += b[(n * 4 + c) * 25 + q];
    m /= 150.0;
    for (int64_t n = 0; n < 6; ++n)
      for (int64_t q = 0; q < 25; ++q) v += std::pow(b[(n * 4 + c) * 25 + q] - m, 2);
    s.bn_mean = std::max(s.bn_mean, std::abs(m));
    s.bn_var = std::max(s.bn_var, std::abs(v / 150.0 - 1.0));
  }

  Tensor v = random_tensor({8, 4, 3, 3}, seed + 1);
  Tensor g = random_tensor({8}, seed + 2, 3.0);
  Tensor w = weightnorm_effective(Var(v), Var(g)).value();
  for (int64_t c = 0; c < 8; ++c) {
    double ss = 0.0;
    for (int64_t k = 0; k < 36; ++k) ss += w[c * 36 + k] * w[c * 36 + k];
    s.wn_norm = std::max(s.wn_norm, std::abs(std::sqrt(ss) - std::abs(g[c])));
  }

  std::mt19937_64 rng(seed + 3);
  Tensor raw = random_tensor({8, 8}, seed + 4);
  SpectralNormState sn = SpectralNormState::make("sn", raw, rng);
  Tensor normalized;
  for (int i = 0; i < 50; ++i) normalized = spectral_normalize(Var(raw), sn, Phase::kTrain).value();
  s.sn_sigma = std::abs(largest_singular_value(normalized) - 1.0);
  return s;
}

struct TrainedRun {
  double train_acc = 0.0;
  double test_acc = 0.0;
  double seconds = 0.0;
  int epochs = 0;
};

// The bundled spirals preset (ODENet4) with the given training solver.
inline std::pair<Model, TrainedRun> train_spirals(int n_evals, NormSchedule schedule = {}) {
  auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = preset_defaults(DataPreset::kSpirals);
  cfg.schedule = schedule;
  cfg.solver.n_evals = n_evals;
  auto [train_set, test_set] = load_data(cfg.data);
  Model model = build(cfg.model_config(3, train_set.num_classes));
  std::vector<EpochMetrics> metrics = train(model, cfg.plan, train_set, nullptr);
  TrainedRun run;
  run.train_acc = evaluate_accuracy(model, train_set);
  run.test_acc = evaluate_accuracy(model, test_set);
  run.epochs = static_cast<int>(metrics.size());
  run.seconds = testing_support::seconds_since(t0);
  return {std::move(model), run};
}

// ODENet4 whose ODE right-hand side is identically zero.
inline Model zero_flow_model() {
  Model model = build(testing_support::tiny_config(NormKind::kNF, 4, 2));
  for (Parameter* p : model.registry()) {
    if (p->name.rfind("ode1.conv2.", 0) == 0 && p->trainable) p->value = Tensor::zeros(p->value.shape());
  }
  model.set_mode(Mode::kEval);
  return model;
}

}  // namespace oracles
