#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "odenorm/dataset.hpp"
#include "odenorm/models.hpp"

namespace odenorm {

struct TrainPlan {
  int epochs = 350;
  int64_t batch_size = 512;
  double lr0 = 0.1;
  std::vector<int> lr_drops{150, 300};
  double lr_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool augment = true;
  uint64_t seed = 0;

  void validate() const;
};

// Piecewise constant: lr0 * factor^k with k the number of drops <= epoch.
// When 1/factor is an integer the division form is used so that 0.1 drops to
// exactly 0.01 and 0.001.
double lr_at_epoch(const TrainPlan& plan, int epoch);

// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
void sgd_momentum_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double momentum,
                       double weight_decay);

class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(const std::vector<Parameter*>& params, const Gradients& grads, double lr);
  const Tensor* velocity(const Parameter& p) const;

 private:
  double momentum_;
  double weight_decay_;
  std::unordered_map<const Parameter*, Tensor> velocity_;
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean over batches
  double train_acc = 0.0;   // on the (augmented) training batches
  double test_acc = 0.0;    // NaN without a test set

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct TrainOptions {
  // Checkpoints go to <dir>/epoch_<e> before each lr drop and to <dir>/final.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(const EpochMetrics&)> on_epoch;
  bool checkpoint_ode = true;
  int64_t eval_batch_size = 256;
};

// Cross-entropy SGD training in Mode::kTrain; returns one row per epoch and
// leaves the model in Mode::kEval. Throws NumericalError naming the epoch and
// batch on a non-finite loss.
std::vector<EpochMetrics> train(Model& model, const TrainPlan& plan, const Dataset& train_set, const Dataset* test_set,
                                const TrainOptions& options = {});

// Mean cross-entropy and gradients for one batch in the given phase.
struct BatchResult {
  double loss = 0.0;
  int64_t correct = 0;
  Gradients grads;
};
BatchResult loss_and_gradients(const Model& model, const Tensor& images, const std::vector<int>& labels, Phase phase,
                               bool checkpoint_ode = true);

inline constexpr const char* kMetricsHeader = "epoch,lr,train_loss,train_acc,test_acc";
std::string format_metrics(const std::vector<EpochMetrics>& rows);
std::vector<EpochMetrics> parse_metrics(const std::string& text);
void write_metrics(const std::vector<EpochMetrics>& rows, const std::filesystem::path& path);
std::vector<EpochMetrics> read_metrics(const std::filesystem::path& path);

}  // namespace odenorm
