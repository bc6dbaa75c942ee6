#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "odenorm/module.hpp"
#include "odenorm/odeblock.hpp"

namespace odenorm {

enum class Arch { kODENet4, kODENet10, kResNet10 };

std::string_view to_string(Arch arch);
Arch parse_arch(std::string_view text);  // "ODENet4", "ODENet10", "ResNet10"

// Normalization per architectural slot. All ResNet blocks share one kind, all
// ODE blocks share one kind.
struct NormSchedule {
  NormKind after_first_conv = NormKind::kNF;
  NormKind resnet_blocks = NormKind::kNF;
  NormKind ode_blocks = NormKind::kNF;

  friend bool operator==(const NormSchedule&, const NormSchedule&) = default;
};

struct ModelConfig {
  Arch arch = Arch::kODENet4;
  NormSchedule schedule;
  int base_channels = 16;
  int in_channels = 3;
  int num_classes = 10;
  SolverSpec train_spec{Scheme::kEuler, 8};
  uint64_t seed = 0;
  // Drop the time channel from ODE right-hand sides.
  bool autonomous_rhs = false;

  void validate() const;
};

// conv3x3 -> norm -> ReLU, optionally strided.
class ConvStage : public Layer {
 public:
  ConvStage(const std::string& name, const ConvSpec& spec, NormKind kind, std::mt19937_64& rng);
  std::string_view kind() const override { return "conv_stage"; }
  Var forward(const Var& x, const ForwardContext& ctx) const override;
  void collect(std::vector<Parameter*>& registry) override { unit_.collect(registry); }
  ConvNormUnit& unit() { return unit_; }

 private:
  ConvNormUnit unit_;
};

// conv3x3 -> norm -> ReLU -> conv3x3 -> norm, plus identity or 1x1 projection
// shortcut, then ReLU after the addition.
class ResidualBlock : public Layer {
 public:
  ResidualBlock(const std::string& name, int64_t in_channels, int64_t out_channels, int stride, NormKind kind,
                std::mt19937_64& rng);
  std::string_view kind() const override { return "resnet_block"; }
  Var forward(const Var& x, const ForwardContext& ctx) const override;
  void collect(std::vector<Parameter*>& registry) override;

 private:
  ConvNormUnit conv1_;
  ConvNormUnit conv2_;
  std::optional<ConvNormUnit> projection_;
};

// global average pool -> fc
class ClassifierHead : public Layer {
 public:
  ClassifierHead(const std::string& name, int64_t in_features, int64_t classes, std::mt19937_64& rng);
  std::string_view kind() const override { return "classifier"; }
  Var forward(const Var& x, const ForwardContext& ctx) const override;
  void collect(std::vector<Parameter*>& registry) override;
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  Parameter weight_;
  Parameter bias_;
};

enum class Mode { kTrain, kEval };

class Model {
 public:
  Model(ModelConfig config, std::vector<std::unique_ptr<Layer>> layers);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }

  // Logits [B, num_classes]. The override replaces every ODE block's solver
  // for this call. Throws NumericalError naming the first layer whose output
  // is not finite. In eval mode nothing is mutated.
  Var forward(const Var& x, std::optional<SolverSpec> override_spec = std::nullopt, bool checkpoint_ode = true) const;
  Var forward(const Var& x, const ForwardContext& ctx) const;

  // Eval-mode logits with recording disabled, regardless of mode().
  Tensor infer(const Tensor& x, std::optional<SolverSpec> spec = std::nullopt) const;

  // All persistent tensors (parameters and buffers) in a fixed order.
  const std::vector<Parameter*>& registry() const { return registry_; }
  std::vector<Parameter*> trainable_parameters() const;
  int64_t trainable_count() const;
  Parameter* find(std::string_view name) const;

  // FNV-1a over names, shapes and raw bytes of every registry tensor.
  uint64_t state_hash() const;

  const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }
  std::vector<OdeBlock*> ode_blocks() const;

 private:
  ModelConfig config_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<Parameter*> registry_;
  Mode mode_ = Mode::kTrain;
};

// ODENet4:  conv -> norm -> ReLU -> ODE(C) -> avgpool -> fc
// ODENet10: conv -> norm -> ReLU -> Res(C->2C,/2) -> ODE(2C) -> Res(2C->4C,/2) -> ODE(4C) -> avgpool -> fc
// ResNet10: as ODENet10 with each ODE block replaced by a shape-preserving residual block.
Model build(const ModelConfig& config);

// Checkpoint directory layout: manifest.txt (key=value lines) and params.bin
// ("ODENORM1", tensor count, name/shape index, then little-endian float64
// data in registry order).
void save_checkpoint(const Model& model, const std::filesystem::path& dir, int epoch);

struct LoadedCheckpoint {
  Model model;
  int epoch = 0;
};

// Throws CheckpointError on a missing file, bad magic, or an index that does
// not match the model described by the manifest.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string format_manifest(const ModelConfig& config, int epoch);
std::pair<ModelConfig, int> parse_manifest(const std::string& text);

}  // namespace odenorm
