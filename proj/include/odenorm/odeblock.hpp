#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "odenorm/module.hpp"

namespace odenorm {

// Parametric right-hand side f(z, t, theta) of an ODE block.
class OdeRhs {
 public:
  virtual ~OdeRhs() = default;
  // Prepares the parameters for one solve (effective weights, one SN power
  // iteration in kTrain) and returns the dynamics for that solve.
  virtual Rhs bind(Phase phase) const = 0;
  virtual void collect(std::vector<Parameter*>& registry) = 0;
};

// conv3x3 -> norm -> ReLU -> conv3x3 -> norm, shape preserving. Unless
// autonomous, a channel filled with t is appended before the first conv.
class ConvRhs : public OdeRhs {
 public:
  ConvRhs(const std::string& name, int64_t channels, NormKind kind, bool autonomous, std::mt19937_64& rng);

  Rhs bind(Phase phase) const override;
  void collect(std::vector<Parameter*>& registry) override;

  ConvNormUnit& conv1() { return conv1_; }
  ConvNormUnit& conv2() { return conv2_; }
  bool autonomous() const { return autonomous_; }

 private:
  bool autonomous_;
  ConvNormUnit conv1_;
  ConvNormUnit conv2_;
};

struct OdeGradients {
  Tensor grad_z0;
  std::vector<std::pair<const Parameter*, Tensor>> grad_params;  // trainable parameters, registry order
};

// Solves dz/dt = f(z, t, theta) on [t0, t1] from the block input.
class OdeBlock : public Layer {
 public:
  OdeBlock(std::unique_ptr<OdeRhs> rhs, SolverSpec train_spec, double t0 = 0.0, double t1 = 1.0);

  std::string_view kind() const override { return "ode_block"; }
  Var forward(const Var& z0, const ForwardContext& ctx) const override;
  void collect(std::vector<Parameter*>& registry) override { rhs_->collect(registry); }

  // Forward solve under `spec`. In a recording training pass with
  // checkpointing, the solve runs untaped and the block becomes one node whose
  // backward is backward() below.
  Var solve(const Var& z0, const SolverSpec& spec, Phase phase, bool checkpoint) const;

  // Recomputes the solve from the checkpointed input with a fresh tape and
  // reverse-propagates `upstream` through the discrete solver steps. When
  // `expected_z1` is given, a recomputed output differing by more than 1e-12
  // is an internal error.
  OdeGradients backward(const Tensor& z0, const Tensor& upstream, const SolverSpec& spec,
                        const Tensor* expected_z1 = nullptr) const;

  const SolverSpec& train_spec() const { return train_spec_; }
  OdeRhs& rhs() { return *rhs_; }
  int recompute_count() const { return recompute_count_.load(); }

 private:
  std::vector<const Parameter*> trainable() const;

  std::unique_ptr<OdeRhs> rhs_;
  SolverSpec train_spec_;
  double t0_;
  double t1_;
  std::vector<Parameter*> params_;
  mutable std::atomic<int> recompute_count_{0};
};

}  // namespace odenorm
