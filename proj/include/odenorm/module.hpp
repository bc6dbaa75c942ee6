#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "odenorm/autograd.hpp"
#include "odenorm/normalization.hpp"
#include "odenorm/odesolver.hpp"

namespace odenorm {

struct ForwardContext {
  Phase phase = Phase::kEval;
  // Replaces every ODE block's solver for this call only.
  std::optional<SolverSpec> solver_override;
  // Record each ODE block as a single checkpointed node (input only) and
  // recompute its solve during backward. When false the full unrolled solve
  // is recorded.
  bool checkpoint_ode = true;
};

// One stage of a model. forward is const: the only state it may touch is
// normalization state, and only in Phase::kTrain.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string_view kind() const = 0;
  virtual Var forward(const Var& x, const ForwardContext& ctx) const = 0;
  virtual void collect(std::vector<Parameter*>& registry) = 0;
};

}  // namespace odenorm
