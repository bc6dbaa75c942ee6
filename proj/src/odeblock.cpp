#include "odenorm/odeblock.hpp"

#include <stdexcept>

#include "odenorm/ops.hpp"

namespace odenorm {

ConvRhs::ConvRhs(const std::string& name, int64_t channels, NormKind kind, bool autonomous, std::mt19937_64& rng)
    : autonomous_(autonomous),
      conv1_(name + ".conv1", ConvSpec{channels + (autonomous ? 0 : 1), channels, 3, 1, 1, true}, kind, rng),
      conv2_(name + ".conv2", ConvSpec{channels, channels, 3, 1, 1, true}, kind, rng) {}

Rhs ConvRhs::bind(Phase phase) const {
  Conv2dParams p1 = conv1_.prepare(phase);
  Conv2dParams p2 = conv2_.prepare(phase);
  return [this, p1, p2, phase](const Var& z, double t) {
    Var x = autonomous_ ? z : append_constant_channel(z, t);
    Var y = relu(conv1_.normalize(conv2d(x, p1), phase));
    return conv2_.normalize(conv2d(y, p2), phase);
  };
}

void ConvRhs::collect(std::vector<Parameter*>& registry) {
  conv1_.collect(registry);
  conv2_.collect(registry);
}

OdeBlock::OdeBlock(std::unique_ptr<OdeRhs> rhs, SolverSpec train_spec, double t0, double t1)
    : rhs_(std::move(rhs)), train_spec_(train_spec), t0_(t0), t1_(t1) {
  if (!(t1 > t0)) throw std::invalid_argument("ode_block: requires t1 > t0");
  rhs_->collect(params_);
}

std::vector<const Parameter*> OdeBlock::trainable() const {
  std::vector<const Parameter*> out;
  for (const Parameter* p : params_) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

Var OdeBlock::forward(const Var& z0, const ForwardContext& ctx) const {
  return solve(z0, ctx.solver_override.value_or(train_spec_), ctx.phase, ctx.checkpoint_ode);
}

Var OdeBlock::solve(const Var& z0, const SolverSpec& spec, Phase phase, bool checkpoint) const {
  if (!checkpoint || active_graph() == nullptr) {
    return integrate(rhs_->bind(phase), z0, t0_, t1_, spec, false).z1;
  }
  Tensor z1;
  {
    NoRecordScope untaped;
    z1 = integrate(rhs_->bind(phase), Var(z0.value()), t0_, t1_, spec, false).z1.value();
  }
  std::vector<const Parameter*> params = trainable();
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Parameter* p : params) leaves.push_back(use(*p));
  std::vector<const Var*> inputs{&z0};
  for (const Var& v : leaves) inputs.push_back(&v);
  Tensor out = z1;
  return make_result("ode_block", inputs, std::move(out), {z0.value(), z1},
                     [this, spec](const Tensor& g, const Node& n) -> InputGrads {
                       OdeGradients grads = backward(n.saved[0], g, spec, &n.saved[1]);
                       InputGrads r(n.inputs.size());
                       r[0] = std::move(grads.grad_z0);
                       for (size_t i = 0; i < grads.grad_params.size(); ++i) {
                         r[i + 1] = std::move(grads.grad_params[i].second);
                       }
                       return r;
                     });
}

OdeGradients OdeBlock::backward(const Tensor& z0, const Tensor& upstream, const SolverSpec& spec,
                                const Tensor* expected_z1) const {
  recompute_count_.fetch_add(1);
  Graph tape;
  RecordingScope scope(tape);
  Var start = tape.leaf(z0);
  Var z1 = integrate(rhs_->bind(Phase::kReplay), start, t0_, t1_, spec, false).z1;
  if (expected_z1) {
    double drift = max_abs_diff(z1.value(), *expected_z1);
    if (drift > 1e-12) {
      throw std::logic_error("ode_block: recomputed solve differs from the forward pass by " +
                             std::to_string(drift) + "; block state changed between forward and backward");
    }
  }
  Gradients grads = tape.backward(z1, upstream);
  OdeGradients out;
  out.grad_z0 = grads.of(start);
  for (const Parameter* p : trainable()) out.grad_params.emplace_back(p, grads.of(*p));
  return out;
}

}  // namespace odenorm
