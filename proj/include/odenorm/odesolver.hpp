#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "odenorm/autograd.hpp"

namespace odenorm {

enum class Scheme { kEuler, kRK2, kRK4 };

std::string_view to_string(Scheme scheme);
Scheme parse_scheme(std::string_view text);  // "Euler", "RK2", "RK4"
int evals_per_step(Scheme scheme);

// n_evals / evals_per_step(scheme). Throws std::invalid_argument when the
// budget is not a positive multiple of the per-step cost.
int steps_for_budget(Scheme scheme, int n_evals);

// A fixed-step integration scheme together with its budget of right-hand-side
// evaluations.
class SolverSpec {
 public:
  SolverSpec(Scheme scheme, int n_evals);

  Scheme scheme() const { return scheme_; }
  int n_evals() const { return n_evals_; }
  int n_steps() const { return n_evals_ / evals_per_step(scheme_); }
  std::string str() const;  // "(Euler,8)"

  friend bool operator==(const SolverSpec&, const SolverSpec&) = default;

 private:
  Scheme scheme_;
  int n_evals_;
};

// f(z, t); must preserve the shape of z.
using Rhs = std::function<Var(const Var& z, double t)>;

struct Trajectory {
  std::vector<double> times;
  std::vector<Tensor> states;  // states[k] at times[k]; states[0] = z0
};

struct Integration {
  Var z1;
  Trajectory trajectory;
};

// Uniform steps h = (t1 - t0) / n_steps. Euler: z += h f(z,t). RK2 is the
// midpoint rule. RK4 is the classical tableau. Makes exactly spec.n_evals()
// calls to rhs and throws NumericalError naming the step when a state stops
// being finite.
Integration integrate(const Rhs& rhs, const Var& z0, double t0, double t1, const SolverSpec& spec,
                      bool keep_trajectory = true);

}  // namespace odenorm
