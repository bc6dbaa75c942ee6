#include "odenorm/odesolver.hpp"

#include <stdexcept>

#include "odenorm/ops.hpp"

namespace odenorm {

std::string_view to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::kEuler: return "Euler";
    case Scheme::kRK2: return "RK2";
    case Scheme::kRK4: return "RK4";
  }
  return "?";
}

Scheme parse_scheme(std::string_view text) {
  for (Scheme s : {Scheme::kEuler, Scheme::kRK2, Scheme::kRK4}) {
    if (to_string(s) == text) return s;
  }
  throw std::invalid_argument("unknown solver scheme '" + std::string(text) + "' (expected Euler, RK2 or RK4)");
}

int evals_per_step(Scheme scheme) {
  switch (scheme) {
    case Scheme::kEuler: return 1;
    case Scheme::kRK2: return 2;
    case Scheme::kRK4: return 4;
  }
  return 1;
}

int steps_for_budget(Scheme scheme, int n_evals) {
  int per = evals_per_step(scheme);
  if (n_evals < per) {
    throw std::invalid_argument("solver budget " + std::to_string(n_evals) + " is below one " +
                                std::string(to_string(scheme)) + " step (" + std::to_string(per) + " evaluations)");
  }
  if (n_evals % per != 0) {
    throw std::invalid_argument("solver budget " + std::to_string(n_evals) + " is not a multiple of " +
                                std::to_string(per) + " evaluations per " + std::string(to_string(scheme)) + " step");
  }
  return n_evals / per;
}

SolverSpec::SolverSpec(Scheme scheme, int n_evals) : scheme_(scheme), n_evals_(n_evals) {
  steps_for_budget(scheme, n_evals);
}

std::string SolverSpec::str() const {
  return "(" + std::string(to_string(scheme_)) + "," + std::to_string(n_evals_) + ")";
}

namespace {

Var checked_eval(const Rhs& rhs, const Var& z, double t) {
  Var k = rhs(z, t);
  if (k.shape() != z.shape()) {
    throw ShapeError("integrate: right-hand side changed shape " + shape_str(z.shape()) + " -> " +
                     shape_str(k.shape()));
  }
  return k;
}

Var step(const Rhs& rhs, const Var& z, double t, double h, Scheme scheme) {
  switch (scheme) {
    case Scheme::kEuler:
      return axpy(z, h, checked_eval(rhs, z, t));
    case Scheme::kRK2: {
      Var k1 = checked_eval(rhs, z, t);
      Var k2 = checked_eval(rhs, axpy(z, 0.5 * h, k1), t + 0.5 * h);
      return axpy(z, h, k2);
    }
    case Scheme::kRK4: {
      Var k1 = checked_eval(rhs, z, t);
      Var k2 = checked_eval(rhs, axpy(z, 0.5 * h, k1), t + 0.5 * h);
      Var k3 = checked_eval(rhs, axpy(z, 0.5 * h, k2), t + 0.5 * h);
      Var k4 = checked_eval(rhs, axpy(z, h, k3), t + h);
      Var incr = add(add(k1, scale(k2, 2.0)), add(scale(k3, 2.0), k4));
      return axpy(z, h / 6.0, incr);
    }
  }
  throw std::logic_error("integrate: unhandled scheme");
}

}  // namespace

Integration integrate(const Rhs& rhs, const Var& z0, double t0, double t1, const SolverSpec& spec,
                      bool keep_trajectory) {
  if (!(t1 > t0)) throw std::invalid_argument("integrate: requires t1 > t0");
  int n = spec.n_steps();
  double h = (t1 - t0) / n;
  Integration out;
  if (keep_trajectory) {
    out.trajectory.times.push_back(t0);
    out.trajectory.states.push_back(z0.value());
  }
  Var z = z0;
  for (int k = 0; k < n; ++k) {
    double t = t0 + k * h;
    z = step(rhs, z, t, h, spec.scheme());
    if (!z.value().all_finite()) {
      throw NumericalError("integrate: non-finite state after step " + std::to_string(k) + " of " +
                           std::to_string(n) + " with " + spec.str());
    }
    if (keep_trajectory) {
      out.trajectory.times.push_back(k + 1 == n ? t1 : t0 + (k + 1) * h);
      out.trajectory.states.push_back(z.value());
    }
  }
  out.z1 = z;
  return out;
}

}  // namespace odenorm
