#pragma once

#include <functional>
#include <vector>

#include "odenorm/autograd.hpp"

namespace odenorm {

// Elementwise binary ops require equal shapes; the only broadcast allowed is a
// one-element operand against a tensor.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
// a + s * b, the solver update.
Var axpy(const Var& a, double s, const Var& b);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

Var matmul(const Var& a, const Var& b);  // [m,k] x [k,n]
Var transpose(const Var& a);             // rank-2 only
Var reshape(const Var& a, Shape shape);
Var sum(const Var& a);                   // -> [1]
Var mean(const Var& a);                  // -> [1]
Var sum_squares(const Var& a);           // -> [1]
Var tanh(const Var& a);

// Appends one channel holding `value` everywhere: [B,C,H,W] -> [B,C+1,H,W].
Var append_constant_channel(const Var& x, double value);

// Mean cross-entropy of softmax(logits) against integer labels, computed with
// max-subtracted log-sum-exp. logits: [B,K].
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);

// Max over coordinates of |analytic - central difference| / max(1, |central
// difference|) for a scalar-valued map. Throws NumericalError when f is
// non-finite at or around x, ShapeError when f is not scalar.
double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double step = 1e-5);

}  // namespace odenorm
