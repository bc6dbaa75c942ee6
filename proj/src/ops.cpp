#include "odenorm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gemm.hpp"

namespace odenorm {

namespace {

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

Broadcast check_binary(const char* op, const Var& a, const Var& b) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.value().size() == 1) return Broadcast::kRightScalar;
  if (a.value().size() == 1) return Broadcast::kLeftScalar;
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
}

const Shape& result_shape(Broadcast mode, const Var& a, const Var& b) {
  return mode == Broadcast::kLeftScalar ? b.shape() : a.shape();
}

template <typename F>
Tensor zip(Broadcast mode, const Tensor& a, const Tensor& b, const Shape& shape, F f) {
  Tensor out(shape);
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  switch (mode) {
    case Broadcast::kNone:
      for (size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
      break;
    case Broadcast::kRightScalar:
      for (size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[0]);
      break;
    case Broadcast::kLeftScalar:
      for (size_t i = 0; i < o.size(); ++i) o[i] = f(x[0], y[i]);
      break;
  }
  return out;
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto o = out.mutable_data();
  auto x = a.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = f(x[i]);
  return out;
}

double total(const Tensor& t) {
  auto d = t.data();
  return std::accumulate(d.begin(), d.end(), 0.0);
}

// Gradient for an operand of `shape` given the full-size elementwise gradient.
Tensor reduce_to(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  return Tensor(shape, {total(g)});
}

Tensor product(const Tensor& a, const Tensor& b) {
  return zip(Broadcast::kNone, a, b, a.shape(), [](double x, double y) { return x * y; });
}

// Elementwise product of g with `other`, where `other` may be a scalar.
Tensor times(const Tensor& g, const Tensor& other) {
  if (other.size() == 1) {
    double s = other[0];
    return map(g, [s](double v) { return v * s; });
  }
  return product(g, other);
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Broadcast mode = check_binary("add", a, b);
  Tensor out = zip(mode, a.value(), b.value(), result_shape(mode, a, b),
                   [](double x, double y) { return x + y; });
  Shape sa = a.shape(), sb = b.shape();
  return make_result("add", {&a, &b}, std::move(out), {},
                     [sa, sb](const Tensor& g, const Node& n) -> InputGrads {
                       InputGrads r(2);
                       if (n.needs_grad(0)) r[0] = reduce_to(g, sa);
                       if (n.needs_grad(1)) r[1] = reduce_to(g, sb);
                       return r;
                     });
}

Var sub(const Var& a, const Var& b) {
  Broadcast mode = check_binary("sub", a, b);
  Tensor out = zip(mode, a.value(), b.value(), result_shape(mode, a, b),
                   [](double x, double y) { return x - y; });
  Shape sa = a.shape(), sb = b.shape();
  return make_result("sub", {&a, &b}, std::move(out), {},
                     [sa, sb](const Tensor& g, const Node& n) -> InputGrads {
                       InputGrads r(2);
                       if (n.needs_grad(0)) r[0] = reduce_to(g, sa);
                       if (n.needs_grad(1)) r[1] = reduce_to(map(g, [](double v) { return -v; }), sb);
                       return r;
                     });
}

Var mul(const Var& a, const Var& b) {
  Broadcast mode = check_binary("mul", a, b);
  Tensor out = zip(mode, a.value(), b.value(), result_shape(mode, a, b),
                   [](double x, double y) { return x * y; });
  Shape sa = a.shape(), sb = b.shape();
  return make_result("mul", {&a, &b}, std::move(out), {a.value(), b.value()},
                     [sa, sb](const Tensor& g, const Node& n) -> InputGrads {
                       InputGrads r(2);
                       if (n.needs_grad(0)) r[0] = reduce_to(times(g, n.saved[1]), sa);
                       if (n.needs_grad(1)) r[1] = reduce_to(times(g, n.saved[0]), sb);
                       return r;
                     });
}

Var scale(const Var& a, double s) {
  Tensor out = map(a.value(), [s](double v) { return v * s; });
  return make_result("scale", {&a}, std::move(out), {}, [s](const Tensor& g, const Node&) -> InputGrads {
    return {map(g, [s](double v) { return v * s; })};
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = map(a.value(), [s](double v) { return v + s; });
  return make_result("add_scalar", {&a}, std::move(out), {},
                     [](const Tensor& g, const Node&) -> InputGrads { return {g}; });
}

Var axpy(const Var& a, double s, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("axpy: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = zip(Broadcast::kNone, a.value(), b.value(), a.shape(),
                   [s](double x, double y) { return x + s * y; });
  return make_result("axpy", {&a, &b}, std::move(out), {}, [s](const Tensor& g, const Node& n) -> InputGrads {
    InputGrads r(2);
    if (n.needs_grad(0)) r[0] = g;
    if (n.needs_grad(1)) r[1] = map(g, [s](double v) { return v * s; });
    return r;
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out({m, n});
  detail::gemm(false, false, m, n, k, a.value().data().data(), b.value().data().data(),
               out.mutable_data().data(), false);
  return make_result("matmul", {&a, &b}, std::move(out), {a.value(), b.value()},
                     [m, k, n](const Tensor& g, const Node& node) -> InputGrads {
                       InputGrads r(2);
                       if (node.needs_grad(0)) {
                         Tensor ga({m, k});
                         detail::gemm(false, true, m, k, n, g.data().data(), node.saved[1].data().data(),
                                      ga.mutable_data().data(), false);
                         r[0] = std::move(ga);
                       }
                       if (node.needs_grad(1)) {
                         Tensor gb({k, n});
                         detail::gemm(true, false, k, n, m, node.saved[0].data().data(), g.data().data(),
                                      gb.mutable_data().data(), false);
                         r[1] = std::move(gb);
                       }
                       return r;
                     });
}

namespace {
Tensor transposed(const Tensor& t) {
  int64_t rows = t.shape()[0], cols = t.shape()[1];
  Tensor out({cols, rows});
  auto o = out.mutable_data();
  auto x = t.data();
  for (int64_t i = 0; i < rows; ++i) {
    for (int64_t j = 0; j < cols; ++j) o[static_cast<size_t>(j * rows + i)] = x[static_cast<size_t>(i * cols + j)];
  }
  return out;
}
}  // namespace

Var transpose(const Var& a) {
  if (a.value().rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
  return make_result("transpose", {&a}, transposed(a.value()), {},
                     [](const Tensor& g, const Node&) -> InputGrads { return {transposed(g)}; });
}

Var reshape(const Var& a, Shape shape) {
  Shape original = a.shape();
  Tensor out = a.value().reshaped(std::move(shape));
  return make_result("reshape", {&a}, std::move(out), {},
                     [original](const Tensor& g, const Node&) -> InputGrads { return {g.reshaped(original)}; });
}

Var sum(const Var& a) {
  Shape s = a.shape();
  return make_result("sum", {&a}, Tensor::scalar(total(a.value())), {},
                     [s](const Tensor& g, const Node&) -> InputGrads { return {Tensor::full(s, g[0])}; });
}

Var mean(const Var& a) {
  Shape s = a.shape();
  double n = static_cast<double>(a.value().size());
  return make_result("mean", {&a}, Tensor::scalar(total(a.value()) / n), {},
                     [s, n](const Tensor& g, const Node&) -> InputGrads { return {Tensor::full(s, g[0] / n)}; });
}

Var sum_squares(const Var& a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v * v;
  return make_result("sum_squares", {&a}, Tensor::scalar(acc), {a.value()},
                     [](const Tensor& g, const Node& n) -> InputGrads {
                       double s = 2.0 * g[0];
                       return {map(n.saved[0], [s](double v) { return s * v; })};
                     });
}

Var tanh(const Var& a) {
  Tensor out = map(a.value(), [](double v) { return std::tanh(v); });
  Tensor saved = out;
  return make_result("tanh", {&a}, std::move(out), {saved}, [](const Tensor& g, const Node& n) -> InputGrads {
    return {zip(Broadcast::kNone, g, n.saved[0], g.shape(), [](double gv, double y) { return gv * (1 - y * y); })};
  });
}

Var append_constant_channel(const Var& x, double value) {
  if (x.value().rank() != 4) {
    throw ShapeError("append_constant_channel: expected [B,C,H,W], got " + shape_str(x.shape()));
  }
  const Shape& s = x.shape();
  int64_t batch = s[0], channels = s[1], plane = s[2] * s[3];
  Tensor out({batch, channels + 1, s[2], s[3]});
  auto o = out.mutable_data();
  auto in = x.value().data();
  for (int64_t b = 0; b < batch; ++b) {
    auto src = in.begin() + b * channels * plane;
    auto dst = o.begin() + b * (channels + 1) * plane;
    std::copy(src, src + channels * plane, dst);
    std::fill(dst + channels * plane, dst + (channels + 1) * plane, value);
  }
  Shape original = s;
  return make_result("append_constant_channel", {&x}, std::move(out), {},
                     [original, batch, channels, plane](const Tensor& g, const Node&) -> InputGrads {
                       Tensor r(original);
                       auto o = r.mutable_data();
                       auto gd = g.data();
                       for (int64_t b = 0; b < batch; ++b) {
                         auto src = gd.begin() + b * (channels + 1) * plane;
                         std::copy(src, src + channels * plane, o.begin() + b * channels * plane);
                       }
                       return {std::move(r)};
                     });
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
  if (logits.value().rank() != 2 || logits.shape()[0] != static_cast<int64_t>(labels.size())) {
    throw ShapeError("softmax_cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  int64_t batch = logits.shape()[0], classes = logits.shape()[1];
  Tensor probs(logits.shape());
  auto p = probs.mutable_data();
  auto z = logits.value().data();
  double loss = 0.0;
  for (int64_t b = 0; b < batch; ++b) {
    int label = labels[static_cast<size_t>(b)];
    if (label < 0 || label >= classes) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) + " outside [0," +
                              std::to_string(classes) + ")");
    }
    const double* row = z.data() + b * classes;
    double mx = *std::max_element(row, row + classes);
    double se = 0.0;
    for (int64_t k = 0; k < classes; ++k) se += std::exp(row[k] - mx);
    double lse = mx + std::log(se);
    loss += lse - row[label];
    for (int64_t k = 0; k < classes; ++k) p[static_cast<size_t>(b * classes + k)] = std::exp(row[k] - lse);
  }
  loss /= static_cast<double>(batch);
  return make_result("softmax_cross_entropy", {&logits}, Tensor::scalar(loss), {probs},
                     [labels, batch, classes](const Tensor& g, const Node& n) -> InputGrads {
                       Tensor r = n.saved[0];
                       auto d = r.mutable_data();
                       double s = g[0] / static_cast<double>(batch);
                       for (int64_t b = 0; b < batch; ++b) d[static_cast<size_t>(b * classes + labels[static_cast<size_t>(b)])] -= 1.0;
                       for (double& v : d) v *= s;
                       return {std::move(r)};
                     });
}

double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double step) {
  if (!(step > 0)) throw std::invalid_argument("grad_check: step must be positive");
  Graph graph;
  Tensor analytic;
  {
    RecordingScope scope(graph);
    Var leaf = graph.leaf(x);
    Var y = f(leaf);
    if (y.value().size() != 1) {
      throw ShapeError("grad_check: function output " + shape_str(y.shape()) + " is not scalar");
    }
    if (!y.value().all_finite()) throw NumericalError("grad_check: function value is not finite");
    if (!y.tracked()) {
      analytic = Tensor::zeros(x.shape());
    } else {
      analytic = graph.backward(y).of(leaf);
    }
  }
  NoRecordScope no_record;
  double worst = 0.0;
  Tensor probe = x;
  for (int64_t i = 0; i < x.size(); ++i) {
    double original = x[i];
    probe.mutable_data()[static_cast<size_t>(i)] = original + step;
    double up = f(Var(probe)).value().item();
    probe.mutable_data()[static_cast<size_t>(i)] = original - step;
    double down = f(Var(probe)).value().item();
    probe.mutable_data()[static_cast<size_t>(i)] = original;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericalError("grad_check: non-finite function value near coordinate " + std::to_string(i));
    }
    double numeric = (up - down) / (2.0 * step);
    double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace odenorm
