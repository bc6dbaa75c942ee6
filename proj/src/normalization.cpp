#include "odenorm/normalization.hpp"

#include <cmath>
#include <stdexcept>

namespace odenorm {

std::string_view to_string(NormKind kind) {
  switch (kind) {
    case NormKind::kBN: return "BN";
    case NormKind::kLN: return "LN";
    case NormKind::kWN: return "WN";
    case NormKind::kSN: return "SN";
    case NormKind::kNF: return "NF";
  }
  return "?";
}

NormKind parse_norm_kind(std::string_view text) {
  for (NormKind k : {NormKind::kBN, NormKind::kLN, NormKind::kWN, NormKind::kSN, NormKind::kNF}) {
    if (to_string(k) == text) return k;
  }
  throw std::invalid_argument("unknown normalization kind '" + std::string(text) +
                              "' (expected BN, LN, WN, SN or NF)");
}

namespace {

// [B,C] or [B,C,H,W] viewed as batch x channels x plane.
struct ChannelLayout {
  int64_t batch, channels, plane;

  size_t at(int64_t b, int64_t c, int64_t q) const {
    return static_cast<size_t>((b * channels + c) * plane + q);
  }
};

ChannelLayout channel_layout(const char* op, const Shape& s) {
  if (s.size() == 2) return {s[0], s[1], 1};
  if (s.size() == 4) return {s[0], s[1], s[2] * s[3]};
  throw ShapeError(std::string(op) + ": expected [B,C] or [B,C,H,W], got " + shape_str(s));
}

void check_affine(const char* op, const ChannelLayout& l, const Var& gamma, const Var& beta) {
  if (gamma.shape() != Shape{l.channels} || beta.shape() != Shape{l.channels}) {
    throw ShapeError(std::string(op) + ": affine parameters " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " do not match " + std::to_string(l.channels) + " channels");
  }
}

// Gradients of y = gamma_c * xhat + beta_c w.r.t. gamma and beta.
void affine_grads(const ChannelLayout& l, const Tensor& g, const Tensor& xhat, const Node& n, InputGrads& r) {
  if (!n.needs_grad(1) && !n.needs_grad(2)) return;
  Tensor dgamma({l.channels}), dbeta({l.channels});
  auto dga = dgamma.mutable_data();
  auto dbe = dbeta.mutable_data();
  auto gd = g.data();
  auto xh = xhat.data();
  for (int64_t b = 0; b < l.batch; ++b) {
    for (int64_t c = 0; c < l.channels; ++c) {
      for (int64_t q = 0; q < l.plane; ++q) {
        size_t i = l.at(b, c, q);
        dga[static_cast<size_t>(c)] += gd[i] * xh[i];
        dbe[static_cast<size_t>(c)] += gd[i];
      }
    }
  }
  if (n.needs_grad(1)) r[1] = std::move(dgamma);
  if (n.needs_grad(2)) r[2] = std::move(dbeta);
}

Tensor affine(const ChannelLayout& l, const Tensor& xhat, const Tensor& gamma, const Tensor& beta) {
  Tensor out(xhat.shape());
  auto o = out.mutable_data();
  auto xh = xhat.data();
  auto ga = gamma.data();
  auto be = beta.data();
  for (int64_t b = 0; b < l.batch; ++b) {
    for (int64_t c = 0; c < l.channels; ++c) {
      for (int64_t q = 0; q < l.plane; ++q) {
        size_t i = l.at(b, c, q);
        o[i] = ga[static_cast<size_t>(c)] * xh[i] + be[static_cast<size_t>(c)];
      }
    }
  }
  return out;
}

double l2_norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

// x / max(||x||, eps)
std::vector<double> normalized(std::vector<double> x, double eps) {
  double n = std::max(l2_norm(x), eps);
  for (double& v : x) v /= n;
  return x;
}

// W^T u for W viewed as [rows, cols].
std::vector<double> mat_t_vec(std::span<const double> w, int64_t rows, int64_t cols, std::span<const double> u) {
  std::vector<double> r(static_cast<size_t>(cols), 0.0);
  for (int64_t i = 0; i < rows; ++i) {
    double ui = u[static_cast<size_t>(i)];
    for (int64_t j = 0; j < cols; ++j) r[static_cast<size_t>(j)] += w[static_cast<size_t>(i * cols + j)] * ui;
  }
  return r;
}

std::vector<double> mat_vec(std::span<const double> w, int64_t rows, int64_t cols, std::span<const double> v) {
  std::vector<double> r(static_cast<size_t>(rows), 0.0);
  for (int64_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < cols; ++j) s += w[static_cast<size_t>(i * cols + j)] * v[static_cast<size_t>(j)];
    r[static_cast<size_t>(i)] = s;
  }
  return r;
}

}  // namespace

BatchNormState BatchNormState::make(const std::string& prefix, int64_t channels) {
  return BatchNormState{{prefix + ".gamma", Tensor::ones({channels}), true},
                        {prefix + ".beta", Tensor::zeros({channels}), true},
                        {prefix + ".running_mean", Tensor::zeros({channels}), false},
                        {prefix + ".running_var", Tensor::ones({channels}), false}};
}

LayerNormParams LayerNormParams::make(const std::string& prefix, int64_t channels) {
  return LayerNormParams{{prefix + ".gamma", Tensor::ones({channels}), true},
                         {prefix + ".beta", Tensor::zeros({channels}), true}};
}

WeightNormParams WeightNormParams::make(const std::string& prefix, Tensor v) {
  int64_t out = v.dim(0);
  int64_t rest = v.size() / out;
  Tensor g({out});
  auto gd = g.mutable_data();
  for (int64_t c = 0; c < out; ++c) gd[static_cast<size_t>(c)] = l2_norm(v.data().subspan(static_cast<size_t>(c * rest), static_cast<size_t>(rest)));
  return WeightNormParams{{prefix + ".v", std::move(v), true}, {prefix + ".g", std::move(g), true}};
}

SpectralNormState SpectralNormState::make(const std::string& prefix, const Tensor& weight, std::mt19937_64& rng) {
  int64_t rows = weight.dim(0);
  int64_t cols = weight.size() / rows;
  Tensor u0 = Tensor::randn({rows}, rng);
  std::vector<double> u = normalized({u0.data().begin(), u0.data().end()}, 1e-12);
  std::vector<double> v = normalized(mat_t_vec(weight.data(), rows, cols, u), 1e-12);
  return SpectralNormState{{prefix + ".u", Tensor({rows}, std::move(u)), false},
                           {prefix + ".v", Tensor({cols}, std::move(v)), false}};
}

Var batchnorm_batch_stats(const Var& x, const Var& gamma, const Var& beta, double eps, Tensor* batch_mean,
                          Tensor* batch_var) {
  ChannelLayout l = channel_layout("batchnorm", x.shape());
  check_affine("batchnorm", l, gamma, beta);
  double count = static_cast<double>(l.batch * l.plane);
  Tensor mean({l.channels}), var({l.channels}), inv({l.channels});
  Tensor xhat(x.shape());
  auto xd = x.value().data();
  auto xh = xhat.mutable_data();
  for (int64_t c = 0; c < l.channels; ++c) {
    double s = 0.0;
    for (int64_t b = 0; b < l.batch; ++b)
      for (int64_t q = 0; q < l.plane; ++q) s += xd[l.at(b, c, q)];
    double mu = s / count;
    double ss = 0.0;
    for (int64_t b = 0; b < l.batch; ++b)
      for (int64_t q = 0; q < l.plane; ++q) {
        double d = xd[l.at(b, c, q)] - mu;
        ss += d * d;
      }
    double sigma2 = ss / count;
    double is = 1.0 / std::sqrt(sigma2 + eps);
    mean.mutable_data()[static_cast<size_t>(c)] = mu;
    var.mutable_data()[static_cast<size_t>(c)] = sigma2;
    inv.mutable_data()[static_cast<size_t>(c)] = is;
    for (int64_t b = 0; b < l.batch; ++b)
      for (int64_t q = 0; q < l.plane; ++q) xh[l.at(b, c, q)] = (xd[l.at(b, c, q)] - mu) * is;
  }
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;
  Tensor out = affine(l, xhat, gamma.value(), beta.value());
  return make_result("batchnorm", {&x, &gamma, &beta}, std::move(out), {xhat, inv, gamma.value()},
                     [l, count](const Tensor& g, const Node& n) -> InputGrads {
                       InputGrads r(3);
                       const Tensor& xhat = n.saved[0];
                       affine_grads(l, g, xhat, n, r);
                       if (!n.needs_grad(0)) return r;
                       Tensor dx(g.shape());
                       auto d = dx.mutable_data();
                       auto gd = g.data();
                       auto xh = xhat.data();
                       auto inv = n.saved[1].data();
                       auto ga = n.saved[2].data();
                       for (int64_t c = 0; c < l.channels; ++c) {
                         double gc = ga[static_cast<size_t>(c)];
                         double s1 = 0.0, s2 = 0.0;
                         for (int64_t b = 0; b < l.batch; ++b)
                           for (int64_t q = 0; q < l.plane; ++q) {
                             size_t i = l.at(b, c, q);
                             s1 += gd[i] * gc;
                             s2 += gd[i] * gc * xh[i];
                           }
                         double k = inv[static_cast<size_t>(c)] / count;
                         for (int64_t b = 0; b < l.batch; ++b)
                           for (int64_t q = 0; q < l.plane; ++q) {
                             size_t i = l.at(b, c, q);
                             d[i] = k * (count * gd[i] * gc - s1 - xh[i] * s2);
                           }
                       }
                       r[0] = std::move(dx);
                       return r;
                     });
}

Var batchnorm_running_stats(const Var& x, const Var& gamma, const Var& beta, const Tensor& running_mean,
                            const Tensor& running_var, double eps) {
  ChannelLayout l = channel_layout("batchnorm", x.shape());
  check_affine("batchnorm", l, gamma, beta);
  Tensor inv({l.channels});
  Tensor xhat(x.shape());
  auto xd = x.value().data();
  auto xh = xhat.mutable_data();
  for (int64_t c = 0; c < l.channels; ++c) {
    double is = 1.0 / std::sqrt(running_var[c] + eps);
    inv.mutable_data()[static_cast<size_t>(c)] = is;
    for (int64_t b = 0; b < l.batch; ++b)
      for (int64_t q = 0; q < l.plane; ++q) xh[l.at(b, c, q)] = (xd[l.at(b, c, q)] - running_mean[c]) * is;
  }
  Tensor out = affine(l, xhat, gamma.value(), beta.value());
  return make_result("batchnorm_eval", {&x, &gamma, &beta}, std::move(out), {xhat, inv, gamma.value()},
                     [l](const Tensor& g, const Node& n) -> InputGrads {
                       InputGrads r(3);
                       affine_grads(l, g, n.saved[0], n, r);
                       if (!n.needs_grad(0)) return r;
                       Tensor dx(g.shape());
                       auto d = dx.mutable_data();
                       auto gd = g.data();
                       auto inv = n.saved[1].data();
                       auto ga = n.saved[2].data();
                       for (int64_t b = 0; b < l.batch; ++b)
                         for (int64_t c = 0; c < l.channels; ++c)
                           for (int64_t q = 0; q < l.plane; ++q) {
                             size_t i = l.at(b, c, q);
                             d[i] = gd[i] * ga[static_cast<size_t>(c)] * inv[static_cast<size_t>(c)];
                           }
                       r[0] = std::move(dx);
                       return r;
                     });
}

Var batchnorm(const Var& x, BatchNormState& s, Phase phase) {
  if (phase == Phase::kEval) {
    return batchnorm_running_stats(x, use(s.gamma), use(s.beta), s.running_mean.value, s.running_var.value, s.eps);
  }
  if (x.value().rank() < 1 || x.shape()[0] < 2) {
    throw std::invalid_argument("batchnorm: training mode needs a batch of at least 2, got " + shape_str(x.shape()));
  }
  Tensor mean, var;
  Var y = batchnorm_batch_stats(x, use(s.gamma), use(s.beta), s.eps, &mean, &var);
  if (phase == Phase::kTrain) {
    ChannelLayout l = channel_layout("batchnorm", x.shape());
    double count = static_cast<double>(l.batch * l.plane);
    double unbias = count > 1 ? count / (count - 1) : 1.0;
    auto rm = s.running_mean.value.mutable_data();
    auto rv = s.running_var.value.mutable_data();
    for (int64_t c = 0; c < l.channels; ++c) {
      size_t i = static_cast<size_t>(c);
      rm[i] = (1.0 - s.momentum) * rm[i] + s.momentum * mean[c];
      rv[i] = (1.0 - s.momentum) * rv[i] + s.momentum * var[c] * unbias;
    }
  }
  return y;
}

Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  ChannelLayout l = channel_layout("layernorm", x.shape());
  check_affine("layernorm", l, gamma, beta);
  int64_t per_sample = l.channels * l.plane;
  Tensor xhat(x.shape());
  Tensor inv({l.batch});
  auto xd = x.value().data();
  auto xh = xhat.mutable_data();
  for (int64_t b = 0; b < l.batch; ++b) {
    const double* row = xd.data() + b * per_sample;
    double s = 0.0;
    for (int64_t i = 0; i < per_sample; ++i) s += row[i];
    double mu = s / static_cast<double>(per_sample);
    double ss = 0.0;
    for (int64_t i = 0; i < per_sample; ++i) ss += (row[i] - mu) * (row[i] - mu);
    double is = 1.0 / std::sqrt(ss / static_cast<double>(per_sample) + eps);
    inv.mutable_data()[static_cast<size_t>(b)] = is;
    double* out = xh.data() + b * per_sample;
    for (int64_t i = 0; i < per_sample; ++i) out[i] = (row[i] - mu) * is;
  }
  Tensor out = affine(l, xhat, gamma.value(), beta.value());
  return make_result("layernorm", {&x, &gamma, &beta}, std::move(out), {xhat, inv, gamma.value()},
                     [l, per_sample](const Tensor& g, const Node& n) -> InputGrads {
                       InputGrads r(3);
                       const Tensor& xhat = n.saved[0];
                       affine_grads(l, g, xhat, n, r);
                       if (!n.needs_grad(0)) return r;
                       Tensor dx(g.shape());
                       auto d = dx.mutable_data();
                       auto gd = g.data();
                       auto xh = xhat.data();
                       auto inv = n.saved[1].data();
                       auto ga = n.saved[2].data();
                       double count = static_cast<double>(per_sample);
                       for (int64_t b = 0; b < l.batch; ++b) {
                         double s1 = 0.0, s2 = 0.0;
                         for (int64_t c = 0; c < l.channels; ++c)
                           for (int64_t q = 0; q < l.plane; ++q) {
                             size_t i = l.at(b, c, q);
                             double dxh = gd[i] * ga[static_cast<size_t>(c)];
                             s1 += dxh;
                             s2 += dxh * xh[i];
                           }
                         double k = inv[static_cast<size_t>(b)] / count;
                         for (int64_t c = 0; c < l.channels; ++c)
                           for (int64_t q = 0; q < l.plane; ++q) {
                             size_t i = l.at(b, c, q);
                             d[i] = k * (count * gd[i] * ga[static_cast<size_t>(c)] - s1 - xh[i] * s2);
                           }
                       }
                       r[0] = std::move(dx);
                       return r;
                     });
}

Var weightnorm_effective(const Var& v, const Var& g) {
  if (v.value().rank() < 2 || g.shape() != Shape{v.shape()[0]}) {
    throw ShapeError("weightnorm: direction " + shape_str(v.shape()) + " and scale " + shape_str(g.shape()) +
                     " are inconsistent");
  }
  int64_t out = v.shape()[0];
  int64_t rest = v.value().size() / out;
  Tensor norms({out});
  Tensor w(v.shape());
  auto vd = v.value().data();
  auto gd = g.value().data();
  auto wd = w.mutable_data();
  for (int64_t c = 0; c < out; ++c) {
    double n = l2_norm(vd.subspan(static_cast<size_t>(c * rest), static_cast<size_t>(rest)));
    if (n < 1e-12) {
      throw NumericalError("weightnorm: direction for output channel " + std::to_string(c) + " has zero norm");
    }
    norms.mutable_data()[static_cast<size_t>(c)] = n;
    for (int64_t j = 0; j < rest; ++j) {
      size_t i = static_cast<size_t>(c * rest + j);
      wd[i] = gd[static_cast<size_t>(c)] * vd[i] / n;
    }
  }
  return make_result("weightnorm", {&v, &g}, std::move(w), {v.value(), g.value(), norms},
                     [out, rest](const Tensor& grad, const Node& n) -> InputGrads {
                       InputGrads r(2);
                       auto gw = grad.data();
                       auto vd = n.saved[0].data();
                       auto gd = n.saved[1].data();
                       auto nd = n.saved[2].data();
                       Tensor dv(n.saved[0].shape());
                       Tensor dg({out});
                       auto dvd = dv.mutable_data();
                       for (int64_t c = 0; c < out; ++c) {
                         double norm = nd[static_cast<size_t>(c)];
                         double proj = 0.0;  // grad_c . vhat_c
                         for (int64_t j = 0; j < rest; ++j) {
                           size_t i = static_cast<size_t>(c * rest + j);
                           proj += gw[i] * vd[i] / norm;
                         }
                         dg.mutable_data()[static_cast<size_t>(c)] = proj;
                         double k = gd[static_cast<size_t>(c)] / norm;
                         for (int64_t j = 0; j < rest; ++j) {
                           size_t i = static_cast<size_t>(c * rest + j);
                           dvd[i] = k * (gw[i] - proj * vd[i] / norm);
                         }
                       }
                       if (n.needs_grad(0)) r[0] = std::move(dv);
                       if (n.needs_grad(1)) r[1] = std::move(dg);
                       return r;
                     });
}

Var spectral_scale(const Var& w, const Tensor& u, const Tensor& v) {
  int64_t rows = w.shape()[0];
  int64_t cols = w.value().size() / rows;
  if (u.size() != rows || v.size() != cols) {
    throw ShapeError("spectral_scale: vectors " + shape_str(u.shape()) + "/" + shape_str(v.shape()) +
                     " do not match weight " + shape_str(w.shape()));
  }
  std::vector<double> wv = mat_vec(w.value().data(), rows, cols, v.data());
  double sigma = 0.0;
  for (int64_t i = 0; i < rows; ++i) sigma += u[i] * wv[static_cast<size_t>(i)];
  if (!(std::abs(sigma) > 1e-12) || !std::isfinite(sigma)) {
    throw NumericalError("spectral_scale: degenerate singular value estimate " + std::to_string(sigma));
  }
  Tensor out(w.shape());
  auto o = out.mutable_data();
  auto wd = w.value().data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = wd[i] / sigma;
  return make_result("spectral_scale", {&w}, std::move(out), {w.value(), u, v},
                     [rows, cols, sigma](const Tensor& g, const Node& n) -> InputGrads {
                       auto gd = g.data();
                       auto wd = n.saved[0].data();
                       auto ud = n.saved[1].data();
                       auto vd = n.saved[2].data();
                       double inner = 0.0;
                       for (size_t i = 0; i < gd.size(); ++i) inner += gd[i] * wd[i];
                       double k = inner / (sigma * sigma);
                       Tensor dw(n.saved[0].shape());
                       auto d = dw.mutable_data();
                       for (int64_t i = 0; i < rows; ++i)
                         for (int64_t j = 0; j < cols; ++j) {
                           size_t idx = static_cast<size_t>(i * cols + j);
                           d[idx] = gd[idx] / sigma - k * ud[static_cast<size_t>(i)] * vd[static_cast<size_t>(j)];
                         }
                       return {std::move(dw)};
                     });
}

Var spectral_normalize(const Var& w, SpectralNormState& s, Phase phase) {
  int64_t rows = w.shape()[0];
  int64_t cols = w.value().size() / rows;
  if (l2_norm(w.value().data()) == 0.0) throw NumericalError("spectral_normalize: weight matrix is zero");
  if (phase == Phase::kTrain) {
    std::vector<double> u(s.u.value.data().begin(), s.u.value.data().end());
    std::vector<double> v;
    for (int k = 0; k < s.power_iters_per_forward; ++k) {
      v = normalized(mat_t_vec(w.value().data(), rows, cols, u), s.eps);
      u = normalized(mat_vec(w.value().data(), rows, cols, v), s.eps);
    }
    if (!v.empty()) {
      s.u.value = Tensor({rows}, std::move(u));
      s.v.value = Tensor({cols}, std::move(v));
    }
  }
  return spectral_scale(w, s.u.value, s.v.value);
}

double spectral_sigma(const Tensor& w, const SpectralNormState& s) {
  int64_t rows = w.dim(0);
  int64_t cols = w.size() / rows;
  std::vector<double> wv = mat_vec(w.data(), rows, cols, s.v.value.data());
  double sigma = 0.0;
  for (int64_t i = 0; i < rows; ++i) sigma += s.u.value[i] * wv[static_cast<size_t>(i)];
  return sigma;
}

ConvNormUnit::ConvNormUnit(const std::string& name, const ConvSpec& spec, NormKind kind, std::mt19937_64& rng)
    : name_(name), spec_(spec), kind_(kind) {
  int64_t fan_in = spec.in_channels * spec.kernel * spec.kernel;
  Tensor w = init_uniform_fan_in({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}, fan_in, rng);
  if (spec.bias) bias_ = Parameter{name + ".bias", init_uniform_fan_in({spec.out_channels}, fan_in, rng), true};
  switch (kind) {
    case NormKind::kBN:
      bn_ = BatchNormState::make(name + ".bn", spec.out_channels);
      break;
    case NormKind::kLN:
      ln_ = LayerNormParams::make(name + ".ln", spec.out_channels);
      break;
    case NormKind::kWN: {
      WeightNormParams wn = WeightNormParams::make(name, std::move(w));
      weight_ = std::move(wn.v);
      wn_gain_ = std::move(wn.g);
      return;
    }
    case NormKind::kSN:
      sn_ = SpectralNormState::make(name + ".sn", w, rng);
      break;
    case NormKind::kNF:
      break;
  }
  weight_ = Parameter{name + ".weight", std::move(w), true};
}

Conv2dParams ConvNormUnit::prepare(Phase phase) const {
  Conv2dParams p;
  p.stride = spec_.stride;
  p.padding = spec_.padding;
  if (bias_) p.bias = use(*bias_);
  switch (kind_) {
    case NormKind::kWN:
      p.weight = weightnorm_effective(use(weight_), use(*wn_gain_));
      break;
    case NormKind::kSN:
      p.weight = spectral_normalize(use(weight_), *sn_, phase);
      break;
    default:
      p.weight = use(weight_);
  }
  return p;
}

Var ConvNormUnit::normalize(const Var& y, Phase phase) const {
  switch (kind_) {
    case NormKind::kBN:
      return batchnorm(y, *bn_, phase);
    case NormKind::kLN:
      return layernorm(y, use(ln_->gamma), use(ln_->beta), ln_->eps);
    default:
      return y;
  }
}

void ConvNormUnit::collect(std::vector<Parameter*>& registry) {
  registry.push_back(&weight_);
  if (wn_gain_) registry.push_back(&*wn_gain_);
  if (bias_) registry.push_back(&*bias_);
  if (bn_) {
    registry.push_back(&bn_->gamma);
    registry.push_back(&bn_->beta);
    registry.push_back(&bn_->running_mean);
    registry.push_back(&bn_->running_var);
  }
  if (ln_) {
    registry.push_back(&ln_->gamma);
    registry.push_back(&ln_->beta);
  }
  if (sn_) {
    registry.push_back(&sn_->u);
    registry.push_back(&sn_->v);
  }
}

}  // namespace odenorm
