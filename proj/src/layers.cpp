#include "odenorm/layers.hpp"

#include <cmath>

#include "gemm.hpp"

namespace odenorm {

namespace {

struct ConvGeometry {
  int64_t batch, channels, height, width;
  int64_t out_channels, kh, kw;
  int64_t out_h, out_w;
  int stride, padding;

  int64_t patch() const { return channels * kh * kw; }
  int64_t plane() const { return out_h * out_w; }
  int64_t columns() const { return batch * plane(); }
};

// Output positions o in [lo, hi) whose input coordinate o*stride - pad + k is in [0, extent).
std::pair<int64_t, int64_t> valid_range(int64_t extent, int64_t out, int stride, int padding, int64_t k) {
  int64_t lo = 0;
  while (lo < out && lo * stride - padding + k < 0) ++lo;
  int64_t hi = out;
  while (hi > lo && (hi - 1) * stride - padding + k >= extent) --hi;
  return {lo, hi};
}

// cols[(c,i,j), (b,oy,ox)] = x[b, c, oy*stride - pad + i, ox*stride - pad + j], zero outside.
// Large patch matrices are kept per thread to avoid a fresh mapping per call.
std::vector<double>& scratch(int slot, size_t size) {
  thread_local std::vector<double> buffers[2];
  std::vector<double>& buf = buffers[slot];
  buf.resize(size);
  return buf;
}

void im2col(const ConvGeometry& g, std::span<const double> x, std::vector<double>& cols) {
  for (int64_t c = 0; c < g.channels; ++c) {
    for (int64_t i = 0; i < g.kh; ++i) {
      auto [ylo, yhi] = valid_range(g.height, g.out_h, g.stride, g.padding, i);
      for (int64_t j = 0; j < g.kw; ++j) {
        auto [xlo, xhi] = valid_range(g.width, g.out_w, g.stride, g.padding, j);
        double* row = cols.data() + ((c * g.kh + i) * g.kw + j) * g.columns();
        for (int64_t b = 0; b < g.batch; ++b) {
          const double* img = x.data() + (b * g.channels + c) * g.height * g.width;
          double* dst = row + b * g.plane();
          std::fill(dst, dst + ylo * g.out_w, 0.0);
          std::fill(dst + yhi * g.out_w, dst + g.plane(), 0.0);
          for (int64_t oy = ylo; oy < yhi; ++oy) {
            const double* src = img + (oy * g.stride - g.padding + i) * g.width - g.padding + j;
            double* out = dst + oy * g.out_w;
            std::fill(out, out + xlo, 0.0);
            std::fill(out + xhi, out + g.out_w, 0.0);
            if (g.stride == 1) {
              std::copy(src + xlo, src + xhi, out + xlo);
            } else {
              for (int64_t ox = xlo; ox < xhi; ++ox) out[ox] = src[ox * g.stride];
            }
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const std::vector<double>& cols, std::span<double> dx) {
  for (int64_t c = 0; c < g.channels; ++c) {
    for (int64_t i = 0; i < g.kh; ++i) {
      auto [ylo, yhi] = valid_range(g.height, g.out_h, g.stride, g.padding, i);
      for (int64_t j = 0; j < g.kw; ++j) {
        auto [xlo, xhi] = valid_range(g.width, g.out_w, g.stride, g.padding, j);
        const double* row = cols.data() + ((c * g.kh + i) * g.kw + j) * g.columns();
        for (int64_t b = 0; b < g.batch; ++b) {
          double* img = dx.data() + (b * g.channels + c) * g.height * g.width;
          const double* src = row + b * g.plane();
          for (int64_t oy = ylo; oy < yhi; ++oy) {
            double* dst = img + (oy * g.stride - g.padding + i) * g.width - g.padding + j;
            const double* in = src + oy * g.out_w;
            for (int64_t ox = xlo; ox < xhi; ++ox) dst[ox * g.stride] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

int64_t conv_output_extent(int64_t input, int64_t kernel, int stride, int padding) {
  return (input + 2 * padding - kernel) / stride + 1;
}

Var conv2d(const Var& x, const Conv2dParams& p) {
  const Shape& xs = x.shape();
  const Shape& ws = p.weight.shape();
  if (xs.size() != 4 || ws.size() != 4) {
    throw ShapeError("conv2d: expected input [B,C,H,W] and weight [O,C,kh,kw], got " + shape_str(xs) +
                     " and " + shape_str(ws));
  }
  if (xs[1] != ws[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(xs[1]) + " channels but weight " + shape_str(ws) +
                     " expects " + std::to_string(ws[1]));
  }
  if (p.stride < 1 || p.padding < 0) throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");
  if (p.bias && p.bias->shape() != Shape{ws[0]}) {
    throw ShapeError("conv2d: bias " + shape_str(p.bias->shape()) + " does not match " +
                     std::to_string(ws[0]) + " output channels");
  }
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], 0, 0, p.stride, p.padding};
  g.out_h = conv_output_extent(g.height, g.kh, g.stride, g.padding);
  g.out_w = conv_output_extent(g.width, g.kw, g.stride, g.padding);
  if (g.out_h < 1 || g.out_w < 1) {
    throw ShapeError("conv2d: kernel " + shape_str(ws) + " larger than padded input " + shape_str(xs));
  }

  std::vector<double>& cols = scratch(0, static_cast<size_t>(g.patch() * g.columns()));
  im2col(g, x.value().data(), cols);
  std::vector<double> y(static_cast<size_t>(g.out_channels * g.columns()));
  detail::gemm(false, false, g.out_channels, g.columns(), g.patch(), p.weight.value().data().data(), cols.data(),
               y.data(), false);
  Tensor out({g.batch, g.out_channels, g.out_h, g.out_w});
  auto o = out.mutable_data();
  const double* bias = p.bias ? p.bias->value().data().data() : nullptr;
  for (int64_t b = 0; b < g.batch; ++b) {
    for (int64_t oc = 0; oc < g.out_channels; ++oc) {
      const double* src = y.data() + oc * g.columns() + b * g.plane();
      double* dst = o.data() + (b * g.out_channels + oc) * g.plane();
      double shift = bias ? bias[oc] : 0.0;
      for (int64_t q = 0; q < g.plane(); ++q) dst[q] = src[q] + shift;
    }
  }

  std::vector<const Var*> inputs{&x, &p.weight};
  if (p.bias) inputs.push_back(&*p.bias);
  return make_result("conv2d", inputs, std::move(out), {x.value(), p.weight.value()},
                     [g](const Tensor& grad, const Node& n) -> InputGrads {
                       InputGrads r(n.inputs.size());
                       // [B,O,P] -> [O, B*P]
                       std::vector<double> dy(static_cast<size_t>(g.out_channels * g.columns()));
                       auto gd = grad.data();
                       for (int64_t b = 0; b < g.batch; ++b) {
                         for (int64_t oc = 0; oc < g.out_channels; ++oc) {
                           const double* src = gd.data() + (b * g.out_channels + oc) * g.plane();
                           std::copy(src, src + g.plane(), dy.data() + oc * g.columns() + b * g.plane());
                         }
                       }
                       if (n.needs_grad(1)) {
                         std::vector<double>& cols = scratch(0, static_cast<size_t>(g.patch() * g.columns()));
                         im2col(g, n.saved[0].data(), cols);
                         Tensor dw(n.saved[1].shape());
                         detail::gemm(false, true, g.out_channels, g.patch(), g.columns(), dy.data(), cols.data(),
                                      dw.mutable_data().data(), false);
                         r[1] = std::move(dw);
                       }
                       if (n.needs_grad(0)) {
                         std::vector<double>& dcols = scratch(1, static_cast<size_t>(g.patch() * g.columns()));
                         detail::gemm(true, false, g.patch(), g.columns(), g.out_channels,
                                      n.saved[1].data().data(), dy.data(), dcols.data(), false);
                         Tensor dx(n.saved[0].shape());
                         col2im(g, dcols, dx.mutable_data());
                         r[0] = std::move(dx);
                       }
                       if (n.inputs.size() == 3 && n.needs_grad(2)) {
                         Tensor db({g.out_channels});
                         auto d = db.mutable_data();
                         for (int64_t oc = 0; oc < g.out_channels; ++oc) {
                           const double* row = dy.data() + oc * g.columns();
                           double s = 0.0;
                           for (int64_t q = 0; q < g.columns(); ++q) s += row[q];
                           d[static_cast<size_t>(oc)] = s;
                         }
                         r[2] = std::move(db);
                       }
                       return r;
                     });
}

Var relu(const Var& x) {
  Tensor out(x.shape());
  auto o = out.mutable_data();
  auto in = x.value().data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = in[i] > 0.0 || std::isnan(in[i]) ? in[i] : 0.0;
  return make_result("relu", {&x}, std::move(out), {x.value()}, [](const Tensor& g, const Node& n) -> InputGrads {
    Tensor r(g.shape());
    auto d = r.mutable_data();
    auto gd = g.data();
    auto in = n.saved[0].data();
    for (size_t i = 0; i < d.size(); ++i) d[i] = in[i] > 0.0 ? gd[i] : 0.0;
    return {std::move(r)};
  });
}

Var global_avgpool(const Var& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("global_avgpool: expected [B,C,H,W], got " + shape_str(s));
  int64_t rows = s[0] * s[1], plane = s[2] * s[3];
  Tensor out({s[0], s[1]});
  auto o = out.mutable_data();
  auto in = x.value().data();
  for (int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int64_t q = 0; q < plane; ++q) acc += in[static_cast<size_t>(r * plane + q)];
    o[static_cast<size_t>(r)] = acc / static_cast<double>(plane);
  }
  Shape original = s;
  return make_result("global_avgpool", {&x}, std::move(out), {},
                     [original, rows, plane](const Tensor& g, const Node&) -> InputGrads {
                       Tensor r(original);
                       auto d = r.mutable_data();
                       auto gd = g.data();
                       double inv = 1.0 / static_cast<double>(plane);
                       for (int64_t i = 0; i < rows; ++i) {
                         for (int64_t q = 0; q < plane; ++q) d[static_cast<size_t>(i * plane + q)] = gd[static_cast<size_t>(i)] * inv;
                       }
                       return {std::move(r)};
                     });
}

Var linear(const Var& x, const LinearParams& p) {
  const Shape& xs = x.shape();
  const Shape& ws = p.weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1] || p.bias.shape() != Shape{ws[0]}) {
    throw ShapeError("linear: input " + shape_str(xs) + ", weight " + shape_str(ws) + ", bias " +
                     shape_str(p.bias.shape()) + " are inconsistent");
  }
  int64_t batch = xs[0], in = xs[1], outf = ws[0];
  Tensor out({batch, outf});
  auto o = out.mutable_data();
  detail::gemm(false, true, batch, outf, in, x.value().data().data(), p.weight.value().data().data(), o.data(),
               false);
  auto b = p.bias.value().data();
  for (int64_t i = 0; i < batch; ++i) {
    for (int64_t j = 0; j < outf; ++j) o[static_cast<size_t>(i * outf + j)] += b[static_cast<size_t>(j)];
  }
  return make_result("linear", {&x, &p.weight, &p.bias}, std::move(out), {x.value(), p.weight.value()},
                     [batch, in, outf](const Tensor& g, const Node& n) -> InputGrads {
                       InputGrads r(3);
                       if (n.needs_grad(0)) {
                         Tensor dx({batch, in});
                         detail::gemm(false, false, batch, in, outf, g.data().data(), n.saved[1].data().data(),
                                      dx.mutable_data().data(), false);
                         r[0] = std::move(dx);
                       }
                       if (n.needs_grad(1)) {
                         Tensor dw({outf, in});
                         detail::gemm(true, false, outf, in, batch, g.data().data(), n.saved[0].data().data(),
                                      dw.mutable_data().data(), false);
                         r[1] = std::move(dw);
                       }
                       if (n.needs_grad(2)) {
                         Tensor db({outf});
                         auto d = db.mutable_data();
                         auto gd = g.data();
                         for (int64_t i = 0; i < batch; ++i) {
                           for (int64_t j = 0; j < outf; ++j) d[static_cast<size_t>(j)] += gd[static_cast<size_t>(i * outf + j)];
                         }
                         r[2] = std::move(db);
                       }
                       return r;
                     });
}

Tensor init_uniform_fan_in(Shape shape, int64_t fan_in, std::mt19937_64& rng) {
  double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), rng, -k, k);
}

}  // namespace odenorm
