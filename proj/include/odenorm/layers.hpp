#pragma once

#include <optional>
#include <random>

#include "odenorm/autograd.hpp"

namespace odenorm {

struct Conv2dParams {
  Var weight;                 // [out_ch, in_ch, kh, kw]
  std::optional<Var> bias;    // [out_ch]
  int stride = 1;
  int padding = 0;
};

struct LinearParams {
  Var weight;  // [out, in]
  Var bias;    // [out]
};

int64_t conv_output_extent(int64_t input, int64_t kernel, int stride, int padding);

// Cross-correlation (no kernel flip). x: [B,C,H,W] -> [B,out_ch,H',W'].
Var conv2d(const Var& x, const Conv2dParams& p);
// max(0, x) with zero subgradient at 0.
Var relu(const Var& x);
// [B,C,H,W] -> [B,C], mean over the spatial plane.
Var global_avgpool(const Var& x);
// x W^T + b. x: [B,in] -> [B,out].
Var linear(const Var& x, const LinearParams& p);

// uniform(-k, k) with k = 1/sqrt(fan_in), the initialization for conv and fc
// weights and biases.
Tensor init_uniform_fan_in(Shape shape, int64_t fan_in, std::mt19937_64& rng);

}  // namespace odenorm
