#pragma once

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "odenorm/autograd.hpp"
#include "odenorm/layers.hpp"

namespace odenorm {

enum class NormKind { kBN, kLN, kWN, kSN, kNF };

std::string_view to_string(NormKind kind);
// Accepts "BN", "LN", "WN", "SN", "NF"; throws std::invalid_argument otherwise.
NormKind parse_norm_kind(std::string_view text);

// kTrain mutates normalization state (BN running statistics, SN power
// iteration). kReplay recomputes a training forward without touching that
// state, using exactly the quantities the kTrain pass used. kEval is read-only.
enum class Phase { kTrain, kEval, kReplay };

struct BatchNormState {
  Parameter gamma;
  Parameter beta;
  Parameter running_mean;  // buffer
  Parameter running_var;   // buffer, unbiased batch variance
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormState make(const std::string& prefix, int64_t channels);
};

struct LayerNormParams {
  Parameter gamma;
  Parameter beta;
  double eps = 1e-5;

  static LayerNormParams make(const std::string& prefix, int64_t channels);
};

struct WeightNormParams {
  Parameter v;  // direction, shape of the raw weight
  Parameter g;  // per-output-channel scale [out]

  // g initialized to the row norms of v, so the effective weight starts at v.
  static WeightNormParams make(const std::string& prefix, Tensor v);
};

struct SpectralNormState {
  Parameter u;  // buffer [out], unit norm
  Parameter v;  // buffer [rest], unit norm, the right vector last used
  int power_iters_per_forward = 1;
  double eps = 1e-12;

  static SpectralNormState make(const std::string& prefix, const Tensor& weight, std::mt19937_64& rng);
};

// Per-channel normalization of [B,C] or [B,C,H,W] input followed by affine.
// In kTrain the batch statistics are used and the running statistics updated;
// kReplay uses batch statistics without the update; kEval uses running stats.
Var batchnorm(const Var& x, BatchNormState& state, Phase phase);

// The two fused primitives behind batchnorm.
Var batchnorm_batch_stats(const Var& x, const Var& gamma, const Var& beta, double eps,
                          Tensor* batch_mean = nullptr, Tensor* batch_var = nullptr);
Var batchnorm_running_stats(const Var& x, const Var& gamma, const Var& beta, const Tensor& running_mean,
                            const Tensor& running_var, double eps);

// Normalizes each sample over all non-batch dims, then per-channel affine.
Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps);

// w_c = g_c * v_c / ||v_c|| for every output channel c.
Var weightnorm_effective(const Var& v, const Var& g);

// W / sigma with sigma = u^T W v, u and v held constant.
Var spectral_scale(const Var& w, const Tensor& u, const Tensor& v);

// W reshaped to [out, rest]. kTrain runs the configured number of power
// iterations and persists u and v; kEval and kReplay reuse the stored vectors.
Var spectral_normalize(const Var& w, SpectralNormState& state, Phase phase);

// sigma estimate u^T W v from the stored vectors.
double spectral_sigma(const Tensor& w, const SpectralNormState& state);

struct ConvSpec {
  int64_t in_channels = 1;
  int64_t out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  bool bias = true;
};

// A convolution with one normalization slot. BN and LN act on the conv
// output; WN and SN reparametrize the conv weight; NF does neither.
class ConvNormUnit {
 public:
  ConvNormUnit(const std::string& name, const ConvSpec& spec, NormKind kind, std::mt19937_64& rng);

  NormKind kind() const { return kind_; }
  const ConvSpec& spec() const { return spec_; }

  // Effective conv parameters. Call once per forward of the owning layer;
  // SN advances its power iteration here in kTrain.
  Conv2dParams prepare(Phase phase) const;
  Var normalize(const Var& conv_out, Phase phase) const;
  Var forward(const Var& x, Phase phase) const { return normalize(conv2d(x, prepare(phase)), phase); }

  void collect(std::vector<Parameter*>& registry);

  // Raw weight (or WN direction) and bias, for tests and fixtures.
  Parameter& weight() { return weight_; }
  std::optional<Parameter>& bias() { return bias_; }

 private:
  std::string name_;
  ConvSpec spec_;
  NormKind kind_;
  Parameter weight_;
  std::optional<Parameter> bias_;
  std::optional<Parameter> wn_gain_;
  std::optional<LayerNormParams> ln_;
  // Mutated only in Phase::kTrain.
  mutable std::optional<BatchNormState> bn_;
  mutable std::optional<SpectralNormState> sn_;
};

}  // namespace odenorm
