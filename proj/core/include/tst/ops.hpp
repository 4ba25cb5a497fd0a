#pragma once

// Differentiable operations. Every op records a backward node on the active
// tape when one of its inputs requires a gradient.

#include <cstddef>
#include <span>
#include <vector>

#include "tst/random.hpp"
#include "tst/tensor.hpp"

namespace tst {

/// [p x q] . [q x r] -> [p x r]
Tensor matmul(const Tensor& a, const Tensor& b);

/// y = x W^T + b over the last axis. x: [... x in], weight: [out x in],
/// bias: [out] or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// [N x p x q] . [N x q x r] -> [N x p x r]; with transpose_b, b is [N x r x q].
Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor add(const Tensor& a, const Tensor& b);
/// x + y where y's shape equals the trailing dimensions of x.
Tensor add_broadcast(const Tensor& x, const Tensor& y);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Real factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Same data, new shape (element count must match).
Tensor reshape(const Tensor& x, Shape shape);
/// First `rows` entries along axis 0.
Tensor slice_rows(const Tensor& x, std::size_t rows);

/// Exact GELU, x * Phi(x), using erf (not the tanh approximation).
Tensor gelu(const Tensor& x);

/// Max-subtracted softmax over the last axis. -inf entries are allowed as long
/// as every slice keeps at least one finite entry.
Tensor softmax_last_dim(const Tensor& x);

/// Inverted dropout: zeroes with probability p and scales survivors by
/// 1/(1-p) in Train mode; identity in Eval mode or when p == 0.
Tensor dropout(const Tensor& x, Real p, Mode mode, Rng& rng);

struct RunningStats {
  static constexpr Real kMomentum = 0.1;
  std::vector<Real> mean;
  std::vector<Real> var;

  RunningStats() = default;
  explicit RunningStats(std::size_t features) : mean(features, Real(0)), var(features, Real(1)) {}
};

inline constexpr Real kNormEpsilon = 1e-5;

/// Batch normalization of x: [B x T x d] per feature, where statistics run over
/// the (batch, time) positions with t < lengths[b] only. Variance is the biased
/// batch variance, clamped below at kNormEpsilon. In Train mode running stats
/// are updated with momentum 0.1 (unbiased variance); Eval mode uses them.
Tensor batchnorm_timewise(const Tensor& x, std::span<const std::size_t> lengths, const Tensor& gamma,
                          const Tensor& beta, RunningStats& stats, Mode mode);

/// Per-position normalization over the last axis with the same variance clamp.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta);

/// [B x T x d] -> [B*h x T x d/h]
Tensor split_heads(const Tensor& x, std::size_t heads);
/// [B*h x T x d/h] -> [B x T x d]
Tensor merge_heads(const Tensor& x, std::size_t heads);

/// scores: [B*h x T x T]; bias: [B x T] constant added to every query row of
/// the matching batch entry (key axis).
Tensor add_key_bias(const Tensor& scores, const Tensor& bias, std::size_t heads);

enum class ConvPadding { Valid, Same };

struct ConvOptions {
  std::size_t stride = 1;
  std::size_t dilation = 1;
  ConvPadding padding = ConvPadding::Valid;
};

/// Output length of a 1D convolution along time.
std::size_t conv_output_length(std::size_t length, std::size_t kernel, const ConvOptions& options);

/// u(t, i) = bias_i + sum_j sum_h x(t*stride + j*dilation - pad, h) K_i(j, h)
/// x: [B x T x m], kernels: [d x k x m], bias: [d] or undefined.
Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias, const ConvOptions& options);

/// Zeroes x: [B x T x d] at t >= lengths[b]. The mask is a constant.
Tensor mask_steps(const Tensor& x, std::span<const std::size_t> lengths);

/// [B x T x d] -> [B x steps*d], zero filling rows T..steps-1.
Tensor flatten_steps(const Tensor& x, std::size_t steps);

/// Worker threads for matrix kernels (only effective in OpenMP builds).
void set_num_threads(int threads);
int num_threads();

}  // namespace tst
