#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tst/ops.hpp"
#include "tst/random.hpp"
#include "tst/tensor.hpp"

namespace tst {

enum class NormKind { Batch, Layer };
enum class PositionalEncoding { Learnable, Sinusoidal };
enum class ProjectionKind { Linear, Conv };
enum class HeadKind { Reconstruction, Regression, Classification };

std::string_view to_string(NormKind kind);
std::string_view to_string(PositionalEncoding kind);
std::string_view to_string(ProjectionKind kind);
std::string_view to_string(HeadKind kind);
NormKind parse_norm_kind(std::string_view text);
PositionalEncoding parse_positional_encoding(std::string_view text);
ProjectionKind parse_projection_kind(std::string_view text);
HeadKind parse_head_kind(std::string_view text);

struct HeadSpec {
  HeadKind kind = HeadKind::Reconstruction;
  /// n for regression, number of classes for classification; ignored for
  /// reconstruction (the head emits input_dim values per step).
  std::size_t outputs = 0;

  bool operator==(const HeadSpec&) const = default;
};

/// Architecture hyperparameters. Activation is always GELU.
struct ModelConfig {
  std::size_t input_dim = 1;  // m
  std::size_t max_len = 1;    // w
  std::size_t d_model = 128;
  std::size_t n_heads = 16;
  std::size_t n_blocks = 3;
  std::size_t d_ff = 256;
  Real dropout = 0.1;
  NormKind norm = NormKind::Batch;
  PositionalEncoding positional = PositionalEncoding::Learnable;
  ProjectionKind projection = ProjectionKind::Linear;
  std::size_t conv_kernel = 1;
  std::size_t conv_stride = 1;
  std::size_t conv_dilation = 1;
  HeadSpec head;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  /// Sequence length after the input projection (w unless a strided or
  /// dilated convolution shortens it).
  std::size_t encoded_length() const;
  ConvOptions conv_options() const;

  bool operator==(const ModelConfig&) const = default;
};

inline constexpr Real kPaddingBias = -1e9;

/// u_t = W_p x_t + b_p for every step at once. x: [B x T x m].
Tensor embed_linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Convolutional projection, kernels: [d x k x m].
Tensor embed_conv(const Tensor& x, const Tensor& kernels, const Tensor& bias, const ConvOptions& options);

/// u + positional[0:T] broadcast over the batch; T may be shorter than the
/// number of positional rows but not longer.
Tensor add_positional(const Tensor& u, const Tensor& positional);

/// [B x steps] additive attention bias: 0 at t < length, kPaddingBias after.
Tensor build_padding_mask(std::span<const std::size_t> lengths, std::size_t steps);

/// Fixed sinusoidal encodings [steps x d].
Tensor sinusoidal_encoding(std::size_t steps, std::size_t d_model);

struct LinearLayer {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]
};

struct NormLayer {
  Tensor gamma;
  Tensor beta;
  RunningStats stats;  // used by batch norm only
};

struct EncoderBlock {
  LinearLayer query, key, value, output;
  LinearLayer ff_in, ff_out;
  NormLayer norm_attention, norm_feedforward;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Transformer encoder for multivariate series plus one task head.
///
/// Copying is disabled because tensors are shared handles; use clone().
class TSTModel {
 public:
  TSTModel(ModelConfig config, std::uint64_t seed);
  TSTModel(TSTModel&&) noexcept = default;
  TSTModel& operator=(TSTModel&&) noexcept = default;
  TSTModel(const TSTModel&) = delete;
  TSTModel& operator=(const TSTModel&) = delete;

  const ModelConfig& config() const { return config_; }

  /// Trainable tensors in canonical order, sharing storage with the model.
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;
  static bool is_head_parameter(std::string_view name);

  /// Deep copy of parameters and normalization buffers.
  std::vector<NamedTensor> state() const;
  /// Restores tensors by name. Shapes must match; with skip_head the head
  /// entries are ignored (used when attaching a fresh task head).
  void load_state(std::span<const NamedTensor> state, bool skip_head = false);

  /// Final representations z: [B x T' x d]. Rng is required in Train mode
  /// when dropout > 0.
  Tensor encode(const Tensor& x, std::span<const std::size_t> lengths, Mode mode, Rng* rng = nullptr);

  /// Per-step reconstruction [B x T' x m]; head must be Reconstruction.
  Tensor head_reconstruct(const Tensor& z) const;
  /// Regression outputs or raw class logits [B x n].
  Tensor head_predict(const Tensor& z, std::span<const std::size_t> lengths) const;

  /// encode followed by the configured head.
  Tensor forward(const Tensor& x, std::span<const std::size_t> lengths, Mode mode, Rng* rng = nullptr);

  /// Sample lengths after the input projection.
  std::vector<std::size_t> encoded_lengths(std::span<const std::size_t> lengths) const;

  /// Replace the head with a freshly initialized one for a new task.
  void reset_head(HeadSpec head, std::uint64_t seed);

  TSTModel clone() const;

  // Direct access for tests and tooling.
  LinearLayer& projection() { return projection_; }
  Tensor& conv_kernels() { return conv_kernels_; }
  Tensor& positional() { return positional_; }
  std::vector<EncoderBlock>& blocks() { return blocks_; }
  LinearLayer& head() { return head_; }

 private:
  void init_head(Rng& rng);
  Tensor attention(EncoderBlock& block, const Tensor& x, const Tensor& bias, Mode mode, Rng* rng) const;
  Tensor normalize(NormLayer& norm, const Tensor& x, std::span<const std::size_t> lengths, Mode mode) const;
  std::vector<NamedTensor> named(bool include_buffers) const;

  ModelConfig config_;
  LinearLayer projection_;
  Tensor conv_kernels_;
  Tensor positional_;
  std::vector<EncoderBlock> blocks_;
  LinearLayer head_;
};

}  // namespace tst
