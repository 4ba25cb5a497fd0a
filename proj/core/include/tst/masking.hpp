#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tst/random.hpp"
#include "tst/tensor.hpp"

namespace tst {

enum class MaskVariant { SeparateStateful, SeparateBernoulli, SyncStateful, SyncBernoulli, Forecast };

std::string_view to_string(MaskVariant variant);
MaskVariant parse_mask_variant(std::string_view text);

/// Parameters of the denoising mask.
///
/// Stateful variants alternate masked/unmasked runs with a two-state Markov
/// chain: masked runs are Geometric(1/l_m) on {1, 2, ...} (mean l_m) and
/// unmasked runs have mean l_u = (1 - r) / r * l_m, so a fraction r of each
/// column is masked on average.
struct MaskSpec {
  MaskVariant variant = MaskVariant::SeparateStateful;
  double ratio = 0.15;               // r
  double mean_masked_length = 3.0;   // l_m
  double forecast_fraction = 0.25;   // only for Forecast
  std::uint64_t seed = 0;

  void validate() const;
  double mean_unmasked_length() const { return (1.0 - ratio) / ratio * mean_masked_length; }
  /// P(masked -> unmasked) = 1 / l_m
  double masked_to_unmasked() const { return 1.0 / mean_masked_length; }
  /// P(unmasked -> masked) = p_m * r / (1 - r)
  double unmasked_to_masked() const { return masked_to_unmasked() * ratio / (1.0 - ratio); }

  bool operator==(const MaskSpec&) const = default;
};

/// Binary matrix M in {0,1}^{steps x vars}; 0 marks a masked (hidden) value.
class NoiseMask {
 public:
  NoiseMask() = default;
  NoiseMask(std::size_t steps, std::size_t vars, std::uint8_t fill = 1);
  NoiseMask(std::size_t steps, std::size_t vars, std::vector<std::uint8_t> bits);

  std::size_t steps() const { return steps_; }
  std::size_t vars() const { return vars_; }
  bool keep(std::size_t t, std::size_t i) const { return bits_[t * vars_ + i] != 0; }
  bool masked(std::size_t t, std::size_t i) const { return bits_[t * vars_ + i] == 0; }
  void set(std::size_t t, std::size_t i, bool keep_value) { bits_[t * vars_ + i] = keep_value ? 1 : 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  /// {(t, i) : m_{t,i} = 0} in row-major order.
  std::vector<std::pair<std::size_t, std::size_t>> masked_indices() const;
  std::size_t masked_count() const;

  /// Flat 0/1 text matrix: one row per time step, values separated by spaces.
  void write_text(std::ostream& out) const;
  static NoiseMask read_text(std::istream& in);

  bool operator==(const NoiseMask&) const = default;

 private:
  std::size_t steps_ = 0;
  std::size_t vars_ = 0;
  std::vector<std::uint8_t> bits_;
};

NoiseMask gen_sep_stateful(std::size_t steps, std::size_t vars, const MaskSpec& spec, Rng& rng);
NoiseMask gen_sep_bernoulli(std::size_t steps, std::size_t vars, const MaskSpec& spec, Rng& rng);
NoiseMask gen_sync_stateful(std::size_t steps, std::size_t vars, const MaskSpec& spec, Rng& rng);
NoiseMask gen_sync_bernoulli(std::size_t steps, std::size_t vars, const MaskSpec& spec, Rng& rng);
/// Hides the last ceil(fraction * steps) steps of every variable.
NoiseMask gen_forecast(std::size_t steps, std::size_t vars, double fraction);

/// Dispatches on spec.variant.
NoiseMask generate_mask(std::size_t steps, std::size_t vars, const MaskSpec& spec, Rng& rng);

/// Mask for one sample in one epoch, drawn from its own derived stream so it
/// does not depend on batch composition or order.
NoiseMask sample_mask(std::size_t steps, std::size_t vars, const MaskSpec& spec, std::uint64_t epoch,
                      std::uint64_t sample_index);

/// X~ = M (.) X for a [steps x vars] tensor (no gradient is recorded).
Tensor apply_mask(const Tensor& x, const NoiseMask& mask);

/// Number of windows of width `window` taken every `stride` steps from a
/// series of length `length`.
std::size_t sliding_window_count(std::size_t length, std::size_t window, std::size_t stride);

}  // namespace tst
