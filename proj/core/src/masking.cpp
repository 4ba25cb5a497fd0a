#include "tst/masking.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace tst {

namespace {

constexpr std::pair<MaskVariant, std::string_view> kVariantNames[] = {
    {MaskVariant::SeparateStateful, "sep_stateful"},
    {MaskVariant::SeparateBernoulli, "sep_bernoulli"},
    {MaskVariant::SyncStateful, "sync_stateful"},
    {MaskVariant::SyncBernoulli, "sync_bernoulli"},
    {MaskVariant::Forecast, "forecast"},
};

// One column (or one shared row pattern) of keep bits; writes to bits[t*stride + offset].
void fill_stateful(std::uint8_t* bits, std::size_t steps, std::size_t stride, const MaskSpec& spec, Rng& rng) {
  const double p_m = spec.masked_to_unmasked();
  const double p_u = spec.unmasked_to_masked();
  bool masked = uniform01(rng) < spec.ratio;
  for (std::size_t t = 0; t < steps; ++t) {
    bits[t * stride] = masked ? 0 : 1;
    const double u = uniform01(rng);
    if (masked) {
      if (u < p_m) masked = false;
    } else if (u < p_u) {
      masked = true;
    }
  }
}

void fill_bernoulli(std::uint8_t* bits, std::size_t steps, std::size_t stride, const MaskSpec& spec, Rng& rng) {
  for (std::size_t t = 0; t < steps; ++t) bits[t * stride] = uniform01(rng) < spec.ratio ? 0 : 1;
}

void check_variant(const MaskSpec& spec, MaskVariant expected) {
  spec.validate();
  if (spec.variant != expected) {
    throw std::invalid_argument("mask spec variant is " + std::string(to_string(spec.variant)) + ", generator expects " +
                                std::string(to_string(expected)));
  }
}

NoiseMask separate(std::size_t steps, std::size_t vars, const MaskSpec& spec, Rng& rng, bool stateful) {
  std::vector<std::uint8_t> bits(steps * vars, 1);
  for (std::size_t i = 0; i < vars; ++i) {
    if (stateful)
      fill_stateful(bits.data() + i, steps, vars, spec, rng);
    else
      fill_bernoulli(bits.data() + i, steps, vars, spec, rng);
  }
  return NoiseMask(steps, vars, std::move(bits));
}

NoiseMask synchronous(std::size_t steps, std::size_t vars, const MaskSpec& spec, Rng& rng, bool stateful) {
  std::vector<std::uint8_t> row(steps, 1);
  if (stateful)
    fill_stateful(row.data(), steps, 1, spec, rng);
  else
    fill_bernoulli(row.data(), steps, 1, spec, rng);
  std::vector<std::uint8_t> bits(steps * vars);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < vars; ++i) bits[t * vars + i] = row[t];
  return NoiseMask(steps, vars, std::move(bits));
}

}  // namespace

std::string_view to_string(MaskVariant variant) {
  for (const auto& [v, name] : kVariantNames)
    if (v == variant) return name;
  return "?";
}

MaskVariant parse_mask_variant(std::string_view text) {
  for (const auto& [v, name] : kVariantNames)
    if (name == text) return v;
  throw std::invalid_argument("unknown mask variant '" + std::string(text) +
                              "' (expected sep_stateful|sep_bernoulli|sync_stateful|sync_bernoulli|forecast)");
}

void MaskSpec::validate() const {
  if (variant == MaskVariant::Forecast) {
    if (!(forecast_fraction > 0.0 && forecast_fraction < 1.0)) {
      throw std::invalid_argument("forecast fraction must lie in (0, 1)");
    }
    return;
  }
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("masking ratio r must lie in (0, 1)");
  if (!(mean_masked_length >= 1.0)) throw std::invalid_argument("mean masked length l_m must be >= 1");
}

// ---------------------------------------------------------------------------

NoiseMask::NoiseMask(std::size_t steps, std::size_t vars, std::uint8_t fill)
    : steps_(steps), vars_(vars), bits_(steps * vars, fill ? 1 : 0) {}

NoiseMask::NoiseMask(std::size_t steps, std::size_t vars, std::vector<std::uint8_t> bits)
    : steps_(steps), vars_(vars), bits_(std::move(bits)) {
  if (bits_.size() != steps * vars) throw DimensionError("noise mask bit count does not match its shape");
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::vector<std::pair<std::size_t, std::size_t>> NoiseMask::masked_indices() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t t = 0; t < steps_; ++t)
    for (std::size_t i = 0; i < vars_; ++i)
      if (masked(t, i)) out.emplace_back(t, i);
  return out;
}

std::size_t NoiseMask::masked_count() const {
  std::size_t n = 0;
  for (auto b : bits_) n += b == 0;
  return n;
}

void NoiseMask::write_text(std::ostream& out) const {
  for (std::size_t t = 0; t < steps_; ++t) {
    for (std::size_t i = 0; i < vars_; ++i) out << (i ? " " : "") << static_cast<int>(bits_[t * vars_ + i]);
    out << '\n';
  }
}

NoiseMask NoiseMask::read_text(std::istream& in) {
  std::vector<std::uint8_t> bits;
  std::size_t steps = 0, vars = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      if (steps > 0) break;  // blank line ends one fixture
      continue;
    }
    std::istringstream row(line);
    std::size_t count = 0;
    int v;
    while (row >> v) {
      if (v != 0 && v != 1) throw std::runtime_error("mask text contains a value other than 0/1");
      bits.push_back(static_cast<std::uint8_t>(v));
      ++count;
    }
    if (steps == 0) vars = count;
    if (count != vars) throw std::runtime_error("mask text rows have different widths");
    ++steps;
  }
  return NoiseMask(steps, vars, std::move(bits));
}

// ---------------------------------------------------------------------------

NoiseMask gen_sep_stateful(std::size_t steps, std::size_t vars, const MaskSpec& spec, Rng& rng) {
  check_variant(spec, MaskVariant::SeparateStateful);
  return separate(steps, vars, spec, rng, true);
}

NoiseMask gen_sep_bernoulli(std::size_t steps, std::size_t vars, const MaskSpec& spec, Rng& rng) {
  check_variant(spec, MaskVariant::SeparateBernoulli);
  return separate(steps, vars, spec, rng, false);
}

NoiseMask gen_sync_stateful(std::size_t steps, std::size_t vars, const MaskSpec& spec, Rng& rng) {
  check_variant(spec, MaskVariant::SyncStateful);
  return synchronous(steps, vars, spec, rng, true);
}

NoiseMask gen_sync_bernoulli(std::size_t steps, std::size_t vars, const MaskSpec& spec, Rng& rng) {
  check_variant(spec, MaskVariant::SyncBernoulli);
  return synchronous(steps, vars, spec, rng, false);
}

NoiseMask gen_forecast(std::size_t steps, std::size_t vars, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("forecast fraction must lie in (0, 1)");
  const auto hidden = std::min(steps, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(steps))));
  NoiseMask mask(steps, vars, 1);
  for (std::size_t t = steps - hidden; t < steps; ++t)
    for (std::size_t i = 0; i < vars; ++i) mask.set(t, i, false);
  return mask;
}

NoiseMask generate_mask(std::size_t steps, std::size_t vars, const MaskSpec& spec, Rng& rng) {
  switch (spec.variant) {
    case MaskVariant::SeparateStateful: return gen_sep_stateful(steps, vars, spec, rng);
    case MaskVariant::SeparateBernoulli: return gen_sep_bernoulli(steps, vars, spec, rng);
    case MaskVariant::SyncStateful: return gen_sync_stateful(steps, vars, spec, rng);
    case MaskVariant::SyncBernoulli: return gen_sync_bernoulli(steps, vars, spec, rng);
    case MaskVariant::Forecast: return gen_forecast(steps, vars, spec.forecast_fraction);
  }
  throw std::invalid_argument("unknown mask variant");
}

NoiseMask sample_mask(std::size_t steps, std::size_t vars, const MaskSpec& spec, std::uint64_t epoch,
                      std::uint64_t sample_index) {
  Rng rng(derive_seed(spec.seed, epoch, sample_index));
  return generate_mask(steps, vars, spec, rng);
}

Tensor apply_mask(const Tensor& x, const NoiseMask& mask) {
  if (x.rank() != 2 || x.dim(0) != mask.steps() || x.dim(1) != mask.vars()) {
    throw DimensionError("apply_mask: input " + shape_string(x.shape()) + " vs mask [" + std::to_string(mask.steps()) +
                         "x" + std::to_string(mask.vars()) + "]");
  }
  Tensor out = x.detach();
  auto v = out.values();
  const auto& bits = mask.bits();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!bits[i]) v[i] = Real(0);
  return out;
}

std::size_t sliding_window_count(std::size_t length, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw std::invalid_argument("window and stride must be positive");
  if (length < window) return 0;
  return (length - window) / stride + 1;
}

}  // namespace tst
