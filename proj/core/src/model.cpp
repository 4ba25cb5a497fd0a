#include "tst/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace tst {

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view text, const std::pair<Enum, std::string_view> (&table)[N], const char* what) {
  for (const auto& [value, name] : table)
    if (name == text) return value;
  std::string options;
  for (const auto& [value, name] : table) options += (options.empty() ? "" : "|") + std::string(name);
  throw std::invalid_argument(std::string("unknown ") + what + " '" + std::string(text) + "' (expected " + options + ")");
}

template <typename Enum, std::size_t N>
std::string_view enum_name(Enum value, const std::pair<Enum, std::string_view> (&table)[N]) {
  for (const auto& [v, name] : table)
    if (v == value) return name;
  return "?";
}

constexpr std::pair<NormKind, std::string_view> kNormNames[] = {{NormKind::Batch, "batch"}, {NormKind::Layer, "layer"}};
constexpr std::pair<PositionalEncoding, std::string_view> kPosNames[] = {
    {PositionalEncoding::Learnable, "learnable"}, {PositionalEncoding::Sinusoidal, "sinusoidal"}};
constexpr std::pair<ProjectionKind, std::string_view> kProjNames[] = {{ProjectionKind::Linear, "linear"},
                                                                      {ProjectionKind::Conv, "conv"}};
constexpr std::pair<HeadKind, std::string_view> kHeadNames[] = {{HeadKind::Reconstruction, "reconstruction"},
                                                                {HeadKind::Regression, "regression"},
                                                                {HeadKind::Classification, "classification"}};

Tensor xavier(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape), true);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.values()) v = static_cast<Real>(uniform(rng, -limit, limit));
  return t;
}

LinearLayer make_linear(std::size_t in, std::size_t out, Rng& rng) {
  return {xavier({out, in}, in, out, rng), Tensor({out}, true)};
}

NormLayer make_norm(std::size_t d) { return {Tensor::full({d}, Real(1), true), Tensor({d}, true), RunningStats(d)}; }

Tensor stats_tensor(const std::vector<Real>& v) { return Tensor({v.size()}, v); }

}  // namespace

std::string_view to_string(NormKind kind) { return enum_name(kind, kNormNames); }
std::string_view to_string(PositionalEncoding kind) { return enum_name(kind, kPosNames); }
std::string_view to_string(ProjectionKind kind) { return enum_name(kind, kProjNames); }
std::string_view to_string(HeadKind kind) { return enum_name(kind, kHeadNames); }
NormKind parse_norm_kind(std::string_view text) { return parse_enum(text, kNormNames, "norm kind"); }
PositionalEncoding parse_positional_encoding(std::string_view text) {
  return parse_enum(text, kPosNames, "positional encoding");
}
ProjectionKind parse_projection_kind(std::string_view text) { return parse_enum(text, kProjNames, "projection"); }
HeadKind parse_head_kind(std::string_view text) { return parse_enum(text, kHeadNames, "head kind"); }

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid model config: " + msg); };
  if (input_dim == 0) fail("input_dim (m) must be >= 1");
  if (max_len == 0) fail("max_len (w) must be >= 1");
  if (d_model == 0 || n_heads == 0 || n_blocks == 0 || d_ff == 0) fail("d_model, n_heads, n_blocks, d_ff must be >= 1");
  if (d_model % n_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  }
  if (!(dropout >= 0) || dropout >= 1) fail("dropout must lie in [0, 1)");
  if (projection == ProjectionKind::Conv) {
    if (conv_kernel == 0 || conv_stride == 0 || conv_dilation == 0) fail("conv kernel/stride/dilation must be >= 1");
    conv_output_length(max_len, conv_kernel, conv_options());
  }
  if (head.kind == HeadKind::Reconstruction && encoded_length() != max_len) {
    fail("reconstruction head needs one representation per input step (use stride 1 'same' convolution)");
  }
  if (head.kind != HeadKind::Reconstruction && head.outputs == 0) fail("task head needs at least one output");
}

ConvOptions ModelConfig::conv_options() const {
  ConvOptions options;
  options.stride = conv_stride;
  options.dilation = conv_dilation;
  options.padding = conv_stride == 1 ? ConvPadding::Same : ConvPadding::Valid;
  return options;
}

std::size_t ModelConfig::encoded_length() const {
  if (projection == ProjectionKind::Linear) return max_len;
  return conv_output_length(max_len, conv_kernel, conv_options());
}

// ---------------------------------------------------------------------------

Tensor embed_linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 3) throw DimensionError("embed_linear: expected [B x T x m] input, got " + shape_string(x.shape()));
  if (x.dim(2) != weight.dim(1)) {
    throw DimensionError("embed_linear: input has m=" + std::to_string(x.dim(2)) + " variables but the model expects m=" +
                         std::to_string(weight.dim(1)));
  }
  return linear(x, weight, bias);
}

Tensor embed_conv(const Tensor& x, const Tensor& kernels, const Tensor& bias, const ConvOptions& options) {
  return conv1d(x, kernels, bias, options);
}

Tensor add_positional(const Tensor& u, const Tensor& positional) {
  if (u.rank() != 3 || positional.rank() != 2 || u.dim(2) != positional.dim(1)) {
    throw DimensionError("add_positional: representations " + shape_string(u.shape()) +
                         " incompatible with positional encodings " + shape_string(positional.shape()));
  }
  if (u.dim(1) > positional.dim(0)) {
    throw DimensionError("add_positional: sequence length " + std::to_string(u.dim(1)) + " exceeds the " +
                         std::to_string(positional.dim(0)) + " positional rows");
  }
  const Tensor& rows = u.dim(1) == positional.dim(0) ? positional : slice_rows(positional, u.dim(1));
  return add_broadcast(u, rows);
}

Tensor build_padding_mask(std::span<const std::size_t> lengths, std::size_t steps) {
  Tensor bias({lengths.size(), steps});
  auto v = bias.values();
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    if (lengths[b] == 0) throw std::invalid_argument("padding mask: sample " + std::to_string(b) + " has length 0");
    if (lengths[b] > steps) {
      throw std::invalid_argument("padding mask: length " + std::to_string(lengths[b]) + " exceeds " +
                                  std::to_string(steps) + " steps");
    }
    for (std::size_t t = lengths[b]; t < steps; ++t) v[b * steps + t] = kPaddingBias;
  }
  return bias;
}

Tensor sinusoidal_encoding(std::size_t steps, std::size_t d_model) {
  Tensor pe({steps, d_model});
  auto v = pe.values();
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < d_model; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model));
      const double angle = static_cast<double>(t) * freq;
      v[t * d_model + i] = static_cast<Real>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

// ---------------------------------------------------------------------------

TSTModel::TSTModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng = make_rng(seed);
  const std::size_t m = config_.input_dim, d = config_.d_model;
  if (config_.projection == ProjectionKind::Linear) {
    projection_ = make_linear(m, d, rng);
  } else {
    const std::size_t k = config_.conv_kernel;
    conv_kernels_ = xavier({d, k, m}, k * m, k * d, rng);
    projection_.bias = Tensor({d}, true);
  }
  const std::size_t steps = config_.encoded_length();
  if (config_.positional == PositionalEncoding::Learnable) {
    positional_ = Tensor({steps, d}, true);
    for (auto& v : positional_.values()) v = static_cast<Real>(uniform(rng, -0.02, 0.02));
  } else {
    positional_ = sinusoidal_encoding(steps, d);
  }
  blocks_.reserve(config_.n_blocks);
  for (std::size_t i = 0; i < config_.n_blocks; ++i) {
    EncoderBlock block;
    block.query = make_linear(d, d, rng);
    block.key = make_linear(d, d, rng);
    block.value = make_linear(d, d, rng);
    block.output = make_linear(d, d, rng);
    block.ff_in = make_linear(d, config_.d_ff, rng);
    block.ff_out = make_linear(config_.d_ff, d, rng);
    block.norm_attention = make_norm(d);
    block.norm_feedforward = make_norm(d);
    blocks_.push_back(std::move(block));
  }
  init_head(rng);
}

void TSTModel::init_head(Rng& rng) {
  const std::size_t d = config_.d_model;
  if (config_.head.kind == HeadKind::Reconstruction) {
    head_ = make_linear(d, config_.input_dim, rng);
  } else {
    head_ = make_linear(d * config_.encoded_length(), config_.head.outputs, rng);
  }
}

void TSTModel::reset_head(HeadSpec head, std::uint64_t seed) {
  ModelConfig next = config_;
  next.head = head;
  next.validate();
  config_ = next;
  Rng rng = make_rng(derive_seed(seed, 0x4845414455ULL));
  init_head(rng);
}

std::vector<NamedTensor> TSTModel::named(bool include_buffers) const {
  std::vector<NamedTensor> out;
  if (config_.projection == ProjectionKind::Linear) {
    out.push_back({"projection.weight", projection_.weight});
  } else {
    out.push_back({"projection.kernels", conv_kernels_});
  }
  out.push_back({"projection.bias", projection_.bias});
  if (config_.positional == PositionalEncoding::Learnable) out.push_back({"positional", positional_});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& b = blocks_[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    auto lin = [&](const std::string& name, const LinearLayer& l) {
      out.push_back({p + name + ".weight", l.weight});
      out.push_back({p + name + ".bias", l.bias});
    };
    lin("attention.query", b.query);
    lin("attention.key", b.key);
    lin("attention.value", b.value);
    lin("attention.output", b.output);
    lin("feedforward.in", b.ff_in);
    lin("feedforward.out", b.ff_out);
    auto norm = [&](const std::string& name, const NormLayer& n) {
      out.push_back({p + name + ".gamma", n.gamma});
      out.push_back({p + name + ".beta", n.beta});
      if (include_buffers && config_.norm == NormKind::Batch) {
        out.push_back({p + name + ".running_mean", stats_tensor(n.stats.mean)});
        out.push_back({p + name + ".running_var", stats_tensor(n.stats.var)});
      }
    };
    norm("norm1", b.norm_attention);
    norm("norm2", b.norm_feedforward);
  }
  out.push_back({"head.weight", head_.weight});
  out.push_back({"head.bias", head_.bias});
  return out;
}

std::vector<NamedTensor> TSTModel::parameters() const { return named(false); }

std::size_t TSTModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

bool TSTModel::is_head_parameter(std::string_view name) { return name.starts_with("head."); }

std::vector<NamedTensor> TSTModel::state() const {
  auto all = named(true);
  for (auto& entry : all) entry.tensor = entry.tensor.detach();
  return all;
}

void TSTModel::load_state(std::span<const NamedTensor> state, bool skip_head) {
  std::map<std::string, const Tensor*, std::less<>> by_name;
  for (const auto& entry : state) by_name[entry.name] = &entry.tensor;
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::invalid_argument("model state is missing tensor '" + name + "'");
    if (it->second->shape() != shape) {
      throw DimensionError("tensor '" + name + "' has shape " + shape_string(it->second->shape()) + ", model expects " +
                           shape_string(shape));
    }
    return *it->second;
  };
  for (auto& entry : named(false)) {
    if (skip_head && is_head_parameter(entry.name)) continue;
    entry.tensor.assign(fetch(entry.name, entry.tensor.shape()));
  }
  if (config_.norm == NormKind::Batch) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = "blocks." + std::to_string(i) + ".";
      for (auto [name, layer] : {std::pair{"norm1", &blocks_[i].norm_attention}, {"norm2", &blocks_[i].norm_feedforward}}) {
        const Shape shape{config_.d_model};
        auto mean = fetch(p + name + ".running_mean", shape).values();
        auto var = fetch(p + name + ".running_var", shape).values();
        layer->stats.mean.assign(mean.begin(), mean.end());
        layer->stats.var.assign(var.begin(), var.end());
      }
    }
  }
}

TSTModel TSTModel::clone() const {
  TSTModel copy(config_, 0);
  copy.load_state(state());
  return copy;
}

std::vector<std::size_t> TSTModel::encoded_lengths(std::span<const std::size_t> lengths) const {
  std::vector<std::size_t> out(lengths.begin(), lengths.end());
  if (config_.projection == ProjectionKind::Conv && config_.encoded_length() != config_.max_len) {
    const ConvOptions options = config_.conv_options();
    const std::size_t span = options.dilation * (config_.conv_kernel - 1) + 1;
    for (auto& len : out) len = len >= span ? (len - span) / options.stride + 1 : 1;
  }
  return out;
}

Tensor TSTModel::normalize(NormLayer& norm, const Tensor& x, std::span<const std::size_t> lengths, Mode mode) const {
  if (config_.norm == NormKind::Batch) return batchnorm_timewise(x, lengths, norm.gamma, norm.beta, norm.stats, mode);
  return layernorm(x, norm.gamma, norm.beta);
}

Tensor TSTModel::attention(EncoderBlock& block, const Tensor& x, const Tensor& bias, Mode mode, Rng* rng) const {
  const std::size_t h = config_.n_heads;
  const Real inv_scale = Real(1) / std::sqrt(static_cast<Real>(config_.d_model / h));
  Tensor q = split_heads(linear(x, block.query.weight, block.query.bias), h);
  Tensor k = split_heads(linear(x, block.key.weight, block.key.bias), h);
  Tensor v = split_heads(linear(x, block.value.weight, block.value.bias), h);
  Tensor scores = add_key_bias(scale(batched_matmul(q, k, true), inv_scale), bias, h);
  Tensor weights = softmax_last_dim(scores);
  if (mode == Mode::Train && config_.dropout > 0) weights = dropout(weights, config_.dropout, mode, *rng);
  Tensor context = merge_heads(batched_matmul(weights, v), h);
  return linear(context, block.output.weight, block.output.bias);
}

Tensor TSTModel::encode(const Tensor& x, std::span<const std::size_t> lengths, Mode mode, Rng* rng) {
  if (x.rank() != 3) throw DimensionError("encode: expected [B x T x m] input, got " + shape_string(x.shape()));
  if (x.dim(0) != lengths.size()) throw DimensionError("encode: batch size and number of lengths differ");
  if (x.dim(1) > config_.max_len) {
    throw DimensionError("encode: " + std::to_string(x.dim(1)) + " steps exceed max_len " + std::to_string(config_.max_len));
  }
  if (mode == Mode::Train && config_.dropout > 0 && rng == nullptr) {
    throw std::invalid_argument("encode: training with dropout needs a random engine");
  }
  Tensor u;
  if (config_.projection == ProjectionKind::Linear) {
    u = embed_linear(x, projection_.weight, projection_.bias);
  } else {
    if (x.dim(2) != config_.input_dim) {
      throw DimensionError("embed_conv: input has m=" + std::to_string(x.dim(2)) + " variables but the model expects m=" +
                           std::to_string(config_.input_dim));
    }
    // Zero the padding so kernels straddling the end of a sample see a fixed value.
    u = embed_conv(mask_steps(x, lengths), conv_kernels_, projection_.bias, config_.conv_options());
  }
  std::vector<std::size_t> lens = encoded_lengths(lengths);
  const std::size_t steps = u.dim(1);
  for (auto& len : lens) len = std::min(len, steps);
  u = add_positional(u, positional_);
  if (mode == Mode::Train && config_.dropout > 0) u = dropout(u, config_.dropout, mode, *rng);
  const Tensor bias = build_padding_mask(lens, steps);
  for (auto& block : blocks_) {
    Tensor a = attention(block, u, bias, mode, rng);
    if (mode == Mode::Train && config_.dropout > 0) a = dropout(a, config_.dropout, mode, *rng);
    u = normalize(block.norm_attention, add(u, a), lens, mode);
    Tensor f = linear(gelu(linear(u, block.ff_in.weight, block.ff_in.bias)), block.ff_out.weight, block.ff_out.bias);
    if (mode == Mode::Train && config_.dropout > 0) f = dropout(f, config_.dropout, mode, *rng);
    u = normalize(block.norm_feedforward, add(u, f), lens, mode);
  }
  return u;
}

Tensor TSTModel::head_reconstruct(const Tensor& z) const {
  if (config_.head.kind != HeadKind::Reconstruction) {
    throw std::logic_error("head_reconstruct: model has a " + std::string(to_string(config_.head.kind)) + " head");
  }
  return linear(z, head_.weight, head_.bias);
}

Tensor TSTModel::head_predict(const Tensor& z, std::span<const std::size_t> lengths) const {
  if (config_.head.kind == HeadKind::Reconstruction) {
    throw std::logic_error("head_predict: model has a reconstruction head");
  }
  auto lens = encoded_lengths(lengths);
  for (auto& len : lens) len = std::min(len, z.dim(1));
  Tensor flat = flatten_steps(mask_steps(z, lens), config_.encoded_length());
  return linear(flat, head_.weight, head_.bias);
}

Tensor TSTModel::forward(const Tensor& x, std::span<const std::size_t> lengths, Mode mode, Rng* rng) {
  Tensor z = encode(x, lengths, mode, rng);
  if (config_.head.kind == HeadKind::Reconstruction) return head_reconstruct(z);
  return head_predict(z, lengths);
}

}  // namespace tst
