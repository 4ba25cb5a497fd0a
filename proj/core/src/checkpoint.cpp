#include "tst/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

namespace tst {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

using json = nlohmann::json;

constexpr char kMagic[8] = {'T', 'S', 'T', 'C', 'K', 'P', 'T', '\0'};

json config_to_json(const ModelConfig& c) {
  return {{"input_dim", c.input_dim},
          {"max_len", c.max_len},
          {"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"n_blocks", c.n_blocks},
          {"d_ff", c.d_ff},
          {"dropout", c.dropout},
          {"norm", to_string(c.norm)},
          {"positional", to_string(c.positional)},
          {"projection", to_string(c.projection)},
          {"conv_kernel", c.conv_kernel},
          {"conv_stride", c.conv_stride},
          {"conv_dilation", c.conv_dilation},
          {"head", to_string(c.head.kind)},
          {"head_outputs", c.head.outputs}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.input_dim = j.at("input_dim");
  c.max_len = j.at("max_len");
  c.d_model = j.at("d_model");
  c.n_heads = j.at("n_heads");
  c.n_blocks = j.at("n_blocks");
  c.d_ff = j.at("d_ff");
  c.dropout = j.at("dropout");
  c.norm = parse_norm_kind(j.at("norm").get<std::string>());
  c.positional = parse_positional_encoding(j.at("positional").get<std::string>());
  c.projection = parse_projection_kind(j.at("projection").get<std::string>());
  c.conv_kernel = j.at("conv_kernel");
  c.conv_stride = j.at("conv_stride");
  c.conv_dilation = j.at("conv_dilation");
  c.head.kind = parse_head_kind(j.at("head").get<std::string>());
  c.head.outputs = j.at("head_outputs");
  return c;
}

json mask_to_json(const MaskSpec& m) {
  return {{"variant", to_string(m.variant)},
          {"ratio", m.ratio},
          {"mean_masked_length", m.mean_masked_length},
          {"forecast_fraction", m.forecast_fraction},
          {"seed", m.seed}};
}

MaskSpec mask_from_json(const json& j) {
  MaskSpec m;
  m.variant = parse_mask_variant(j.at("variant").get<std::string>());
  m.ratio = j.at("ratio");
  m.mean_masked_length = j.at("mean_masked_length");
  m.forecast_fraction = j.at("forecast_fraction");
  m.seed = j.at("seed");
  return m;
}

// Doubles go through their bit pattern so metadata round-trips exactly,
// including values JSON cannot spell (inf, nan).
std::uint64_t bits_of(double v) { return std::bit_cast<std::uint64_t>(v); }
double from_bits(std::uint64_t b) { return std::bit_cast<double>(b); }

json bits_array(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(bits_of(x));
  return a;
}

std::vector<double> from_bits_array(const json& a) {
  std::vector<double> v;
  for (const auto& x : a) v.push_back(from_bits(x.get<std::uint64_t>()));
  return v;
}

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw CheckpointError("checkpoint is truncated");
  return value;
}

void write_tensor(std::ostream& out, const NamedTensor& nt) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(nt.name.size()));
  out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
  put<std::uint8_t>(out, sizeof(Real) == 8 ? 0 : 1);
  const auto& shape = nt.tensor.shape();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put<std::uint64_t>(out, d);
  auto values = nt.tensor.values();
  put<std::uint64_t>(out, values.size_bytes());
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
}

NamedTensor read_tensor(std::istream& in) {
  NamedTensor nt;
  const auto name_len = get<std::uint32_t>(in);
  if (name_len > (1u << 16)) throw CheckpointError("checkpoint tensor name is implausibly long");
  nt.name.resize(name_len);
  in.read(nt.name.data(), name_len);
  const auto dtype = get<std::uint8_t>(in);
  if (dtype > 1) throw CheckpointError("tensor '" + nt.name + "' has unknown dtype " + std::to_string(dtype));
  const auto rank = get<std::uint32_t>(in);
  if (rank > 8) throw CheckpointError("tensor '" + nt.name + "' has implausible rank");
  Shape shape(rank);
  for (auto& d : shape) d = get<std::uint64_t>(in);
  const auto nbytes = get<std::uint64_t>(in);
  const std::size_t n = shape_numel(shape);
  const std::size_t width = dtype == 0 ? 8 : 4;
  if (nbytes != n * width) throw CheckpointError("tensor '" + nt.name + "' byte count does not match its shape");
  std::vector<Real> values(n);
  if (dtype == 0) {
    std::vector<double> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(nbytes));
    std::copy(raw.begin(), raw.end(), values.begin());
  } else {
    std::vector<float> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(nbytes));
    std::copy(raw.begin(), raw.end(), values.begin());
  }
  if (!in) throw CheckpointError("checkpoint is truncated inside tensor '" + nt.name + "'");
  nt.tensor = Tensor(std::move(shape), std::move(values));
  return nt;
}

}  // namespace

TSTModel Checkpoint::build_model() const {
  TSTModel m(model, 0);
  m.load_state(tensors);
  return m;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  json meta;
  meta["model"] = config_to_json(ck.model);
  meta["norm"] = {{"mode", to_string(ck.norm_mode)}, {"mean", bits_array(ck.norm.mean)}, {"var", bits_array(ck.norm.var)}};
  const auto& t = ck.train;
  meta["train"] = {{"epoch", t.epoch},
                   {"rng", t.rng_state},
                   {"best_metric", bits_of(t.best_metric)},
                   {"best_loss", bits_of(t.best_loss)},
                   {"best_epoch", t.best_epoch},
                   {"stale_epochs", t.stale_epochs},
                   {"optimizer_step", t.optimizer_step},
                   {"has_best", t.has_best}};
  if (ck.mask) meta["mask"] = mask_to_json(*ck.mask);
  meta["classes"] = ck.class_names;
  meta["meta"] = ck.meta;
  const std::string text = meta.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + tmp.string() + "'");
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, Checkpoint::kVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint64_t>(out, ck.tensors.size() + ck.aux.size());
    for (const auto& nt : ck.tensors) write_tensor(out, nt);
    for (const auto& nt : ck.aux) write_tensor(out, {"aux." + nt.name, nt.tensor});
    out.flush();
    if (!out) throw CheckpointError("failed while writing checkpoint '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("'" + path.string() + "' is not a checkpoint file");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != Checkpoint::kVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(Checkpoint::kVersion) + ")");
  }
  const auto meta_len = get<std::uint64_t>(in);
  if (meta_len > (1ull << 30)) throw CheckpointError("checkpoint metadata is implausibly large");
  std::string text(meta_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw CheckpointError("checkpoint is truncated");

  Checkpoint ck;
  try {
    auto meta = json::parse(text);
    ck.model = config_from_json(meta.at("model"));
    const auto& norm = meta.at("norm");
    ck.norm_mode = parse_normalization_mode(norm.at("mode").get<std::string>());
    ck.norm.mean = from_bits_array(norm.at("mean"));
    ck.norm.var = from_bits_array(norm.at("var"));
    const auto& t = meta.at("train");
    ck.train.epoch = t.at("epoch");
    ck.train.rng_state = t.at("rng");
    ck.train.best_metric = from_bits(t.at("best_metric"));
    ck.train.best_loss = from_bits(t.at("best_loss"));
    ck.train.best_epoch = t.at("best_epoch");
    ck.train.stale_epochs = t.at("stale_epochs");
    ck.train.optimizer_step = t.at("optimizer_step");
    ck.train.has_best = t.at("has_best");
    if (meta.contains("mask")) ck.mask = mask_from_json(meta.at("mask"));
    ck.class_names = meta.at("classes").get<std::vector<std::string>>();
    ck.meta = meta.at("meta").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint metadata is malformed: " + std::string(e.what()));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError("checkpoint metadata is malformed: " + std::string(e.what()));
  }

  const auto count = get<std::uint64_t>(in);
  for (std::uint64_t k = 0; k < count; ++k) {
    auto nt = read_tensor(in);
    if (nt.name.rfind("aux.", 0) == 0) {
      nt.name.erase(0, 4);
      ck.aux.push_back(std::move(nt));
    } else {
      ck.tensors.push_back(std::move(nt));
    }
  }
  return ck;
}

void check_encoder_compatible(const ModelConfig& saved, const ModelConfig& wanted) {
  auto fail = [](const char* key, auto a, auto b) {
    throw CheckpointError("checkpoint was built with " + std::string(key) + "=" + std::string(a) + " but " +
                          std::string(key) + "=" + std::string(b) + " is required");
  };
  auto num = [&](const char* key, std::size_t a, std::size_t b) {
    if (a != b) fail(key, std::to_string(a), std::to_string(b));
  };
  num("m", saved.input_dim, wanted.input_dim);
  num("w", saved.max_len, wanted.max_len);
  num("d_model", saved.d_model, wanted.d_model);
  num("heads", saved.n_heads, wanted.n_heads);
  num("blocks", saved.n_blocks, wanted.n_blocks);
  num("d_ff", saved.d_ff, wanted.d_ff);
  if (saved.norm != wanted.norm) fail("norm", to_string(saved.norm), to_string(wanted.norm));
  if (saved.positional != wanted.positional) {
    fail("positional", to_string(saved.positional), to_string(wanted.positional));
  }
  if (saved.projection != wanted.projection) {
    fail("projection", to_string(saved.projection), to_string(wanted.projection));
  }
  if (saved.projection == ProjectionKind::Conv) {
    num("conv_kernel", saved.conv_kernel, wanted.conv_kernel);
    num("conv_stride", saved.conv_stride, wanted.conv_stride);
    num("conv_dilation", saved.conv_dilation, wanted.conv_dilation);
  }
}

std::vector<TensorDiff> diff_checkpoints(const Checkpoint& a, const Checkpoint& b) {
  std::map<std::string, const Tensor*> right;
  for (const auto& nt : b.tensors) right[nt.name] = &nt.tensor;
  std::vector<TensorDiff> out;
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (const auto& nt : a.tensors) {
    auto it = right.find(nt.name);
    if (it == right.end() || it->second->shape() != nt.tensor.shape()) {
      out.push_back({nt.name, inf});
      if (it != right.end()) right.erase(it);
      continue;
    }
    auto x = nt.tensor.values(), y = it->second->values();
    double worst = 0.0;
    bool same = std::memcmp(x.data(), y.data(), x.size_bytes()) == 0;
    for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(static_cast<double>(x[i] - y[i])));
    if (!same) out.push_back({nt.name, worst});
    right.erase(it);
  }
  for (const auto& [name, t] : right) out.push_back({name, inf});
  return out;
}

}  // namespace tst
