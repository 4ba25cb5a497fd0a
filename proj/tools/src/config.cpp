#include "tst/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace tst::cli {

const std::vector<KeyInfo>& known_keys() {
  static const std::vector<KeyInfo> keys = {
      {"run.data", "", "training (or input) dataset: .ts archive file or long CSV"},
      {"run.test", "", "optional test dataset scored after training"},
      {"run.output", "runs/latest", "output directory (env TST_OUTPUT_DIR)"},
      {"run.seed", "0", "base seed for initialization, shuffling, dropout and masks"},
      {"run.preset", "auto", "hyperparameter preset: dataset name, good-default, auto (from the data) or none"},
      {"run.normalization", "stddev", "feature scaling: stddev ((x-mean)/std) or variance ((x-mean)/var)"},
      {"run.val_ratio", "0", "share of training samples kept for training; the rest validates (0 = no split)"},
      {"run.labels", "1", "fraction of training labels used for supervised training"},
      {"run.from", "", "checkpoint to start from (finetune, evaluate, impute)"},
      {"run.threads", "1", "worker threads for matrix kernels (env TST_THREADS)"},
      {"run.dump", "true", "write per-sample predictions next to the metrics"},
      {"model.d_model", "128", "representation width"},
      {"model.n_heads", "16", "attention heads (must divide d_model)"},
      {"model.n_blocks", "3", "encoder blocks"},
      {"model.d_ff", "256", "feed-forward hidden width"},
      {"model.dropout", "0.1", "dropout probability"},
      {"model.norm", "batch", "normalization layers: batch or layer"},
      {"model.positional", "learnable", "positional encoding: learnable or sinusoidal"},
      {"model.projection", "linear", "input projection: linear or conv"},
      {"model.conv_kernel", "1", "convolution kernel size (projection = conv)"},
      {"model.conv_stride", "1", "convolution stride"},
      {"model.conv_dilation", "1", "convolution dilation"},
      {"model.max_len", "0", "maximum series length w (0 = longest sample in the data)"},
      {"train.lr", "0.001", "Adam learning rate"},
      {"train.batch_size", "128", "samples per batch"},
      {"train.epochs", "100", "maximum number of epochs"},
      {"train.patience", "0", "stop after this many epochs without validation improvement (0 = never)"},
      {"train.freeze", "false", "train only the output head (static representations)"},
      {"train.warmup_steps", "0", "linear learning-rate warmup steps (0 = constant)"},
      {"train.beta1", "0.9", "Adam first-moment decay"},
      {"train.beta2", "0.999", "Adam second-moment decay"},
      {"train.eps", "1e-08", "Adam denominator offset"},
      {"mask.variant", "sep_stateful", "sep_stateful, sep_bernoulli, sync_stateful, sync_bernoulli or forecast"},
      {"mask.ratio", "0.15", "expected masked share r of every variable"},
      {"mask.mean_length", "3", "mean masked run length l_m (stateful variants)"},
      {"mask.forecast_fraction", "0.25", "hidden suffix share for the forecast variant"},
      {"mask.seed", "", "mask stream seed (empty = run.seed)"},
      {"impute.source", "generated", "cells to impute: generated (masks) or missing (cells absent in the file)"},
      {"masks.steps", "100", "fixture length w"},
      {"masks.vars", "1", "fixture variables m"},
      {"masks.count", "10", "fixtures per variant"},
      {"masks.variants", "all", "comma-separated variants to emit, or all"},
  };
  return keys;
}

bool is_known_key(std::string_view key) {
  const auto& keys = known_keys();
  return std::any_of(keys.begin(), keys.end(), [&](const KeyInfo& k) { return k.key == key; });
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

void require_known(const std::string& key, const std::string& where) {
  if (!is_known_key(key)) throw UsageError(where + "unknown config key '" + key + "'");
}

}  // namespace

Settings parse_ini(std::istream& in, const std::string& source) {
  Settings out;
  std::string section, raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw UsageError(where + "unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(where + "expected 'key = value'");
    if (section.empty()) throw UsageError(where + "key outside of a [section]");
    const std::string key = section + "." + trim(std::string_view(line).substr(0, eq));
    require_known(key, where);
    out[key] = trim(std::string_view(line).substr(eq + 1));
  }
  return out;
}

Settings read_ini(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path.string() + "'");
  return parse_ini(in, path.string());
}

void write_ini(const Settings& settings, std::ostream& out) {
  std::string section;
  for (const auto& info : known_keys()) {
    auto it = settings.find(info.key);
    if (it == settings.end()) continue;
    const auto dot = info.key.find('.');
    const std::string sec = info.key.substr(0, dot);
    if (sec != section) {
      out << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    out << info.key.substr(dot + 1) << " = " << it->second << '\n';
  }
}

std::pair<std::string, std::string> parse_assignment(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) throw UsageError("expected section.key=value, got '" + std::string(text) + "'");
  std::string key = trim(text.substr(0, eq));
  require_known(key, "");
  return {key, trim(text.substr(eq + 1))};
}

Config::Config() {
  for (const auto& k : known_keys()) layers_[Layer::Defaults][k.key] = k.fallback;
}

void Config::set(Layer layer, const std::string& key, const std::string& value) {
  require_known(key, "");
  layers_[layer][key] = value;
}

void Config::merge(Layer layer, const Settings& values) {
  for (const auto& [k, v] : values) set(layer, k, v);
}

void Config::reset(Layer layer) { layers_.erase(layer); }

void Config::load_env() {
  if (const char* out = std::getenv("TST_OUTPUT_DIR"); out && *out) set(Layer::Env, "run.output", out);
  if (const char* threads = std::getenv("TST_THREADS"); threads && *threads) set(Layer::Env, "run.threads", threads);
}

std::string Config::get(const std::string& key) const {
  require_known(key, "");
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    auto found = it->second.find(key);
    if (found != it->second.end()) return found->second;
  }
  return {};
}

bool Config::is_set_above_defaults(const std::string& key) const {
  for (const auto& [layer, values] : layers_)
    if (layer != Layer::Defaults && values.count(key)) return true;
  return false;
}

long long Config::integer(const std::string& key) const {
  const std::string v = get(key);
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw UsageError(key + " must be an integer, got '" + v + "'");
  }
  return out;
}

std::size_t Config::count(const std::string& key) const {
  const long long v = integer(key);
  if (v < 0) throw UsageError(key + " must not be negative");
  return static_cast<std::size_t>(v);
}

double Config::real(const std::string& key) const {
  const std::string v = get(key);
  double out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw UsageError(key + " must be a number, got '" + v + "'");
  }
  return out;
}

bool Config::flag(const std::string& key) const {
  std::string v = get(key);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw UsageError(key + " must be true or false, got '" + v + "'");
}

Settings Config::effective() const {
  Settings out;
  for (const auto& k : known_keys()) out[k.key] = get(k.key);
  return out;
}

}  // namespace tst::cli
