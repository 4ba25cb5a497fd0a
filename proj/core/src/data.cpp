#include "tst/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "tst/random.hpp"

namespace tst {

ParseError::ParseError(std::string source, std::size_t line, std::size_t column, const std::string& message)
    : std::runtime_error(source + ":" + std::to_string(line) + (column ? ":" + std::to_string(column) : "") + ": " +
                         message),
      line_(line),
      column_(column) {}

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Unlabeled: return "unlabeled";
    case TaskKind::Classification: return "classification";
    case TaskKind::Regression: return "regression";
  }
  return "?";
}

bool Sample::has_missing() const {
  return std::any_of(missing.begin(), missing.end(), [](std::uint8_t v) { return v != 0; });
}

std::size_t Dataset::max_length() const {
  std::size_t w = 0;
  for (const auto& s : samples) w = std::max(w, s.length);
  return w;
}

std::size_t Dataset::labeled_count() const {
  return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(), [](const Sample& s) { return s.labeled(); }));
}

std::size_t Dataset::target_dims() const {
  if (task != TaskKind::Regression) return 0;
  for (const auto& s : samples)
    if (!s.target.empty()) return s.target.size();
  return 0;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

bool is_missing_token(std::string_view tok) {
  const std::string l = lower(tok);
  return l == "?" || l == "nan" || l.empty();
}

std::optional<double> parse_double(std::string_view tok) {
  tok = trim(tok);
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || tok.empty()) return std::nullopt;
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

bool parse_bool(std::string_view s) { return lower(s) == "true"; }

// Linear interpolation of NaN gaps within one dimension, holding edge values.
// Returns false when the dimension has no observed value.
bool fill_missing(std::vector<double>& values, std::size_t length, std::size_t dims, std::size_t dim) {
  std::vector<std::size_t> known;
  for (std::size_t t = 0; t < length; ++t)
    if (!std::isnan(values[t * dims + dim])) known.push_back(t);
  if (known.empty()) return false;
  if (known.size() == length) return true;
  for (std::size_t t = 0; t < known.front(); ++t) values[t * dims + dim] = values[known.front() * dims + dim];
  for (std::size_t t = known.back() + 1; t < length; ++t) values[t * dims + dim] = values[known.back() * dims + dim];
  for (std::size_t k = 0; k + 1 < known.size(); ++k) {
    const std::size_t a = known[k], b = known[k + 1];
    const double va = values[a * dims + dim], vb = values[b * dims + dim];
    for (std::size_t t = a + 1; t < b; ++t) {
      const double frac = static_cast<double>(t - a) / static_cast<double>(b - a);
      values[t * dims + dim] = va + frac * (vb - va);
    }
  }
  return true;
}

void finalize_sample(Sample& s, const std::string& source, std::size_t line) {
  s.missing.assign(s.values.size(), 0);
  bool any = false;
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    if (std::isnan(s.values[i])) {
      s.missing[i] = 1;
      any = true;
    }
  }
  if (!any) return;
  for (std::size_t d = 0; d < s.dims; ++d) {
    if (!fill_missing(s.values, s.length, s.dims, d)) {
      throw ParseError(source, line, 0, "dimension " + std::to_string(d) + " has no observed values");
    }
  }
}

}  // namespace

Dataset parse_archive(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file '" + path.string() + "'");
  Dataset ds = parse_archive(in, path.string());
  if (ds.name.empty()) ds.name = path.stem().string();
  return ds;
}

Dataset parse_archive(std::istream& in, const std::string& source) {
  Dataset ds;
  std::size_t declared_dims = 0;
  bool class_labels = false;
  bool target_labels = false;
  bool in_data = false;
  std::string raw;
  std::size_t line_no = 0;

  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (!in_data) {
      if (line.front() != '@') throw ParseError(source, line_no, 0, "expected '@' directive before @data");
      auto words = split_ws(line);
      const std::string key = lower(words[0]);
      auto arg = [&](std::size_t i) -> const std::string& {
        if (i >= words.size()) throw ParseError(source, line_no, 0, "directive " + words[0] + " is missing a value");
        return words[i];
      };
      if (key == "@problemname") {
        ds.name = arg(1);
      } else if (key == "@timestamps") {
        if (parse_bool(arg(1))) throw ParseError(source, line_no, 0, "timestamped series are not supported");
      } else if (key == "@dimensions") {
        auto v = parse_double(arg(1));
        if (!v || *v < 1) throw ParseError(source, line_no, 2, "invalid @dimensions value '" + arg(1) + "'");
        declared_dims = static_cast<std::size_t>(*v);
      } else if (key == "@classlabel") {
        class_labels = parse_bool(arg(1));
        if (class_labels) {
          ds.class_names.assign(words.begin() + 2, words.end());
          if (ds.class_names.empty()) throw ParseError(source, line_no, 0, "@classLabel true without class names");
        }
      } else if (key == "@targetlabel") {
        target_labels = parse_bool(arg(1));
      } else if (key == "@data") {
        in_data = true;
        if (class_labels && target_labels) throw ParseError(source, line_no, 0, "both class and target labels declared");
        ds.task = class_labels ? TaskKind::Classification : target_labels ? TaskKind::Regression : TaskKind::Unlabeled;
        ds.dims = declared_dims;
      }
      // @missing, @univariate, @equalLength, @seriesLength are informational.
      continue;
    }

    auto fields = split(line, ':');
    const bool labeled = ds.task != TaskKind::Unlabeled;
    if (labeled && fields.size() < 2) throw ParseError(source, line_no, 0, "sample has no label field");
    const std::size_t dims = fields.size() - (labeled ? 1 : 0);
    if (ds.dims == 0) ds.dims = dims;
    if (dims != ds.dims) {
      throw ParseError(source, line_no, 0,
                       "expected " + std::to_string(ds.dims) + " dimensions, found " + std::to_string(dims));
    }

    Sample s;
    s.id = ds.name.empty() ? std::to_string(ds.samples.size()) : ds.name + ":" + std::to_string(ds.samples.size());
    s.dims = dims;
    std::vector<std::vector<double>> columns(dims);
    std::size_t token_index = 0;
    for (std::size_t d = 0; d < dims; ++d) {
      for (auto tok : split(fields[d], ',')) {
        ++token_index;
        tok = trim(tok);
        if (is_missing_token(tok)) {
          columns[d].push_back(std::numeric_limits<double>::quiet_NaN());
          continue;
        }
        auto v = parse_double(tok);
        if (!v) throw ParseError(source, line_no, token_index, "unparseable number '" + std::string(tok) + "'");
        columns[d].push_back(*v);
      }
      // Trailing missing markers in unequal-length files are padding, not data.
      if (d > 0 && columns[d].size() != columns[0].size()) {
        throw ParseError(source, line_no, 0, "dimension " + std::to_string(d) + " has " +
                                                 std::to_string(columns[d].size()) + " values, dimension 0 has " +
                                                 std::to_string(columns[0].size()));
      }
    }
    s.length = columns[0].size();
    if (s.length == 0) throw ParseError(source, line_no, 0, "empty series");
    s.values.resize(s.length * dims);
    for (std::size_t d = 0; d < dims; ++d)
      for (std::size_t t = 0; t < s.length; ++t) s.values[t * dims + d] = columns[d][t];

    if (labeled) {
      const std::string label(trim(fields.back()));
      if (ds.task == TaskKind::Classification) {
        auto it = std::find(ds.class_names.begin(), ds.class_names.end(), label);
        if (it == ds.class_names.end()) {
          throw ParseError(source, line_no, token_index + 1, "class label '" + label + "' is not declared in @classLabel");
        }
        s.class_index = static_cast<std::size_t>(it - ds.class_names.begin());
      } else {
        auto v = parse_double(label);
        if (!v) throw ParseError(source, line_no, token_index + 1, "unparseable target '" + label + "'");
        s.target = {*v};
      }
    }
    finalize_sample(s, source, line_no);
    ds.samples.push_back(std::move(s));
  }
  if (!in_data) throw ParseError(source, line_no, 0, "missing @data section");
  if (ds.samples.empty()) throw ParseError(source, line_no, 0, "no samples");
  return ds;
}

void write_archive(const Dataset& ds, std::ostream& out) {
  std::size_t first_len = ds.samples.empty() ? 0 : ds.samples.front().length;
  const bool equal = std::all_of(ds.samples.begin(), ds.samples.end(), [&](const Sample& s) { return s.length == first_len; });
  out << "@problemName " << (ds.name.empty() ? "dataset" : ds.name) << '\n';
  out << "@timeStamps false\n@missing false\n";
  out << "@univariate " << (ds.dims == 1 ? "true" : "false") << '\n';
  out << "@dimensions " << ds.dims << '\n';
  out << "@equalLength " << (equal ? "true" : "false") << '\n';
  if (equal) out << "@seriesLength " << first_len << '\n';
  if (ds.task == TaskKind::Classification) {
    out << "@classLabel true";
    for (const auto& c : ds.class_names) out << ' ' << c;
    out << '\n';
  } else if (ds.task == TaskKind::Regression) {
    out << "@targetLabel true\n";
  } else {
    out << "@classLabel false\n";
  }
  out << "@data\n";
  for (const auto& s : ds.samples) {
    for (std::size_t d = 0; d < s.dims; ++d) {
      if (d) out << ':';
      for (std::size_t t = 0; t < s.length; ++t) out << (t ? "," : "") << format_double(s.at(t, d));
    }
    if (ds.task == TaskKind::Classification) {
      out << ':' << (s.class_index ? ds.class_names[*s.class_index] : "?");
    } else if (ds.task == TaskKind::Regression) {
      out << ':' << (s.target.empty() ? "?" : format_double(s.target.front()));
    }
    out << '\n';
  }
}

Dataset parse_csv_long(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file '" + path.string() + "'");
  Dataset ds = parse_csv_long(in, path.string());
  ds.name = path.stem().string();
  return ds;
}

Dataset parse_csv_long(std::istream& in, const std::string& source) {
  std::string raw;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, raw)) {
    ++line_no;
    auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    for (auto f : split(line, ',')) header.emplace_back(trim(f));
  }
  if (header.size() < 3 || lower(header[0]) != "id" || lower(header[1]) != "t") {
    throw ParseError(source, line_no, 0, "CSV header must start with 'id,t,' followed by variables");
  }
  const bool has_label = lower(header.back()) == "label" || lower(header.back()) == "target";
  const std::size_t dims = header.size() - 2 - (has_label ? 1 : 0);
  if (dims == 0) throw ParseError(source, line_no, 0, "no variable columns");

  struct Pending {
    Sample sample;
    std::string label;
    std::size_t line = 0;
  };
  std::vector<Pending> pending;
  std::map<std::string, std::size_t> by_id;
  while (std::getline(in, raw)) {
    ++line_no;
    auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto fields = split(line, ',');
    if (fields.size() != header.size()) {
      throw ParseError(source, line_no, 0,
                       "expected " + std::to_string(header.size()) + " columns, found " + std::to_string(fields.size()));
    }
    std::string id(trim(fields[0]));
    auto [it, inserted] = by_id.emplace(id, pending.size());
    if (inserted) {
      Pending p;
      p.sample.id = id;
      p.sample.dims = dims;
      p.line = line_no;
      pending.push_back(std::move(p));
    }
    Pending& p = pending[it->second];
    for (std::size_t d = 0; d < dims; ++d) {
      auto tok = trim(fields[2 + d]);
      if (is_missing_token(tok)) {
        p.sample.values.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      auto v = parse_double(tok);
      if (!v) throw ParseError(source, line_no, 3 + d, "unparseable number '" + std::string(tok) + "'");
      p.sample.values.push_back(*v);
    }
    ++p.sample.length;
    if (has_label) p.label = std::string(trim(fields.back()));
  }

  Dataset ds;
  ds.dims = dims;
  bool numeric_labels = has_label;
  if (has_label)
    for (const auto& p : pending) numeric_labels = numeric_labels && parse_double(p.label).has_value();
  ds.task = !has_label ? TaskKind::Unlabeled : numeric_labels ? TaskKind::Regression : TaskKind::Classification;
  for (auto& p : pending) {
    if (ds.task == TaskKind::Regression) {
      p.sample.target = {*parse_double(p.label)};
    } else if (ds.task == TaskKind::Classification) {
      auto it = std::find(ds.class_names.begin(), ds.class_names.end(), p.label);
      if (it == ds.class_names.end()) it = ds.class_names.insert(ds.class_names.end(), p.label);
      p.sample.class_index = static_cast<std::size_t>(it - ds.class_names.begin());
    }
    finalize_sample(p.sample, source, p.line);
    ds.samples.push_back(std::move(p.sample));
  }
  if (ds.samples.empty()) throw ParseError(source, line_no, 0, "no samples");
  return ds;
}

std::string dataset_manifest(const Dataset& ds) {
  nlohmann::json j;
  j["name"] = ds.name;
  j["n"] = ds.size();
  j["m"] = ds.dims;
  j["w"] = ds.max_length();
  std::size_t min_len = ds.samples.empty() ? 0 : ds.samples.front().length;
  for (const auto& s : ds.samples) min_len = std::min(min_len, s.length);
  j["min_length"] = min_len;
  j["task"] = std::string(to_string(ds.task));
  j["classes"] = ds.class_names;
  j["labeled"] = ds.labeled_count();
  j["has_missing"] = std::any_of(ds.samples.begin(), ds.samples.end(), [](const Sample& s) { return s.has_missing(); });
  return j.dump();
}

// ---------------------------------------------------------------------------

std::string_view to_string(NormalizationMode mode) { return mode == NormalizationMode::Variance ? "variance" : "stddev"; }

NormalizationMode parse_normalization_mode(std::string_view text) {
  if (text == "variance") return NormalizationMode::Variance;
  if (text == "stddev") return NormalizationMode::StdDev;
  throw std::invalid_argument("unknown normalization mode '" + std::string(text) + "' (expected variance|stddev)");
}

NormStats compute_norm_stats(const Dataset& train) {
  if (train.samples.empty()) throw std::invalid_argument("cannot compute normalization statistics of an empty dataset");
  NormStats stats;
  stats.mean.assign(train.dims, 0.0);
  stats.var.assign(train.dims, 0.0);
  std::size_t count = 0;
  for (const auto& s : train.samples) {
    for (std::size_t t = 0; t < s.length; ++t)
      for (std::size_t d = 0; d < train.dims; ++d) stats.mean[d] += s.at(t, d);
    count += s.length;
  }
  for (auto& m : stats.mean) m /= static_cast<double>(count);
  for (const auto& s : train.samples)
    for (std::size_t t = 0; t < s.length; ++t)
      for (std::size_t d = 0; d < train.dims; ++d) {
        const double c = s.at(t, d) - stats.mean[d];
        stats.var[d] += c * c;
      }
  for (auto& v : stats.var) v = std::max(v / static_cast<double>(count), NormStats::kVarianceFloor);
  return stats;
}

Sample normalize(const Sample& sample, const NormStats& stats, NormalizationMode mode) {
  if (stats.mean.size() != sample.dims) {
    throw std::invalid_argument("normalization statistics have " + std::to_string(stats.mean.size()) +
                                " dimensions, sample has " + std::to_string(sample.dims));
  }
  Sample out = sample;
  for (std::size_t t = 0; t < out.length; ++t)
    for (std::size_t d = 0; d < out.dims; ++d) {
      const double div = mode == NormalizationMode::Variance ? stats.var[d] : std::sqrt(stats.var[d]);
      out.at(t, d) = (sample.at(t, d) - stats.mean[d]) / div;
    }
  return out;
}

Dataset normalize(const Dataset& dataset, const NormStats& stats, NormalizationMode mode) {
  Dataset out = dataset;
  for (auto& s : out.samples) s = normalize(s, stats, mode);
  return out;
}

double denormalize_value(double value, std::size_t dim, const NormStats& stats, NormalizationMode mode) {
  const double div = mode == NormalizationMode::Variance ? stats.var.at(dim) : std::sqrt(stats.var.at(dim));
  return value * div + stats.mean.at(dim);
}

// ---------------------------------------------------------------------------

Batch pad_and_batch(const Dataset& dataset, std::span<const std::size_t> indices, std::size_t steps, double pad_fill) {
  const std::size_t B = indices.size(), m = dataset.dims;
  Batch batch;
  batch.x = Tensor::full({B, steps, m}, static_cast<Real>(pad_fill));
  batch.indices.assign(indices.begin(), indices.end());
  auto x = batch.x.values();
  bool all_classes = B > 0, all_targets = B > 0;
  std::size_t target_dims = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const Sample& s = dataset.samples.at(indices[b]);
    std::size_t len = s.length;
    if (len > steps) {
      spdlog::warn("sample '{}' has {} steps; truncating to {}", s.id, len, steps);
      len = steps;
    }
    batch.lengths.push_back(len);
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t d = 0; d < m; ++d) x[(b * steps + t) * m + d] = static_cast<Real>(s.at(t, d));
    all_classes = all_classes && s.class_index.has_value();
    all_targets = all_targets && !s.target.empty() && (target_dims == 0 || s.target.size() == target_dims);
    if (!s.target.empty()) target_dims = s.target.size();
  }
  if (all_classes)
    for (auto i : indices) batch.classes.push_back(*dataset.samples[i].class_index);
  if (all_targets) {
    batch.targets = Tensor({B, target_dims});
    auto y = batch.targets.values();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < target_dims; ++k) y[b * target_dims + k] = static_cast<Real>(dataset.samples[indices[b]].target[k]);
  }
  return batch;
}

namespace {

Dataset with_samples(const Dataset& like, std::vector<std::size_t> idx) {
  std::sort(idx.begin(), idx.end());
  Dataset out;
  out.name = like.name;
  out.dims = like.dims;
  out.task = like.task;
  out.class_names = like.class_names;
  for (auto i : idx) out.samples.push_back(like.samples[i]);
  return out;
}

// Stratum key per sample: class index for labeled classification samples,
// one shared key otherwise.
std::map<std::size_t, std::vector<std::size_t>> strata(const Dataset& ds, bool stratify) {
  std::map<std::size_t, std::vector<std::size_t>> groups;
  const std::size_t none = std::numeric_limits<std::size_t>::max();
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    const std::size_t key = stratify && ds.task == TaskKind::Classification && s.class_index ? *s.class_index : none;
    groups[key].push_back(i);
  }
  return groups;
}

}  // namespace

std::pair<Dataset, Dataset> split_train_val(const Dataset& train, double ratio, std::uint64_t seed, bool stratify) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw std::invalid_argument("train/validation ratio must lie in (0, 1), got " + std::to_string(ratio));
  }
  Rng rng = make_rng(seed);
  std::vector<std::size_t> train_idx, val_idx;
  for (auto& [key, members] : strata(train, stratify)) {
    shuffle(std::span<std::size_t>(members), rng);
    const std::size_t n = members.size();
    auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    if (n >= 2) n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    else n_train = n;
    train_idx.insert(train_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    val_idx.insert(val_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  return {with_samples(train, std::move(train_idx)), with_samples(train, std::move(val_idx))};
}

Dataset subset_labels(const Dataset& train, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("label fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  if (fraction == 1.0) return train;
  Dataset out = train;
  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < train.samples.size(); ++i)
    if (train.samples[i].labeled()) labeled.push_back(i);
  const auto total = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(labeled.size())));

  // Per-stratum quotas by largest remainder so they sum to `total`.
  std::map<std::size_t, std::vector<std::size_t>> groups;
  const bool classify = train.task == TaskKind::Classification;
  for (auto i : labeled) groups[classify ? *train.samples[i].class_index : 0].push_back(i);
  std::vector<std::pair<std::size_t, double>> remainders;
  std::map<std::size_t, std::size_t> quota;
  std::size_t assigned = 0;
  for (const auto& [key, members] : groups) {
    const double exact = fraction * static_cast<double>(members.size());
    quota[key] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[key];
    remainders.emplace_back(key, exact - std::floor(exact));
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (std::size_t k = 0; assigned < total && k < remainders.size(); ++k, ++assigned) ++quota[remainders[k].first];

  Rng rng = make_rng(seed);
  std::vector<std::uint8_t> keep(train.samples.size(), 0);
  for (auto& [key, members] : groups) {
    shuffle(std::span<std::size_t>(members), rng);
    for (std::size_t k = 0; k < quota[key] && k < members.size(); ++k) keep[members[k]] = 1;
  }
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    if (keep[i]) continue;
    out.samples[i].class_index.reset();
    out.samples[i].target.clear();
  }
  return out;
}

Dataset labeled_only(const Dataset& dataset) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i)
    if (dataset.samples[i].labeled()) idx.push_back(i);
  return with_samples(dataset, std::move(idx));
}

}  // namespace tst
