#include "tst/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace tst {

double rmse(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("rmse: prediction and truth sizes differ");
  if (pred.empty()) throw std::invalid_argument("rmse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - truth[i];
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(pred.size()));
}

double accuracy(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("accuracy: prediction and truth sizes differ");
  if (pred.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

ResultsMatrix::ResultsMatrix(std::vector<std::string> d, std::vector<std::string> m, std::vector<double> v)
    : datasets(std::move(d)), models(std::move(m)), values(std::move(v)) {
  if (datasets.empty() || models.empty()) throw std::invalid_argument("results matrix needs at least one row and column");
  if (values.size() != datasets.size() * models.size()) {
    throw std::invalid_argument("results matrix has " + std::to_string(values.size()) + " values for " +
                                std::to_string(datasets.size()) + "x" + std::to_string(models.size()));
  }
  for (double x : values)
    if (!std::isfinite(x)) throw std::invalid_argument("results matrix contains a missing or non-finite entry");
}

std::size_t ResultsMatrix::model_index(std::string_view name) const {
  auto it = std::find(models.begin(), models.end(), name);
  if (it == models.end()) throw std::invalid_argument("unknown model '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - models.begin());
}

std::vector<double> avg_rel_diff_from_mean(const ResultsMatrix& r) {
  const std::size_t N = r.rows(), M = r.cols();
  std::vector<double> out(M, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    double mean = 0.0;
    for (std::size_t k = 0; k < M; ++k) mean += r.at(i, k);
    mean /= static_cast<double>(M);
    if (mean == 0.0) throw std::invalid_argument("dataset '" + r.datasets[i] + "' has zero mean score");
    for (std::size_t j = 0; j < M; ++j) out[j] += (r.at(i, j) - mean) / mean;
  }
  for (auto& v : out) v /= static_cast<double>(N);
  return out;
}

std::vector<double> avg_rank(const ResultsMatrix& r, bool lower_is_better) {
  const std::size_t N = r.rows(), M = r.cols();
  std::vector<double> out(M, 0.0);
  std::vector<std::size_t> order(M);
  for (std::size_t i = 0; i < N; ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return lower_is_better ? r.at(i, a) < r.at(i, b) : r.at(i, a) > r.at(i, b);
    });
    for (std::size_t pos = 0; pos < M;) {
      std::size_t end = pos + 1;
      while (end < M && r.at(i, order[end]) == r.at(i, order[pos])) ++end;
      const double shared = (static_cast<double>(pos + 1) + static_cast<double>(end)) / 2.0;
      for (std::size_t k = pos; k < end; ++k) out[order[k]] += shared;
      pos = end;
    }
  }
  for (auto& v : out) v /= static_cast<double>(N);
  return out;
}

ResultsMatrix merge_columns(const ResultsMatrix& r, std::span<const std::string> names, const std::string& merged_name,
                            bool lower_is_better) {
  if (names.empty()) return r;
  std::vector<std::size_t> cols;
  for (const auto& n : names) cols.push_back(r.model_index(n));
  const std::size_t first = *std::min_element(cols.begin(), cols.end());
  std::vector<std::string> models;
  std::vector<std::size_t> source;
  for (std::size_t j = 0; j < r.cols(); ++j) {
    if (j == first) {
      models.push_back(merged_name);
      source.push_back(j);
    } else if (std::find(cols.begin(), cols.end(), j) == cols.end()) {
      models.push_back(r.models[j]);
      source.push_back(j);
    }
  }
  std::vector<double> values;
  for (std::size_t i = 0; i < r.rows(); ++i) {
    for (std::size_t j : source) {
      if (j != first) {
        values.push_back(r.at(i, j));
        continue;
      }
      double best = r.at(i, cols[0]);
      for (std::size_t c : cols) best = lower_is_better ? std::min(best, r.at(i, c)) : std::max(best, r.at(i, c));
      values.push_back(best);
    }
  }
  return ResultsMatrix(r.datasets, std::move(models), std::move(values));
}

namespace {

std::vector<std::string> split_cells(std::string_view line, char sep) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    std::string_view cell = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.front()))) cell.remove_prefix(1);
    while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.back()))) cell.remove_suffix(1);
    cells.emplace_back(cell);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

std::string fmt_number(double v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

}  // namespace

ResultsMatrix parse_results_table(std::string_view text, char sep) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::vector<std::string> models, datasets;
  std::vector<double> values;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_cells(line, sep);
    if (models.empty()) {
      if (cells.size() < 2) throw std::invalid_argument("results table header needs at least one model column");
      models.assign(cells.begin() + 1, cells.end());
      continue;
    }
    if (cells.size() != models.size() + 1) {
      throw std::invalid_argument("results table line " + std::to_string(line_no) + " has " +
                                  std::to_string(cells.size()) + " cells, expected " + std::to_string(models.size() + 1));
    }
    datasets.push_back(cells[0]);
    for (std::size_t j = 1; j < cells.size(); ++j) {
      double v = 0;
      const auto& c = cells[j];
      auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (c.empty() || ec != std::errc() || ptr != c.data() + c.size()) {
        throw std::invalid_argument("results table line " + std::to_string(line_no) + ": bad value '" + c + "'");
      }
      values.push_back(v);
    }
  }
  return ResultsMatrix(std::move(datasets), std::move(models), std::move(values));
}

std::string comparison_table(const ResultsMatrix& r, bool lower_is_better, char sep) {
  std::ostringstream out;
  out << "dataset";
  for (const auto& m : r.models) out << sep << m;
  out << '\n';
  for (std::size_t i = 0; i < r.rows(); ++i) {
    out << r.datasets[i];
    for (std::size_t j = 0; j < r.cols(); ++j) out << sep << fmt_number(r.at(i, j));
    out << '\n';
  }
  auto summary = [&](const char* name, const std::vector<double>& v) {
    out << name;
    for (double x : v) out << sep << fmt_number(x);
    out << '\n';
  };
  summary("avg_rel_diff", avg_rel_diff_from_mean(r));
  summary("avg_rank", avg_rank(r, lower_is_better));
  return out.str();
}

std::string MetricRecord::to_json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["split"] = split;
  j["metric"] = metric;
  j["value"] = value;
  if (!dataset.empty()) j["dataset"] = dataset;
  if (!model.empty()) j["model"] = model;
  return j.dump();
}

MetricRecord MetricRecord::parse(std::string_view line) {
  try {
    auto j = nlohmann::json::parse(line);
    MetricRecord r;
    r.epoch = j.at("epoch").get<std::size_t>();
    r.split = j.at("split").get<std::string>();
    r.metric = j.at("metric").get<std::string>();
    r.value = j.at("value").get<double>();
    r.dataset = j.value("dataset", "");
    r.model = j.value("model", "");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("malformed metric record: " + std::string(e.what()));
  }
}

ResultsMatrix results_from_records(std::span<const MetricRecord> records, std::string_view split,
                                   std::string_view metric) {
  std::vector<std::string> datasets, models;
  std::map<std::pair<std::string, std::string>, double> last;
  for (const auto& r : records) {
    if (r.split != split || r.metric != metric) continue;
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    last[{r.dataset, r.model}] = r.value;
  }
  std::vector<double> values;
  for (const auto& d : datasets)
    for (const auto& m : models) {
      auto it = last.find({d, m});
      if (it == last.end()) throw std::invalid_argument("no " + std::string(metric) + " record for " + d + "/" + m);
      values.push_back(it->second);
    }
  return ResultsMatrix(std::move(datasets), std::move(models), std::move(values));
}

}  // namespace tst
