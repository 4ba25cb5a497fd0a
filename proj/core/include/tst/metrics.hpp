#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tst {

double rmse(std::span<const double> pred, std::span<const double> truth);
double accuracy(std::span<const std::size_t> pred, std::span<const std::size_t> truth);

/// Scores of M models on N datasets, row-major [N x M].
struct ResultsMatrix {
  std::vector<std::string> datasets;
  std::vector<std::string> models;
  std::vector<double> values;

  ResultsMatrix() = default;
  ResultsMatrix(std::vector<std::string> datasets, std::vector<std::string> models, std::vector<double> values);

  std::size_t rows() const { return datasets.size(); }
  std::size_t cols() const { return models.size(); }
  double at(std::size_t i, std::size_t j) const { return values[i * cols() + j]; }
  std::size_t model_index(std::string_view name) const;
};

/// r_j = mean over datasets of (R(i,j) - mean_i) / mean_i.
std::vector<double> avg_rel_diff_from_mean(const ResultsMatrix& results);

/// Per-dataset ranks (1 = best, ties get the mean of the tied positions)
/// averaged per model.
std::vector<double> avg_rank(const ResultsMatrix& results, bool lower_is_better = true);

/// Collapses the listed models into one column holding their best score per
/// dataset, placed where the first listed model was.
ResultsMatrix merge_columns(const ResultsMatrix& results, std::span<const std::string> models,
                            const std::string& merged_name, bool lower_is_better = true);

/// Reads a delimited grid: header "dataset<sep>model..." then one row per
/// dataset. Empty cells are rejected.
ResultsMatrix parse_results_table(std::string_view text, char sep = ',');

/// Grid plus "avg_rel_diff" and "avg_rank" summary rows.
std::string comparison_table(const ResultsMatrix& results, bool lower_is_better = true, char sep = ',');

/// One line of the training log.
struct MetricRecord {
  std::size_t epoch = 0;
  std::string split;   // train | val | test
  std::string metric;  // loss | rmse | accuracy | masked_mse ...
  double value = 0.0;
  std::string dataset;
  std::string model;

  std::string to_json() const;
  static MetricRecord parse(std::string_view line);
  bool operator==(const MetricRecord&) const = default;
};

/// Last value of `metric` on `split` for every (dataset, model) pair found in
/// the records; missing pairs are an error.
ResultsMatrix results_from_records(std::span<const MetricRecord> records, std::string_view split,
                                   std::string_view metric);

}  // namespace tst
