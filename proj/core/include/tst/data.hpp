#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tst/tensor.hpp"

namespace tst {

/// Malformed input file. line is 1-based; column is the 1-based token index
/// within the line when known (0 otherwise).
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string source, std::size_t line, std::size_t column, const std::string& message);
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

enum class TaskKind { Unlabeled, Classification, Regression };
std::string_view to_string(TaskKind kind);

struct Sample {
  std::string id;
  std::size_t length = 0;         // time steps
  std::size_t dims = 0;           // variables
  std::vector<double> values;     // row-major [length x dims]
  std::vector<std::uint8_t> missing;  // 1 where the raw file had no value (interpolated)
  std::optional<std::size_t> class_index;
  std::vector<double> target;     // regression targets; empty when unlabeled

  double at(std::size_t t, std::size_t i) const { return values[t * dims + i]; }
  double& at(std::size_t t, std::size_t i) { return values[t * dims + i]; }
  bool labeled() const { return class_index.has_value() || !target.empty(); }
  bool has_missing() const;
};

struct Dataset {
  std::string name;
  std::size_t dims = 0;
  TaskKind task = TaskKind::Unlabeled;
  std::vector<std::string> class_names;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  std::size_t max_length() const;
  std::size_t labeled_count() const;
  /// Regression output width (0 unless task is Regression).
  std::size_t target_dims() const;
};

/// Reads the UEA/UCR archive text format ('@' directives, '#' comments, one
/// sample per line, dimensions split by ':', values by ','). A trailing field
/// holds the class label or regression target when the header declares one.
/// Missing values ('?' or NaN) are linearly interpolated within a dimension
/// with edge hold; a dimension with no values at all is rejected.
Dataset parse_archive(const std::filesystem::path& path);
Dataset parse_archive(std::istream& in, const std::string& source = "<stream>");

/// Writes the archive format back out with round-trip precision.
void write_archive(const Dataset& dataset, std::ostream& out);

/// Long CSV fallback: header "id,t,<var...>[,label]", one row per step.
/// A non-numeric label column makes the set a classification problem.
Dataset parse_csv_long(const std::filesystem::path& path);
Dataset parse_csv_long(std::istream& in, const std::string& source = "<stream>");

/// Structured (JSON) report with name, n, m, w, task and classes.
std::string dataset_manifest(const Dataset& dataset);

// ---------------------------------------------------------------------------

enum class NormalizationMode { Variance, StdDev };
std::string_view to_string(NormalizationMode mode);
NormalizationMode parse_normalization_mode(std::string_view text);

struct NormStats {
  static constexpr double kVarianceFloor = 1e-8;
  std::vector<double> mean;
  std::vector<double> var;

  bool operator==(const NormStats&) const = default;
};

/// Per-dimension mean and population variance pooled over every time step of
/// every sample; variance clamped below at kVarianceFloor.
NormStats compute_norm_stats(const Dataset& train);

/// (x - mean) / var in Variance mode, (x - mean) / sqrt(var) in StdDev mode.
Sample normalize(const Sample& sample, const NormStats& stats, NormalizationMode mode);
Dataset normalize(const Dataset& dataset, const NormStats& stats, NormalizationMode mode);
double denormalize_value(double value, std::size_t dim, const NormStats& stats, NormalizationMode mode);

// ---------------------------------------------------------------------------

struct Batch {
  Tensor x;                          // [B x steps x m]
  std::vector<std::size_t> lengths;  // per sample, <= steps
  std::vector<std::size_t> indices;  // dataset index of every row
  std::vector<std::size_t> classes;  // classification labels (if every sample has one)
  Tensor targets;                    // [B x n] regression targets (if every sample has them)
};

/// Pads the selected samples to `steps` rows with pad_fill. Samples longer
/// than `steps` are truncated with a warning.
Batch pad_and_batch(const Dataset& dataset, std::span<const std::size_t> indices, std::size_t steps,
                    double pad_fill = 0.0);

/// Random disjoint split; ratio is the training share and must lie in (0, 1).
/// Classification sets are stratified by class unless stratify is false.
std::pair<Dataset, Dataset> split_train_val(const Dataset& train, double ratio, std::uint64_t seed,
                                            bool stratify = true);

/// Keeps labels on round(fraction * n) samples chosen at random (stratified
/// for classification); the rest stay in the set without labels.
Dataset subset_labels(const Dataset& train, double fraction, std::uint64_t seed);

/// Samples that carry a label.
Dataset labeled_only(const Dataset& dataset);

}  // namespace tst
