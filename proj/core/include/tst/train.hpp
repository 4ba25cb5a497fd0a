#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tst/checkpoint.hpp"
#include "tst/data.hpp"
#include "tst/masking.hpp"
#include "tst/metrics.hpp"
#include "tst/model.hpp"

namespace tst {

enum class Objective { MaskedMse, SquaredError, CrossEntropy };
std::string_view to_string(Objective objective);
Objective parse_objective(std::string_view text);
Objective objective_for(HeadKind head);

/// Mean squared error over masked, non-padded cells of each sample, then
/// averaged over the samples that have at least one such cell. pred and
/// target are [B x T x m]; masks[b] covers at least lengths[b] steps.
/// `skipped` receives the number of samples without masked cells.
Tensor masked_mse_loss(const Tensor& pred, const Tensor& target, std::span<const NoiseMask> masks,
                       std::span<const std::size_t> lengths, std::size_t* skipped = nullptr);

/// Batch mean of ||pred - target||^2 over [B x n].
Tensor squared_error_loss(const Tensor& pred, const Tensor& target);

/// Batch mean cross-entropy of softmax(logits) against class indices.
Tensor cross_entropy_loss(const Tensor& logits, std::span<const std::size_t> classes);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

/// One bias-corrected Adam update; `step` is 1 for the first update.
void adam_step(std::span<Real> param, std::span<const Real> grad, std::span<Real> m, std::span<Real> v,
               std::uint64_t step, double lr, const AdamConfig& config);

class Adam {
 public:
  explicit Adam(std::vector<NamedTensor> params, AdamConfig config = {});

  /// Updates every parameter; one without a gradient counts as a zero gradient.
  void step(double lr);
  void zero_grad();
  std::uint64_t steps() const { return steps_; }
  const std::vector<NamedTensor>& params() const { return params_; }

  /// Moments as "adam.m.<name>" / "adam.v.<name>".
  std::vector<NamedTensor> state() const;
  void load_state(std::span<const NamedTensor> state, std::uint64_t steps);

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<Real>> m_, v_;
  AdamConfig config_;
  std::uint64_t steps_ = 0;
};

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  std::size_t patience = 0;  // epochs without improvement before stopping; 0 disables
  std::uint64_t seed = 0;
  bool freeze_all_but_head = false;
  Objective objective = Objective::MaskedMse;
  AdamConfig adam;
  std::size_t warmup_steps = 0;  // linear ramp; 0 = constant rate

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Normalized splits plus the statistics used to produce them.
struct TrainingData {
  Dataset train;
  Dataset val;  // may be empty
  NormStats norm;
  NormalizationMode mode = NormalizationMode::StdDev;
};

/// Normalizes both splits with `stats` when given, otherwise with statistics
/// computed on raw_train.
TrainingData prepare_data(const Dataset& raw_train, const Dataset& raw_val, NormalizationMode mode,
                          const NormStats* stats = nullptr);

struct EpochResult {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<double> val_metric;
  std::optional<double> val_loss;
  bool improved = false;
};

using RecordSink = std::function<void(const MetricRecord&)>;

/// Name of the validation metric for an objective (masked_mse, rmse, accuracy).
std::string_view metric_name(Objective objective);
bool higher_is_better(Objective objective);

/// Epoch loop with Adam, early stopping and a best-so-far snapshot.
///
/// Pretraining (MaskedMse) draws a fresh mask per sample and epoch and never
/// reads labels. The loop owns one engine for shuffling and dropout; its state
/// is part of checkpoint(), so resume() continues bitwise.
class Trainer {
 public:
  Trainer(TSTModel model, TrainingData data, TrainConfig config, std::optional<MaskSpec> mask = std::nullopt);

  static Trainer resume(const Checkpoint& checkpoint, TrainingData data, TrainConfig config);

  EpochResult run_epoch();
  /// Runs until config.epochs epochs are complete or patience runs out.
  std::vector<EpochResult> fit(const RecordSink& sink = {});
  bool finished() const;

  std::size_t epoch() const { return epoch_; }
  TSTModel& model() { return model_; }
  const TrainingData& data() const { return data_; }
  const TrainConfig& config() const { return config_; }

  /// Model with the best validation score so far (the current one when
  /// there is no validation split).
  TSTModel best_model() const;
  /// Resumable snapshot: current weights, optimizer, loop engine, best weights.
  Checkpoint checkpoint() const;
  /// Best weights with normalization and run settings; no optimizer state.
  Checkpoint best_checkpoint() const;

  std::string dataset_name;
  std::string model_name;

 private:
  double batch_loss(const Batch& batch, Mode mode, Rng* rng, std::uint64_t mask_epoch, double* metric_sum,
                    std::size_t* metric_count);
  void validate_epoch(EpochResult& result);

  TSTModel model_;
  TrainingData data_;
  TrainConfig config_;
  std::optional<MaskSpec> mask_;
  Adam optimizer_;
  Rng rng_;
  std::size_t epoch_ = 0;
  TrainState state_;
  std::vector<NamedTensor> best_;
};

struct RunResult {
  Checkpoint best;
  std::vector<EpochResult> history;
};

/// Denoising pretraining. The reconstruction head is forced and labels are ignored.
RunResult pretrain(const Dataset& raw_train, const Dataset& raw_val, ModelConfig model, const TrainConfig& config,
                   const MaskSpec& mask, NormalizationMode mode, const RecordSink& sink = {});

/// Fresh supervised training with the head in `model.head`.
RunResult train_supervised(const Dataset& raw_train, const Dataset& raw_val, const ModelConfig& model,
                           const TrainConfig& config, NormalizationMode mode, const RecordSink& sink = {});

/// Supervised training starting from a checkpoint's encoder with a new head.
/// The checkpoint's normalization statistics are reused.
RunResult finetune(const Checkpoint& init, const Dataset& raw_train, const Dataset& raw_val, HeadSpec head,
                   const TrainConfig& config, const RecordSink& sink = {});

struct EvalReport {
  Objective objective = Objective::CrossEntropy;
  std::string metric;
  double value = 0.0;
  double loss = 0.0;
  std::size_t count = 0;
  std::vector<std::size_t> indices;         // dataset index per row
  std::vector<std::vector<double>> outputs; // per sample raw head outputs (regression / logits)
  std::vector<std::size_t> predicted;       // argmax per sample (classification)
  std::vector<std::size_t> truth_classes;
  std::vector<double> flat_pred;            // regression outputs, sample-major
  std::vector<double> flat_truth;
};

/// Test-set scoring on normalized data: RMSE, accuracy or masked MSE.
EvalReport evaluate(TSTModel& model, const Dataset& data, Objective objective, const MaskSpec* mask = nullptr,
                    std::size_t batch_size = 128);

enum class MaskSource { Generated, Missing };

struct ImputedValue {
  std::size_t sample = 0;
  std::size_t step = 0;
  std::size_t dim = 0;
  double truth = 0.0;  // normalized units
  double pred = 0.0;
};

struct ImputationReport {
  std::vector<ImputedValue> values;
  double rmse = 0.0;  // NaN when the truth is unknown (Missing source)
};

/// Hides values (generated masks or the originally missing cells), runs the
/// reconstruction head and collects predictions at the hidden cells.
ImputationReport impute(TSTModel& model, const Dataset& data, MaskSource source, const MaskSpec& mask,
                        std::size_t batch_size = 128);

/// Epoch key for masks used by validation and evaluation (fixed across epochs).
inline constexpr std::uint64_t kEvaluationMaskEpoch = 0xE0A1'0000'0000'0000ull;

}  // namespace tst
