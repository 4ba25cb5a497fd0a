#include "tst/train.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace tst {

namespace {

constexpr std::pair<Objective, std::string_view> kObjectiveNames[] = {
    {Objective::MaskedMse, "masked_mse"},
    {Objective::SquaredError, "squared_error"},
    {Objective::CrossEntropy, "cross_entropy"},
};

constexpr std::uint64_t kLoopStream = 0x4C4F4F50ULL;

void require(bool ok, const std::string& message) {
  if (!ok) throw DimensionError(message);
}

}  // namespace

std::string_view to_string(Objective objective) {
  for (const auto& [o, name] : kObjectiveNames)
    if (o == objective) return name;
  return "?";
}

Objective parse_objective(std::string_view text) {
  for (const auto& [o, name] : kObjectiveNames)
    if (name == text) return o;
  throw std::invalid_argument("unknown objective '" + std::string(text) +
                              "' (expected masked_mse|squared_error|cross_entropy)");
}

Objective objective_for(HeadKind head) {
  switch (head) {
    case HeadKind::Reconstruction: return Objective::MaskedMse;
    case HeadKind::Regression: return Objective::SquaredError;
    case HeadKind::Classification: return Objective::CrossEntropy;
  }
  return Objective::MaskedMse;
}

std::string_view metric_name(Objective objective) {
  switch (objective) {
    case Objective::MaskedMse: return "masked_mse";
    case Objective::SquaredError: return "rmse";
    case Objective::CrossEntropy: return "accuracy";
  }
  return "?";
}

bool higher_is_better(Objective objective) { return objective == Objective::CrossEntropy; }

// ---------------------------------------------------------------------------

Tensor masked_mse_loss(const Tensor& pred, const Tensor& target, std::span<const NoiseMask> masks,
                       std::span<const std::size_t> lengths, std::size_t* skipped) {
  require(pred.rank() == 3 && pred.shape() == target.shape(),
          "masked_mse_loss: prediction " + shape_string(pred.shape()) + " vs target " + shape_string(target.shape()));
  const std::size_t B = pred.dim(0), T = pred.dim(1), m = pred.dim(2);
  require(masks.size() == B && lengths.size() == B, "masked_mse_loss: need one mask and one length per sample");

  std::vector<std::size_t> counts(B, 0);
  std::vector<double> per_sample(B, 0.0);
  auto p = pred.values();
  auto x = target.values();
  for (std::size_t b = 0; b < B; ++b) {
    const NoiseMask& mask = masks[b];
    const std::size_t len = std::min(lengths[b], T);
    require(mask.vars() == m && mask.steps() >= len, "masked_mse_loss: mask shape does not cover sample " +
                                                         std::to_string(b));
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t i = 0; i < m; ++i) {
        if (!mask.masked(t, i)) continue;
        const double e = static_cast<double>(p[(b * T + t) * m + i]) - static_cast<double>(x[(b * T + t) * m + i]);
        per_sample[b] += e * e;
        ++counts[b];
      }
  }
  std::size_t used = 0, none = 0;
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (counts[b] == 0) {
      ++none;
      continue;
    }
    total += per_sample[b] / static_cast<double>(counts[b]);
    ++used;
  }
  if (none > 0) spdlog::debug("{} of {} samples have no masked values and were skipped in the loss", none, B);
  if (skipped) *skipped = none;

  if (used == 0) return Tensor({1});
  Tensor out = make_result({1}, {&pred});
  out.values()[0] = static_cast<Real>(total / static_cast<double>(used));
  if (out.requires_grad()) {
    auto P = pred.impl(), X = target.impl(), L = out.impl();
    std::vector<NoiseMask> kept(masks.begin(), masks.end());
    std::vector<std::size_t> lens(lengths.begin(), lengths.end());
    active_tape()->record("masked_mse", {P}, out, [P, X, L, kept = std::move(kept), lens = std::move(lens), counts, used,
                                                   B, T, m] {
      auto& g = P->grad_buffer();
      const Real upstream = L->grad[0];
      for (std::size_t b = 0; b < B; ++b) {
        if (counts[b] == 0) continue;
        const Real factor = upstream * Real(2) / static_cast<Real>(counts[b] * used);
        const std::size_t len = std::min(lens[b], T);
        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t i = 0; i < m; ++i) {
            if (!kept[b].masked(t, i)) continue;
            const std::size_t k = (b * T + t) * m + i;
            g[k] += factor * (P->data[k] - X->data[k]);
          }
      }
    });
  }
  return out;
}

Tensor squared_error_loss(const Tensor& pred, const Tensor& target) {
  require(pred.rank() == 2 && pred.shape() == target.shape(),
          "squared_error_loss: prediction " + shape_string(pred.shape()) + " vs target " + shape_string(target.shape()));
  const std::size_t B = pred.dim(0);
  auto p = pred.values();
  auto y = target.values();
  double total = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double e = static_cast<double>(p[k]) - static_cast<double>(y[k]);
    total += e * e;
  }
  Tensor out = make_result({1}, {&pred});
  out.values()[0] = static_cast<Real>(total / static_cast<double>(B));
  if (out.requires_grad()) {
    auto P = pred.impl(), Y = target.impl(), L = out.impl();
    active_tape()->record("squared_error", {P}, out, [P, Y, L, B] {
      auto& g = P->grad_buffer();
      const Real factor = L->grad[0] * Real(2) / static_cast<Real>(B);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += factor * (P->data[k] - Y->data[k]);
    });
  }
  return out;
}

Tensor cross_entropy_loss(const Tensor& logits, std::span<const std::size_t> classes) {
  require(logits.rank() == 2, "cross_entropy_loss: logits must be [B x C], got " + shape_string(logits.shape()));
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  require(classes.size() == B, "cross_entropy_loss: need one class per sample");
  auto z = logits.values();
  std::vector<Real> probs(B * C);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (classes[b] >= C) {
      throw std::invalid_argument("cross_entropy_loss: class " + std::to_string(classes[b]) + " out of range for " +
                                  std::to_string(C) + " outputs");
    }
    const Real* row = z.data() + b * C;
    const Real top = *std::max_element(row, row + C);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += std::exp(static_cast<double>(row[c] - top));
    const double lse = static_cast<double>(top) + std::log(s);
    for (std::size_t c = 0; c < C; ++c) probs[b * C + c] = static_cast<Real>(std::exp(static_cast<double>(row[c]) - lse));
    total += lse - static_cast<double>(row[classes[b]]);
  }
  Tensor out = make_result({1}, {&logits});
  out.values()[0] = static_cast<Real>(total / static_cast<double>(B));
  if (out.requires_grad()) {
    auto Z = logits.impl(), L = out.impl();
    std::vector<std::size_t> labels(classes.begin(), classes.end());
    active_tape()->record("cross_entropy", {Z}, out,
                          [Z, L, probs = std::move(probs), labels = std::move(labels), B, C] {
                            auto& g = Z->grad_buffer();
                            const Real factor = L->grad[0] / static_cast<Real>(B);
                            for (std::size_t b = 0; b < B; ++b)
                              for (std::size_t c = 0; c < C; ++c) {
                                const Real onehot = c == labels[b] ? Real(1) : Real(0);
                                g[b * C + c] += factor * (probs[b * C + c] - onehot);
                              }
                          });
  }
  return out;
}

// ---------------------------------------------------------------------------

void adam_step(std::span<Real> param, std::span<const Real> grad, std::span<Real> m, std::span<Real> v,
               std::uint64_t step, double lr, const AdamConfig& config) {
  if (step == 0) throw std::invalid_argument("adam_step: step counter starts at 1");
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  for (std::size_t k = 0; k < param.size(); ++k) {
    const double g = grad.empty() ? 0.0 : static_cast<double>(grad[k]);
    const double mk = config.beta1 * static_cast<double>(m[k]) + (1.0 - config.beta1) * g;
    const double vk = config.beta2 * static_cast<double>(v[k]) + (1.0 - config.beta2) * g * g;
    m[k] = static_cast<Real>(mk);
    v[k] = static_cast<Real>(vk);
    const double update = lr * (mk / c1) / (std::sqrt(vk / c2) + config.eps);
    param[k] = static_cast<Real>(static_cast<double>(param[k]) - update);
  }
}

Adam::Adam(std::vector<NamedTensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), Real(0));
    v_.emplace_back(p.tensor.numel(), Real(0));
  }
}

void Adam::step(double lr) {
  ++steps_;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k].tensor;
    adam_step(p.values(), p.grad(), m_[k], v_[k], steps_, lr, config_);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::vector<NamedTensor> Adam::state() const {
  std::vector<NamedTensor> out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    out.push_back({"adam.m." + params_[k].name, Tensor(params_[k].tensor.shape(), m_[k])});
    out.push_back({"adam.v." + params_[k].name, Tensor(params_[k].tensor.shape(), v_[k])});
  }
  return out;
}

void Adam::load_state(std::span<const NamedTensor> state, std::uint64_t steps) {
  std::map<std::string, const Tensor*, std::less<>> by_name;
  for (const auto& nt : state) by_name[nt.name] = &nt.tensor;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    for (auto [prefix, dst] : {std::pair{"adam.m.", &m_[k]}, std::pair{"adam.v.", &v_[k]}}) {
      auto it = by_name.find(prefix + params_[k].name);
      if (it == by_name.end() || it->second->numel() != dst->size()) {
        throw CheckpointError("optimizer state for '" + params_[k].name + "' is missing or has the wrong size");
      }
      auto values = it->second->values();
      dst->assign(values.begin(), values.end());
    }
  }
  steps_ = steps;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
}

TrainingData prepare_data(const Dataset& raw_train, const Dataset& raw_val, NormalizationMode mode,
                          const NormStats* stats) {
  TrainingData out;
  out.mode = mode;
  out.norm = stats ? *stats : compute_norm_stats(raw_train);
  out.train = normalize(raw_train, out.norm, mode);
  out.val = normalize(raw_val, out.norm, mode);
  return out;
}

namespace {

std::vector<NamedTensor> trainable(const TSTModel& model, bool head_only) {
  std::vector<NamedTensor> out;
  for (auto& p : model.parameters())
    if (!head_only || TSTModel::is_head_parameter(p.name)) out.push_back(p);
  return out;
}

std::vector<NoiseMask> batch_masks(const Batch& batch, std::size_t vars, const MaskSpec& spec, std::uint64_t epoch) {
  std::vector<NoiseMask> masks;
  for (std::size_t b = 0; b < batch.indices.size(); ++b) {
    masks.push_back(sample_mask(batch.lengths[b], vars, spec, epoch, batch.indices[b]));
  }
  return masks;
}

Tensor masked_input(const Tensor& x, const std::vector<NoiseMask>& masks) {
  Tensor out = x.detach();
  const std::size_t T = x.dim(1), m = x.dim(2);
  auto v = out.values();
  for (std::size_t b = 0; b < masks.size(); ++b)
    for (std::size_t t = 0; t < masks[b].steps() && t < T; ++t)
      for (std::size_t i = 0; i < m; ++i)
        if (masks[b].masked(t, i)) v[(b * T + t) * m + i] = Real(0);
  return out;
}

std::size_t argmax_row(std::span<const Real> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::vector<std::size_t> all_indices(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

Trainer::Trainer(TSTModel model, TrainingData data, TrainConfig config, std::optional<MaskSpec> mask)
    : model_(std::move(model)),
      data_(std::move(data)),
      config_(config),
      mask_(mask),
      optimizer_(trainable(model_, config.freeze_all_but_head), config.adam),
      rng_(make_rng(derive_seed(config.seed, kLoopStream))) {
  config_.validate();
  if (config_.objective != objective_for(model_.config().head.kind)) {
    throw std::invalid_argument("objective " + std::string(to_string(config_.objective)) + " does not match the " +
                                std::string(to_string(model_.config().head.kind)) + " head");
  }
  if (config_.objective == Objective::MaskedMse) {
    if (!mask_) throw std::invalid_argument("pretraining needs a mask specification");
    mask_->validate();
  }
  if (data_.train.size() == 0) throw std::invalid_argument("training set is empty");
  if (data_.train.dims != model_.config().input_dim) {
    throw std::invalid_argument("input has m=" + std::to_string(data_.train.dims) + " variables but the model expects m=" +
                                std::to_string(model_.config().input_dim));
  }
  if (config_.objective != Objective::MaskedMse && data_.train.labeled_count() != data_.train.size()) {
    throw std::invalid_argument("supervised training needs a label on every training sample");
  }
}

Trainer Trainer::resume(const Checkpoint& ck, TrainingData data, TrainConfig config) {
  Trainer t(ck.build_model(), std::move(data), config, ck.mask);
  t.optimizer_.load_state(ck.aux, ck.train.optimizer_step);
  t.rng_ = deserialize_rng(ck.train.rng_state);
  t.epoch_ = ck.train.epoch;
  t.state_ = ck.train;
  t.best_.clear();
  for (const auto& nt : ck.aux)
    if (nt.name.rfind("best.", 0) == 0) t.best_.push_back({nt.name.substr(5), nt.tensor.detach()});
  return t;
}

double Trainer::batch_loss(const Batch& batch, Mode mode, Rng* rng, std::uint64_t mask_epoch, double* metric_sum,
                           std::size_t* metric_count) {
  const std::size_t B = batch.indices.size();
  Tensor input = batch.x;
  std::vector<NoiseMask> masks;
  if (config_.objective == Objective::MaskedMse) {
    masks = batch_masks(batch, model_.config().input_dim, *mask_, mask_epoch);
    input = masked_input(batch.x, masks);
  }

  Tensor z;
  if (config_.freeze_all_but_head || mode == Mode::Eval) {
    NoGradScope frozen;
    z = model_.encode(input, batch.lengths, Mode::Eval);
  } else {
    z = model_.encode(input, batch.lengths, mode, rng);
  }

  Tensor loss;
  switch (config_.objective) {
    case Objective::MaskedMse: {
      std::size_t skipped = 0;
      loss = masked_mse_loss(model_.head_reconstruct(z), batch.x, masks, batch.lengths, &skipped);
      if (metric_sum) {
        *metric_sum += static_cast<double>(loss.item()) * static_cast<double>(B - skipped);
        *metric_count += B - skipped;
      }
      break;
    }
    case Objective::SquaredError: {
      Tensor pred = model_.head_predict(z, batch.lengths);
      loss = squared_error_loss(pred, batch.targets);
      if (metric_sum) {
        *metric_sum += static_cast<double>(loss.item()) * static_cast<double>(B);
        *metric_count += B * batch.targets.dim(1);
      }
      break;
    }
    case Objective::CrossEntropy: {
      Tensor logits = model_.head_predict(z, batch.lengths);
      loss = cross_entropy_loss(logits, batch.classes);
      if (metric_sum) {
        auto v = logits.values();
        const std::size_t C = logits.dim(1);
        for (std::size_t b = 0; b < B; ++b) *metric_sum += argmax_row(v.subspan(b * C, C)) == batch.classes[b] ? 1.0 : 0.0;
        *metric_count += B;
      }
      break;
    }
  }
  const double value = static_cast<double>(loss.item());
  if (!std::isfinite(value)) {
    throw NumericError("non-finite loss at epoch " + std::to_string(epoch_ + 1));
  }
  // A batch whose masks hide nothing real has no gradient to follow.
  if (mode == Mode::Train && loss.requires_grad()) {
    backward(loss);
    double lr = config_.lr;
    if (config_.warmup_steps > 0) {
      lr *= std::min(1.0, static_cast<double>(optimizer_.steps() + 1) / static_cast<double>(config_.warmup_steps));
    }
    optimizer_.step(lr);
    optimizer_.zero_grad();
  }
  return value;
}

void Trainer::validate_epoch(EpochResult& result) {
  const Dataset& val = data_.val;
  if (val.size() == 0) return;
  NoGradScope no_grad;
  auto idx = all_indices(val);
  const std::size_t steps = model_.config().max_len;
  double metric_sum = 0.0, loss_sum = 0.0;
  std::size_t metric_count = 0;
  for (std::size_t start = 0; start < idx.size(); start += config_.batch_size) {
    const std::size_t end = std::min(idx.size(), start + config_.batch_size);
    Batch batch = pad_and_batch(val, std::span(idx).subspan(start, end - start), steps);
    loss_sum += batch_loss(batch, Mode::Eval, nullptr, kEvaluationMaskEpoch, &metric_sum, &metric_count) *
                static_cast<double>(end - start);
  }
  result.val_loss = loss_sum / static_cast<double>(idx.size());
  double metric = metric_count ? metric_sum / static_cast<double>(metric_count) : 0.0;
  if (config_.objective == Objective::SquaredError) metric = std::sqrt(metric);
  result.val_metric = metric;
}

EpochResult Trainer::run_epoch() {
  EpochResult result;
  result.epoch = epoch_ + 1;
  auto order = all_indices(data_.train);
  shuffle(std::span<std::size_t>(order), rng_);
  const std::size_t steps = model_.config().max_len;
  double total = 0.0, masked_sum = 0.0;
  std::size_t masked_count = 0;
  const bool masked = config_.objective == Objective::MaskedMse;
  for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
    const std::size_t end = std::min(order.size(), start + config_.batch_size);
    Batch batch = pad_and_batch(data_.train, std::span(order).subspan(start, end - start), steps);
    Tape tape;
    TapeScope scope(tape);
    total += batch_loss(batch, Mode::Train, &rng_, epoch_, masked ? &masked_sum : nullptr,
                        masked ? &masked_count : nullptr) *
             static_cast<double>(end - start);
  }
  // Masked MSE averages over the samples that had something hidden.
  if (masked) {
    result.train_loss = masked_count ? masked_sum / static_cast<double>(masked_count) : 0.0;
  } else {
    result.train_loss = total / static_cast<double>(order.size());
  }
  validate_epoch(result);
  ++epoch_;

  const bool has_val = result.val_metric.has_value();
  const double metric = has_val ? *result.val_metric : result.train_loss;
  const double loss = has_val ? *result.val_loss : result.train_loss;
  bool improved = !state_.has_best;
  if (!improved) {
    if (higher_is_better(config_.objective) && has_val) {
      improved = metric > state_.best_metric || (metric == state_.best_metric && loss < state_.best_loss);
    } else {
      improved = metric < state_.best_metric;
    }
  }
  if (improved) {
    state_.has_best = true;
    state_.best_metric = metric;
    state_.best_loss = loss;
    state_.best_epoch = epoch_;
    state_.stale_epochs = 0;
    best_ = model_.state();
  } else {
    ++state_.stale_epochs;
  }
  result.improved = improved;
  return result;
}

bool Trainer::finished() const {
  if (epoch_ >= config_.epochs) return true;
  return config_.patience > 0 && data_.val.size() > 0 && state_.stale_epochs >= config_.patience;
}

std::vector<EpochResult> Trainer::fit(const RecordSink& sink) {
  std::vector<EpochResult> history;
  while (!finished()) {
    auto r = run_epoch();
    if (sink) {
      sink({r.epoch, "train", "loss", r.train_loss, dataset_name, model_name});
      if (r.val_loss) sink({r.epoch, "val", "loss", *r.val_loss, dataset_name, model_name});
      if (r.val_metric) {
        sink({r.epoch, "val", std::string(metric_name(config_.objective)), *r.val_metric, dataset_name, model_name});
      }
    }
    spdlog::debug("epoch {} train_loss {:.6g}{}", r.epoch, r.train_loss,
                  r.val_metric ? fmt::format(" val_{} {:.6g}", metric_name(config_.objective), *r.val_metric) : "");
    history.push_back(r);
  }
  return history;
}

TSTModel Trainer::best_model() const {
  TSTModel m = model_.clone();
  if (!best_.empty()) m.load_state(best_);
  return m;
}

Checkpoint Trainer::best_checkpoint() const {
  Checkpoint ck;
  ck.model = model_.config();
  ck.tensors = best_.empty() ? model_.state() : best_;
  ck.norm = data_.norm;
  ck.norm_mode = data_.mode;
  ck.train = state_;
  ck.train.epoch = epoch_;
  ck.train.optimizer_step = optimizer_.steps();
  ck.train.rng_state = serialize_rng(rng_);
  ck.mask = mask_;
  if (config_.objective == Objective::CrossEntropy) ck.class_names = data_.train.class_names;
  ck.meta["objective"] = std::string(to_string(config_.objective));
  ck.meta["lr"] = std::to_string(config_.lr);
  ck.meta["batch_size"] = std::to_string(config_.batch_size);
  ck.meta["seed"] = std::to_string(config_.seed);
  ck.meta["freeze_all_but_head"] = config_.freeze_all_but_head ? "true" : "false";
  if (!dataset_name.empty()) ck.meta["dataset"] = dataset_name;
  return ck;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck = best_checkpoint();
  ck.tensors = model_.state();
  ck.aux = optimizer_.state();
  for (const auto& nt : best_) ck.aux.push_back({"best." + nt.name, nt.tensor});
  return ck;
}

// ---------------------------------------------------------------------------

namespace {

Dataset without_labels(const Dataset& ds) {
  Dataset out = ds;
  out.task = TaskKind::Unlabeled;
  out.class_names.clear();
  for (auto& s : out.samples) {
    s.class_index.reset();
    s.target.clear();
  }
  return out;
}

RunResult run(Trainer& trainer, const RecordSink& sink) {
  RunResult r;
  r.history = trainer.fit(sink);
  r.best = trainer.best_checkpoint();
  return r;
}

}  // namespace

RunResult pretrain(const Dataset& raw_train, const Dataset& raw_val, ModelConfig model, const TrainConfig& config,
                   const MaskSpec& mask, NormalizationMode mode, const RecordSink& sink) {
  model.head = HeadSpec{HeadKind::Reconstruction, 0};
  TrainConfig cfg = config;
  cfg.objective = Objective::MaskedMse;
  cfg.freeze_all_but_head = false;
  Trainer trainer(TSTModel(model, cfg.seed), prepare_data(without_labels(raw_train), without_labels(raw_val), mode), cfg,
                  mask);
  trainer.dataset_name = raw_train.name;
  trainer.model_name = "pretrain";
  return run(trainer, sink);
}

RunResult train_supervised(const Dataset& raw_train, const Dataset& raw_val, const ModelConfig& model,
                           const TrainConfig& config, NormalizationMode mode, const RecordSink& sink) {
  TrainConfig cfg = config;
  cfg.objective = objective_for(model.head.kind);
  Trainer trainer(TSTModel(model, cfg.seed), prepare_data(raw_train, raw_val, mode), cfg);
  trainer.dataset_name = raw_train.name;
  trainer.model_name = "supervised";
  return run(trainer, sink);
}

RunResult finetune(const Checkpoint& init, const Dataset& raw_train, const Dataset& raw_val, HeadSpec head,
                   const TrainConfig& config, const RecordSink& sink) {
  if (raw_train.dims != init.model.input_dim) {
    throw CheckpointError("checkpoint was built with m=" + std::to_string(init.model.input_dim) + " but the data has m=" +
                          std::to_string(raw_train.dims));
  }
  TSTModel model = init.build_model();
  model.reset_head(head, config.seed);
  TrainConfig cfg = config;
  cfg.objective = objective_for(head.kind);
  Trainer trainer(std::move(model), prepare_data(raw_train, raw_val, init.norm_mode, &init.norm), cfg);
  trainer.dataset_name = raw_train.name;
  trainer.model_name = cfg.freeze_all_but_head ? "frozen" : "finetune";
  return run(trainer, sink);
}

// ---------------------------------------------------------------------------

EvalReport evaluate(TSTModel& model, const Dataset& data, Objective objective, const MaskSpec* mask,
                    std::size_t batch_size) {
  if (objective != objective_for(model.config().head.kind)) {
    throw std::invalid_argument("cannot score a " + std::string(to_string(model.config().head.kind)) + " head with " +
                                std::string(to_string(objective)));
  }
  if (objective == Objective::MaskedMse && !mask) throw std::invalid_argument("reconstruction scoring needs a mask");
  if (data.size() == 0) throw std::invalid_argument("evaluation set is empty");
  NoGradScope no_grad;
  EvalReport report;
  report.objective = objective;
  report.metric = metric_name(objective);
  report.count = data.size();
  auto idx = all_indices(data);
  const std::size_t steps = model.config().max_len;
  double loss_sum = 0.0, masked_sum = 0.0;
  std::size_t masked_count = 0;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t end = std::min(idx.size(), start + batch_size);
    const std::size_t B = end - start;
    Batch batch = pad_and_batch(data, std::span(idx).subspan(start, B), steps);
    report.indices.insert(report.indices.end(), batch.indices.begin(), batch.indices.end());
    if (objective == Objective::MaskedMse) {
      auto masks = batch_masks(batch, model.config().input_dim, *mask, kEvaluationMaskEpoch);
      Tensor z = model.encode(masked_input(batch.x, masks), batch.lengths, Mode::Eval);
      std::size_t skipped = 0;
      Tensor loss = masked_mse_loss(model.head_reconstruct(z), batch.x, masks, batch.lengths, &skipped);
      masked_sum += static_cast<double>(loss.item()) * static_cast<double>(B - skipped);
      masked_count += B - skipped;
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(B);
      continue;
    }
    Tensor out = model.forward(batch.x, batch.lengths, Mode::Eval);
    const std::size_t n = out.dim(1);
    auto v = out.values();
    for (std::size_t b = 0; b < B; ++b) report.outputs.emplace_back(v.begin() + b * n, v.begin() + (b + 1) * n);
    if (objective == Objective::SquaredError) {
      if (!batch.targets.defined()) throw std::invalid_argument("regression scoring needs a target on every sample");
      loss_sum += static_cast<double>(squared_error_loss(out, batch.targets).item()) * static_cast<double>(B);
      auto y = batch.targets.values();
      report.flat_pred.insert(report.flat_pred.end(), v.begin(), v.end());
      report.flat_truth.insert(report.flat_truth.end(), y.begin(), y.end());
    } else {
      if (batch.classes.size() != B) throw std::invalid_argument("classification scoring needs a label on every sample");
      loss_sum += static_cast<double>(cross_entropy_loss(out, batch.classes).item()) * static_cast<double>(B);
      for (std::size_t b = 0; b < B; ++b) report.predicted.push_back(argmax_row(v.subspan(b * n, n)));
      report.truth_classes.insert(report.truth_classes.end(), batch.classes.begin(), batch.classes.end());
    }
  }
  report.loss = loss_sum / static_cast<double>(data.size());
  switch (objective) {
    case Objective::MaskedMse:
      report.value = masked_count ? masked_sum / static_cast<double>(masked_count) : 0.0;
      break;
    case Objective::SquaredError: report.value = rmse(report.flat_pred, report.flat_truth); break;
    case Objective::CrossEntropy: report.value = accuracy(report.predicted, report.truth_classes); break;
  }
  return report;
}

ImputationReport impute(TSTModel& model, const Dataset& data, MaskSource source, const MaskSpec& mask,
                        std::size_t batch_size) {
  if (model.config().head.kind != HeadKind::Reconstruction) {
    throw std::invalid_argument("imputation needs a model with a reconstruction head");
  }
  NoGradScope no_grad;
  ImputationReport report;
  auto idx = all_indices(data);
  const std::size_t steps = model.config().max_len, m = model.config().input_dim;
  std::vector<double> preds, truths;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t end = std::min(idx.size(), start + batch_size);
    Batch batch = pad_and_batch(data, std::span(idx).subspan(start, end - start), steps);
    std::vector<NoiseMask> masks;
    if (source == MaskSource::Generated) {
      masks = batch_masks(batch, m, mask, kEvaluationMaskEpoch);
    } else {
      for (std::size_t b = 0; b < batch.indices.size(); ++b) {
        const Sample& s = data.samples[batch.indices[b]];
        std::vector<std::uint8_t> bits(batch.lengths[b] * m, 1);
        for (std::size_t k = 0; k < bits.size() && k < s.missing.size(); ++k) bits[k] = s.missing[k] ? 0 : 1;
        masks.emplace_back(batch.lengths[b], m, std::move(bits));
      }
    }
    Tensor z = model.encode(masked_input(batch.x, masks), batch.lengths, Mode::Eval);
    Tensor rec = model.head_reconstruct(z);
    auto r = rec.values();
    auto x = batch.x.values();
    for (std::size_t b = 0; b < masks.size(); ++b)
      for (auto [t, i] : masks[b].masked_indices()) {
        const std::size_t k = (b * steps + t) * m + i;
        report.values.push_back({batch.indices[b], t, i, static_cast<double>(x[k]), static_cast<double>(r[k])});
        preds.push_back(static_cast<double>(r[k]));
        truths.push_back(static_cast<double>(x[k]));
      }
  }
  report.rmse = source == MaskSource::Generated && !preds.empty() ? rmse(preds, truths)
                                                                  : std::numeric_limits<double>::quiet_NaN();
  return report;
}

}  // namespace tst
