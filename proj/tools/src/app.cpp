#include "tst/cli/app.hpp"

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "tst/checkpoint.hpp"
#include "tst/cli/config.hpp"
#include "tst/cli/presets.hpp"
#include "tst/data.hpp"
#include "tst/masking.hpp"
#include "tst/metrics.hpp"
#include "tst/ops.hpp"
#include "tst/train.hpp"

namespace fs = std::filesystem;

namespace tst::cli {

namespace {

using Layer = Config::Layer;

/// Options shared by the training-style subcommands; each one is a shortcut
/// for a config key and lands in the command-line layer.
struct Shortcut {
  const char* flag;
  const char* key;
  const char* help;
};

constexpr Shortcut kShortcuts[] = {
    {"--data", "run.data", "dataset file"},
    {"--test", "run.test", "test dataset file"},
    {"--out", "run.output", "output directory"},
    {"--seed", "run.seed", "base seed"},
    {"--preset", "run.preset", "hyperparameter preset"},
    {"--from", "run.from", "checkpoint to start from"},
    {"--threads", "run.threads", "worker threads"},
    {"--labels", "run.labels", "fraction of labels to use"},
    {"--val-ratio", "run.val_ratio", "training share of the train/validation split"},
    {"--normalization", "run.normalization", "stddev or variance"},
    {"--epochs", "train.epochs", "maximum epochs"},
    {"--batch-size", "train.batch_size", "batch size"},
    {"--lr", "train.lr", "learning rate"},
    {"--patience", "train.patience", "early-stopping patience"},
    {"--mask", "mask.variant", "mask variant"},
    {"--mask-source", "impute.source", "generated or missing"},
};

struct Invocation {
  std::string config_file;
  std::vector<std::string> assignments;
  std::map<std::string, std::string> shortcuts;
  bool freeze = false;
  bool verbose = false;
};

std::string keys_help() {
  std::ostringstream out;
  out << "\nConfig keys (set in a --config file section, with --set section.key=value, or a shortcut flag):\n";
  for (const auto& k : known_keys()) {
    out << "  " << std::left << std::setw(24) << k.key << " " << k.help;
    if (!k.fallback.empty()) out << " [" << k.fallback << "]";
    out << '\n';
  }
  out << "\nPrecedence: defaults < preset < config file < env (TST_OUTPUT_DIR, TST_THREADS) < command line.\n"
         "Exit codes: 0 ok, 2 usage, 3 data/checkpoint error, 4 numeric failure (non-finite loss).\n";
  return out.str();
}

void add_common(CLI::App* cmd, Invocation& inv, bool with_freeze) {
  cmd->add_option("-c,--config", inv.config_file, "config file (sectioned key = value)");
  cmd->add_option("--set", inv.assignments, "override a config key: section.key=value (repeatable)");
  for (const auto& s : kShortcuts) {
    cmd->add_option_function<std::string>(
        s.flag, [&inv, key = std::string(s.key)](const std::string& v) { inv.shortcuts[key] = v; },
        std::string(s.help) + " (" + s.key + ")");
  }
  if (with_freeze) cmd->add_flag("--freeze", inv.freeze, "train only the output head (train.freeze)");
  cmd->add_flag("-v,--verbose", inv.verbose, "log every epoch");
}

Config build_config(const Invocation& inv) {
  Config cfg;
  if (!inv.config_file.empty()) cfg.merge(Layer::File, read_ini(inv.config_file));
  cfg.load_env();
  for (const auto& [k, v] : inv.shortcuts) cfg.set(Layer::Cli, k, v);
  for (const auto& a : inv.assignments) {
    auto [k, v] = parse_assignment(a);
    cfg.set(Layer::Cli, k, v);
  }
  if (inv.freeze) cfg.set(Layer::Cli, "train.freeze", "true");
  return cfg;
}

Dataset load_dataset(const std::string& path) {
  if (path.empty()) throw UsageError("a dataset is required (--data or run.data)");
  if (!fs::exists(path)) throw std::runtime_error("dataset file '" + path + "' does not exist");
  if (fs::path(path).extension() == ".csv") return parse_csv_long(fs::path(path));
  return parse_archive(fs::path(path));
}

std::optional<Dataset> load_optional(const Config& cfg, const std::string& key) {
  const std::string path = cfg.get(key);
  if (path.empty()) return std::nullopt;
  return load_dataset(path);
}

/// Applies the preset layer once the dataset name is known.
void resolve_preset(Config& cfg, const std::string& dataset_name, PresetTable table) {
  std::string name = cfg.get("run.preset");
  if (name == "none") return;
  if (name == "auto") name = dataset_name;
  std::string used;
  cfg.reset(Layer::Preset);
  cfg.merge(Layer::Preset, preset_settings(name, table, &used));
  if (used != name) spdlog::info("no preset for '{}'; using {}", name, used);
}

ModelConfig model_config(const Config& cfg, std::size_t dims, std::size_t longest) {
  ModelConfig m;
  m.input_dim = dims;
  m.max_len = cfg.count("model.max_len") ? cfg.count("model.max_len") : longest;
  m.d_model = cfg.count("model.d_model");
  m.n_heads = cfg.count("model.n_heads");
  m.n_blocks = cfg.count("model.n_blocks");
  m.d_ff = cfg.count("model.d_ff");
  m.dropout = static_cast<Real>(cfg.real("model.dropout"));
  m.norm = parse_norm_kind(cfg.get("model.norm"));
  m.positional = parse_positional_encoding(cfg.get("model.positional"));
  m.projection = parse_projection_kind(cfg.get("model.projection"));
  m.conv_kernel = cfg.count("model.conv_kernel");
  m.conv_stride = cfg.count("model.conv_stride");
  m.conv_dilation = cfg.count("model.conv_dilation");
  return m;
}

TrainConfig train_config(const Config& cfg) {
  TrainConfig t;
  t.lr = cfg.real("train.lr");
  t.batch_size = cfg.count("train.batch_size");
  t.epochs = cfg.count("train.epochs");
  t.patience = cfg.count("train.patience");
  t.seed = static_cast<std::uint64_t>(cfg.integer("run.seed"));
  t.freeze_all_but_head = cfg.flag("train.freeze");
  t.warmup_steps = cfg.count("train.warmup_steps");
  t.adam.beta1 = cfg.real("train.beta1");
  t.adam.beta2 = cfg.real("train.beta2");
  t.adam.eps = cfg.real("train.eps");
  t.validate();
  return t;
}

MaskSpec mask_spec(const Config& cfg) {
  MaskSpec m;
  m.variant = parse_mask_variant(cfg.get("mask.variant"));
  m.ratio = cfg.real("mask.ratio");
  m.mean_masked_length = cfg.real("mask.mean_length");
  m.forecast_fraction = cfg.real("mask.forecast_fraction");
  m.seed = static_cast<std::uint64_t>(cfg.get("mask.seed").empty() ? cfg.integer("run.seed") : cfg.integer("mask.seed"));
  m.validate();
  return m;
}

NormalizationMode normalization(const Config& cfg) { return parse_normalization_mode(cfg.get("run.normalization")); }

/// Output directory with the effective config and a fresh metrics log.
class RunOutput {
 public:
  explicit RunOutput(const Config& cfg) : dir_(cfg.get("run.output")) {
    fs::create_directories(dir_);
    std::ofstream ini(dir_ / "effective.ini");
    ini << "# effective configuration of this run; pass it back with --config to repeat it\n";
    write_ini(cfg.effective(), ini);
    metrics_.open(dir_ / "metrics.jsonl", std::ios::trunc);
  }

  const fs::path& dir() const { return dir_; }
  RecordSink sink() {
    return [this](const MetricRecord& r) { record(r); };
  }
  void record(const MetricRecord& r) {
    metrics_ << r.to_json() << '\n';
    metrics_.flush();
  }

 private:
  fs::path dir_;
  std::ofstream metrics_;
};

void apply_threads(const Config& cfg) {
  const auto threads = cfg.integer("run.threads");
  if (threads < 1) throw UsageError("run.threads must be >= 1");
  set_num_threads(static_cast<int>(threads));
}

HeadSpec head_for(const Dataset& ds) {
  switch (ds.task) {
    case TaskKind::Classification: return {HeadKind::Classification, ds.class_names.size()};
    case TaskKind::Regression: return {HeadKind::Regression, ds.target_dims()};
    case TaskKind::Unlabeled: break;
  }
  throw std::runtime_error("dataset '" + ds.name + "' has no labels; supervised training needs a class or target column");
}

std::pair<Dataset, Dataset> split(const Config& cfg, const Dataset& train) {
  const double ratio = cfg.real("run.val_ratio");
  if (ratio == 0.0) {
    Dataset empty;
    empty.name = train.name;
    empty.dims = train.dims;
    empty.task = train.task;
    empty.class_names = train.class_names;
    return {train, empty};
  }
  return split_train_val(train, ratio, static_cast<std::uint64_t>(cfg.integer("run.seed")));
}

Dataset with_label_fraction(const Config& cfg, const Dataset& train) {
  const double fraction = cfg.real("run.labels");
  if (fraction >= 1.0) return train;
  return labeled_only(subset_labels(train, fraction, static_cast<std::uint64_t>(cfg.integer("run.seed"))));
}

void write_predictions(const fs::path& path, const EvalReport& report, const Dataset& data) {
  std::ofstream out(path);
  out << std::setprecision(17);
  if (report.objective == Objective::CrossEntropy) {
    out << "sample,id,predicted,truth\n";
    for (std::size_t k = 0; k < report.predicted.size(); ++k) {
      const auto idx = report.indices[k];
      out << idx << ',' << data.samples[idx].id << ',' << data.class_names.at(report.predicted[k]) << ','
          << data.class_names.at(report.truth_classes[k]) << '\n';
    }
  } else if (report.objective == Objective::SquaredError) {
    out << "sample,id,output,predicted,truth\n";
    const std::size_t n = report.outputs.empty() ? 0 : report.outputs.front().size();
    for (std::size_t k = 0; k < report.indices.size(); ++k)
      for (std::size_t j = 0; j < n; ++j) {
        out << report.indices[k] << ',' << data.samples[report.indices[k]].id << ',' << j << ','
            << report.flat_pred[k * n + j] << ',' << report.flat_truth[k * n + j] << '\n';
      }
  }
}

/// Scores the best model on the test split and logs the metric.
void score_test(RunOutput& output, const Config& cfg, const Checkpoint& ck, const Dataset& raw_test, std::ostream& out,
                std::size_t epoch) {
  TSTModel model = ck.build_model();
  const Dataset test = normalize(raw_test, ck.norm, ck.norm_mode);
  const Objective objective = objective_for(ck.model.head.kind);
  const MaskSpec* mask = ck.mask ? &*ck.mask : nullptr;
  EvalReport report = evaluate(model, test, objective, mask, std::max<std::size_t>(1, cfg.count("train.batch_size")));
  output.record({epoch, "test", report.metric, report.value, raw_test.name, ""});
  if (cfg.flag("run.dump")) write_predictions(output.dir() / "predictions.csv", report, test);
  out << "test " << report.metric << " = " << std::setprecision(6) << report.value << '\n';
}

std::size_t longest(const Dataset& a, const std::optional<Dataset>& b) {
  return std::max(a.max_length(), b ? b->max_length() : 0);
}

int report_run(RunOutput& output, const RunResult& result, std::ostream& out) {
  const fs::path ck_path = output.dir() / "checkpoint.tst";
  save_checkpoint(result.best, ck_path);
  out << "epochs " << result.history.size() << ", best epoch " << result.best.train.best_epoch << ", checkpoint "
      << ck_path.string() << '\n';
  return kSuccess;
}

// ---------------------------------------------------------------------------

int cmd_pretrain(Config& cfg, std::ostream& out) {
  Dataset raw = load_dataset(cfg.get("run.data"));
  auto test = load_optional(cfg, "run.test");
  resolve_preset(cfg, raw.name, PresetTable::Unsupervised);
  apply_threads(cfg);
  ModelConfig model = model_config(cfg, raw.dims, longest(raw, test));
  model.head = {HeadKind::Reconstruction, 0};
  model.validate();
  const TrainConfig train = train_config(cfg);
  const MaskSpec mask = mask_spec(cfg);
  RunOutput output(cfg);
  auto [tr, val] = split(cfg, raw);
  RunResult result = pretrain(tr, val, model, train, mask, normalization(cfg), output.sink());
  report_run(output, result, out);
  if (test) score_test(output, cfg, result.best, *test, out, result.history.size());
  return kSuccess;
}

int cmd_train(Config& cfg, std::ostream& out) {
  Dataset raw = load_dataset(cfg.get("run.data"));
  auto test = load_optional(cfg, "run.test");
  resolve_preset(cfg, raw.name, PresetTable::Supervised);
  apply_threads(cfg);
  ModelConfig model = model_config(cfg, raw.dims, longest(raw, test));
  model.head = head_for(raw);
  model.validate();
  const TrainConfig train = train_config(cfg);
  RunOutput output(cfg);
  auto [tr, val] = split(cfg, raw);
  RunResult result = train_supervised(with_label_fraction(cfg, tr), val, model, train, normalization(cfg), output.sink());
  report_run(output, result, out);
  if (test) score_test(output, cfg, result.best, *test, out, result.history.size());
  return kSuccess;
}

Checkpoint load_from(const Config& cfg) {
  const std::string from = cfg.get("run.from");
  if (from.empty()) throw UsageError("a checkpoint is required (--from or run.from)");
  return load_checkpoint(from);
}

int cmd_finetune(Config& cfg, std::ostream& out) {
  Checkpoint init = load_from(cfg);
  Dataset raw = load_dataset(cfg.get("run.data"));
  auto test = load_optional(cfg, "run.test");
  apply_threads(cfg);
  if (raw.dims != init.model.input_dim) {
    throw CheckpointError("checkpoint was built with m=" + std::to_string(init.model.input_dim) +
                          " but the dataset has m=" + std::to_string(raw.dims));
  }
  const TrainConfig train = train_config(cfg);
  RunOutput output(cfg);
  auto [tr, val] = split(cfg, raw);
  RunResult result = finetune(init, with_label_fraction(cfg, tr), val, head_for(raw), train, output.sink());
  report_run(output, result, out);
  if (test) score_test(output, cfg, result.best, *test, out, result.history.size());
  return kSuccess;
}

int cmd_evaluate(Config& cfg, std::ostream& out) {
  Checkpoint ck = load_from(cfg);
  const std::string path = cfg.get("run.test").empty() ? cfg.get("run.data") : cfg.get("run.test");
  Dataset raw = load_dataset(path);
  if (raw.dims != ck.model.input_dim) {
    throw CheckpointError("checkpoint was built with m=" + std::to_string(ck.model.input_dim) +
                          " but the dataset has m=" + std::to_string(raw.dims));
  }
  apply_threads(cfg);
  RunOutput output(cfg);
  score_test(output, cfg, ck, raw, out, ck.train.epoch);
  return kSuccess;
}

int cmd_impute(Config& cfg, std::ostream& out) {
  Checkpoint ck = load_from(cfg);
  const std::string path = cfg.get("run.test").empty() ? cfg.get("run.data") : cfg.get("run.test");
  Dataset raw = load_dataset(path);
  if (raw.dims != ck.model.input_dim) {
    throw CheckpointError("checkpoint was built with m=" + std::to_string(ck.model.input_dim) +
                          " but the dataset has m=" + std::to_string(raw.dims));
  }
  apply_threads(cfg);
  const std::string source_name = cfg.get("impute.source");
  MaskSource source;
  if (source_name == "generated") source = MaskSource::Generated;
  else if (source_name == "missing") source = MaskSource::Missing;
  else throw UsageError("impute.source must be generated or missing, got '" + source_name + "'");
  // Mask settings given explicitly win over the ones stored with the checkpoint.
  MaskSpec mask = ck.mask.value_or(mask_spec(cfg));
  for (const char* key : {"mask.variant", "mask.ratio", "mask.mean_length", "mask.forecast_fraction", "mask.seed"})
    if (cfg.is_set_above_defaults(key)) {
      mask = mask_spec(cfg);
      break;
    }

  RunOutput output(cfg);
  TSTModel model = ck.build_model();
  const Dataset data = normalize(raw, ck.norm, ck.norm_mode);
  ImputationReport report = impute(model, data, source, mask, cfg.count("train.batch_size"));

  std::ofstream dump(output.dir() / "imputation.csv");
  dump << std::setprecision(17) << "sample,id,step,dim,truth,pred,truth_raw,pred_raw\n";
  for (const auto& v : report.values) {
    dump << v.sample << ',' << data.samples[v.sample].id << ',' << v.step << ',' << v.dim << ',' << v.truth << ','
         << v.pred << ',' << denormalize_value(v.truth, v.dim, ck.norm, ck.norm_mode) << ','
         << denormalize_value(v.pred, v.dim, ck.norm, ck.norm_mode) << '\n';
  }
  nlohmann::json summary = {{"cells", report.values.size()}, {"mask", std::string(to_string(mask.variant))},
                            {"source", source_name}};
  if (std::isfinite(report.rmse)) {
    summary["masked_rmse"] = report.rmse;
    output.record({ck.train.epoch, "test", "masked_rmse", report.rmse, raw.name, "impute"});
  }
  std::ofstream(output.dir() / "imputation.json") << summary.dump(2) << '\n';
  out << "imputed " << report.values.size() << " cells";
  if (std::isfinite(report.rmse)) out << ", masked RMSE = " << std::setprecision(6) << report.rmse;
  out << '\n';
  return kSuccess;
}

int cmd_masks(Config& cfg, std::ostream& out) {
  const std::size_t steps = cfg.count("masks.steps"), vars = cfg.count("masks.vars"), n = cfg.count("masks.count");
  if (steps == 0 || vars == 0) throw UsageError("masks.steps and masks.vars must be positive");
  std::vector<MaskVariant> variants;
  const std::string list = cfg.get("masks.variants");
  if (list == "all") {
    variants = {MaskVariant::SeparateStateful, MaskVariant::SeparateBernoulli, MaskVariant::SyncStateful,
                MaskVariant::SyncBernoulli, MaskVariant::Forecast};
  } else {
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) variants.push_back(parse_mask_variant(item));
  }
  RunOutput output(cfg);
  MaskSpec base = mask_spec(cfg);
  for (MaskVariant v : variants) {
    MaskSpec spec = base;
    spec.variant = v;
    spec.validate();
    std::ofstream file(output.dir() / ("masks_" + std::string(to_string(v)) + ".txt"));
    std::size_t masked = 0;
    for (std::size_t k = 0; k < n; ++k) {
      NoiseMask mask = sample_mask(steps, vars, spec, 0, k);
      if (k) file << '\n';
      mask.write_text(file);
      masked += mask.masked_count();
    }
    const double fraction = n ? static_cast<double>(masked) / static_cast<double>(n * steps * vars) : 0.0;
    output.record({0, "masks", std::string(to_string(v)) + "_masked_fraction", fraction, "", ""});
    out << to_string(v) << ": " << n << " fixtures, masked fraction " << std::setprecision(6) << fraction << '\n';
  }
  return kSuccess;
}

int cmd_info(Config& cfg, std::ostream& out) {
  out << dataset_manifest(load_dataset(cfg.get("run.data"))) << '\n';
  return kSuccess;
}

int cmd_diff(const std::string& a, const std::string& b, std::ostream& out) {
  const auto diffs = diff_checkpoints(load_checkpoint(a), load_checkpoint(b));
  std::size_t non_head = 0;
  for (const auto& d : diffs) {
    out << d.name << ' ' << d.max_abs << '\n';
    non_head += !TSTModel::is_head_parameter(d.name);
  }
  out << diffs.size() << " tensors differ (" << non_head << " outside the head)\n";
  return kSuccess;
}

int cmd_compare(const std::string& path, const std::vector<std::string>& merges, bool higher, const std::string& split,
                const std::string& metric, std::ostream& out) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream text;
  text << in.rdbuf();
  ResultsMatrix results;
  if (fs::path(path).extension() == ".jsonl") {
    std::vector<MetricRecord> records;
    std::string line;
    while (std::getline(text, line))
      if (!line.empty()) records.push_back(MetricRecord::parse(line));
    results = results_from_records(records, split, metric);
  } else {
    results = parse_results_table(text.str());
  }
  for (const auto& spec : merges) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw UsageError("--merge expects A,B=Name, got '" + spec + "'");
    std::vector<std::string> names;
    std::stringstream ss(spec.substr(0, eq));
    std::string item;
    while (std::getline(ss, item, ',')) names.push_back(item);
    results = merge_columns(results, names, spec.substr(eq + 1), !higher);
  }
  out << comparison_table(results, !higher);
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transformer encoder for multivariate time series: pretraining, training and imputation", "tst"};
  app.footer(keys_help());
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  Invocation inv;
  struct Entry {
    CLI::App* cmd;
    std::function<int(Config&, std::ostream&)> fn;
  };
  std::vector<Entry> entries = {
      {app.add_subcommand("pretrain", "denoising pretraining on unlabeled series"), cmd_pretrain},
      {app.add_subcommand("train", "supervised training from scratch"), cmd_train},
      {app.add_subcommand("finetune", "supervised training starting from a checkpoint (--from)"), cmd_finetune},
      {app.add_subcommand("evaluate", "score a checkpoint on a dataset"), cmd_evaluate},
      {app.add_subcommand("impute", "predict hidden or missing values with a pretrained checkpoint"), cmd_impute},
      {app.add_subcommand("masks", "write mask fixtures for every variant"), cmd_masks},
      {app.add_subcommand("info", "print a dataset manifest"), cmd_info},
  };
  for (auto& e : entries) add_common(e.cmd, inv, e.cmd->get_name() == "finetune" || e.cmd->get_name() == "train");

  std::string diff_a, diff_b;
  auto* diff = app.add_subcommand("diff", "list tensors that differ between two checkpoints");
  diff->add_option("first", diff_a, "checkpoint")->required();
  diff->add_option("second", diff_b, "checkpoint")->required();

  std::string compare_path, compare_split = "test", compare_metric = "rmse";
  std::vector<std::string> merges;
  bool higher = false;
  auto* compare = app.add_subcommand("compare", "relative-difference and rank summary of a results grid");
  compare->add_option("results", compare_path, "delimited grid (dataset,model...) or metrics .jsonl")->required();
  compare->add_option("--merge", merges, "treat models as one, keeping the best per dataset: A,B=Name");
  compare->add_flag("--higher-better", higher, "scores are accuracies (higher is better)");
  compare->add_option("--split", compare_split, "record split to use with .jsonl input");
  compare->add_option("--metric", compare_metric, "record metric to use with .jsonl input");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run 'tst --help' for usage\n";
    return kUsage;
  }

  spdlog::set_level(inv.verbose ? spdlog::level::debug : spdlog::level::info);
  try {
    if (diff->parsed()) return cmd_diff(diff_a, diff_b, out);
    if (compare->parsed()) return cmd_compare(compare_path, merges, higher, compare_split, compare_metric, out);
    for (auto& e : entries) {
      if (!e.cmd->parsed()) continue;
      Config cfg = build_config(inv);
      return e.fn(cfg, out);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const ParseError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace tst::cli
