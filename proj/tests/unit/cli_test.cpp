#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "synthetic.hpp"
#include "tst/cli/app.hpp"
#include "tst/cli/config.hpp"
#include "tst/cli/presets.hpp"
#include "tst/metrics.hpp"

namespace fs = std::filesystem;
using namespace tst;
using namespace tst::cli;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome tst_cmd(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / ("tst_cli_" + std::to_string(::getpid()) + "_" + info->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  fs::path path(const std::string& name) const { return root_ / name; }

  std::string write(const Dataset& ds, const std::string& name) const {
    std::ofstream f(path(name));
    write_archive(ds, f);
    return path(name).string();
  }

  /// A small architecture so runs finish in well under a second.
  static std::vector<std::string> small(std::vector<std::string> args) {
    for (std::string s : {"--preset", "none", "--set", "model.d_model=16", "--set", "model.n_heads=4", "--set",
                          "model.d_ff=32", "--set", "model.n_blocks=1", "--batch-size", "8", "--seed", "3"})
      args.push_back(s);
    return args;
  }

  fs::path root_;
};

Dataset toy() { return tst::testing::toy_classification(6, 16, 4); }

Dataset sines(std::size_t m = 2) { return tst::testing::sinusoid_family(12, m, 16, 5); }

}  // namespace

TEST(Presets, GoodDefaultExpansion) {
  std::string used;
  Settings s = preset_settings("good-default", PresetTable::Unsupervised, &used);
  EXPECT_EQ(used, "good-default");
  EXPECT_EQ(s.at("model.d_model"), "128");
  EXPECT_EQ(s.at("model.d_ff"), "256");
  EXPECT_EQ(s.at("model.n_heads"), "16");
  EXPECT_EQ(s.at("model.n_blocks"), "3");
  EXPECT_EQ(s.at("train.batch_size"), "128");
  EXPECT_EQ(s.at("model.dropout"), "0.1");
  EXPECT_EQ(s.at("train.lr"), "0.001");
  EXPECT_EQ(s.at("model.positional"), "learnable");

  preset_settings("NoSuchDataset", PresetTable::Supervised, &used);
  EXPECT_EQ(used, "good-default");
}

TEST(Presets, DatasetTables) {
  auto jv = find_preset("JapaneseVowels", PresetTable::Supervised);
  ASSERT_TRUE(jv);
  EXPECT_EQ(jv->n_blocks, 3u);
  EXPECT_EQ(jv->n_heads, 8u);
  EXPECT_EQ(jv->d_model, 128u);
  EXPECT_EQ(jv->d_ff, 256u);
  auto ppg = find_preset("IEEEPPG", PresetTable::Unsupervised);
  ASSERT_TRUE(ppg);
  EXPECT_EQ(ppg->n_blocks, 4u);
  EXPECT_EQ(ppg->n_heads, 16u);
  EXPECT_EQ(find_preset("BeijingPM25Quality", PresetTable::Supervised)->d_model, 64u);
  EXPECT_EQ(find_preset("BeijingPM25Quality", PresetTable::Unsupervised)->d_model, 128u);
  EXPECT_FALSE(find_preset("NoSuchDataset", PresetTable::Supervised));
  for (const auto& name : preset_names()) {
    auto p = find_preset(name, PresetTable::Supervised);
    ASSERT_TRUE(p) << name;
    EXPECT_EQ(p->d_model % p->n_heads, 0u) << name;
  }
}

TEST(Config, IniParsing) {
  std::istringstream good("# comment\n; other comment\n[train]\nepochs = 7\n\n[model]\nnorm=layer\n");
  Settings s = parse_ini(good);
  EXPECT_EQ(s.at("train.epochs"), "7");
  EXPECT_EQ(s.at("model.norm"), "layer");

  std::istringstream unknown("[train]\nepochz = 7\n");
  EXPECT_THROW(parse_ini(unknown), UsageError);
  std::istringstream no_section("epochs = 7\n");
  EXPECT_THROW(parse_ini(no_section), UsageError);
  std::istringstream garbage("[train]\nepochs 7\n");
  EXPECT_THROW(parse_ini(garbage), UsageError);

  std::stringstream round;
  write_ini(s, round);
  EXPECT_EQ(parse_ini(round), s);

  EXPECT_EQ(parse_assignment("mask.ratio=0.2"), (std::pair<std::string, std::string>{"mask.ratio", "0.2"}));
  EXPECT_THROW(parse_assignment("mask.ratio"), UsageError);
  EXPECT_THROW(parse_assignment("nope.key=1"), UsageError);
}

TEST(Config, LayerPrecedence) {
  Config cfg;
  EXPECT_EQ(cfg.get("train.epochs"), "100");
  EXPECT_FALSE(cfg.is_set_above_defaults("train.epochs"));
  cfg.set(Config::Layer::Preset, "train.epochs", "1");
  cfg.set(Config::Layer::Cli, "train.epochs", "4");
  cfg.set(Config::Layer::File, "train.epochs", "2");
  EXPECT_EQ(cfg.count("train.epochs"), 4u);
  cfg.reset(Config::Layer::Cli);
  EXPECT_EQ(cfg.count("train.epochs"), 2u);
  EXPECT_TRUE(cfg.is_set_above_defaults("train.epochs"));
  EXPECT_THROW(cfg.set(Config::Layer::Cli, "train.nope", "1"), UsageError);

  ::setenv("TST_OUTPUT_DIR", "/tmp/from-env", 1);
  cfg.load_env();
  ::unsetenv("TST_OUTPUT_DIR");
  EXPECT_EQ(cfg.get("run.output"), "/tmp/from-env");
  cfg.set(Config::Layer::Cli, "run.output", "/tmp/from-cli");
  EXPECT_EQ(cfg.get("run.output"), "/tmp/from-cli");

  Settings eff = cfg.effective();
  EXPECT_EQ(eff.size(), known_keys().size());
}

TEST_F(CliTest, HelpDocumentsEveryKey) {
  for (std::vector<std::string> args : {std::vector<std::string>{"--help"}, {"pretrain", "--help"}, {"impute", "--help"}}) {
    Outcome r = tst_cmd(args);
    EXPECT_EQ(r.code, 0);
    for (const auto& k : known_keys()) EXPECT_NE(r.out.find(k.key), std::string::npos) << k.key;
  }
}

TEST_F(CliTest, MissingDatasetIsUsageError) {
  Outcome r = tst_cmd({"pretrain", "--out", path("run").string()});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_NE(r.err.find("dataset"), std::string::npos);

  Outcome absent = tst_cmd({"pretrain", "--data", path("absent.ts").string(), "--out", path("run").string()});
  EXPECT_EQ(absent.code, kDataError);

  EXPECT_EQ(tst_cmd({"frobnicate"}).code, kUsage);
  EXPECT_EQ(tst_cmd({}).code, kUsage);
}

TEST_F(CliTest, MalformedDatasetIsDataError) {
  std::ofstream(path("bad.ts")) << "@problemName x\n@univariate true\n@classLabel true a b\n@data\n1,2,oops:a\n";
  Outcome r = tst_cmd(small({"train", "--data", path("bad.ts").string(), "--out", path("run").string()}));
  EXPECT_EQ(r.code, kDataError);
  EXPECT_NE(r.err.find("data error"), std::string::npos);
}

TEST_F(CliTest, PresetExpandsAndExplicitKeysWin) {
  const std::string data = write(sines(), "sines.ts");
  Outcome r = tst_cmd({"pretrain", "--data", data, "--out", path("a").string(), "--preset", "good-default", "--epochs",
                       "1", "--set", "model.d_ff=64"});
  ASSERT_EQ(r.code, 0) << r.err;
  Settings eff = read_ini(path("a") / "effective.ini");
  EXPECT_EQ(eff.at("model.d_model"), "128");
  EXPECT_EQ(eff.at("model.n_heads"), "16");
  EXPECT_EQ(eff.at("model.n_blocks"), "3");
  EXPECT_EQ(eff.at("train.batch_size"), "128");
  EXPECT_EQ(eff.at("model.d_ff"), "64");
}

TEST_F(CliTest, SameSeedSameMetrics) {
  const std::string data = write(sines(), "sines.ts");
  for (const char* dir : {"a", "b"}) {
    Outcome r = tst_cmd(small({"pretrain", "--data", data, "--out", path(dir).string(), "--epochs", "3"}));
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const std::string log = slurp(path("a") / "metrics.jsonl");
  ASSERT_FALSE(log.empty());
  EXPECT_EQ(log, slurp(path("b") / "metrics.jsonl"));
  Outcome diff = tst_cmd({"diff", (path("a") / "checkpoint.tst").string(), (path("b") / "checkpoint.tst").string()});
  EXPECT_EQ(diff.code, 0);
  EXPECT_NE(diff.out.find("0 tensors differ"), std::string::npos) << diff.out;
}

TEST_F(CliTest, EffectiveConfigReproducesRun) {
  const std::string data = write(toy(), "toy.ts");
  Outcome first = tst_cmd(small({"train", "--data", data, "--out", path("a").string(), "--epochs", "3"}));
  ASSERT_EQ(first.code, 0) << first.err;
  Outcome again = tst_cmd({"train", "--config", (path("a") / "effective.ini").string(), "--out", path("b").string()});
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(slurp(path("a") / "metrics.jsonl"), slurp(path("b") / "metrics.jsonl"));
  Settings a = read_ini(path("a") / "effective.ini"), b = read_ini(path("b") / "effective.ini");
  a.erase("run.output");
  b.erase("run.output");
  EXPECT_EQ(a, b);
}

TEST_F(CliTest, FreezeLeavesEncoderUntouched) {
  const std::string unlabeled = write(sines(1), "sines.ts");
  const std::string labeled = write(toy(), "toy.ts");
  ASSERT_EQ(tst_cmd(small({"pretrain", "--data", unlabeled, "--out", path("pre").string(), "--epochs", "2"})).code, 0);
  const std::string ck = (path("pre") / "checkpoint.tst").string();

  Outcome frozen = tst_cmd(
      {"finetune", "--from", ck, "--data", labeled, "--out", path("frozen").string(), "--epochs", "3", "--freeze"});
  ASSERT_EQ(frozen.code, 0) << frozen.err;
  Outcome diff = tst_cmd({"diff", ck, (path("frozen") / "checkpoint.tst").string()});
  EXPECT_NE(diff.out.find("(0 outside the head)"), std::string::npos) << diff.out;

  Outcome full = tst_cmd({"finetune", "--from", ck, "--data", labeled, "--out", path("full").string(), "--epochs", "3"});
  ASSERT_EQ(full.code, 0) << full.err;
  Outcome diff2 = tst_cmd({"diff", ck, (path("full") / "checkpoint.tst").string()});
  EXPECT_EQ(diff2.out.find("(0 outside the head)"), std::string::npos) << diff2.out;
}

TEST_F(CliTest, IncompatibleCheckpointIsCleanError) {
  const std::string two = write(sines(2), "two.ts");
  const std::string one = write(toy(), "one.ts");
  ASSERT_EQ(tst_cmd(small({"pretrain", "--data", two, "--out", path("pre").string(), "--epochs", "1"})).code, 0);
  const std::string ck = (path("pre") / "checkpoint.tst").string();
  Outcome r = tst_cmd({"finetune", "--from", ck, "--data", one, "--out", path("ft").string(), "--epochs", "1"});
  EXPECT_EQ(r.code, kDataError);
  EXPECT_NE(r.err.find("m=2"), std::string::npos) << r.err;

  std::ofstream(path("junk.tst")) << "not a checkpoint";
  Outcome junk = tst_cmd({"evaluate", "--from", path("junk.tst").string(), "--data", two, "--out", path("ev").string()});
  EXPECT_EQ(junk.code, kDataError);
  EXPECT_NE(junk.err.find("checkpoint"), std::string::npos);
}

TEST_F(CliTest, NonFiniteLossExitsWithNumericFailure) {
  const std::string data = write(toy(), "toy.ts");
  Outcome r = tst_cmd(small({"train", "--data", data, "--out", path("run").string(), "--epochs", "5", "--lr", "1e300"}));
  EXPECT_EQ(r.code, kNumericFailure) << r.err;
}

TEST_F(CliTest, ImputeDumpRescoresToReportedRmse) {
  const std::string data = write(sines(), "sines.ts");
  ASSERT_EQ(tst_cmd(small({"pretrain", "--data", data, "--out", path("pre").string(), "--epochs", "3"})).code, 0);
  const std::string ck = (path("pre") / "checkpoint.tst").string();

  for (const char* variant : {"sep_stateful", "forecast"}) {
    const fs::path dir = path(std::string("imp_") + variant);
    Outcome r = tst_cmd({"impute", "--from", ck, "--data", data, "--out", dir.string(), "--mask", variant});
    ASSERT_EQ(r.code, 0) << r.err;

    std::ifstream dump(dir / "imputation.csv");
    std::string line;
    std::getline(dump, line);
    EXPECT_EQ(line, "sample,id,step,dim,truth,pred,truth_raw,pred_raw");
    std::vector<double> truth, pred;
    std::set<std::size_t> steps;
    while (std::getline(dump, line)) {
      std::vector<std::string> c;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) c.push_back(cell);
      ASSERT_EQ(c.size(), 8u);
      steps.insert(std::stoul(c[2]));
      truth.push_back(std::stod(c[4]));
      pred.push_back(std::stod(c[5]));
    }
    ASSERT_FALSE(truth.empty());
    auto summary = nlohmann::json::parse(slurp(dir / "imputation.json"));
    EXPECT_EQ(summary.at("cells").get<std::size_t>(), truth.size());
    EXPECT_NEAR(rmse(pred, truth), summary.at("masked_rmse").get<double>(), 1e-10);

    if (std::string(variant) == "forecast") {
      // 25% of 16 steps: the last four, for every sample and variable.
      EXPECT_EQ(steps, (std::set<std::size_t>{12, 13, 14, 15}));
      EXPECT_EQ(truth.size(), 12u * 4 * 2);
    }
  }
}

TEST_F(CliTest, ImputeMissingCells) {
  const std::string data = std::string(TST_FIXTURE_DIR) + "/regression_missing.ts";
  ASSERT_EQ(tst_cmd(small({"pretrain", "--data", data, "--out", path("pre").string(), "--epochs", "1"})).code, 0);
  Outcome r = tst_cmd({"impute", "--from", (path("pre") / "checkpoint.tst").string(), "--data", data, "--out",
                       path("imp").string(), "--mask-source", "missing"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("imputed 4 cells"), std::string::npos) << r.out;
  auto summary = nlohmann::json::parse(slurp(path("imp") / "imputation.json"));
  EXPECT_FALSE(summary.contains("masked_rmse"));

  Outcome bad = tst_cmd({"impute", "--from", (path("pre") / "checkpoint.tst").string(), "--data", data, "--out",
                         path("imp2").string(), "--mask-source", "psychic"});
  EXPECT_EQ(bad.code, kUsage);
}

TEST_F(CliTest, ForecastMaskFixture) {
  Outcome r = tst_cmd({"masks", "--out", path("m").string(), "--set", "masks.steps=8", "--set", "masks.vars=2", "--set",
                       "masks.count=2", "--set", "masks.variants=forecast", "--set", "mask.forecast_fraction=0.25"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("m") / "masks_forecast.txt"),
            "1 1\n1 1\n1 1\n1 1\n1 1\n1 1\n0 0\n0 0\n\n1 1\n1 1\n1 1\n1 1\n1 1\n1 1\n0 0\n0 0\n");
}

TEST_F(CliTest, MaskFixturesAreDeterministic) {
  auto emit = [&](const std::string& dir, const std::string& seed) {
    Outcome r = tst_cmd({"masks", "--out", path(dir).string(), "--seed", seed, "--set", "masks.steps=50", "--set",
                         "masks.vars=3", "--set", "masks.count=4"});
    ASSERT_EQ(r.code, 0) << r.err;
  };
  emit("a", "11");
  emit("b", "11");
  emit("c", "12");
  for (const char* v : {"sep_stateful", "sep_bernoulli", "sync_stateful", "sync_bernoulli", "forecast"}) {
    const std::string file = std::string("masks_") + v + ".txt";
    ASSERT_TRUE(fs::exists(path("a") / file)) << file;
    EXPECT_EQ(slurp(path("a") / file), slurp(path("b") / file)) << v;
  }
  EXPECT_NE(slurp(path("a") / "masks_sep_stateful.txt"), slurp(path("c") / "masks_sep_stateful.txt"));
}

TEST_F(CliTest, LongFixtureHitsMaskingRatio) {
  Outcome r = tst_cmd({"masks", "--out", path("m").string(), "--seed", "21", "--set", "masks.steps=100000", "--set",
                       "masks.vars=1", "--set", "masks.count=1", "--set", "masks.variants=sep_stateful"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream log(path("m") / "metrics.jsonl");
  std::string line;
  ASSERT_TRUE(std::getline(log, line));
  MetricRecord rec = MetricRecord::parse(line);
  EXPECT_EQ(rec.metric, "sep_stateful_masked_fraction");
  EXPECT_NEAR(rec.value, 0.15, 0.01);

  std::ifstream fixture(path("m") / "masks_sep_stateful.txt");
  std::size_t zeros = 0, rows = 0;
  while (std::getline(fixture, line)) {
    ++rows;
    zeros += line == "0";
  }
  EXPECT_EQ(rows, 100000u);
  EXPECT_DOUBLE_EQ(static_cast<double>(zeros) / 1e5, rec.value);
}

TEST_F(CliTest, CompareReproducesPublishedSummaries) {
  ResultsMatrix grid = tst::testing::published_regression_grid();
  {
    std::ofstream f(path("grid.csv"));
    f << "dataset";
    for (const auto& m : grid.models) f << ',' << m;
    f << '\n';
    for (std::size_t i = 0; i < grid.rows(); ++i) {
      f << grid.datasets[i];
      for (std::size_t j = 0; j < grid.cols(); ++j) f << ',' << grid.at(i, j);
      f << '\n';
    }
  }
  Outcome r = tst_cmd({"compare", path("grid.csv").string(), "--merge", "TST-supervised,TST-pretrained=TST"});
  ASSERT_EQ(r.code, 0) << r.err;
  ResultsMatrix table = parse_results_table(r.out);
  const std::size_t rank_row = table.rows() - 1;
  EXPECT_EQ(table.datasets[rank_row], "avg_rank");
  EXPECT_EQ(table.at(rank_row, table.model_index("XGBoost")), 3.5);
  EXPECT_NEAR(table.at(rank_row, table.model_index("TST")), 1.333, 0.001);
}
