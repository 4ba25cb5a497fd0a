#include <gtest/gtest.h>

#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "synthetic.hpp"
#include "tst/data.hpp"
#include "tst/model.hpp"

using namespace tst;

namespace {

const std::string kFixtures = TST_FIXTURE_DIR;
const std::string kData = TST_DATA_DIR;

Dataset parse_text(const std::string& text) {
  std::istringstream in(text);
  return parse_archive(in, "inline.ts");
}

const std::string kHeader =
    "@problemName Inline\n@timeStamps false\n@univariate false\n@dimensions 2\n@classLabel true a b\n@data\n";

Sample make_sample(std::string id, std::vector<double> values, std::size_t dims) {
  Sample s;
  s.id = std::move(id);
  s.dims = dims;
  s.length = values.size() / dims;
  s.values = std::move(values);
  s.missing.assign(s.values.size(), 0);
  return s;
}

Dataset labeled_set(const std::vector<std::size_t>& per_class) {
  Dataset ds;
  ds.name = "balanced";
  ds.dims = 1;
  ds.task = TaskKind::Classification;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    ds.class_names.push_back("c" + std::to_string(c));
    for (std::size_t k = 0; k < per_class[c]; ++k) {
      Sample s = make_sample("s" + std::to_string(ds.samples.size()), {static_cast<double>(k)}, 1);
      s.class_index = c;
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

std::set<std::string> ids(const Dataset& ds) {
  std::set<std::string> out;
  for (const auto& s : ds.samples) out.insert(s.id);
  return out;
}

}  // namespace

TEST(ParseArchive, TwoSampleFixture) {
  Dataset ds = parse_archive(kFixtures + "/two_samples.ts");
  EXPECT_EQ(ds.name, "TwoSamples");
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.dims, 2u);
  EXPECT_EQ(ds.task, TaskKind::Classification);
  EXPECT_EQ(ds.class_names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(ds.samples[0].length, 3u);
  EXPECT_EQ(ds.samples[1].length, 2u);
  EXPECT_EQ(ds.samples[0].at(2, 1), 6.0);
  EXPECT_EQ(ds.samples[1].at(1, 1), 1000.0);
  EXPECT_EQ(ds.samples[1].class_index, 1u);
  EXPECT_EQ(ds.max_length(), 3u);
}

TEST(ParseArchive, UndeclaredClassIsAnError) {
  EXPECT_THROW(parse_text(kHeader + "1,2:3,4:c\n"), ParseError);
}

TEST(ParseArchive, DimensionMismatchReportsLine) {
  try {
    parse_text(kHeader + "1,2:3,4:a\n1,2:b\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 8u);
    EXPECT_NE(std::string(e.what()).find("inline.ts:8"), std::string::npos) << e.what();
  }
}

TEST(ParseArchive, BadNumberReportsTokenPosition) {
  try {
    parse_text(kHeader + "1,2:3,x4:a\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 7u);
    EXPECT_EQ(e.column(), 4u);
    EXPECT_NE(std::string(e.what()).find("x4"), std::string::npos) << e.what();
  }
}

TEST(ParseArchive, OtherMalformedInput) {
  EXPECT_THROW(parse_text("@problemName X\n@timeStamps true\n@data\n"), ParseError);
  EXPECT_THROW(parse_text(kHeader + "1,2:3:a\n"), ParseError);  // unequal dimension lengths
  EXPECT_THROW(parse_text("@problemName X\n@dimensions 1\n@data\n?,?,?\n"), ParseError);
  EXPECT_THROW(parse_text("@problemName X\n1,2\n"), ParseError);  // data before @data
}

TEST(ParseArchive, MissingValuesAreInterpolated) {
  Dataset ds = parse_archive(kFixtures + "/regression_missing.ts");
  EXPECT_EQ(ds.task, TaskKind::Regression);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.samples[0].values, (std::vector<double>{2, 2, 3, 4, 4}));
  EXPECT_EQ(ds.samples[1].values, (std::vector<double>{1, 2, 3, 4, 5}));
  EXPECT_EQ(ds.samples[0].missing, (std::vector<std::uint8_t>{1, 0, 1, 0, 1}));
  EXPECT_TRUE(ds.samples[1].has_missing());
  EXPECT_EQ(ds.samples[0].target, (std::vector<double>{0.5}));
  for (const auto& s : ds.samples)
    for (double v : s.values) EXPECT_TRUE(std::isfinite(v));
}

TEST(ParseArchive, JapaneseVowels) {
  Dataset train = parse_archive(kData + "/JapaneseVowels/JapaneseVowels_TRAIN.ts");
  Dataset test = parse_archive(kData + "/JapaneseVowels/JapaneseVowels_TEST.ts");
  EXPECT_EQ(train.size(), 270u);
  EXPECT_EQ(test.size(), 370u);
  EXPECT_EQ(train.dims, 12u);
  EXPECT_EQ(train.class_names.size(), 9u);
  EXPECT_EQ(train.task, TaskKind::Classification);
  EXPECT_LE(train.max_length(), 29u);
  EXPECT_EQ(std::max(train.max_length(), test.max_length()), 29u);

  auto manifest = nlohmann::json::parse(dataset_manifest(train));
  EXPECT_EQ(manifest["n"], 270);
  EXPECT_EQ(manifest["m"], 12);
  EXPECT_EQ(manifest["classes"].size(), 9u);
}

TEST(WriteArchive, RoundTrip) {
  for (const std::string file : {"/two_samples.ts", "/regression_missing.ts"}) {
    Dataset ds = parse_archive(kFixtures + file);
    std::stringstream ss;
    write_archive(ds, ss);
    Dataset back = parse_archive(ss, "roundtrip");
    ASSERT_EQ(back.size(), ds.size());
    EXPECT_EQ(back.class_names, ds.class_names);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      EXPECT_EQ(back.samples[i].values, ds.samples[i].values);
      EXPECT_EQ(back.samples[i].class_index, ds.samples[i].class_index);
      EXPECT_EQ(back.samples[i].target, ds.samples[i].target);
    }
  }
  Dataset jv = parse_archive(kData + "/JapaneseVowels/JapaneseVowels_TRAIN.ts");
  std::stringstream ss;
  write_archive(jv, ss);
  Dataset back = parse_archive(ss, "roundtrip");
  for (std::size_t i = 0; i < jv.size(); ++i) ASSERT_EQ(back.samples[i].values, jv.samples[i].values);
}

TEST(ParseCsvLong, ClassificationAndRegression) {
  std::istringstream cls("id,t,x,y,label\nA,0,1,2,up\nA,1,3,4,up\nB,0,5,6,down\n");
  Dataset ds = parse_csv_long(cls, "cls.csv");
  EXPECT_EQ(ds.task, TaskKind::Classification);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.dims, 2u);
  EXPECT_EQ(ds.samples[0].values, (std::vector<double>{1, 2, 3, 4}));
  std::istringstream reg("id,t,x,target\nA,0,1,0.5\nA,1,2,0.5\n");
  EXPECT_EQ(parse_csv_long(reg, "reg.csv").task, TaskKind::Regression);
  std::istringstream bad("id,t,x\nA,0,zz\n");
  EXPECT_THROW(parse_csv_long(bad, "bad.csv"), ParseError);
}

TEST(NormStats, Examples) {
  Dataset ds;
  ds.dims = 2;
  ds.samples.push_back(make_sample("a", {5, -1, 5, 1}, 2));
  ds.samples.push_back(make_sample("b", {5, 1, 5, -1, 5, 1, 5, -1}, 2));
  NormStats s = compute_norm_stats(ds);
  EXPECT_EQ(s.mean[0], 5.0);
  EXPECT_EQ(s.var[0], NormStats::kVarianceFloor);
  EXPECT_EQ(s.mean[1], 0.0);
  EXPECT_EQ(s.var[1], 1.0);
}

TEST(NormStats, NormalizedTrainingSetIsCentered) {
  Dataset ds = parse_archive(kData + "/JapaneseVowels/JapaneseVowels_TRAIN.ts");
  for (auto mode : {NormalizationMode::StdDev, NormalizationMode::Variance}) {
    Dataset n = normalize(ds, compute_norm_stats(ds), mode);
    for (std::size_t i = 0; i < ds.dims; ++i) {
      double sum = 0, sq = 0;
      std::size_t count = 0;
      for (const auto& s : n.samples)
        for (std::size_t t = 0; t < s.length; ++t, ++count) {
          sum += s.at(t, i);
          sq += s.at(t, i) * s.at(t, i);
        }
      EXPECT_LT(std::abs(sum / count), 1e-10);
      if (mode == NormalizationMode::StdDev) EXPECT_NEAR(sq / count, 1.0, 1e-9);
    }
  }
}

TEST(NormStats, IndependentOfTestSplit) {
  Dataset train = parse_archive(kData + "/JapaneseVowels/JapaneseVowels_TRAIN.ts");
  NormStats before = compute_norm_stats(train);
  Dataset test = parse_archive(kData + "/JapaneseVowels/JapaneseVowels_TEST.ts");
  Dataset shifted = normalize(test, before, NormalizationMode::StdDev);
  EXPECT_EQ(compute_norm_stats(train), before);
  EXPECT_NE(compute_norm_stats(shifted), before);
}

TEST(Normalize, Modes) {
  NormStats stats{{1.0}, {4.0}};
  Sample s = make_sample("x", {1.0, 5.0}, 1);
  Sample var = normalize(s, stats, NormalizationMode::Variance);
  Sample sd = normalize(s, stats, NormalizationMode::StdDev);
  EXPECT_EQ(var.values, (std::vector<double>{0.0, 1.0}));
  EXPECT_EQ(sd.values, (std::vector<double>{0.0, 2.0}));
  NormStats unit{{0.0}, {1.0}};
  EXPECT_EQ(normalize(s, unit, NormalizationMode::Variance).values, normalize(s, unit, NormalizationMode::StdDev).values);
  EXPECT_DOUBLE_EQ(denormalize_value(2.0, 0, stats, NormalizationMode::StdDev), 5.0);
  EXPECT_DOUBLE_EQ(denormalize_value(1.0, 0, stats, NormalizationMode::Variance), 5.0);
  EXPECT_EQ(parse_normalization_mode(to_string(NormalizationMode::Variance)), NormalizationMode::Variance);
}

TEST(PadAndBatch, FullAndPadded) {
  Dataset ds;
  ds.dims = 1;
  ds.samples.push_back(make_sample("a", {1, 2, 3, 4}, 1));
  ds.samples.push_back(make_sample("b", {7}, 1));
  std::vector<std::size_t> first{0};
  Batch full = pad_and_batch(ds, first, 4);
  EXPECT_EQ(full.lengths, (std::vector<std::size_t>{4}));
  std::vector<std::size_t> both{1, 0};
  Batch b = pad_and_batch(ds, both, 4);
  EXPECT_EQ(b.x.shape(), (Shape{2, 4, 1}));
  EXPECT_EQ(b.lengths, (std::vector<std::size_t>{1, 4}));
  EXPECT_EQ(b.indices, both);
  std::vector<Real> row0(b.x.values().begin(), b.x.values().begin() + 4);
  EXPECT_EQ(row0, (std::vector<Real>{7, 0, 0, 0}));
  Batch filled = pad_and_batch(ds, both, 4, 99.0);
  EXPECT_EQ(filled.x.values()[1], 99.0);
  Batch truncated = pad_and_batch(ds, first, 2);
  EXPECT_EQ(truncated.lengths, (std::vector<std::size_t>{2}));
  EXPECT_TRUE(truncated.classes.empty());
}

TEST(PadAndBatch, FillValueIsInvisibleToTheModel) {
  Dataset ds = tst::testing::sinusoid_regression(6, 3, 16, 4, 0.05, true);
  ModelConfig c;
  c.input_dim = 3;
  c.max_len = 16;
  c.d_model = 16;
  c.n_heads = 4;
  c.n_blocks = 2;
  c.d_ff = 32;
  c.dropout = 0;
  c.head = {HeadKind::Regression, 1};
  for (auto projection : {ProjectionKind::Linear, ProjectionKind::Conv}) {
    c.projection = projection;
    c.conv_kernel = projection == ProjectionKind::Conv ? 3 : 1;
    TSTModel model(c, 5);
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    Batch zero = pad_and_batch(ds, idx, 16, 0.0);
    Batch odd = pad_and_batch(ds, idx, 16, 99.0);
    ASSERT_NE(zero.lengths, std::vector<std::size_t>(ds.size(), 16));
    for (Mode mode : {Mode::Train, Mode::Eval}) {
      Tensor a = model.forward(zero.x, zero.lengths, mode);
      Tensor b = model.forward(odd.x, odd.lengths, mode);
      for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-6);
    }
  }
}

TEST(SplitTrainVal, BalancedTenSamples) {
  Dataset ds = labeled_set({5, 5});
  auto [train, val] = split_train_val(ds, 0.8, 1);
  EXPECT_EQ(train.size(), 8u);
  EXPECT_EQ(val.size(), 2u);
  for (const Dataset* part : {&train, &val}) {
    std::set<std::size_t> classes;
    for (const auto& s : part->samples) classes.insert(*s.class_index);
    EXPECT_EQ(classes.size(), 2u);
  }
  EXPECT_THROW(split_train_val(ds, 1.0, 1), std::invalid_argument);
  EXPECT_THROW(split_train_val(ds, 0.0, 1), std::invalid_argument);
}

TEST(SplitTrainVal, PartitionAndDeterminism) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Dataset ds = labeled_set({13, 4, 21});
    auto [train, val] = split_train_val(ds, 0.8, seed);
    std::set<std::string> a = ids(train), b = ids(val), all = ids(ds);
    std::set<std::string> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(both, both.begin()));
    EXPECT_TRUE(both.empty());
    a.insert(b.begin(), b.end());
    EXPECT_EQ(a, all);
    auto [again, val_again] = split_train_val(ds, 0.8, seed);
    EXPECT_EQ(ids(again), ids(train));
  }
  Dataset reg = tst::testing::sinusoid_regression(50, 1, 8, 3);
  auto [train, val] = split_train_val(reg, 0.8, 3);
  EXPECT_EQ(train.size() + val.size(), 50u);
  EXPECT_EQ(train.size(), 40u);
}

TEST(SubsetLabels, Fractions) {
  Dataset ds = labeled_set({30, 20, 50});
  Dataset same = subset_labels(ds, 1.0, 1);
  EXPECT_EQ(same.labeled_count(), ds.size());
  Dataset tenth = subset_labels(ds, 0.1, 1);
  EXPECT_EQ(tenth.size(), ds.size());
  EXPECT_EQ(tenth.labeled_count(), 10u);
  std::vector<std::size_t> per_class(3, 0);
  for (const auto& s : tenth.samples)
    if (s.class_index) ++per_class[*s.class_index];
  EXPECT_EQ(per_class, (std::vector<std::size_t>{3, 2, 5}));
  EXPECT_EQ(labeled_only(tenth).size(), 10u);
  EXPECT_THROW(subset_labels(ds, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(subset_labels(ds, 1.5, 1), std::invalid_argument);
}

TEST(SubsetLabels, RegressionSetOfPublishedSize) {
  Dataset ds;
  ds.dims = 1;
  ds.task = TaskKind::Regression;
  for (std::size_t i = 0; i < 12432; ++i) {
    Sample s = make_sample(std::to_string(i), {0.0}, 1);
    s.target = {static_cast<double>(i)};
    ds.samples.push_back(std::move(s));
  }
  EXPECT_EQ(subset_labels(ds, 0.1, 7).labeled_count(), 1243u);
  EXPECT_EQ(subset_labels(ds, 0.2, 7).labeled_count(), 2486u);
}
