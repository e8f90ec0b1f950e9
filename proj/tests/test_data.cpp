#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "oracles.hpp"
#include "pdx/data.hpp"

using namespace pdx;

namespace {

std::vector<std::size_t> class_counts(std::span<const int> labels, std::span<const std::size_t> rows, std::size_t c) {
  std::vector<std::size_t> n(c, 0);
  for (std::size_t r : rows) ++n[static_cast<std::size_t>(labels[r])];
  return n;
}

// Oracle inputs: one-hot categorical codes, continuous values, and the mean
// of every patch of the volume.
std::vector<double> oracle_row(const MultimodalDataset& d, std::size_t i, bool with_volume) {
  std::vector<double> row;
  for (std::size_t j = 0; j < d.schema.size(); ++j) {
    const auto& col = d.schema.columns[j];
    if (col.kind == ColumnKind::categorical) {
      for (int k = 0; k < col.cardinality; ++k) row.push_back(d.tables(i, j) == k ? 1.0 : 0.0);
    } else {
      row.push_back(d.tables(i, j));
    }
  }
  if (with_volume) {
    const VolumeSpec& v = d.volume;
    const auto vol = d.volume_of(i);
    for (std::size_t pz = 0; pz < v.depth; pz += v.patch)
      for (std::size_t py = 0; py < v.height; py += v.patch)
        for (std::size_t px = 0; px < v.width; px += v.patch) {
          double m = 0.0;
          for (std::size_t z = 0; z < v.patch; ++z)
            for (std::size_t y = 0; y < v.patch; ++y)
              for (std::size_t x = 0; x < v.patch; ++x)
                m += vol[((pz + z) * v.height + py + y) * v.width + px + x];
          row.push_back(m / static_cast<double>(v.patch_voxels()));
        }
  }
  return row;
}

// Held-out accuracy of the logistic oracle, trained on the first half.
double oracle_accuracy(const MultimodalDataset& d, bool with_volume) {
  std::vector<std::vector<double>> xtr, xte;
  std::vector<int> ytr, yte;
  for (std::size_t i = 0; i < d.size(); ++i) {
    (i % 2 == 0 ? xtr : xte).push_back(oracle_row(d, i, with_volume));
    (i % 2 == 0 ? ytr : yte).push_back(d.labels[i]);
  }
  oracle::Logistic lr;
  lr.fit(xtr, ytr, static_cast<int>(d.classes));
  return lr.accuracy(xte, yte);
}

SyntheticMultimodalConfig oracle_config(double coupling) {
  SyntheticMultimodalConfig c;
  c.samples = 900;
  c.class_priors = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  c.volume = {16, 16, 16, 8};
  c.coupling = coupling;
  c.missing_rate = 0.0;
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pdx_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Split, SizesForTwoThousand) {
  std::vector<int> labels(2000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 5);
  SeededRng rng(1);
  const double f[] = {0.7, 0.15, 0.15};
  const SplitIndices s = split_stratified(labels, f, rng);
  EXPECT_EQ(s.train.size(), 1400u);
  EXPECT_EQ(s.validation.size(), 300u);
  EXPECT_EQ(s.test.size(), 300u);
}

TEST(Split, DisjointCoveringStratifiedOverManySeeds) {
  const double f[] = {0.7, 0.15, 0.15};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SeededRng gen(seed, 1);
    const auto n = static_cast<std::size_t>(gen.uniform_int(30, 400));
    std::vector<int> labels(n);
    for (auto& y : labels) y = static_cast<int>(gen.uniform_int(0, 3));
    for (int c = 0; c < 4; ++c) labels[static_cast<std::size_t>(c) * 3] = labels[static_cast<std::size_t>(c) * 3 + 1] =
        labels[static_cast<std::size_t>(c) * 3 + 2] = c;
    SeededRng rng(seed, 2);
    const SplitIndices s = split_stratified(labels, f, rng);
    std::vector<int> seen(n, 0);
    for (const auto* part : {&s.train, &s.validation, &s.test})
      for (std::size_t i : *part) ++seen[i];
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; })) << "seed " << seed;

    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    const auto total = class_counts(labels, all, 4);
    for (const auto& [part, frac] : {std::pair{&s.train, 0.7}, {&s.validation, 0.15}, {&s.test, 0.15}}) {
      const auto got = class_counts(labels, *part, 4);
      for (std::size_t c = 0; c < 4; ++c) {
        const double share = static_cast<double>(total[c]) * static_cast<double>(part->size()) / static_cast<double>(n);
        EXPECT_LE(std::abs(static_cast<double>(got[c]) - share), 1.0 + 1e-9) << "seed " << seed << " class " << c;
      }
      (void)frac;
    }
  }
}

TEST(Split, TinyClassRejected) {
  const std::vector<int> labels = {0, 0, 0, 0, 1, 1};
  SeededRng rng(2);
  const double f[] = {0.7, 0.15, 0.15};
  EXPECT_THROW(split_stratified(labels, f, rng), ContractError);
  const double bad[] = {0.5, 0.2, 0.2};
  const std::vector<int> ok = {0, 0, 0, 1, 1, 1};
  EXPECT_THROW(split_stratified(ok, bad, rng), ContractError);
}

TEST(Impute, Examples) {
  Matrix t(3, 1, std::vector<double>{1, 0, 3});
  const std::vector<std::uint8_t> miss = {0, 1, 0};
  const std::vector<std::size_t> train = {0, 1, 2};
  EXPECT_EQ(impute_mean(t, miss, train)(1, 0), 2.0);

  Matrix full(2, 2, std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(impute_mean(full, std::vector<std::uint8_t>(4, 0), std::vector<std::size_t>{0}), full);

  // Train rows 0, 1 average 2; the missing test cell gets 2 even though the
  // only observed test value is 10.
  Matrix m(4, 1, std::vector<double>{1, 3, 10, 0});
  const std::vector<std::uint8_t> mm = {0, 0, 0, 1};
  EXPECT_EQ(impute_mean(m, mm, std::vector<std::size_t>{0, 1})(3, 0), 2.0);

  EXPECT_THROW(impute_mean(t, std::vector<std::uint8_t>{1, 1, 0}, std::vector<std::size_t>{0, 1}), ContractError);
}

TEST(Impute, NeverReadsHeldOutRows) {
  SeededRng rng(3);
  Matrix t(40, 3);
  std::vector<std::uint8_t> miss(120, 0);
  for (double& v : t.data) v = rng.normal();
  for (std::size_t i = 0; i < miss.size(); ++i) miss[i] = rng.bernoulli(0.2) ? 1 : 0;
  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < 25; ++i) train.push_back(i);
  for (std::size_t c = 0; c < 3; ++c) miss[c] = 0;  // every column observed in train
  const Matrix a = impute_mean(t, miss, train);
  Matrix poisoned = t;
  for (std::size_t r = 25; r < 40; ++r)
    for (std::size_t c = 0; c < 3; ++c)
      if (!miss[r * 3 + c]) poisoned(r, c) = 1e9;
  const Matrix b = impute_mean(poisoned, miss, train);
  for (std::size_t r = 0; r < 40; ++r)
    for (std::size_t c = 0; c < 3; ++c)
      if (miss[r * 3 + c]) EXPECT_EQ(a(r, c), b(r, c));
}

TEST(Context, Examples) {
  std::vector<int> labels(2000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 3);
  std::vector<std::size_t> train(1400);
  for (std::size_t i = 0; i < 1400; ++i) train[i] = i;
  SeededRng rng(4);
  EXPECT_EQ(sample_context(train, labels, 3, 1.0, rng), train);
  SeededRng a(5), b(5);
  const auto ctx = sample_context(train, labels, 3, 0.01, a);
  EXPECT_EQ(ctx.size(), 14u);
  std::set<int> classes;
  for (std::size_t i : ctx) classes.insert(labels[i]);
  EXPECT_EQ(classes.size(), 3u);
  EXPECT_EQ(ctx, sample_context(train, labels, 3, 0.01, b));
  // Very small ratios still keep one row per class.
  SeededRng c(6);
  EXPECT_EQ(sample_context(train, labels, 3, 1e-4, c).size(), 3u);
  EXPECT_THROW(sample_context(train, labels, 3, 0.0, c), ContractError);
}

TEST(GenMultimodal, ShapesAndDeterminism) {
  SyntheticMultimodalConfig c;
  c.samples = 20;
  c.volume = {16, 16, 16, 8};
  SeededRng a(7), b(7);
  const MultimodalDataset d1 = gen_multimodal(c, a), d2 = gen_multimodal(c, b);
  EXPECT_EQ(d1.volumes, d2.volumes);
  EXPECT_EQ(d1.tables, d2.tables);
  EXPECT_EQ(d1.labels, d2.labels);
  EXPECT_EQ(d1.size(), 20u);
  EXPECT_EQ(d1.schema.size(), 20u);
  EXPECT_EQ(d1.volumes.size(), 20u * 16 * 16 * 16);
  for (std::size_t j = 0; j < d1.schema.size(); ++j) {
    const auto& col = d1.schema.columns[j];
    if (col.kind != ColumnKind::categorical) continue;
    EXPECT_GE(col.cardinality, 2);
    EXPECT_LE(col.cardinality, 5);
    for (std::size_t i = 0; i < 20; ++i) {
      if (d1.missing[i * 20 + j]) continue;
      EXPECT_GE(d1.tables(i, j), 0.0);
      EXPECT_LT(d1.tables(i, j), col.cardinality);
    }
  }
}

TEST(GenMultimodal, NoCouplingMeansChance) {
  double acc = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    SeededRng rng(seed, 11);
    acc += oracle_accuracy(gen_multimodal(oracle_config(0.0), rng), true) / 3.0;
  }
  EXPECT_NEAR(acc, 1.0 / 3.0, 0.05);
}

TEST(GenMultimodal, FullCouplingRecoverableFromTables) {
  SyntheticMultimodalConfig c = oracle_config(1.0);
  c.label_noise = 0.0;
  SeededRng rng(12);
  EXPECT_GE(oracle_accuracy(gen_multimodal(c, rng), false), 0.95);
}

TEST(GenMultimodal, SignalGrowsWithCoupling) {
  std::vector<double> acc;
  for (double k : {0.0, 0.5, 1.0}) {
    double a = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      SeededRng rng(seed, 13);
      a += oracle_accuracy(gen_multimodal(oracle_config(k), rng), true) / 3.0;
    }
    acc.push_back(a);
  }
  EXPECT_LE(acc[0], acc[1]);
  EXPECT_LE(acc[1], acc[2]);
}

TEST(GenTabular, BalancedAndReproducible) {
  TabularDatasetSpec spec;
  SeededRng a(14), b(14);
  const TabularDataset d = gen_tabular(spec, a);
  EXPECT_EQ(d.features.rows, 2000u);
  EXPECT_EQ(d.features.cols, 100u);
  std::vector<std::size_t> n(5, 0);
  for (int y : d.labels) ++n[static_cast<std::size_t>(y)];
  for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(static_cast<double>(n[c]), 400.0, 1.0);
  EXPECT_EQ(d.features, gen_tabular(spec, b).features);
}

TEST(GenTabular, NoSeparationMeansChance) {
  TabularDatasetSpec spec;
  spec.samples = 1200;
  spec.features = 10;
  spec.classes = 3;
  spec.separation = 0.0;
  double acc = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    SeededRng rng(seed, 15);
    const TabularDataset d = gen_tabular(spec, rng);
    std::vector<std::vector<double>> xtr, xte;
    std::vector<int> ytr, yte;
    for (std::size_t i = 0; i < d.labels.size(); ++i) {
      const auto row = d.features.row(i);
      (i % 2 ? xte : xtr).emplace_back(row.begin(), row.end());
      (i % 2 ? yte : ytr).push_back(d.labels[i]);
    }
    oracle::Logistic lr;
    lr.fit(xtr, ytr, 3);
    acc += lr.accuracy(xte, yte) / 3.0;
  }
  EXPECT_NEAR(acc, 1.0 / 3.0, 0.05);
}

TEST(Persistence, MultimodalRoundTripAndTruncation) {
  SyntheticMultimodalConfig c;
  c.samples = 6;
  c.volume = {8, 8, 8, 4};
  SeededRng rng(16);
  const MultimodalDataset d = gen_multimodal(c, rng);
  const auto dir = temp_dir("mm");
  save_multimodal(d, dir, "{\"seed\": 16}");
  EXPECT_EQ(dataset_kind(dir), "multimodal");
  const MultimodalDataset back = load_multimodal(dir);
  EXPECT_EQ(back.volumes, d.volumes);
  EXPECT_EQ(back.tables, d.tables);
  EXPECT_EQ(back.missing, d.missing);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.schema.size(), d.schema.size());

  std::filesystem::resize_file(dir / "volumes.f32", std::filesystem::file_size(dir / "volumes.f32") - 4);
  EXPECT_THROW(load_multimodal(dir), CorruptionError);
  std::filesystem::remove_all(dir);
}

TEST(Persistence, TabularRoundTrip) {
  TabularDatasetSpec spec;
  spec.samples = 50;
  spec.features = 4;
  spec.classes = 2;
  spec.context = 10;
  SeededRng rng(17);
  const TabularDataset d = gen_tabular(spec, rng);
  const auto dir = temp_dir("tab");
  save_tabular(d, spec, dir, "");
  EXPECT_EQ(dataset_kind(dir), "tabular");
  TabularDatasetSpec back_spec;
  const TabularDataset back = load_tabular(dir, &back_spec);
  EXPECT_EQ(back.features, d.features);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back_spec.context, 10u);
  EXPECT_THROW(load_multimodal(dir), CorruptionError);
  std::filesystem::remove_all(dir);
}
