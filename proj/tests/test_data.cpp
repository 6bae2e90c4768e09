#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "fixtures.hpp"
#include "ttnlab/data.hpp"
#include "ttnlab/error.hpp"
#include "ttnlab/network.hpp"
#include "ttnlab/train.hpp"

using namespace ttnlab;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no ttnlab::Error thrown";
  return ErrorKind::io;
}

std::vector<std::size_t> histogram(const std::vector<int>& labels, std::size_t classes) {
  std::vector<std::size_t> h(classes, 0);
  for (int y : labels) ++h.at(y);
  return h;
}

CorruptionTables default_tables() {
  CorruptionTables t;
  t.gaussian_noise = {0.04, 0.06, 0.08, 0.09, 0.10};
  t.speckle_noise = {0.06, 0.10, 0.12, 0.16, 0.20};
  t.brightness = {0.1, 0.2, 0.3, 0.4, 0.5};
  t.contrast = {0.75, 0.5, 0.4, 0.3, 0.15};
  t.noise_scale = 2.5;
  return t;
}

}  // namespace

TEST(Synth, DeterministicInRangeAndClassMajor) {
  const LabeledDataset a = synth_dataset(5, 6, 12, 3), b = synth_dataset(5, 6, 12, 3), c = synth_dataset(5, 6, 12, 4);
  EXPECT_EQ(a.images.shape(), (Shape{30, 3, 12, 12}));
  EXPECT_TRUE(a.images.identical(b.images));
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_FALSE(a.images.identical(c.images));
  EXPECT_EQ(histogram(a.labels, 5), std::vector<std::size_t>(5, 6));
  for (float v : a.images.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_NO_THROW(a.validate(true));
}

TEST(Synth, ClassMeanImagesDiffer) {
  const LabeledDataset d = synth_dataset(6, 20, 8, 1);
  const auto groups = d.class_indices();
  std::vector<std::vector<double>> means(6, std::vector<double>(3 * 64, 0.0));
  for (std::size_t c = 0; c < 6; ++c)
    for (std::size_t i : groups[c])
      for (std::size_t p = 0; p < 3 * 64; ++p) means[c][p] += d.images[i * 3 * 64 + p] / 20.0;
  for (std::size_t a = 0; a < 6; ++a)
    for (std::size_t b = a + 1; b < 6; ++b) {
      double dist = 0.0;
      for (std::size_t p = 0; p < 3 * 64; ++p) dist += std::pow(means[a][p] - means[b][p], 2);
      EXPECT_GT(dist, 0.0) << a << " vs " << b;
    }
}

// The default synthetic task must not be solvable by a linear model on raw
// pixels, otherwise the BN statistics carry no interesting structure.
TEST(Synth, LinearProbeOnRawPixelsStaysBelowNinetyPercent) {
  const LabeledDataset train_set = synth_dataset(8, 256, 16, 1), test_set = synth_dataset(8, 128, 16, 2);
  TrainConfig config;
  config.epochs = 30;
  config.batch_size = 64;
  config.learning_rate = 0.05;
  config.freeze_samples = 0;
  const ModelCheckpoint probe = train(train_set, {LayerSpec::linear(3 * 16 * 16, 8)}, 1, config);
  const double train_acc = evaluate_accuracy(probe, train_set), test_acc = evaluate_accuracy(probe, test_set);
  RecordProperty("probe_train_accuracy", std::to_string(train_acc));
  RecordProperty("probe_test_accuracy", std::to_string(test_acc));
  EXPECT_LT(test_acc, 0.9) << "train " << train_acc;
}

TEST(Cifar, RoundTripThroughBinaryRecords) {
  const auto dir = testkit::scratch_dir("cifar");
  LabeledDataset d;
  d.class_count = 10;
  d.images = Tensor({3, 3, 32, 32});
  std::mt19937_64 rng(1);
  for (std::size_t i = 0; i < d.images.numel(); ++i) d.images[i] = static_cast<float>(rng() % 256) / 255.0f;
  d.labels = {9, 0, 4};
  write_cifar10_file(dir / "test_batch.bin", d);
  EXPECT_EQ(std::filesystem::file_size(dir / "test_batch.bin"), 3u * 3073u);
  const LabeledDataset back = read_cifar10_file(dir / "test_batch.bin");
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_TRUE(back.images.identical(d.images));
  EXPECT_EQ(back.class_count, 10u);
  EXPECT_TRUE(load_cifar10_binary(dir, false).images.identical(d.images));
  // Records are channel-major: byte 1 + 1024 is the first green pixel.
  const std::string bytes = testkit::read_bytes(dir / "test_batch.bin");
  EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 9);
  EXPECT_EQ(static_cast<unsigned char>(bytes[1 + 1024]), static_cast<unsigned char>(d.images.at(0, 1, 0, 0) * 255.0f + 0.5f));
}

TEST(Cifar, TruncatedAndBadLabelsAreRejected) {
  const auto dir = testkit::scratch_dir("cifar-neg");
  std::string record(3073, '\0');
  testkit::write_bytes(dir / "short.bin", record + record.substr(0, 100));
  EXPECT_EQ(kind_of([&] { read_cifar10_file(dir / "short.bin"); }), ErrorKind::truncated);
  record[0] = 10;
  testkit::write_bytes(dir / "label.bin", record);
  EXPECT_EQ(kind_of([&] { read_cifar10_file(dir / "label.bin"); }), ErrorKind::bad_format);
  EXPECT_EQ(kind_of([&] { load_cifar10_binary(dir / "absent", true); }), ErrorKind::io);
}

TEST(DatasetFile, SaveLoadRoundTrip) {
  const LabeledDataset d = synth_dataset(3, 4, 8, 5);
  const auto path = testkit::scratch_dir("dataset") / "d.ttn";
  save_dataset(d, path);
  const LabeledDataset back = load_dataset(path);
  EXPECT_TRUE(back.images.identical(d.images));
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.class_count, 3u);
}

TEST(Corruption, SeverityZeroIsIdentity) {
  const LabeledDataset d = synth_dataset(2, 4, 8, 1);
  for (auto kind : {CorruptionKind::gaussian_noise, CorruptionKind::speckle_noise, CorruptionKind::brightness,
                    CorruptionKind::contrast}) {
    EXPECT_TRUE(corrupt(d.images, CorruptionSpec{kind, 0}, default_tables(), 1).identical(d.images));
    EXPECT_TRUE(apply_corruption(d.images, kind, kind == CorruptionKind::contrast ? 1.0 : 0.0, 1).identical(d.images));
  }
}

TEST(Corruption, ShapeRangeAndDeterminism) {
  const LabeledDataset d = synth_dataset(2, 4, 8, 1);
  for (auto kind : {CorruptionKind::gaussian_noise, CorruptionKind::speckle_noise, CorruptionKind::brightness,
                    CorruptionKind::contrast}) {
    for (int s = 1; s <= 5; ++s) {
      const Tensor out = corrupt(d.images, CorruptionSpec{kind, s}, default_tables(), 9);
      EXPECT_EQ(out.shape(), d.images.shape());
      for (float v : out.values()) {
        ASSERT_GE(v, 0.0f);
        ASSERT_LE(v, 1.0f);
      }
      EXPECT_TRUE(out.identical(corrupt(d.images, CorruptionSpec{kind, s}, default_tables(), 9)));
    }
  }
  EXPECT_FALSE(corrupt(d.images, {CorruptionKind::gaussian_noise, 3}, default_tables(), 1)
                   .identical(corrupt(d.images, {CorruptionKind::gaussian_noise, 3}, default_tables(), 2)));
}

TEST(Corruption, FormulasOnMidGrey) {
  const Tensor grey({64, 3, 8, 8}, 0.5f);
  const Tensor g = apply_corruption(grey, CorruptionKind::gaussian_noise, 0.05, 3);
  double sum = 0.0, sq = 0.0;
  for (float v : g.values()) {
    sum += v - 0.5;
    sq += (v - 0.5) * (v - 0.5);
  }
  const double n = static_cast<double>(g.numel());
  EXPECT_NEAR(sum / n, 0.0, 0.002);
  EXPECT_NEAR(std::sqrt(sq / n), 0.05, 0.002);

  const Tensor s = apply_corruption(grey, CorruptionKind::speckle_noise, 0.1, 3);
  sq = 0.0;
  for (float v : s.values()) sq += (v - 0.5) * (v - 0.5);
  EXPECT_NEAR(std::sqrt(sq / n), 0.05, 0.002);  // x * sigma * eps with x = 0.5

  const Tensor b = apply_corruption(grey, CorruptionKind::brightness, 0.3, 3);
  for (float v : b.values()) EXPECT_FLOAT_EQ(v, 0.8f);
  EXPECT_FLOAT_EQ(apply_corruption(grey, CorruptionKind::brightness, 0.7, 3)[0], 1.0f);
}

TEST(Corruption, ContrastScalesAroundPerImageChannelMean) {
  Tensor x({1, 1, 1, 4}, std::vector<float>{0.2f, 0.4f, 0.6f, 0.8f});
  const Tensor y = apply_corruption(x, CorruptionKind::contrast, 0.5, 0);
  const std::vector<float> expected{0.35f, 0.45f, 0.55f, 0.65f};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], expected[i], 1e-6);
}

TEST(Corruption, TablesScaleNoiseOnly) {
  const CorruptionTables t = default_tables();
  EXPECT_DOUBLE_EQ(t.parameter({CorruptionKind::gaussian_noise, 5}), 0.25);
  EXPECT_DOUBLE_EQ(t.parameter({CorruptionKind::speckle_noise, 1}), 0.15);
  EXPECT_DOUBLE_EQ(t.parameter({CorruptionKind::brightness, 2}), 0.2);
  EXPECT_DOUBLE_EQ(t.parameter({CorruptionKind::contrast, 5}), 0.15);
  EXPECT_THROW(t.parameter({CorruptionKind::contrast, 6}), Error);
  EXPECT_EQ(corruption_kind_from_string("speckle_noise"), CorruptionKind::speckle_noise);
  EXPECT_THROW(corruption_kind_from_string("fog"), Error);
}

TEST(LabelShift, NClassBalancedAndSingleClass) {
  const LabeledDataset d = synth_dataset(8, 30, 8, 1);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const LabeledBatch all = sample_label_shift(d, NClassShift{8, seed}, 203);
    const auto h = histogram(all.labels, 8);
    for (std::size_t c = 0; c < 8; ++c) {
      EXPECT_GE(h[c], 25u);
      EXPECT_LE(h[c], 26u);
    }
    const LabeledBatch one = sample_label_shift(d, NClassShift{1, seed}, 50);
    EXPECT_EQ(std::set<int>(one.labels.begin(), one.labels.end()).size(), 1u);
    EXPECT_EQ(one.images.dim(0), 50u);
  }
}

TEST(LabelShift, NClassRemainderGoesToLowestChosenClasses) {
  std::mt19937_64 rng(3);
  const auto counts = label_shift_counts(NClassShift{3, 3}, 8, 11, rng);
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < 8; ++c)
    if (counts[c]) chosen.push_back(c);
  ASSERT_EQ(chosen.size(), 3u);
  EXPECT_EQ(counts[chosen[0]], 4u);
  EXPECT_EQ(counts[chosen[1]], 4u);
  EXPECT_EQ(counts[chosen[2]], 3u);
}

TEST(LabelShift, DifferentSeedsPickDifferentClasses) {
  const LabeledDataset d = synth_dataset(8, 10, 8, 1);
  std::set<int> seen;
  for (std::uint64_t seed = 0; seed < 20; ++seed) seen.insert(sample_label_shift(d, NClassShift{1, seed}, 4).labels[0]);
  EXPECT_GE(seen.size(), 4u);
}

TEST(LabelShift, ExplicitCountsExactAndValidated) {
  const LabeledDataset d = synth_dataset(3, 10, 8, 1);
  const LabeledBatch b = sample_label_shift(d, ExplicitShift{{5, 0, 25}, 1}, 30);
  EXPECT_EQ(histogram(b.labels, 3), (std::vector<std::size_t>{5, 0, 25}));
  EXPECT_THROW(sample_label_shift(d, ExplicitShift{{5, 0, 24}, 1}, 30), Error);
  EXPECT_THROW(sample_label_shift(d, ExplicitShift{{5, 25}, 1}, 30), Error);
  EXPECT_THROW(sample_label_shift(d, NClassShift{4, 1}, 30), Error);
  EXPECT_THROW(sample_label_shift(d, NClassShift{2, 1}, 1), Error);
}

TEST(LabelShift, WithoutReplacementUntilThePoolIsExhausted) {
  // Pixel values identify the source sample so duplicates are visible.
  LabeledDataset d;
  d.class_count = 2;
  d.images = Tensor({10, 1, 1, 1});
  for (std::size_t i = 0; i < 10; ++i) {
    d.images[i] = static_cast<float>(i);
    d.labels.push_back(static_cast<int>(i % 2));
  }
  const LabeledBatch fits = sample_label_shift(d, ExplicitShift{{5, 0}, 4}, 5);
  EXPECT_EQ(std::set<float>(fits.images.values().begin(), fits.images.values().end()).size(), 5u);
  const LabeledBatch over = sample_label_shift(d, ExplicitShift{{12, 0}, 4}, 12);
  std::map<float, int> uses;
  for (float v : over.images.values()) ++uses[v];
  EXPECT_EQ(uses.size(), 5u);
  // Every pool member is drawn once before any repeats.
  for (const auto& [v, n] : uses) {
    EXPECT_EQ(static_cast<int>(v) % 2, 0);
    EXPECT_GE(n, 1);
  }
}

TEST(LabelShift, BatchIsShuffledAndDeterministic) {
  const LabeledDataset d = synth_dataset(4, 20, 8, 1);
  const LabeledBatch a = sample_label_shift(d, NClassShift{4, 9}, 40), b = sample_label_shift(d, NClassShift{4, 9}, 40);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_TRUE(a.images.identical(b.images));
  EXPECT_FALSE(std::is_sorted(a.labels.begin(), a.labels.end()));
}

TEST(Dirichlet, SamplesAreProbabilityVectorsEvenForTinyAlpha) {
  std::mt19937_64 rng(1);
  for (double alpha : {1e-3, 0.01, 0.5, 1.0, 100.0}) {
    for (int i = 0; i < 20; ++i) {
      const auto p = sample_symmetric_dirichlet(alpha, 10, rng);
      double sum = 0.0;
      for (double v : p) {
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_GE(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
  }
}

TEST(Dirichlet, ConcentratedAlphaIsNearUniform) {
  const LabeledDataset d = synth_dataset(10, 60, 8, 1);
  double l1 = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto h = histogram(sample_label_shift(d, DirichletShift{100.0, seed}, 500).labels, 10);
    for (std::size_t c = 0; c < 10; ++c) l1 += std::abs(h[c] / 500.0 - 0.1);
  }
  EXPECT_LT(l1 / 50.0, 0.15);
}

TEST(Dirichlet, SmallerAlphaIsMoreImbalanced) {
  auto mean_max = [](double alpha) {
    std::mt19937_64 rng(17);
    double total = 0.0;
    for (int i = 0; i < 50; ++i) {
      const auto p = sample_symmetric_dirichlet(alpha, 10, rng);
      total += *std::max_element(p.begin(), p.end());
    }
    return total / 50.0;
  };
  const double a = mean_max(0.01), b = mean_max(0.5), c = mean_max(100.0);
  EXPECT_GT(a, b);
  EXPECT_GT(b, c);
}
