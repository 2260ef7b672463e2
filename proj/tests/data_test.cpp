#include "nero/data.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "nero/engine.hpp"

using namespace nero;
namespace fs = std::filesystem;

namespace {

// CIFAR-10 binary fixture: deterministic synthetic records in the exact
// on-disk format (1 label byte + 3072 channel-planar pixels).
void write_cifar_file(const fs::path& path, int n_records, std::uint64_t seed) {
  std::ofstream f(path, std::ios::binary);
  Rng rng(seed);
  std::vector<unsigned char> rec(3073);
  for (int i = 0; i < n_records; ++i) {
    rec[0] = static_cast<unsigned char>(rng.uniform_int(0, 9));
    for (size_t j = 1; j < rec.size(); ++j)
      rec[j] = static_cast<unsigned char>(rng.uniform_int(0, 255));
    // pin one known pixel for the scaling check
    if (i == 0) rec[1] = 255;
    f.write(reinterpret_cast<const char*>(rec.data()), 3073);
  }
}

fs::path make_cifar_dir(int per_file = 10000) {
  const fs::path dir = fs::temp_directory_path() / "nero_cifar_fixture";
  fs::create_directories(dir);
  for (int b = 1; b <= 5; ++b)
    write_cifar_file(dir / ("data_batch_" + std::to_string(b) + ".bin"), per_file,
                     static_cast<std::uint64_t>(b));
  write_cifar_file(dir / "test_batch.bin", per_file, 99);
  return dir;
}

}  // namespace

TEST(Cifar10, LoadsTrainAndTest) {
  const fs::path dir = make_cifar_dir();
  const Dataset train = cifar10_train(dir.string());
  EXPECT_EQ(train.size(), 50000);
  EXPECT_EQ(train.sample_shape(), (std::array<int, 3>{32, 32, 3}));
  EXPECT_EQ(train.n_classes, 10);
  const Dataset test = cifar10_test(dir.string());
  EXPECT_EQ(test.size(), 10000);
  // byte 255 -> 1.0 (first pixel of record 0 is pinned, R plane -> channel 0)
  EXPECT_FLOAT_EQ(train.images[nhwc_index(train.images, 0, 0, 0, 0)], 1.0f);
  for (int i = 0; i < 200; ++i) {
    EXPECT_GE(train.labels[static_cast<size_t>(i)], 0);
    EXPECT_LE(train.labels[static_cast<size_t>(i)], 9);
  }
  fs::remove_all(dir);
}

TEST(Cifar10, RejectsWrongFileSize) {
  const fs::path dir = fs::temp_directory_path() / "nero_cifar_bad";
  fs::create_directories(dir);
  for (int b = 1; b <= 5; ++b)
    write_cifar_file(dir / ("data_batch_" + std::to_string(b) + ".bin"), 100, 1);
  EXPECT_THROW(cifar10_train(dir.string()), DataError);
  fs::remove_all(dir);
}

TEST(Cifar10, RejectsBadLabelByte) {
  const fs::path dir = fs::temp_directory_path() / "nero_cifar_label";
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "test_batch.bin", std::ios::binary);
    std::vector<unsigned char> rec(3073, 0);
    for (int i = 0; i < 10000; ++i) {
      rec[0] = i == 17 ? 11 : 3;
      f.write(reinterpret_cast<const char*>(rec.data()), 3073);
    }
  }
  EXPECT_THROW(cifar10_test(dir.string()), DataError);
  fs::remove_all(dir);
}

TEST(Synth, DeterministicUnderSeed) {
  const Dataset a = synth_dataset(20, 3, 8, 42);
  const Dataset b = synth_dataset(20, 3, 8, 42);
  EXPECT_EQ(a.images.v, b.images.v);
  EXPECT_EQ(a.labels, b.labels);
  const Dataset c = synth_dataset(20, 3, 8, 43);
  EXPECT_NE(a.images.v, c.images.v);
}

TEST(Synth, BalancedAndInRange) {
  const Dataset ds = synth_dataset(30, 3, 8, 7);
  EXPECT_EQ(ds.size(), 90);
  std::vector<int> counts(3, 0);
  for (int label : ds.labels) ++counts[static_cast<size_t>(label)];
  for (int c : counts) EXPECT_EQ(c, 30);
  for (float v : ds.images.v) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Synth, ReferenceNetCalibration) {
  // a 2-layer reference network must reach 95% train accuracy in 200 steps
  const Dataset ds = synth_dataset(60, 3, 8, 11);

  NetworkPlan plan;
  plan.input_shape = {8, 8, 3};
  LayerDescriptor conv;
  conv.kind = LayerKind::ConvBlock;
  conv.attrs = {{"layer", std::string("convblock")},
                {"act-pos", std::string("postconv")},
                {"act", std::string("relu")},
                {"bn", std::string("none")},
                {"num-filters", std::vector<double>{8}},
                {"filter-shape", std::string("3")},
                {"stride", std::string("1")},
                {"padding", std::string("same")},
                {"bias", std::string("True")}};
  conv.inputs = {-1};
  LayerDescriptor sm;
  sm.kind = LayerKind::Softmax;
  sm.attrs = {{"layer", std::string("fc")},
              {"act", std::string("softmax")},
              {"num-units", std::string("3")},
              {"bias", std::string("True")}};
  sm.inputs = {0};
  plan.descriptors = {conv, sm};

  Rng rng(1);
  Network net = build_network(plan, 3, rng);
  TrainConfig tc;
  tc.batch_size = 32;
  tc.budget = 200;
  tc.epochs_cap = 10000;
  tc.early_stop_patience = 10000;
  tc.l2_coeff = 0.0;
  tc.rng_seed = 2;
  OptimizerConfig oc;
  oc.kind = OptKind::Adam;
  oc.lr = 0.01;
  train(net, ds, ds, tc, oc);
  const EvalResult res = evaluate(net, ds, 32);
  EXPECT_GE(res.accuracy, 0.95);
}

TEST(Split, SizesDisjointnessCoverage) {
  const Dataset ds = synth_dataset(40, 3, 8, 5);  // 120 samples
  SplitSpec spec;
  spec.evo_train = 80;
  spec.control = 20;
  spec.fitness = 20;
  spec.seed = 9;
  const DataSplit s = split(ds, spec);
  EXPECT_EQ(s.evo_train.size(), 80);
  EXPECT_EQ(s.control.size(), 20);
  EXPECT_EQ(s.fitness.size(), 20);

  // disjoint + coverage via exact image-byte multiset comparison
  auto keys = [](const Dataset& d) {
    std::multiset<std::string> out;
    const std::int64_t stride = d.images.size() / d.size();
    for (int i = 0; i < d.size(); ++i)
      out.insert(std::string(reinterpret_cast<const char*>(d.images.data() + i * stride),
                             static_cast<size_t>(stride) * sizeof(float)));
    return out;
  };
  std::multiset<std::string> all = keys(ds);
  std::multiset<std::string> parts;
  for (const auto* d : {&s.evo_train, &s.control, &s.fitness})
    for (const auto& k : keys(*d)) parts.insert(k);
  EXPECT_EQ(all, parts);
}

TEST(Split, SeedControlsPartition) {
  const Dataset ds = synth_dataset(40, 3, 8, 5);
  SplitSpec spec;
  spec.evo_train = 80;
  spec.control = 20;
  spec.fitness = 20;
  spec.seed = 1;
  const DataSplit a = split(ds, spec);
  const DataSplit b = split(ds, spec);
  EXPECT_EQ(a.fitness.images.v, b.fitness.images.v);
  spec.seed = 2;
  const DataSplit c = split(ds, spec);
  EXPECT_NE(a.fitness.images.v, c.fitness.images.v);
}

TEST(Split, RejectsOversizedSpec) {
  const Dataset ds = synth_dataset(10, 3, 8, 5);  // 30 samples
  SplitSpec spec;
  spec.evo_train = 25;
  spec.control = 5;
  spec.fitness = 5;
  EXPECT_THROW(split(ds, spec), DataError);
}

TEST(Augment, CenterCropNoFlipIsIdentity) {
  const Dataset ds = synth_dataset(4, 3, 8, 21);
  Tensor out(ds.images.shape);
  augment_one(ds.images, 0, out, 4, 4, 4, false);
  const std::int64_t stride = ds.images.size() / ds.size();
  for (std::int64_t i = 0; i < stride; ++i) EXPECT_EQ(out[i], ds.images[i]);
}

TEST(Augment, ShapeAndRangePreserved) {
  Dataset ds = synth_dataset(16, 3, 8, 22);
  const auto shape = ds.images.shape;
  Rng rng(3);
  augment(ds.images, rng);
  EXPECT_EQ(ds.images.shape, shape);
  for (float v : ds.images.v) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Augment, CornerCropZeroBand) {
  Tensor ones({1, 8, 8, 3}, 1.0f);
  Tensor out(ones.shape);
  augment_one(ones, 0, out, 4, 0, 0, false);  // crop from the padded corner
  // first 4 rows/cols come from the zero padding
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(out[nhwc_index(out, 0, y, x, c)], 0.0f);
  for (int y = 4; y < 8; ++y)
    for (int x = 4; x < 8; ++x)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(out[nhwc_index(out, 0, y, x, c)], 1.0f);
}

TEST(Augment, FlipMirrorsColumns) {
  Tensor img({1, 2, 4, 1});
  for (int x = 0; x < 4; ++x) {
    img[nhwc_index(img, 0, 0, x, 0)] = static_cast<float>(x);
    img[nhwc_index(img, 0, 1, x, 0)] = static_cast<float>(x) + 10.0f;
  }
  Tensor out(img.shape);
  augment_one(img, 0, out, 0, 0, 0, true);
  for (int x = 0; x < 4; ++x)
    EXPECT_EQ(out[nhwc_index(out, 0, 0, x, 0)], static_cast<float>(3 - x));
}
