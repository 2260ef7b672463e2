#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nero/rng.hpp"
#include "nero/tensor.hpp"

namespace nero {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Images are NHWC in [0,1]; labels in [0, n_classes).
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int n_classes = 0;

  int size() const { return images.rank() == 4 ? images.dim(0) : 0; }
  std::array<int, 3> sample_shape() const {
    return {images.dim(1), images.dim(2), images.dim(3)};
  }
};

/// CIFAR-10 binary format: records of 3073 bytes, 1 label byte followed by
/// 3072 channel-planar pixels. Train = data_batch_1..5.bin, test = test_batch.bin.
Dataset cifar10_train(const std::string& dir);
Dataset cifar10_test(const std::string& dir);

/// Deterministic procedurally generated desk-scale dataset: class-dependent
/// oriented stripe patterns plus seeded noise, 8x8x3 by default.
Dataset synth_dataset(int n_per_class, int n_classes = 3, int size = 8,
                      std::uint64_t seed = 1);

struct SplitSpec {
  int evo_train = 43000;
  int control = 3500;
  int fitness = 3500;
  std::uint64_t seed = 1;
};

struct DataSplit {
  Dataset evo_train;
  Dataset control;
  Dataset fitness;
};

/// Uniformly random disjoint partition; throws when sizes exceed N.
DataSplit split(const Dataset& ds, const SplitSpec& spec);

/// Subset by explicit indices (for tests and batching).
Dataset take(const Dataset& ds, const std::vector<int>& indices);

/// Gathers one minibatch [first, first+count) of the given index order.
void gather_batch(const Dataset& ds, const std::vector<int>& order, int first, int count,
                  Tensor& x_out, std::vector<int>& y_out);

/// Deterministic augmentation core: zero-pad by `pad`, crop at (oy, ox),
/// optional horizontal flip. Offsets in [0, 2*pad].
void augment_one(const Tensor& batch, int sample, Tensor& out, int pad, int oy, int ox,
                 bool flip);

/// 4-pixel padding, random crop and p=0.5 horizontal flip, per image.
void augment(Tensor& batch, Rng& rng, int pad = 4);

}  // namespace nero
