#include "nero/data.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace nero {

namespace {

constexpr int kCifarDim = 32;
constexpr int kCifarRecord = 3073;
constexpr int kCifarPerFile = 10000;

void read_cifar_file(const std::string& path, Tensor& images, std::vector<int>& labels,
                     int offset) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open CIFAR-10 file: " + path);
  f.seekg(0, std::ios::end);
  const auto file_size = static_cast<long long>(f.tellg());
  if (file_size != static_cast<long long>(kCifarRecord) * kCifarPerFile)
    throw DataError("wrong CIFAR-10 file size: " + path);
  f.seekg(0);

  std::vector<unsigned char> rec(kCifarRecord);
  for (int i = 0; i < kCifarPerFile; ++i) {
    f.read(reinterpret_cast<char*>(rec.data()), kCifarRecord);
    const int label = rec[0];
    if (label > 9) throw DataError("CIFAR-10 label byte > 9 in " + path);
    labels[static_cast<size_t>(offset + i)] = label;
    // channel-planar R,G,B row-major -> NHWC
    for (int c = 0; c < 3; ++c)
      for (int h = 0; h < kCifarDim; ++h)
        for (int w = 0; w < kCifarDim; ++w) {
          const unsigned char b = rec[1 + (c * kCifarDim + h) * kCifarDim + w];
          images[nhwc_index(images, offset + i, h, w, c)] = static_cast<float>(b) / 255.0f;
        }
  }
}

}  // namespace

Dataset cifar10_train(const std::string& dir) {
  Dataset ds;
  ds.n_classes = 10;
  ds.images = Tensor({5 * kCifarPerFile, kCifarDim, kCifarDim, 3});
  ds.labels.resize(5 * kCifarPerFile);
  for (int b = 0; b < 5; ++b) {
    char name[32];
    std::snprintf(name, sizeof(name), "data_batch_%d.bin", b + 1);
    read_cifar_file((std::filesystem::path(dir) / name).string(), ds.images, ds.labels,
                    b * kCifarPerFile);
  }
  return ds;
}

Dataset cifar10_test(const std::string& dir) {
  Dataset ds;
  ds.n_classes = 10;
  ds.images = Tensor({kCifarPerFile, kCifarDim, kCifarDim, 3});
  ds.labels.resize(kCifarPerFile);
  read_cifar_file((std::filesystem::path(dir) / "test_batch.bin").string(), ds.images,
                  ds.labels, 0);
  return ds;
}

Dataset synth_dataset(int n_per_class, int n_classes, int size, std::uint64_t seed) {
  if (n_classes < 2 || n_classes > 10) throw DataError("synth_dataset: n_classes must be in [2,10]");
  // stripe orientation per class; spatial period 2 along the given direction
  static const int kDir[10][2] = {{1, 0}, {0, 1}, {1, 1},  {1, -1}, {2, 1},
                                  {1, 2}, {2, -1}, {1, -2}, {3, 1},  {1, 3}};
  Dataset ds;
  ds.n_classes = n_classes;
  const int n = n_per_class * n_classes;
  ds.images = Tensor({n, size, size, 3});
  ds.labels.resize(static_cast<size_t>(n));

  Rng rng(Rng::mix(seed, 0x5e7b1a5eULL));
  for (int k = 0; k < n_classes; ++k)
    for (int i = 0; i < n_per_class; ++i) {
      const int idx = k * n_per_class + i;
      ds.labels[static_cast<size_t>(idx)] = k;
      const double brightness = rng.uniform_real(-0.05, 0.05);
      for (int h = 0; h < size; ++h)
        for (int w = 0; w < size; ++w)
          for (int c = 0; c < 3; ++c) {
            const int phase = kDir[k][0] * h + kDir[k][1] * w + c;
            const double s = ((phase % 2) + 2) % 2 == 0 ? 1.0 : -1.0;
            double v = 0.5 + 0.35 * s + brightness + rng.uniform_real(-0.12, 0.12);
            ds.images[nhwc_index(ds.images, idx, h, w, c)] =
                static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
    }
  return ds;
}

Dataset take(const Dataset& ds, const std::vector<int>& indices) {
  Dataset out;
  out.n_classes = ds.n_classes;
  const auto s = ds.sample_shape();
  out.images = Tensor({static_cast<int>(indices.size()), s[0], s[1], s[2]});
  out.labels.resize(indices.size());
  const std::int64_t stride = static_cast<std::int64_t>(s[0]) * s[1] * s[2];
  for (size_t i = 0; i < indices.size(); ++i) {
    const int src = indices[i];
    std::copy_n(ds.images.data() + src * stride, stride,
                out.images.data() + static_cast<std::int64_t>(i) * stride);
    out.labels[i] = ds.labels[static_cast<size_t>(src)];
  }
  return out;
}

DataSplit split(const Dataset& ds, const SplitSpec& spec) {
  const int total = spec.evo_train + spec.control + spec.fitness;
  if (total > ds.size()) throw DataError("split sizes exceed dataset size");
  std::vector<int> order(static_cast<size_t>(ds.size()));
  for (int i = 0; i < ds.size(); ++i) order[static_cast<size_t>(i)] = i;
  Rng rng(Rng::mix(spec.seed, 0x517195ULL));
  for (int i = ds.size() - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform_int(0, i));
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  DataSplit out;
  out.evo_train = take(ds, {order.begin(), order.begin() + spec.evo_train});
  out.control =
      take(ds, {order.begin() + spec.evo_train, order.begin() + spec.evo_train + spec.control});
  out.fitness = take(ds, {order.begin() + spec.evo_train + spec.control,
                          order.begin() + total});
  return out;
}

void gather_batch(const Dataset& ds, const std::vector<int>& order, int first, int count,
                  Tensor& x_out, std::vector<int>& y_out) {
  const auto s = ds.sample_shape();
  x_out = Tensor({count, s[0], s[1], s[2]});
  y_out.resize(static_cast<size_t>(count));
  const std::int64_t stride = static_cast<std::int64_t>(s[0]) * s[1] * s[2];
  for (int i = 0; i < count; ++i) {
    const int src = order[static_cast<size_t>(first + i)];
    std::copy_n(ds.images.data() + src * stride, stride,
                x_out.data() + static_cast<std::int64_t>(i) * stride);
    y_out[static_cast<size_t>(i)] = ds.labels[static_cast<size_t>(src)];
  }
}

void augment_one(const Tensor& batch, int sample, Tensor& out, int pad, int oy, int ox,
                 bool flip) {
  const int h = batch.dim(1), w = batch.dim(2), c = batch.dim(3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sx = flip ? w - 1 - x : x;
      const int py = y + oy - pad;  // source row in the unpadded image
      const int px = sx + ox - pad;
      for (int ch = 0; ch < c; ++ch) {
        const float v = (py >= 0 && py < h && px >= 0 && px < w)
                            ? batch[nhwc_index(batch, sample, py, px, ch)]
                            : 0.0f;
        out[nhwc_index(out, sample, y, x, ch)] = v;
      }
    }
}

void augment(Tensor& batch, Rng& rng, int pad) {
  Tensor out(batch.shape);
  const int n = batch.dim(0);
  for (int i = 0; i < n; ++i) {
    const int oy = static_cast<int>(rng.uniform_int(0, 2 * pad));
    const int ox = static_cast<int>(rng.uniform_int(0, 2 * pad));
    const bool flip = rng.bernoulli(0.5);
    augment_one(batch, i, out, pad, oy, ox, flip);
  }
  batch = std::move(out);
}

}  // namespace nero
