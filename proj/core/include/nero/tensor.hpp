#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace nero {

/// Dense row-major tensor. Image batches use NHWC layout.
template <class T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> v;

  TensorT() = default;
  explicit TensorT(std::vector<int> s) : shape(std::move(s)), v(count(shape)) {}
  TensorT(std::vector<int> s, T fill) : shape(std::move(s)), v(count(shape), fill) {}

  static std::int64_t count(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& operator[](std::int64_t i) { return v[static_cast<size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return v[static_cast<size_t>(i)]; }

  void zero() { std::fill(v.begin(), v.end(), T(0)); }

  bool all_finite() const {
    for (const T& x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> out(shape);
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }
};

using Tensor = TensorT<float>;

template <class T>
inline std::int64_t nhwc_index(const TensorT<T>& t, int n, int h, int w, int c) {
  return ((static_cast<std::int64_t>(n) * t.dim(1) + h) * t.dim(2) + w) * t.dim(3) + c;
}

}  // namespace nero
