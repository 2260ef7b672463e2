#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nero/netbuilder.hpp"
#include "nero/tensor.hpp"

namespace nero {

/// Train: batch statistics, running stats updated.
/// AttackStats: batch statistics, running stats untouched (train-time attacks).
/// Infer: running statistics.
enum class Mode { Train, AttackStats, Infer };

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;

  /// Caches whatever backward needs; backward must follow the matching forward.
  virtual TensorT<T> forward(const TensorT<T>& x, Mode mode) = 0;
  virtual TensorT<T> backward(const TensorT<T>& dy) = 0;

  virtual std::vector<TensorT<T>*> params() { return {}; }
  virtual std::vector<TensorT<T>*> grads() { return {}; }
  /// Subset of params() carrying the L2 penalty (conv/dense kernels).
  virtual std::vector<TensorT<T>*> kernels() { return {}; }
  /// Non-trainable persistent buffers (BN running statistics).
  virtual std::vector<TensorT<T>*> state() { return {}; }

  /// Attacks only need the input gradient; skipping parameter-gradient
  /// accumulation roughly halves their backward cost.
  void set_param_grads(bool on) { param_grads_on_ = on; }

  virtual std::string name() const = 0;

 protected:
  bool param_grads_on_ = true;
};

template <class T>
class Conv2dT final : public Layer<T> {
 public:
  Conv2dT(int in_channels, int out_channels, int kernel, int stride, bool same_padding,
          bool with_bias);

  TensorT<T> forward(const TensorT<T>& x, Mode mode) override;
  TensorT<T> backward(const TensorT<T>& dy) override;

  std::vector<TensorT<T>*> params() override;
  std::vector<TensorT<T>*> grads() override;
  std::vector<TensorT<T>*> kernels() override { return {&kernel_}; }
  std::string name() const override { return "conv"; }

  TensorT<T> kernel_;  // [KH, KW, Cin, Cout]
  TensorT<T> bias_;    // [Cout] (empty when bias disabled)
  TensorT<T> dkernel_;
  TensorT<T> dbias_;

  int in_channels_, out_channels_, k_, stride_;
  bool same_, with_bias_;

 private:
  TensorT<T> x_;  // cached input
};

template <class T>
class BatchNormT final : public Layer<T> {
 public:
  explicit BatchNormT(int channels, T momentum = T(0.9), T eps = T(1e-5));

  TensorT<T> forward(const TensorT<T>& x, Mode mode) override;
  TensorT<T> backward(const TensorT<T>& dy) override;

  std::vector<TensorT<T>*> params() override { return {&gamma_, &beta_}; }
  std::vector<TensorT<T>*> grads() override { return {&dgamma_, &dbeta_}; }
  std::vector<TensorT<T>*> state() override { return {&running_mean_, &running_var_}; }
  std::string name() const override { return "batchnorm"; }

  TensorT<T> gamma_, beta_, dgamma_, dbeta_;
  TensorT<T> running_mean_, running_var_;

 private:
  int channels_;
  T momentum_, eps_;
  Mode last_mode_ = Mode::Train;
  TensorT<T> x_hat_;
  std::vector<double> inv_std_;
};

template <class T>
class ActivationT final : public Layer<T> {
 public:
  explicit ActivationT(ActKind kind) : kind_(kind) {}

  TensorT<T> forward(const TensorT<T>& x, Mode mode) override;
  TensorT<T> backward(const TensorT<T>& dy) override;
  std::string name() const override;

  ActKind kind_;

 private:
  TensorT<T> x_;
};

template <class T>
class PoolT final : public Layer<T> {
 public:
  PoolT(PoolType type, int kernel, int stride, bool same_padding);

  TensorT<T> forward(const TensorT<T>& x, Mode mode) override;
  TensorT<T> backward(const TensorT<T>& dy) override;
  std::string name() const override { return type_ == PoolType::Avg ? "avgpool" : "maxpool"; }

  PoolType type_;
  int k_, stride_;
  bool same_;

 private:
  std::vector<int> in_shape_;
  std::vector<std::int64_t> argmax_;   // max pooling routing
  std::vector<int> window_count_;      // avg divisor per output cell
};

template <class T>
class DenseT final : public Layer<T> {
 public:
  DenseT(int in_dim, int out_dim, bool with_bias);

  TensorT<T> forward(const TensorT<T>& x, Mode mode) override;
  TensorT<T> backward(const TensorT<T>& dy) override;

  std::vector<TensorT<T>*> params() override;
  std::vector<TensorT<T>*> grads() override;
  std::vector<TensorT<T>*> kernels() override { return {&weight_}; }
  std::string name() const override { return "dense"; }

  TensorT<T> weight_;  // [In, Out]
  TensorT<T> bias_;
  TensorT<T> dweight_, dbias_;
  int in_dim_, out_dim_;
  bool with_bias_;

 private:
  TensorT<T> x_;
};

/// Reshapes (N,H,W,C) to (N, H*W*C); inserted before the first dense layer.
template <class T>
class FlattenT final : public Layer<T> {
 public:
  TensorT<T> forward(const TensorT<T>& x, Mode mode) override;
  TensorT<T> backward(const TensorT<T>& dy) override;
  std::string name() const override { return "flatten"; }

 private:
  std::vector<int> in_shape_;
};

template <class T>
class SoftmaxT final : public Layer<T> {
 public:
  TensorT<T> forward(const TensorT<T>& x, Mode mode) override;
  TensorT<T> backward(const TensorT<T>& dy) override;
  std::string name() const override { return "softmax"; }

 private:
  TensorT<T> y_;
};

/// Row-wise numerically stable softmax over (N, K) logits.
template <class T>
TensorT<T> softmax_rows(const TensorT<T>& logits);

}  // namespace nero
