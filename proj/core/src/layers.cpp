#include "nero/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace nero {

namespace {

// TF-style padding offset for 'same': total = max((out-1)*stride + k - in, 0).
int pad_before(int in, int kernel, int stride, bool same) {
  if (!same) return 0;
  const int out = (in + stride - 1) / stride;
  const int total = std::max((out - 1) * stride + kernel - in, 0);
  return total / 2;
}

template <class T>
void check_rank4(const TensorT<T>& x, const char* who) {
  if (x.rank() != 4) throw std::runtime_error(std::string(who) + ": expected NHWC input");
}

}  // namespace

// ---------------- Conv2d ----------------

template <class T>
Conv2dT<T>::Conv2dT(int in_channels, int out_channels, int kernel, int stride, bool same_padding,
                    bool with_bias)
    : kernel_({kernel, kernel, in_channels, out_channels}),
      dkernel_({kernel, kernel, in_channels, out_channels}),
      in_channels_(in_channels),
      out_channels_(out_channels),
      k_(kernel),
      stride_(stride),
      same_(same_padding),
      with_bias_(with_bias) {
  if (with_bias_) {
    bias_ = TensorT<T>({out_channels});
    dbias_ = TensorT<T>({out_channels});
  }
}

template <class T>
std::vector<TensorT<T>*> Conv2dT<T>::params() {
  if (with_bias_) return {&kernel_, &bias_};
  return {&kernel_};
}

template <class T>
std::vector<TensorT<T>*> Conv2dT<T>::grads() {
  if (with_bias_) return {&dkernel_, &dbias_};
  return {&dkernel_};
}

template <class T>
TensorT<T> Conv2dT<T>::forward(const TensorT<T>& x, Mode) {
  check_rank4(x, "conv");
  if (x.dim(3) != in_channels_) throw std::runtime_error("conv: channel mismatch");
  x_ = x;
  const int n = x.dim(0), ih = x.dim(1), iw = x.dim(2);
  const int oh = conv_out_dim(ih, k_, stride_, same_);
  const int ow = conv_out_dim(iw, k_, stride_, same_);
  const int ph = pad_before(ih, k_, stride_, same_);
  const int pw = pad_before(iw, k_, stride_, same_);
  TensorT<T> y({n, oh, ow, out_channels_});

  std::vector<double> acc(static_cast<size_t>(out_channels_));
  const T* xp = x.data();
  const T* kp = kernel_.data();
  T* yp = y.data();
  for (int b = 0; b < n; ++b)
    for (int o_h = 0; o_h < oh; ++o_h)
      for (int o_w = 0; o_w < ow; ++o_w) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int kh = 0; kh < k_; ++kh) {
          const int yh = o_h * stride_ - ph + kh;
          if (yh < 0 || yh >= ih) continue;
          for (int kw = 0; kw < k_; ++kw) {
            const int yw = o_w * stride_ - pw + kw;
            if (yw < 0 || yw >= iw) continue;
            const T* xrow = xp + (((static_cast<std::int64_t>(b) * ih + yh) * iw + yw) *
                                  in_channels_);
            const T* krow = kp + ((static_cast<std::int64_t>(kh) * k_ + kw) * in_channels_ *
                                  out_channels_);
            for (int ci = 0; ci < in_channels_; ++ci) {
              const double xv = static_cast<double>(xrow[ci]);
              const T* kc = krow + static_cast<std::int64_t>(ci) * out_channels_;
              for (int co = 0; co < out_channels_; ++co)
                acc[static_cast<size_t>(co)] += xv * static_cast<double>(kc[co]);
            }
          }
        }
        T* yrow = yp + (((static_cast<std::int64_t>(b) * oh + o_h) * ow + o_w) * out_channels_);
        for (int co = 0; co < out_channels_; ++co) {
          double v = acc[static_cast<size_t>(co)];
          if (with_bias_) v += static_cast<double>(bias_[co]);
          yrow[co] = static_cast<T>(v);
        }
      }
  return y;
}

template <class T>
TensorT<T> Conv2dT<T>::backward(const TensorT<T>& dy) {
  const int n = x_.dim(0), ih = x_.dim(1), iw = x_.dim(2);
  const int oh = dy.dim(1), ow = dy.dim(2);
  const int ph = pad_before(ih, k_, stride_, same_);
  const int pw = pad_before(iw, k_, stride_, same_);

  TensorT<T> dx(x_.shape, T(0));
  std::vector<double> dk(this->param_grads_on_ ? static_cast<size_t>(kernel_.size()) : 0, 0.0);
  std::vector<double> db(static_cast<size_t>(out_channels_), 0.0);

  const T* xp = x_.data();
  const T* kp = kernel_.data();
  const T* dyp = dy.data();
  T* dxp = dx.data();
  const bool want_param_grads = this->param_grads_on_;

  for (int b = 0; b < n; ++b)
    for (int o_h = 0; o_h < oh; ++o_h)
      for (int o_w = 0; o_w < ow; ++o_w) {
        const T* dyrow =
            dyp + (((static_cast<std::int64_t>(b) * oh + o_h) * ow + o_w) * out_channels_);
        if (with_bias_ && want_param_grads)
          for (int co = 0; co < out_channels_; ++co)
            db[static_cast<size_t>(co)] += static_cast<double>(dyrow[co]);
        for (int kh = 0; kh < k_; ++kh) {
          const int yh = o_h * stride_ - ph + kh;
          if (yh < 0 || yh >= ih) continue;
          for (int kw = 0; kw < k_; ++kw) {
            const int yw = o_w * stride_ - pw + kw;
            if (yw < 0 || yw >= iw) continue;
            const std::int64_t xoff =
                ((static_cast<std::int64_t>(b) * ih + yh) * iw + yw) * in_channels_;
            const std::int64_t koff =
                (static_cast<std::int64_t>(kh) * k_ + kw) * in_channels_ * out_channels_;
            for (int ci = 0; ci < in_channels_; ++ci) {
              const double xv = static_cast<double>(xp[xoff + ci]);
              const T* krow = kp + koff + static_cast<std::int64_t>(ci) * out_channels_;
              double acc_dx = 0.0;
              if (want_param_grads) {
                double* dkrow = dk.data() + koff + static_cast<std::int64_t>(ci) * out_channels_;
                for (int co = 0; co < out_channels_; ++co) {
                  const double g = static_cast<double>(dyrow[co]);
                  dkrow[co] += xv * g;
                  acc_dx += static_cast<double>(krow[co]) * g;
                }
              } else {
                for (int co = 0; co < out_channels_; ++co)
                  acc_dx += static_cast<double>(krow[co]) * static_cast<double>(dyrow[co]);
              }
              dxp[xoff + ci] += static_cast<T>(acc_dx);
            }
          }
        }
      }

  if (want_param_grads) {
    for (std::int64_t i = 0; i < kernel_.size(); ++i)
      dkernel_[i] += static_cast<T>(dk[static_cast<size_t>(i)]);
    if (with_bias_)
      for (int co = 0; co < out_channels_; ++co)
        dbias_[co] += static_cast<T>(db[static_cast<size_t>(co)]);
  }
  return dx;
}

// ---------------- BatchNorm ----------------

template <class T>
BatchNormT<T>::BatchNormT(int channels, T momentum, T eps)
    : gamma_({channels}, T(1)),
      beta_({channels}, T(0)),
      dgamma_({channels}, T(0)),
      dbeta_({channels}, T(0)),
      running_mean_({channels}, T(0)),
      running_var_({channels}, T(1)),
      channels_(channels),
      momentum_(momentum),
      eps_(eps) {}

template <class T>
TensorT<T> BatchNormT<T>::forward(const TensorT<T>& x, Mode mode) {
  check_rank4(x, "batchnorm");
  if (x.dim(3) != channels_) throw std::runtime_error("batchnorm: channel mismatch");
  last_mode_ = mode;
  const std::int64_t rows = x.size() / channels_;  // N*H*W

  std::vector<double> mean(static_cast<size_t>(channels_), 0.0);
  std::vector<double> var(static_cast<size_t>(channels_), 0.0);
  if (mode == Mode::Infer) {
    for (int c = 0; c < channels_; ++c) {
      mean[static_cast<size_t>(c)] = static_cast<double>(running_mean_[c]);
      var[static_cast<size_t>(c)] = static_cast<double>(running_var_[c]);
    }
  } else {
    const T* xp = x.data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < channels_; ++c)
        mean[static_cast<size_t>(c)] += static_cast<double>(xp[r * channels_ + c]);
    for (auto& m : mean) m /= static_cast<double>(rows);
    for (std::int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < channels_; ++c) {
        const double d = static_cast<double>(xp[r * channels_ + c]) - mean[static_cast<size_t>(c)];
        var[static_cast<size_t>(c)] += d * d;
      }
    for (auto& v : var) v /= static_cast<double>(rows);
    if (mode == Mode::Train) {
      for (int c = 0; c < channels_; ++c) {
        running_mean_[c] = static_cast<T>(momentum_ * running_mean_[c] +
                                          (T(1) - momentum_) * static_cast<T>(mean[static_cast<size_t>(c)]));
        running_var_[c] = static_cast<T>(momentum_ * running_var_[c] +
                                         (T(1) - momentum_) * static_cast<T>(var[static_cast<size_t>(c)]));
      }
    }
  }

  inv_std_.assign(static_cast<size_t>(channels_), 0.0);
  for (int c = 0; c < channels_; ++c)
    inv_std_[static_cast<size_t>(c)] =
        1.0 / std::sqrt(var[static_cast<size_t>(c)] + static_cast<double>(eps_));

  x_hat_ = TensorT<T>(x.shape);
  TensorT<T> y(x.shape);
  const T* xp = x.data();
  T* hp = x_hat_.data();
  T* yp = y.data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < channels_; ++c) {
      const size_t cc = static_cast<size_t>(c);
      const double h = (static_cast<double>(xp[r * channels_ + c]) - mean[cc]) * inv_std_[cc];
      hp[r * channels_ + c] = static_cast<T>(h);
      yp[r * channels_ + c] =
          static_cast<T>(h * static_cast<double>(gamma_[c]) + static_cast<double>(beta_[c]));
    }
  return y;
}

template <class T>
TensorT<T> BatchNormT<T>::backward(const TensorT<T>& dy) {
  const std::int64_t rows = dy.size() / channels_;
  TensorT<T> dx(dy.shape);
  const T* dyp = dy.data();
  const T* hp = x_hat_.data();
  T* dxp = dx.data();

  std::vector<double> sum_dy(static_cast<size_t>(channels_), 0.0);
  std::vector<double> sum_dy_h(static_cast<size_t>(channels_), 0.0);
  for (std::int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < channels_; ++c) {
      const double g = static_cast<double>(dyp[r * channels_ + c]);
      sum_dy[static_cast<size_t>(c)] += g;
      sum_dy_h[static_cast<size_t>(c)] += g * static_cast<double>(hp[r * channels_ + c]);
    }
  if (this->param_grads_on_) {
    for (int c = 0; c < channels_; ++c) {
      dgamma_[c] += static_cast<T>(sum_dy_h[static_cast<size_t>(c)]);
      dbeta_[c] += static_cast<T>(sum_dy[static_cast<size_t>(c)]);
    }
  }

  if (last_mode_ == Mode::Infer) {
    // running statistics are constants: dx = dy * gamma * inv_std
    for (std::int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < channels_; ++c) {
        const size_t cc = static_cast<size_t>(c);
        dxp[r * channels_ + c] = static_cast<T>(static_cast<double>(dyp[r * channels_ + c]) *
                                                static_cast<double>(gamma_[c]) * inv_std_[cc]);
      }
    return dx;
  }

  const double n = static_cast<double>(rows);
  for (std::int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < channels_; ++c) {
      const size_t cc = static_cast<size_t>(c);
      const double g = static_cast<double>(dyp[r * channels_ + c]);
      const double h = static_cast<double>(hp[r * channels_ + c]);
      const double t = n * g - sum_dy[cc] - h * sum_dy_h[cc];
      dxp[r * channels_ + c] =
          static_cast<T>(static_cast<double>(gamma_[c]) * inv_std_[cc] * t / n);
    }
  return dx;
}

// ---------------- Activation ----------------

template <class T>
std::string ActivationT<T>::name() const {
  switch (kind_) {
    case ActKind::Relu: return "relu";
    case ActKind::Swish: return "swish";
    case ActKind::Sigmoid: return "sigmoid";
    case ActKind::Linear: return "linear";
  }
  return "?";
}

template <class T>
TensorT<T> ActivationT<T>::forward(const TensorT<T>& x, Mode) {
  x_ = x;
  TensorT<T> y(x.shape);
  const T* xp = x.data();
  T* yp = y.data();
  switch (kind_) {
    case ActKind::Relu:
      for (std::int64_t i = 0; i < x.size(); ++i) yp[i] = xp[i] > T(0) ? xp[i] : T(0);
      break;
    case ActKind::Swish:
      for (std::int64_t i = 0; i < x.size(); ++i) {
        const double v = static_cast<double>(xp[i]);
        yp[i] = static_cast<T>(v / (1.0 + std::exp(-v)));
      }
      break;
    case ActKind::Sigmoid:
      for (std::int64_t i = 0; i < x.size(); ++i)
        yp[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(xp[i]))));
      break;
    case ActKind::Linear: y = x; break;
  }
  return y;
}

template <class T>
TensorT<T> ActivationT<T>::backward(const TensorT<T>& dy) {
  TensorT<T> dx(dy.shape);
  const T* xp = x_.data();
  const T* dyp = dy.data();
  T* dxp = dx.data();
  switch (kind_) {
    case ActKind::Relu:
      for (std::int64_t i = 0; i < dy.size(); ++i) dxp[i] = xp[i] > T(0) ? dyp[i] : T(0);
      break;
    case ActKind::Swish:
      for (std::int64_t i = 0; i < dy.size(); ++i) {
        const double v = static_cast<double>(xp[i]);
        const double s = 1.0 / (1.0 + std::exp(-v));
        dxp[i] = static_cast<T>(static_cast<double>(dyp[i]) * (s + v * s * (1.0 - s)));
      }
      break;
    case ActKind::Sigmoid:
      for (std::int64_t i = 0; i < dy.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(xp[i])));
        dxp[i] = static_cast<T>(static_cast<double>(dyp[i]) * s * (1.0 - s));
      }
      break;
    case ActKind::Linear: dx = dy; break;
  }
  return dx;
}

// ---------------- Pool ----------------

template <class T>
PoolT<T>::PoolT(PoolType type, int kernel, int stride, bool same_padding)
    : type_(type), k_(kernel), stride_(stride), same_(same_padding) {}

template <class T>
TensorT<T> PoolT<T>::forward(const TensorT<T>& x, Mode) {
  check_rank4(x, "pool");
  in_shape_ = x.shape;
  const int n = x.dim(0), ih = x.dim(1), iw = x.dim(2), c = x.dim(3);
  const int oh = conv_out_dim(ih, k_, stride_, same_);
  const int ow = conv_out_dim(iw, k_, stride_, same_);
  const int ph = pad_before(ih, k_, stride_, same_);
  const int pw = pad_before(iw, k_, stride_, same_);
  TensorT<T> y({n, oh, ow, c});

  if (type_ == PoolType::Max)
    argmax_.assign(static_cast<size_t>(y.size()), -1);
  else
    window_count_.assign(static_cast<size_t>(n) * oh * ow, 0);

  const T* xp = x.data();
  T* yp = y.data();
  for (int b = 0; b < n; ++b)
    for (int o_h = 0; o_h < oh; ++o_h)
      for (int o_w = 0; o_w < ow; ++o_w) {
        const std::int64_t orow = ((static_cast<std::int64_t>(b) * oh + o_h) * ow + o_w);
        int count = 0;
        for (int ch = 0; ch < c; ++ch) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t best_idx = -1;
          double sum = 0.0;
          count = 0;
          for (int kh = 0; kh < k_; ++kh) {
            const int yh = o_h * stride_ - ph + kh;
            if (yh < 0 || yh >= ih) continue;
            for (int kw = 0; kw < k_; ++kw) {
              const int yw = o_w * stride_ - pw + kw;
              if (yw < 0 || yw >= iw) continue;
              const std::int64_t xi =
                  (((static_cast<std::int64_t>(b) * ih + yh) * iw + yw) * c + ch);
              const double v = static_cast<double>(xp[xi]);
              if (v > best) {
                best = v;
                best_idx = xi;
              }
              sum += v;
              ++count;
            }
          }
          if (type_ == PoolType::Max) {
            yp[orow * c + ch] = best_idx >= 0 ? xp[best_idx] : T(0);
            argmax_[static_cast<size_t>(orow * c + ch)] = best_idx;
          } else {
            yp[orow * c + ch] = count > 0 ? static_cast<T>(sum / count) : T(0);
          }
        }
        if (type_ == PoolType::Avg) window_count_[static_cast<size_t>(orow)] = count;
      }
  return y;
}

template <class T>
TensorT<T> PoolT<T>::backward(const TensorT<T>& dy) {
  TensorT<T> dx(in_shape_, T(0));
  const int n = in_shape_[0], ih = in_shape_[1], iw = in_shape_[2], c = in_shape_[3];
  const int oh = dy.dim(1), ow = dy.dim(2);
  const int ph = pad_before(ih, k_, stride_, same_);
  const int pw = pad_before(iw, k_, stride_, same_);
  const T* dyp = dy.data();
  T* dxp = dx.data();

  if (type_ == PoolType::Max) {
    for (std::int64_t i = 0; i < dy.size(); ++i)
      if (argmax_[static_cast<size_t>(i)] >= 0) dxp[argmax_[static_cast<size_t>(i)]] += dyp[i];
    return dx;
  }

  for (int b = 0; b < n; ++b)
    for (int o_h = 0; o_h < oh; ++o_h)
      for (int o_w = 0; o_w < ow; ++o_w) {
        const std::int64_t orow = ((static_cast<std::int64_t>(b) * oh + o_h) * ow + o_w);
        const int count = window_count_[static_cast<size_t>(orow)];
        if (count == 0) continue;
        for (int kh = 0; kh < k_; ++kh) {
          const int yh = o_h * stride_ - ph + kh;
          if (yh < 0 || yh >= ih) continue;
          for (int kw = 0; kw < k_; ++kw) {
            const int yw = o_w * stride_ - pw + kw;
            if (yw < 0 || yw >= iw) continue;
            for (int ch = 0; ch < c; ++ch)
              dxp[((static_cast<std::int64_t>(b) * ih + yh) * iw + yw) * c + ch] +=
                  dyp[orow * c + ch] / static_cast<T>(count);
          }
        }
      }
  return dx;
}

// ---------------- Dense ----------------

template <class T>
DenseT<T>::DenseT(int in_dim, int out_dim, bool with_bias)
    : weight_({in_dim, out_dim}),
      dweight_({in_dim, out_dim}),
      in_dim_(in_dim),
      out_dim_(out_dim),
      with_bias_(with_bias) {
  if (with_bias_) {
    bias_ = TensorT<T>({out_dim});
    dbias_ = TensorT<T>({out_dim});
  }
}

template <class T>
std::vector<TensorT<T>*> DenseT<T>::params() {
  if (with_bias_) return {&weight_, &bias_};
  return {&weight_};
}

template <class T>
std::vector<TensorT<T>*> DenseT<T>::grads() {
  if (with_bias_) return {&dweight_, &dbias_};
  return {&dweight_};
}

template <class T>
TensorT<T> DenseT<T>::forward(const TensorT<T>& x, Mode) {
  if (x.rank() != 2 || x.dim(1) != in_dim_) throw std::runtime_error("dense: shape mismatch");
  x_ = x;
  const int n = x.dim(0);
  TensorT<T> y({n, out_dim_});
  std::vector<double> acc(static_cast<size_t>(out_dim_));
  for (int b = 0; b < n; ++b) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const T* xrow = x.data() + static_cast<std::int64_t>(b) * in_dim_;
    for (int i = 0; i < in_dim_; ++i) {
      const double xv = static_cast<double>(xrow[i]);
      const T* wrow = weight_.data() + static_cast<std::int64_t>(i) * out_dim_;
      for (int o = 0; o < out_dim_; ++o) acc[static_cast<size_t>(o)] += xv * static_cast<double>(wrow[o]);
    }
    T* yrow = y.data() + static_cast<std::int64_t>(b) * out_dim_;
    for (int o = 0; o < out_dim_; ++o) {
      double v = acc[static_cast<size_t>(o)];
      if (with_bias_) v += static_cast<double>(bias_[o]);
      yrow[o] = static_cast<T>(v);
    }
  }
  return y;
}

template <class T>
TensorT<T> DenseT<T>::backward(const TensorT<T>& dy) {
  const int n = x_.dim(0);
  TensorT<T> dx({n, in_dim_});
  const bool want_param_grads = this->param_grads_on_;
  std::vector<double> dw(want_param_grads ? static_cast<size_t>(weight_.size()) : 0, 0.0);
  std::vector<double> db(static_cast<size_t>(out_dim_), 0.0);

  for (int b = 0; b < n; ++b) {
    const T* xrow = x_.data() + static_cast<std::int64_t>(b) * in_dim_;
    const T* dyrow = dy.data() + static_cast<std::int64_t>(b) * out_dim_;
    T* dxrow = dx.data() + static_cast<std::int64_t>(b) * in_dim_;
    if (want_param_grads)
      for (int o = 0; o < out_dim_; ++o)
        db[static_cast<size_t>(o)] += static_cast<double>(dyrow[o]);
    for (int i = 0; i < in_dim_; ++i) {
      const double xv = static_cast<double>(xrow[i]);
      const T* wrow = weight_.data() + static_cast<std::int64_t>(i) * out_dim_;
      double acc = 0.0;
      if (want_param_grads) {
        double* dwrow = dw.data() + static_cast<std::int64_t>(i) * out_dim_;
        for (int o = 0; o < out_dim_; ++o) {
          const double g = static_cast<double>(dyrow[o]);
          dwrow[o] += xv * g;
          acc += static_cast<double>(wrow[o]) * g;
        }
      } else {
        for (int o = 0; o < out_dim_; ++o)
          acc += static_cast<double>(wrow[o]) * static_cast<double>(dyrow[o]);
      }
      dxrow[i] = static_cast<T>(acc);
    }
  }
  if (want_param_grads) {
    for (std::int64_t i = 0; i < weight_.size(); ++i)
      dweight_[i] += static_cast<T>(dw[static_cast<size_t>(i)]);
    if (with_bias_)
      for (int o = 0; o < out_dim_; ++o) dbias_[o] += static_cast<T>(db[static_cast<size_t>(o)]);
  }
  return dx;
}

// ---------------- Flatten ----------------

template <class T>
TensorT<T> FlattenT<T>::forward(const TensorT<T>& x, Mode) {
  in_shape_ = x.shape;
  TensorT<T> y;
  y.shape = {x.dim(0), static_cast<int>(x.size() / x.dim(0))};
  y.v = x.v;
  return y;
}

template <class T>
TensorT<T> FlattenT<T>::backward(const TensorT<T>& dy) {
  TensorT<T> dx;
  dx.shape = in_shape_;
  dx.v = dy.v;
  return dx;
}

// ---------------- Softmax ----------------

template <class T>
TensorT<T> softmax_rows(const TensorT<T>& logits) {
  const int n = logits.dim(0), k = logits.dim(1);
  TensorT<T> y(logits.shape);
  for (int b = 0; b < n; ++b) {
    const T* row = logits.data() + static_cast<std::int64_t>(b) * k;
    T* yrow = y.data() + static_cast<std::int64_t>(b) * k;
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < k; ++i) mx = std::max(mx, static_cast<double>(row[i]));
    double sum = 0.0;
    for (int i = 0; i < k; ++i) sum += std::exp(static_cast<double>(row[i]) - mx);
    for (int i = 0; i < k; ++i)
      yrow[i] = static_cast<T>(std::exp(static_cast<double>(row[i]) - mx) / sum);
  }
  return y;
}

template <class T>
TensorT<T> SoftmaxT<T>::forward(const TensorT<T>& x, Mode) {
  y_ = softmax_rows(x);
  return y_;
}

template <class T>
TensorT<T> SoftmaxT<T>::backward(const TensorT<T>& dy) {
  const int n = y_.dim(0), k = y_.dim(1);
  TensorT<T> dx(y_.shape);
  for (int b = 0; b < n; ++b) {
    const T* yrow = y_.data() + static_cast<std::int64_t>(b) * k;
    const T* grow = dy.data() + static_cast<std::int64_t>(b) * k;
    T* drow = dx.data() + static_cast<std::int64_t>(b) * k;
    double dot = 0.0;
    for (int i = 0; i < k; ++i) dot += static_cast<double>(yrow[i]) * static_cast<double>(grow[i]);
    for (int i = 0; i < k; ++i)
      drow[i] = static_cast<T>(static_cast<double>(yrow[i]) *
                               (static_cast<double>(grow[i]) - dot));
  }
  return dx;
}

// explicit instantiations: single precision default, double for tests
template class Conv2dT<float>;
template class Conv2dT<double>;
template class BatchNormT<float>;
template class BatchNormT<double>;
template class ActivationT<float>;
template class ActivationT<double>;
template class PoolT<float>;
template class PoolT<double>;
template class DenseT<float>;
template class DenseT<double>;
template class FlattenT<float>;
template class FlattenT<double>;
template class SoftmaxT<float>;
template class SoftmaxT<double>;
template TensorT<float> softmax_rows<float>(const TensorT<float>&);
template TensorT<double> softmax_rows<double>(const TensorT<double>&);

}  // namespace nero
