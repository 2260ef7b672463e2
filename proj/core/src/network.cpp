#include "nero/network.hpp"

#include <cmath>
#include <stdexcept>

namespace nero {

namespace {

// Non-overlapping average pooling by integer factors; used by aggregation.
template <class T>
TensorT<T> downsample_avg(const TensorT<T>& x, int fh, int fw) {
  if (fh == 1 && fw == 1) return x;
  const int n = x.dim(0), ih = x.dim(1), iw = x.dim(2), c = x.dim(3);
  const int oh = ih / fh, ow = iw / fw;
  TensorT<T> y({n, oh, ow, c});
  const double inv = 1.0 / (static_cast<double>(fh) * fw);
  for (int b = 0; b < n; ++b)
    for (int o_h = 0; o_h < oh; ++o_h)
      for (int o_w = 0; o_w < ow; ++o_w)
        for (int ch = 0; ch < c; ++ch) {
          double sum = 0.0;
          for (int kh = 0; kh < fh; ++kh)
            for (int kw = 0; kw < fw; ++kw)
              sum += static_cast<double>(
                  x[nhwc_index(x, b, o_h * fh + kh, o_w * fw + kw, ch)]);
          y[nhwc_index(y, b, o_h, o_w, ch)] = static_cast<T>(sum * inv);
        }
  return y;
}

template <class T>
void downsample_avg_backward(const TensorT<T>& dy, TensorT<T>& dx_accum, int fh, int fw) {
  if (fh == 1 && fw == 1) {
    for (std::int64_t i = 0; i < dy.size(); ++i) dx_accum[i] += dy[i];
    return;
  }
  const int n = dy.dim(0), oh = dy.dim(1), ow = dy.dim(2), c = dy.dim(3);
  const T inv = static_cast<T>(1.0 / (static_cast<double>(fh) * fw));
  for (int b = 0; b < n; ++b)
    for (int o_h = 0; o_h < oh; ++o_h)
      for (int o_w = 0; o_w < ow; ++o_w)
        for (int ch = 0; ch < c; ++ch) {
          const T g = dy[nhwc_index(dy, b, o_h, o_w, ch)] * inv;
          for (int kh = 0; kh < fh; ++kh)
            for (int kw = 0; kw < fw; ++kw)
              dx_accum[nhwc_index(dx_accum, b, o_h * fh + kh, o_w * fw + kw, ch)] += g;
        }
}

}  // namespace

template <class T>
TensorT<T> NetworkT<T>::forward(const TensorT<T>& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != input_shape[0] || x.dim(2) != input_shape[1] ||
      x.dim(3) != input_shape[2])
    throw std::runtime_error("network forward: input shape mismatch");
  x_ = x;
  for (auto& node : nodes) {
    TensorT<T> cur;
    if (node.inputs.size() == 1 && node.agg.factors[0][0] == 1 && node.agg.factors[0][1] == 1) {
      cur = node.inputs[0] == -1 ? x : nodes[static_cast<size_t>(node.inputs[0])].out;
    } else {
      // downsample each input to the minimum spatial size, then concat channels
      const int n = x.dim(0);
      cur = TensorT<T>({n, node.agg.out_shape[0], node.agg.out_shape[1], node.agg.out_shape[2]});
      int ch_off = 0;
      for (size_t k = 0; k < node.inputs.size(); ++k) {
        const TensorT<T>& src =
            node.inputs[k] == -1 ? x : nodes[static_cast<size_t>(node.inputs[k])].out;
        const TensorT<T> ds = downsample_avg(src, node.agg.factors[k][0], node.agg.factors[k][1]);
        const int c = ds.dim(3);
        for (int b = 0; b < n; ++b)
          for (int h = 0; h < ds.dim(1); ++h)
            for (int w = 0; w < ds.dim(2); ++w)
              for (int ch = 0; ch < c; ++ch)
                cur[nhwc_index(cur, b, h, w, ch_off + ch)] = ds[nhwc_index(ds, b, h, w, ch)];
        ch_off += c;
      }
    }
    for (auto& layer : node.layers) cur = layer->forward(cur, mode);
    node.out = std::move(cur);
  }
  return nodes.back().out;
}

template <class T>
TensorT<T> NetworkT<T>::backward(const TensorT<T>& dlogits) {
  TensorT<T> dx(x_.shape, T(0));
  for (auto& node : nodes) {
    node.grad_accum = TensorT<T>(node.out.shape, T(0));
  }
  nodes.back().grad_accum = dlogits;

  for (int i = static_cast<int>(nodes.size()) - 1; i >= 0; --i) {
    auto& node = nodes[static_cast<size_t>(i)];
    TensorT<T> g = std::move(node.grad_accum);
    for (auto it = node.layers.rbegin(); it != node.layers.rend(); ++it) g = (*it)->backward(g);

    // g is now the gradient at the aggregated input; split and route
    if (node.inputs.size() == 1 && node.agg.factors[0][0] == 1 && node.agg.factors[0][1] == 1) {
      TensorT<T>& dst = node.inputs[0] == -1
                            ? dx
                            : nodes[static_cast<size_t>(node.inputs[0])].grad_accum;
      for (std::int64_t j = 0; j < g.size(); ++j) dst[j] += g[j];
      continue;
    }
    const int n = g.dim(0);
    int ch_off = 0;
    for (size_t k = 0; k < node.inputs.size(); ++k) {
      TensorT<T>& dst =
          node.inputs[k] == -1 ? dx : nodes[static_cast<size_t>(node.inputs[k])].grad_accum;
      const int src_c = dst.dim(3);
      TensorT<T> slice({n, g.dim(1), g.dim(2), src_c});
      for (int b = 0; b < n; ++b)
        for (int h = 0; h < g.dim(1); ++h)
          for (int w = 0; w < g.dim(2); ++w)
            for (int ch = 0; ch < src_c; ++ch)
              slice[nhwc_index(slice, b, h, w, ch)] = g[nhwc_index(g, b, h, w, ch_off + ch)];
      downsample_avg_backward(slice, dst, node.agg.factors[k][0], node.agg.factors[k][1]);
      ch_off += src_c;
    }
  }
  return dx;
}

template <class T>
void NetworkT<T>::zero_grads() {
  for (auto* g : gradients()) g->zero();
}

template <class T>
void NetworkT<T>::set_param_grads(bool on) {
  for (auto& node : nodes)
    for (auto& layer : node.layers) layer->set_param_grads(on);
}

template <class T>
std::vector<TensorT<T>*> NetworkT<T>::parameters() {
  std::vector<TensorT<T>*> out;
  for (auto& node : nodes)
    for (auto& layer : node.layers)
      for (auto* p : layer->params()) out.push_back(p);
  return out;
}

template <class T>
std::vector<TensorT<T>*> NetworkT<T>::gradients() {
  std::vector<TensorT<T>*> out;
  for (auto& node : nodes)
    for (auto& layer : node.layers)
      for (auto* g : layer->grads()) out.push_back(g);
  return out;
}

template <class T>
std::vector<TensorT<T>*> NetworkT<T>::kernels() {
  std::vector<TensorT<T>*> out;
  for (auto& node : nodes)
    for (auto& layer : node.layers)
      for (auto* k : layer->kernels()) out.push_back(k);
  return out;
}

template <class T>
std::vector<TensorT<T>*> NetworkT<T>::state_buffers() {
  std::vector<TensorT<T>*> out;
  for (auto& node : nodes)
    for (auto& layer : node.layers)
      for (auto* s : layer->state()) out.push_back(s);
  return out;
}

template <class T>
std::int64_t NetworkT<T>::param_count() const {
  std::int64_t n = 0;
  for (const auto& node : nodes)
    for (const auto& layer : node.layers)
      for (auto* p : const_cast<Layer<T>&>(*layer).params()) n += p->size();
  return n;
}

template <class T>
std::vector<T> NetworkT<T>::save_weights() const {
  std::vector<T> flat;
  auto& self = const_cast<NetworkT<T>&>(*this);
  for (auto* p : self.parameters()) flat.insert(flat.end(), p->v.begin(), p->v.end());
  for (auto* s : self.state_buffers()) flat.insert(flat.end(), s->v.begin(), s->v.end());
  return flat;
}

template <class T>
void NetworkT<T>::load_weights(const std::vector<T>& flat) {
  size_t off = 0;
  auto copy_into = [&](TensorT<T>* t) {
    if (off + t->v.size() > flat.size())
      throw std::runtime_error("weight buffer too small for this architecture");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + t->v.size()), t->v.begin());
    off += t->v.size();
  };
  for (auto* p : parameters()) copy_into(p);
  for (auto* s : state_buffers()) copy_into(s);
  if (off != flat.size()) throw std::runtime_error("weight buffer size mismatch");
}

namespace {

template <class T>
void he_uniform_fill(TensorT<T>& t, std::int64_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.v) v = static_cast<T>(rng.uniform_real(-limit, limit));
}

}  // namespace

template <class T>
NetworkT<T> build_network_t(const NetworkPlan& plan, int n_classes, Rng& rng) {
  const ShapeResult shapes = infer_shapes(plan, n_classes);
  if (!shapes.ok) throw PlanError("invalid plan: " + shapes.error);

  NetworkT<T> net;
  net.input_shape = plan.input_shape;
  net.n_classes = n_classes;
  net.hash = plan_hash(plan);

  for (size_t i = 0; i < plan.descriptors.size(); ++i) {
    const auto& d = plan.descriptors[i];
    NodeT<T> node;
    node.inputs = d.inputs;

    std::vector<std::array<int, 3>> in_shapes;
    bool flat_in = false;
    for (int s : d.inputs) {
      if (s == -1) {
        in_shapes.push_back(plan.input_shape);
      } else {
        in_shapes.push_back(shapes.outputs[static_cast<size_t>(s)].shape);
        flat_in |= shapes.outputs[static_cast<size_t>(s)].flat;
      }
    }
    if (flat_in) {
      node.agg.factors.assign(d.inputs.size(), {1, 1});
      node.agg.out_shape = in_shapes[0];
    } else {
      node.agg = aggregate_inputs(in_shapes);
    }

    std::array<int, 3> cur = node.agg.out_shape;
    bool flat = flat_in;
    for (const auto& p : expand_block(d, n_classes)) {
      switch (p.op) {
        case PrimOp::Conv: {
          auto conv = std::make_unique<Conv2dT<T>>(cur[2], p.filters, p.kernel, p.stride,
                                                   p.same_padding, p.bias);
          he_uniform_fill(conv->kernel_,
                          static_cast<std::int64_t>(p.kernel) * p.kernel * cur[2], rng);
          cur = {conv_out_dim(cur[0], p.kernel, p.stride, p.same_padding),
                 conv_out_dim(cur[1], p.kernel, p.stride, p.same_padding), p.filters};
          node.layers.push_back(std::move(conv));
          break;
        }
        case PrimOp::BatchNorm:
          node.layers.push_back(std::make_unique<BatchNormT<T>>(cur[2]));
          break;
        case PrimOp::Act:
          node.layers.push_back(std::make_unique<ActivationT<T>>(p.act));
          break;
        case PrimOp::Pool:
          node.layers.push_back(std::make_unique<PoolT<T>>(p.pool, p.kernel, p.stride,
                                                           p.same_padding));
          cur = {conv_out_dim(cur[0], p.kernel, p.stride, p.same_padding),
                 conv_out_dim(cur[1], p.kernel, p.stride, p.same_padding), cur[2]};
          break;
        case PrimOp::Dense: {
          if (!flat) {
            node.layers.push_back(std::make_unique<FlattenT<T>>());
            flat = true;
          }
          const std::int64_t in_dim = static_cast<std::int64_t>(cur[0]) * cur[1] * cur[2];
          auto dense = std::make_unique<DenseT<T>>(static_cast<int>(in_dim), p.units, p.bias);
          he_uniform_fill(dense->weight_, in_dim, rng);
          cur = {1, 1, p.units};
          node.layers.push_back(std::move(dense));
          break;
        }
        case PrimOp::Softmax:
          // terminal softmax is applied outside the network (loss / eval)
          break;
        case PrimOp::Flatten:
          node.layers.push_back(std::make_unique<FlattenT<T>>());
          flat = true;
          break;
      }
    }
    net.nodes.push_back(std::move(node));
  }
  return net;
}

Network build_network(const NetworkPlan& plan, int n_classes, Rng& rng) {
  return build_network_t<float>(plan, n_classes, rng);
}

template <class T>
double loss_ce(const TensorT<T>& logits, const std::vector<int>& labels) {
  const int n = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (int b = 0; b < n; ++b) {
    const T* row = logits.data() + static_cast<std::int64_t>(b) * k;
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < k; ++i) mx = std::max(mx, static_cast<double>(row[i]));
    double sum = 0.0;
    for (int i = 0; i < k; ++i) sum += std::exp(static_cast<double>(row[i]) - mx);
    const double log_z = mx + std::log(sum);
    total += log_z - static_cast<double>(row[labels[static_cast<size_t>(b)]]);
  }
  return total / n;
}

template <class T>
TensorT<T> dloss_ce(const TensorT<T>& logits, const std::vector<int>& labels) {
  TensorT<T> d = softmax_rows(logits);
  const int n = logits.dim(0), k = logits.dim(1);
  for (int b = 0; b < n; ++b) d[static_cast<std::int64_t>(b) * k + labels[static_cast<size_t>(b)]] -= T(1);
  for (std::int64_t i = 0; i < d.size(); ++i) d[i] /= static_cast<T>(n);
  return d;
}

template <class T>
TensorT<T> dloss_ce_per_sample(const TensorT<T>& logits, const std::vector<int>& labels) {
  TensorT<T> d = softmax_rows(logits);
  const int n = logits.dim(0), k = logits.dim(1);
  for (int b = 0; b < n; ++b) d[static_cast<std::int64_t>(b) * k + labels[static_cast<size_t>(b)]] -= T(1);
  return d;
}

template class NetworkT<float>;
template class NetworkT<double>;
template NetworkT<float> build_network_t<float>(const NetworkPlan&, int, Rng&);
template NetworkT<double> build_network_t<double>(const NetworkPlan&, int, Rng&);
template double loss_ce<float>(const TensorT<float>&, const std::vector<int>&);
template double loss_ce<double>(const TensorT<double>&, const std::vector<int>&);
template TensorT<float> dloss_ce<float>(const TensorT<float>&, const std::vector<int>&);
template TensorT<double> dloss_ce<double>(const TensorT<double>&, const std::vector<int>&);
template TensorT<float> dloss_ce_per_sample<float>(const TensorT<float>&, const std::vector<int>&);
template TensorT<double> dloss_ce_per_sample<double>(const TensorT<double>&, const std::vector<int>&);

}  // namespace nero
