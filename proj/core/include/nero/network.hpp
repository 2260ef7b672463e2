#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "nero/layers.hpp"
#include "nero/netbuilder.hpp"
#include "nero/rng.hpp"

namespace nero {

template <class T>
struct NodeT {
  std::vector<int> inputs;
  AggregationRecipe agg;
  std::vector<std::unique_ptr<Layer<T>>> layers;

  // forward/backward scratch
  TensorT<T> out;
  TensorT<T> grad_accum;
};

/// Executable DAG realization of a NetworkPlan. forward() returns the
/// pre-softmax logits; apply softmax_rows for probabilities. A network is
/// single-writer during training; inference on a frozen instance is
/// shareable.
template <class T>
class NetworkT {
 public:
  /// Logits of shape (N, n_classes).
  TensorT<T> forward(const TensorT<T>& x, Mode mode);

  /// Reverse-mode pass from dL/dlogits; accumulates parameter gradients and
  /// returns dL/dx. Must follow a forward() on the same batch.
  TensorT<T> backward(const TensorT<T>& dlogits);

  void zero_grads();
  /// Toggles parameter-gradient accumulation in backward (attacks only need
  /// the input gradient).
  void set_param_grads(bool on);
  std::vector<TensorT<T>*> parameters();
  std::vector<TensorT<T>*> gradients();
  std::vector<TensorT<T>*> kernels();  // L2-regularized subset
  std::vector<TensorT<T>*> state_buffers();
  std::int64_t param_count() const;

  /// Flat contents of parameters + state buffers, in layer order.
  std::vector<T> save_weights() const;
  void load_weights(const std::vector<T>& flat);

  std::vector<NodeT<T>> nodes;
  std::array<int, 3> input_shape{0, 0, 0};
  int n_classes = 0;
  std::uint64_t hash = 0;

 private:
  TensorT<T> x_;  // cached network input for aggregation backward
};

using Network = NetworkT<float>;

/// Builds and He-initializes the executable network. Throws PlanError when
/// shape inference rejects the plan.
template <class T>
NetworkT<T> build_network_t(const NetworkPlan& plan, int n_classes, Rng& rng);

Network build_network(const NetworkPlan& plan, int n_classes, Rng& rng);

/// Mean negative log-likelihood over the batch, from pre-softmax logits.
template <class T>
double loss_ce(const TensorT<T>& logits, const std::vector<int>& labels);

/// d(mean CE)/dlogits = (softmax - onehot) / N.
template <class T>
TensorT<T> dloss_ce(const TensorT<T>& logits, const std::vector<int>& labels);

/// Per-sample CE gradient (no 1/N), as used by the attacks.
template <class T>
TensorT<T> dloss_ce_per_sample(const TensorT<T>& logits, const std::vector<int>& labels);

}  // namespace nero
