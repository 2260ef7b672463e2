#pragma once

#include <string>
#include <vector>

#include "nero/grammar.hpp"
#include "nero/tensor.hpp"

namespace nero {

enum class OptKind { GradientDescent, Adam, RmsProp };
enum class LrSchedule { InverseTime, StepDecay, Cosine };

struct OptimizerConfig {
  OptKind kind = OptKind::GradientDescent;
  double lr = 0.01;
  double decay = 0.0;  // inverse time decay coefficient
  // gradient descent
  double momentum = 0.0;
  bool nesterov = false;
  // adam
  double beta1 = 0.9;
  double beta2 = 0.999;
  // rmsprop
  double rho = 0.9;

  LrSchedule schedule = LrSchedule::InverseTime;
  double step_factor = 0.1;
  std::vector<long long> step_epochs;      // epoch boundaries for StepDecay
  long long cosine_total_steps = 0;        // horizon for Cosine (0 = derive)
  std::vector<long long> step_boundaries;  // in update steps; filled by the train loop
};

/// Maps a decoded <learning> attribute list onto an optimizer config.
OptimizerConfig optimizer_from_attrs(const AttributeList& learning);

/// lr(t) under the configured schedule; t counts parameter-update steps.
double lr_at(const OptimizerConfig& cfg, long long t);

/// Minibatch optimizer over an externally owned parameter set. Slot state is
/// serializable for checkpointing.
template <class T>
class OptimizerT {
 public:
  OptimizerT(OptimizerConfig cfg, std::vector<TensorT<T>*> params);

  void step(const std::vector<TensorT<T>*>& grads);
  long long steps_done() const { return t_; }
  const OptimizerConfig& config() const { return cfg_; }
  OptimizerConfig& config() { return cfg_; }

  std::vector<T> save_state() const;
  void load_state(const std::vector<T>& flat, long long steps);

 private:
  OptimizerConfig cfg_;
  std::vector<TensorT<T>*> params_;
  std::vector<TensorT<T>> slot1_;  // momentum / m / accumulator
  std::vector<TensorT<T>> slot2_;  // adam v
  long long t_ = 0;
};

using Optimizer = OptimizerT<float>;

}  // namespace nero
