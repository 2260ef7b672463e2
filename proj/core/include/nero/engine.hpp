#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nero/attacks.hpp"
#include "nero/data.hpp"
#include "nero/network.hpp"
#include "nero/optim.hpp"

namespace nero {

struct TrainConfig {
  int batch_size = 64;
  long long epochs_cap = 10000;
  int early_stop_patience = 10;
  long long budget = 2000;       // parameter-update steps
  double l2_coeff = 5e-4;        // applied to conv/dense kernels only
  double grad_clip_norm = 0.0;   // 0 = off
  bool augment = false;
  std::uint64_t rng_seed = 1;
};

enum class StopReason { EarlyStop, Budget, EpochsCap, NonFinite };
const char* to_string(StopReason r);

struct TrainReport {
  std::vector<double> train_loss;    // per epoch (may end in NaN)
  std::vector<double> control_loss;  // per epoch
  long long epochs_run = 0;
  StopReason stop_reason = StopReason::EpochsCap;
  bool nonfinite_seen = false;
  long long budget_consumed = 0;
};

/// Standard minibatch training: inverse-time-decay (or configured) schedule,
/// L2 kernel penalty, optional global gradient-norm clipping and
/// augmentation, early stopping on the control set, budget accounting.
/// A non-finite loss aborts and is reported, never thrown.
TrainReport train(Network& net, const Dataset& train_set, const Dataset& control_set,
                  const TrainConfig& tc, const OptimizerConfig& oc);

/// Same loop with every minibatch replaced by its PGD counterpart (attack on
/// current parameters with batch statistics). adv.steps == 0 degenerates to
/// plain training, bit for bit.
TrainReport adversarial_train(Network& net, const Dataset& train_set,
                              const Dataset& control_set, const TrainConfig& tc,
                              const OptimizerConfig& oc, const AttackConfig& adv,
                              const ThreatModel& tm);

/// Sum of squared conv/dense kernel entries; biases and BN parameters are
/// never regularized.
double kernel_l2_penalty(Network& net);

/// Adds d(l2 * penalty)/dparam onto the existing kernel gradients.
void add_l2_gradients(Network& net, double coeff);

/// Scales all gradients so the global norm is at most max_norm.
void clip_gradients(const std::vector<Tensor*>& grads, double max_norm);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::uint8_t> mask;        // per-sample correctness
  std::vector<long long> histogram;      // predicted-class counts
};

/// Inference-mode accuracy, correctness mask and prediction histogram.
EvalResult evaluate(Network& net, const Dataset& ds, int batch_size);

/// Maps a decoded <learning> attribute list (batch_size, early_stop) onto a
/// TrainConfig with the given step budget.
TrainConfig train_config_from_attrs(const AttributeList& learning, long long budget);

// ---- checkpoint container ----

struct Checkpoint {
  NetworkPlan plan;
  int n_classes = 10;
  std::vector<float> weights;          // parameters + state buffers
  std::vector<float> optimizer_state;  // slot tensors, layer order
  long long optimizer_steps = 0;
  TrainReport report;
};

void save_checkpoint(const std::string& path, const NetworkPlan& plan, const Network& net,
                     int n_classes, const Optimizer* opt, const TrainReport& report);
Checkpoint load_checkpoint(const std::string& path);

/// Rebuilds the network from a checkpoint (architecture + weights).
Network restore_network(const Checkpoint& ck);

}  // namespace nero
