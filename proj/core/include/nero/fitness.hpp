#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nero/attacks.hpp"
#include "nero/engine.hpp"

namespace nero {

enum class IllFitted { NonFiniteLoss, TrivialClassifier, InvalidPlan };
const char* to_string(IllFitted r);

enum class FitnessRegime { Warmup, FBeta };

inline constexpr double kPenaltyFitness = -1.0;

/// The unit of selection: clean accuracy C, adversarial accuracy A over the
/// N_c initially correct samples, and the fitness value F.
struct FitnessReport {
  double C = 0.0;
  double A = 0.0;
  double F = kPenaltyFitness;
  long long n_clean = 0;    // N
  long long n_correct = 0;  // N_c
  std::optional<IllFitted> ill_fitted;
  FitnessRegime regime = FitnessRegime::Warmup;
  bool a_evaluated = false;
};

/// Weighted harmonic combination (1+b^2) C A / (C + b^2 A); 0 when the
/// denominator vanishes.
double f_beta(double C, double A, double beta);

/// Warm-up latch: transitions permanently once the population mean fitness
/// reaches tau.
struct WarmupController {
  double tau = 0.80;
  bool transitioned = false;

  FitnessRegime regime() const {
    return transitioned ? FitnessRegime::FBeta : FitnessRegime::Warmup;
  }
};

/// Latches on mean F (penalties included) >= tau; never un-latches.
void update_warmup(WarmupController& ctrl, const std::vector<FitnessReport>& population);

/// Non-finite training loss, else prediction frequency strictly above
/// (1 - 1/n_classes) * N.
std::optional<IllFitted> detect_ill_fitted(const TrainReport& report,
                                           const std::vector<long long>& histogram,
                                           int n_classes);

/// Attacks only the initially correct samples; A = still-correct / N_c
/// (0 when N_c = 0). Uses FGSM batched at `batch_size`.
std::pair<double, long long> adversarial_accuracy(Network& net, const Dataset& ds,
                                                  const std::vector<std::uint8_t>& mask,
                                                  const ThreatModel& tm, int batch_size = 128);

/// Full per-individual evaluation: ill-fitted short-circuit, clean accuracy,
/// and (after the warm-up transition) FGSM adversarial accuracy folded into
/// F_beta.
FitnessReport evaluate_individual(Network& net, const Dataset& fitness_set, double beta,
                                  const ThreatModel& tm, const WarmupController& warmup,
                                  const TrainReport& train_report, int batch_size = 128);

/// Report for an individual whose plan failed to decode/build.
FitnessReport penalized_report(IllFitted reason, FitnessRegime regime);

}  // namespace nero
