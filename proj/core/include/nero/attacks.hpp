#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nero/network.hpp"
#include "nero/rng.hpp"

namespace nero {

struct ThreatModel {
  enum class Norm { Linf, L2 };
  Norm norm = Norm::Linf;
  double eps = 8.0 / 255.0;
};

enum class AttackKind { Fgsm, Fgm, Pgd, Apgd, AaLite };
enum class AttackLoss { Ce, Dlr, TargetedDlr };

struct AttackConfig {
  AttackKind kind = AttackKind::Pgd;
  int steps = 20;
  double step_size = 0.0;  // 0 = eps/4 for PGD; APGD always starts at 2*eps
  bool random_start = false;
  AttackLoss loss = AttackLoss::Ce;
  double momentum_alpha = 0.75;
  int batch_size = 128;
};

/// x_adv = clip(x + eps * sign(grad)); sign(0) = 0.
Tensor fgsm(Network& net, const Tensor& x, const std::vector<int>& y, const ThreatModel& tm);

/// L2 variant: step along the per-sample normalized gradient.
Tensor fgm(Network& net, const Tensor& x, const std::vector<int>& y, const ThreatModel& tm);

/// Projected gradient descent. Every iterate satisfies the norm bound and
/// stays in [0,1]. `targets` switches to the targeted objective.
Tensor pgd(Network& net, const Tensor& x, const std::vector<int>& y, const ThreatModel& tm,
           const AttackConfig& cfg, Rng& rng, Mode bn_mode = Mode::Infer,
           const std::vector<int>* targets = nullptr);

/// Auto-PGD: momentum update with automated per-sample step halving at the
/// standard checkpoint schedule, restarting from the best-loss iterate.
/// Returns per sample the first misclassifying iterate, else the best-loss one.
Tensor apgd(Network& net, const Tensor& x, const std::vector<int>& y, const ThreatModel& tm,
            const AttackConfig& cfg, const std::vector<int>* targets = nullptr);

/// Difference-of-logits-ratio losses (per sample). With 3 classes the
/// targeted denominator degrades to z_pi1 - z_pi3.
std::vector<double> dlr_loss(const Tensor& logits, const std::vector<int>& y);
std::vector<double> dlr_loss_targeted(const Tensor& logits, const std::vector<int>& y,
                                      const std::vector<int>& targets);

struct AaLiteResult {
  std::vector<std::uint8_t> clean_correct;
  std::vector<std::uint8_t> flipped_ce;   // broken by APGD-CE
  std::vector<std::uint8_t> flipped_t;    // broken by APGD-T
  std::vector<std::uint8_t> robust;       // clean-correct and never flipped
  Tensor x_adv;                           // worst-case example per sample
  double robust_accuracy = 0.0;           // robust count / N
};

/// Targets attacked by the ensemble's APGD-T stage: n_classes - 1, capped at 9.
int aa_lite_num_targets(int n_classes);

/// Two-attack ensemble: APGD-CE, then targeted APGD-DLR against the
/// top-(n_classes-1) incorrect classes (capped at 9), run only on samples
/// still correctly classified.
AaLiteResult aa_lite(Network& net, const Tensor& x, const std::vector<int>& y,
                     const ThreatModel& tm, int steps = 20);

/// Per-sample result CSV: index, clean-correct, per-attack flips, robust flag.
void write_attack_csv(const std::string& path, const AaLiteResult& r);

}  // namespace nero
