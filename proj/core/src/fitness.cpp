#include "nero/fitness.hpp"

#include <algorithm>
#include <cmath>

namespace nero {

const char* to_string(IllFitted r) {
  switch (r) {
    case IllFitted::NonFiniteLoss: return "non-finite-loss";
    case IllFitted::TrivialClassifier: return "trivial-classifier";
    case IllFitted::InvalidPlan: return "invalid-plan";
  }
  return "?";
}

double f_beta(double C, double A, double beta) {
  const double b2 = beta * beta;
  const double denom = C + b2 * A;
  if (denom == 0.0) return 0.0;
  return (1.0 + b2) * C * A / denom;
}

void update_warmup(WarmupController& ctrl, const std::vector<FitnessReport>& population) {
  if (ctrl.transitioned || population.empty()) return;
  double sum = 0.0;
  for (const auto& r : population) sum += r.F;
  if (sum / static_cast<double>(population.size()) >= ctrl.tau) ctrl.transitioned = true;
}

std::optional<IllFitted> detect_ill_fitted(const TrainReport& report,
                                           const std::vector<long long>& histogram,
                                           int n_classes) {
  auto nonfinite = [](const std::vector<double>& v) {
    return std::any_of(v.begin(), v.end(), [](double x) { return !std::isfinite(x); });
  };
  if (report.nonfinite_seen || nonfinite(report.train_loss) || nonfinite(report.control_loss))
    return IllFitted::NonFiniteLoss;

  long long total = 0, peak = 0;
  for (long long h : histogram) {
    total += h;
    peak = std::max(peak, h);
  }
  // strictly above the (1 - 1/n_classes) share
  if (total > 0 &&
      static_cast<double>(peak) >
          (1.0 - 1.0 / static_cast<double>(n_classes)) * static_cast<double>(total))
    return IllFitted::TrivialClassifier;
  return std::nullopt;
}

std::pair<double, long long> adversarial_accuracy(Network& net, const Dataset& ds,
                                                  const std::vector<std::uint8_t>& mask,
                                                  const ThreatModel& tm, int batch_size) {
  std::vector<int> correct_idx;
  for (int i = 0; i < ds.size(); ++i)
    if (mask[static_cast<size_t>(i)]) correct_idx.push_back(i);
  const long long n_correct = static_cast<long long>(correct_idx.size());
  if (n_correct == 0) return {0.0, 0};

  long long still_correct = 0;
  Tensor xb;
  std::vector<int> yb;
  for (size_t first = 0; first < correct_idx.size(); first += static_cast<size_t>(batch_size)) {
    const int count =
        static_cast<int>(std::min<size_t>(batch_size, correct_idx.size() - first));
    gather_batch(ds, correct_idx, static_cast<int>(first), count, xb, yb);
    const Tensor x_adv = fgsm(net, xb, yb, tm);
    const Tensor logits = net.forward(x_adv, Mode::Infer);
    const int k = logits.dim(1);
    for (int b = 0; b < count; ++b) {
      const float* row = logits.data() + static_cast<std::int64_t>(b) * k;
      const int pred = static_cast<int>(std::max_element(row, row + k) - row);
      if (pred == yb[static_cast<size_t>(b)]) ++still_correct;
    }
  }
  return {static_cast<double>(still_correct) / static_cast<double>(n_correct), n_correct};
}

FitnessReport evaluate_individual(Network& net, const Dataset& fitness_set, double beta,
                                  const ThreatModel& tm, const WarmupController& warmup,
                                  const TrainReport& train_report, int batch_size) {
  FitnessReport report;
  report.regime = warmup.regime();
  report.n_clean = fitness_set.size();

  // non-finite training history bypasses even the clean evaluation
  if (train_report.nonfinite_seen) {
    report.ill_fitted = IllFitted::NonFiniteLoss;
    report.F = kPenaltyFitness;
    return report;
  }

  const EvalResult eval = evaluate(net, fitness_set, batch_size);
  report.C = eval.accuracy;
  report.n_correct = 0;
  for (auto m : eval.mask) report.n_correct += m;

  if (const auto reason = detect_ill_fitted(train_report, eval.histogram, fitness_set.n_classes)) {
    report.ill_fitted = reason;
    report.F = kPenaltyFitness;
    return report;
  }

  if (report.regime == FitnessRegime::Warmup) {
    report.F = report.C;
    return report;
  }

  const auto [a, n_c] = adversarial_accuracy(net, fitness_set, eval.mask, tm, batch_size);
  report.A = a;
  report.n_correct = n_c;
  report.a_evaluated = true;
  report.F = f_beta(report.C, report.A, beta);
  return report;
}

FitnessReport penalized_report(IllFitted reason, FitnessRegime regime) {
  FitnessReport report;
  report.regime = regime;
  report.ill_fitted = reason;
  report.F = kPenaltyFitness;
  return report;
}

}  // namespace nero
