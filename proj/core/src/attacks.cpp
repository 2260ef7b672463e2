#include "nero/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace nero {

namespace {

std::vector<int> argmax_rows(const Tensor& logits) {
  const int n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(n));
  for (int b = 0; b < n; ++b) {
    const float* row = logits.data() + static_cast<std::int64_t>(b) * k;
    out[static_cast<size_t>(b)] =
        static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

// Per-sample loss values and the loss gradient w.r.t. the logits, for the
// objective being MAXIMIZED by the attack.
struct Objective {
  AttackLoss loss;
  const std::vector<int>* targets;  // null = untargeted

  void eval(const Tensor& logits, const std::vector<int>& y, std::vector<double>& f,
            Tensor& dlogits) const {
    const int n = logits.dim(0), k = logits.dim(1);
    f.assign(static_cast<size_t>(n), 0.0);
    dlogits = Tensor(logits.shape, 0.0f);

    if (loss == AttackLoss::Ce) {
      const Tensor probs = softmax_rows(logits);
      for (int b = 0; b < n; ++b) {
        const float* row = logits.data() + static_cast<std::int64_t>(b) * k;
        const float* p = probs.data() + static_cast<std::int64_t>(b) * k;
        float* d = dlogits.data() + static_cast<std::int64_t>(b) * k;
        const int label = targets ? (*targets)[static_cast<size_t>(b)]
                                  : y[static_cast<size_t>(b)];
        double mx = row[0];
        for (int i = 1; i < k; ++i) mx = std::max(mx, static_cast<double>(row[i]));
        double sum = 0.0;
        for (int i = 0; i < k; ++i) sum += std::exp(static_cast<double>(row[i]) - mx);
        const double ce = (mx + std::log(sum)) - static_cast<double>(row[label]);
        // untargeted maximizes CE(y); targeted maximizes -CE(target)
        const double s = targets ? -1.0 : 1.0;
        f[static_cast<size_t>(b)] = s * ce;
        for (int i = 0; i < k; ++i)
          d[i] = static_cast<float>(s * (static_cast<double>(p[i]) - (i == label ? 1.0 : 0.0)));
      }
      return;
    }

    // DLR family
    if (k < 3) throw std::runtime_error("DLR loss needs at least 3 classes");
    for (int b = 0; b < n; ++b) {
      const float* row = logits.data() + static_cast<std::int64_t>(b) * k;
      float* d = dlogits.data() + static_cast<std::int64_t>(b) * k;
      const int yi = y[static_cast<size_t>(b)];
      std::vector<int> order(static_cast<size_t>(k));
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int c) { return row[a] > row[c]; });

      double denom;
      std::vector<std::pair<int, double>> ddenom;  // (index, weight) of denominator terms
      if (loss == AttackLoss::TargetedDlr && k >= 4) {
        denom = static_cast<double>(row[order[0]]) -
                0.5 * (static_cast<double>(row[order[2]]) + static_cast<double>(row[order[3]]));
        ddenom = {{order[0], 1.0}, {order[2], -0.5}, {order[3], -0.5}};
      } else {
        denom = static_cast<double>(row[order[0]]) - static_cast<double>(row[order[2]]);
        ddenom = {{order[0], 1.0}, {order[2], -1.0}};
      }
      if (denom == 0.0) continue;  // all logits equal: loss 0, gradient 0

      int other;  // the class whose logit competes with z_y
      if (loss == AttackLoss::TargetedDlr) {
        other = (*targets)[static_cast<size_t>(b)];
      } else {
        other = -1;
        for (int i : order)
          if (i != yi) {
            other = i;
            break;
          }
      }
      const double numer = static_cast<double>(row[yi]) - static_cast<double>(row[other]);
      const double val = -numer / denom;
      f[static_cast<size_t>(b)] = val;
      // d(-u/v) = -du/v + u*dv/v^2
      d[yi] += static_cast<float>(-1.0 / denom);
      d[other] += static_cast<float>(1.0 / denom);
      for (const auto& [idx, w] : ddenom)
        d[idx] += static_cast<float>(numer / (denom * denom) * w);
    }
  }
};

// Gradient of the objective w.r.t. the input at x_cur.
void objective_grad(Network& net, const Tensor& x_cur, const std::vector<int>& y,
                    const Objective& obj, Mode mode, std::vector<double>& f, Tensor& gx,
                    std::vector<int>* preds = nullptr) {
  const Tensor logits = net.forward(x_cur, mode);
  if (preds) *preds = argmax_rows(logits);
  Tensor dlogits;
  obj.eval(logits, y, f, dlogits);
  net.set_param_grads(false);
  gx = net.backward(dlogits);
  net.set_param_grads(true);
}

// Projection of delta onto the ball, then [0,1]; returns the new iterate and
// rewrites delta = x_new - x so the bound survives range clipping.
void project(const Tensor& x, Tensor& delta, const ThreatModel& tm, Tensor& x_out) {
  const float eps = static_cast<float>(tm.eps);
  if (tm.norm == ThreatModel::Norm::Linf) {
    for (std::int64_t i = 0; i < delta.size(); ++i)
      delta[i] = std::clamp(delta[i], -eps, eps);
  } else {
    const int n = delta.dim(0);
    const std::int64_t d = delta.size() / n;
    for (int b = 0; b < n; ++b) {
      float* dp = delta.data() + b * d;
      double norm2 = 0.0;
      for (std::int64_t i = 0; i < d; ++i) norm2 += static_cast<double>(dp[i]) * dp[i];
      const double norm = std::sqrt(norm2);
      if (norm > tm.eps && norm > 0.0) {
        const float scale = static_cast<float>(tm.eps / norm);
        for (std::int64_t i = 0; i < d; ++i) dp[i] *= scale;
      }
    }
  }
  x_out = Tensor(x.shape);
  const float eps_f = static_cast<float>(tm.eps);
  for (std::int64_t i = 0; i < x.size(); ++i) {
    float v = std::clamp(x[i] + delta[i], 0.0f, 1.0f);
    if (tm.norm == ThreatModel::Norm::Linf) {
      // adding delta rounds at the data scale; nudge back so the measured
      // difference satisfies the bound exactly
      while (std::fabs(v - x[i]) > eps_f) v = std::nextafter(v, x[i]);
    }
    x_out[i] = v;
    delta[i] = v - x[i];
  }
}

void step_direction(const Tensor& g, const ThreatModel& tm, Tensor& dir) {
  dir = Tensor(g.shape);
  if (tm.norm == ThreatModel::Norm::Linf) {
    for (std::int64_t i = 0; i < g.size(); ++i)
      dir[i] = g[i] > 0.0f ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f);
  } else {
    const int n = g.dim(0);
    const std::int64_t d = g.size() / n;
    for (int b = 0; b < n; ++b) {
      const float* gp = g.data() + b * d;
      float* dp = dir.data() + b * d;
      double norm2 = 0.0;
      for (std::int64_t i = 0; i < d; ++i) norm2 += static_cast<double>(gp[i]) * gp[i];
      const double norm = std::sqrt(norm2);
      if (norm == 0.0) {
        std::fill(dp, dp + d, 0.0f);
      } else {
        for (std::int64_t i = 0; i < d; ++i) dp[i] = static_cast<float>(gp[i] / norm);
      }
    }
  }
}

void random_start_delta(Tensor& delta, const ThreatModel& tm, Rng& rng) {
  const int n = delta.dim(0);
  const std::int64_t d = delta.size() / n;
  if (tm.norm == ThreatModel::Norm::Linf) {
    for (std::int64_t i = 0; i < delta.size(); ++i)
      delta[i] = static_cast<float>(rng.uniform_real(-tm.eps, tm.eps));
  } else {
    for (int b = 0; b < n; ++b) {
      float* dp = delta.data() + b * d;
      double norm2 = 0.0;
      for (std::int64_t i = 0; i < d; ++i) {
        dp[i] = static_cast<float>(rng.gaussian(0.0, 1.0));
        norm2 += static_cast<double>(dp[i]) * dp[i];
      }
      const double norm = std::sqrt(norm2);
      const double radius =
          tm.eps * std::pow(rng.uniform_real(0.0, 1.0), 1.0 / static_cast<double>(d));
      if (norm > 0.0)
        for (std::int64_t i = 0; i < d; ++i)
          dp[i] = static_cast<float>(dp[i] / norm * radius);
    }
  }
}

}  // namespace

Tensor pgd(Network& net, const Tensor& x, const std::vector<int>& y, const ThreatModel& tm,
           const AttackConfig& cfg, Rng& rng, Mode bn_mode, const std::vector<int>* targets) {
  const double step = cfg.step_size > 0.0 ? cfg.step_size : tm.eps / 4.0;
  Objective obj{cfg.loss, targets};

  Tensor delta(x.shape, 0.0f);
  if (cfg.random_start) random_start_delta(delta, tm, rng);
  Tensor x_cur;
  project(x, delta, tm, x_cur);

  std::vector<double> f;
  Tensor g, dir;
  for (int k = 0; k < cfg.steps; ++k) {
    objective_grad(net, x_cur, y, obj, bn_mode, f, g);
    step_direction(g, tm, dir);
    for (std::int64_t i = 0; i < delta.size(); ++i)
      delta[i] += static_cast<float>(step) * dir[i];
    project(x, delta, tm, x_cur);
  }
  return x_cur;
}

Tensor fgsm(Network& net, const Tensor& x, const std::vector<int>& y, const ThreatModel& tm) {
  ThreatModel linf = tm;
  linf.norm = ThreatModel::Norm::Linf;
  AttackConfig cfg;
  cfg.kind = AttackKind::Fgsm;
  cfg.steps = 1;
  cfg.step_size = linf.eps;
  cfg.random_start = false;
  cfg.loss = AttackLoss::Ce;
  Rng rng(0);  // unused: no random start
  return pgd(net, x, y, linf, cfg, rng);
}

Tensor fgm(Network& net, const Tensor& x, const std::vector<int>& y, const ThreatModel& tm) {
  ThreatModel l2 = tm;
  l2.norm = ThreatModel::Norm::L2;
  AttackConfig cfg;
  cfg.kind = AttackKind::Fgm;
  cfg.steps = 1;
  cfg.step_size = l2.eps;
  cfg.random_start = false;
  cfg.loss = AttackLoss::Ce;
  Rng rng(0);
  return pgd(net, x, y, l2, cfg, rng);
}

namespace {

// Standard checkpoint schedule: p0=0, p1=0.22,
// p_{j+1} = p_j + max(p_j - p_{j-1} - 0.03, 0.06); w_j = ceil(p_j * n_iter).
std::vector<int> apgd_checkpoints(int n_iter) {
  std::vector<double> p = {0.0, 0.22};
  while (p.back() < 1.0)
    p.push_back(p.back() + std::max(p.back() - p[p.size() - 2] - 0.03, 0.06));
  std::vector<int> w;
  for (double v : p) {
    const int k = static_cast<int>(std::ceil(v * n_iter));
    if (k >= n_iter) break;
    if (k >= 1 && (w.empty() || k > w.back())) w.push_back(k);
  }
  return w;
}

}  // namespace

Tensor apgd(Network& net, const Tensor& x, const std::vector<int>& y, const ThreatModel& tm,
            const AttackConfig& cfg, const std::vector<int>* targets) {
  const int n = x.dim(0);
  const std::int64_t d = x.size() / n;
  const double alpha = cfg.momentum_alpha;
  const double rho = 0.75;
  Objective obj{cfg.loss, targets};
  const auto checkpoints = apgd_checkpoints(cfg.steps);

  std::vector<double> eta(static_cast<size_t>(n), 2.0 * tm.eps);
  std::vector<double> f_best(static_cast<size_t>(n), -std::numeric_limits<double>::infinity());
  std::vector<double> f_best_mis(static_cast<size_t>(n),
                                 -std::numeric_limits<double>::infinity());
  std::vector<double> eta_at_ckpt = eta;
  std::vector<double> fbest_at_ckpt(static_cast<size_t>(n),
                                    -std::numeric_limits<double>::infinity());
  std::vector<int> improvements(static_cast<size_t>(n), 0);
  std::vector<std::uint8_t> misclassified(static_cast<size_t>(n), 0);

  Tensor x_best = x;      // best-loss iterate
  Tensor x_best_mis = x;  // best-loss misclassifying iterate
  Tensor x_prev = x;
  Tensor x_cur = x;
  std::vector<double> f_prev(static_cast<size_t>(n), 0.0);

  std::vector<double> f;
  std::vector<int> preds;
  Tensor g, dir;

  auto record = [&](const Tensor& cand, const std::vector<double>& fc,
                    const std::vector<int>& pc, bool count_improvement) {
    for (int b = 0; b < n; ++b) {
      const size_t bb = static_cast<size_t>(b);
      if (count_improvement && fc[bb] > f_prev[bb]) ++improvements[bb];
      if (fc[bb] > f_best[bb]) {
        f_best[bb] = fc[bb];
        std::copy_n(cand.data() + b * d, d, x_best.data() + b * d);
      }
      if (pc[bb] != y[bb] && fc[bb] > f_best_mis[bb]) {
        misclassified[bb] = 1;
        f_best_mis[bb] = fc[bb];
        std::copy_n(cand.data() + b * d, d, x_best_mis.data() + b * d);
      }
    }
  };

  // initial step of size eta0 = 2*eps
  objective_grad(net, x_cur, y, obj, Mode::Infer, f, g, &preds);
  record(x_cur, f, preds, false);
  f_prev = f;
  step_direction(g, tm, dir);
  Tensor delta(x.shape, 0.0f);
  for (int b = 0; b < n; ++b)
    for (std::int64_t i = 0; i < d; ++i)
      delta[b * d + i] = static_cast<float>(eta[static_cast<size_t>(b)]) * dir[b * d + i];
  x_prev = x_cur;
  project(x, delta, tm, x_cur);

  size_t next_ckpt = 0;
  for (int k = 1; k < cfg.steps; ++k) {
    objective_grad(net, x_cur, y, obj, Mode::Infer, f, g, &preds);
    record(x_cur, f, preds, true);
    f_prev = f;

    if (next_ckpt < checkpoints.size() && k == checkpoints[next_ckpt]) {
      const int since = next_ckpt == 0
                            ? checkpoints[0]
                            : checkpoints[next_ckpt] - checkpoints[next_ckpt - 1];
      for (int b = 0; b < n; ++b) {
        const size_t bb = static_cast<size_t>(b);
        const bool cond1 = improvements[bb] < rho * since;
        const bool cond2 =
            eta[bb] == eta_at_ckpt[bb] && f_best[bb] == fbest_at_ckpt[bb];
        if (cond1 || cond2) {
          eta[bb] *= 0.5;
          // restart from the best iterate, momentum cleared
          std::copy_n(x_best.data() + b * d, d, x_cur.data() + b * d);
          std::copy_n(x_best.data() + b * d, d, x_prev.data() + b * d);
        }
        improvements[bb] = 0;
        eta_at_ckpt[bb] = eta[bb];
        fbest_at_ckpt[bb] = f_best[bb];
      }
      ++next_ckpt;
      // gradient belongs to the (possibly reset) iterate
      objective_grad(net, x_cur, y, obj, Mode::Infer, f, g, &preds);
      f_prev = f;
    }

    step_direction(g, tm, dir);
    // z = P(x_cur + eta * dir); x_next = P(x_cur + a(z - x_cur) + (1-a)(x_cur - x_prev))
    Tensor dz(x.shape);
    for (int b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < d; ++i)
        dz[b * d + i] = x_cur[b * d + i] - x[b * d + i] +
                        static_cast<float>(eta[static_cast<size_t>(b)]) * dir[b * d + i];
    Tensor z;
    project(x, dz, tm, z);

    Tensor dn(x.shape);
    for (std::int64_t i = 0; i < x.size(); ++i) {
      const double step_part = alpha * (static_cast<double>(z[i]) - x_cur[i]) +
                               (1.0 - alpha) * (static_cast<double>(x_cur[i]) - x_prev[i]);
      dn[i] = static_cast<float>(static_cast<double>(x_cur[i]) + step_part - x[i]);
    }
    x_prev = x_cur;
    project(x, dn, tm, x_cur);
  }

  // evaluate the final iterate
  {
    const Tensor logits = net.forward(x_cur, Mode::Infer);
    preds = argmax_rows(logits);
    Tensor dl;
    obj.eval(logits, y, f, dl);
    record(x_cur, f, preds, true);
  }

  // highest-loss misclassifying iterate if one exists, else highest-loss
  Tensor x_adv = x_best;
  for (int b = 0; b < n; ++b)
    if (misclassified[static_cast<size_t>(b)])
      std::copy_n(x_best_mis.data() + b * d, d, x_adv.data() + b * d);
  return x_adv;
}

std::vector<double> dlr_loss(const Tensor& logits, const std::vector<int>& y) {
  Objective obj{AttackLoss::Dlr, nullptr};
  std::vector<double> f;
  Tensor d;
  obj.eval(logits, y, f, d);
  return f;
}

std::vector<double> dlr_loss_targeted(const Tensor& logits, const std::vector<int>& y,
                                      const std::vector<int>& targets) {
  Objective obj{AttackLoss::TargetedDlr, &targets};
  std::vector<double> f;
  Tensor d;
  obj.eval(logits, y, f, d);
  return f;
}

int aa_lite_num_targets(int n_classes) { return std::min(n_classes - 1, 9); }

AaLiteResult aa_lite(Network& net, const Tensor& x, const std::vector<int>& y,
                     const ThreatModel& tm, int steps) {
  const int n = x.dim(0);
  const std::int64_t d = x.size() / n;
  AaLiteResult r;
  r.x_adv = x;
  r.clean_correct.assign(static_cast<size_t>(n), 0);
  r.flipped_ce.assign(static_cast<size_t>(n), 0);
  r.flipped_t.assign(static_cast<size_t>(n), 0);
  r.robust.assign(static_cast<size_t>(n), 0);

  const Tensor clean_logits = net.forward(x, Mode::Infer);
  const std::vector<int> clean_pred = argmax_rows(clean_logits);
  const int k = clean_logits.dim(1);
  for (int b = 0; b < n; ++b) {
    r.clean_correct[static_cast<size_t>(b)] = clean_pred[static_cast<size_t>(b)] == y[static_cast<size_t>(b)];
    r.robust[static_cast<size_t>(b)] = r.clean_correct[static_cast<size_t>(b)];
  }

  auto survivors = [&]() {
    std::vector<int> idx;
    for (int b = 0; b < n; ++b)
      if (r.robust[static_cast<size_t>(b)]) idx.push_back(b);
    return idx;
  };

  auto gather = [&](const std::vector<int>& idx, Tensor& xs, std::vector<int>& ys) {
    xs = Tensor({static_cast<int>(idx.size()), x.dim(1), x.dim(2), x.dim(3)});
    ys.resize(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(x.data() + idx[i] * d, d, xs.data() + static_cast<std::int64_t>(i) * d);
      ys[i] = y[static_cast<size_t>(idx[i])];
    }
  };

  auto apply = [&](const std::vector<int>& idx, const Tensor& xa,
                   std::vector<std::uint8_t>& flip_flags) {
    const Tensor logits = net.forward(xa, Mode::Infer);
    const std::vector<int> pred = argmax_rows(logits);
    for (size_t i = 0; i < idx.size(); ++i) {
      if (pred[i] != y[static_cast<size_t>(idx[i])]) {
        flip_flags[static_cast<size_t>(idx[i])] = 1;
        r.robust[static_cast<size_t>(idx[i])] = 0;
        std::copy_n(xa.data() + static_cast<std::int64_t>(i) * d, d,
                    r.x_adv.data() + idx[i] * d);
      }
    }
  };

  // APGD on the cross-entropy loss
  {
    const auto idx = survivors();
    if (!idx.empty()) {
      Tensor xs;
      std::vector<int> ys;
      gather(idx, xs, ys);
      AttackConfig cfg;
      cfg.kind = AttackKind::Apgd;
      cfg.steps = steps;
      cfg.loss = AttackLoss::Ce;
      apply(idx, apgd(net, xs, ys, tm, cfg), r.flipped_ce);
    }
  }

  // targeted APGD on the DLR loss, one run per target rank
  const int n_targets = aa_lite_num_targets(k);
  for (int rank = 1; rank <= n_targets; ++rank) {
    const auto idx = survivors();
    if (idx.empty()) break;
    Tensor xs;
    std::vector<int> ys;
    gather(idx, xs, ys);
    std::vector<int> targets(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
      const float* row = clean_logits.data() + static_cast<std::int64_t>(idx[i]) * k;
      std::vector<int> order(static_cast<size_t>(k));
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int c) { return row[a] > row[c]; });
      int seen = 0, chosen = order[0];
      for (int cls : order) {
        if (cls == ys[i]) continue;
        if (++seen == rank) {
          chosen = cls;
          break;
        }
      }
      targets[i] = chosen;
    }
    AttackConfig cfg;
    cfg.kind = AttackKind::Apgd;
    cfg.steps = steps;
    cfg.loss = AttackLoss::TargetedDlr;
    apply(idx, apgd(net, xs, ys, tm, cfg, &targets), r.flipped_t);
  }

  int robust_count = 0;
  for (auto b : r.robust) robust_count += b;
  r.robust_accuracy = n > 0 ? static_cast<double>(robust_count) / n : 0.0;
  return r;
}

void write_attack_csv(const std::string& path, const AaLiteResult& r) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write attack csv: " + path);
  f << "index,clean_correct,flipped_apgd_ce,flipped_apgd_t,robust\n";
  for (size_t i = 0; i < r.robust.size(); ++i)
    f << i << "," << int(r.clean_correct[i]) << "," << int(r.flipped_ce[i]) << ","
      << int(r.flipped_t[i]) << "," << int(r.robust[i]) << "\n";
}

}  // namespace nero
