#include "nero/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace nero {

const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::EarlyStop: return "early-stop";
    case StopReason::Budget: return "budget";
    case StopReason::EpochsCap: return "epochs-cap";
    case StopReason::NonFinite: return "non-finite";
  }
  return "?";
}

double kernel_l2_penalty(Network& net) {
  double sum = 0.0;
  for (auto* k : net.kernels())
    for (std::int64_t i = 0; i < k->size(); ++i)
      sum += static_cast<double>((*k)[i]) * static_cast<double>((*k)[i]);
  return sum;
}

void add_l2_gradients(Network& net, double coeff) {
  auto kernels = net.kernels();
  auto params = net.parameters();
  auto grads = net.gradients();
  for (size_t i = 0; i < params.size(); ++i) {
    if (std::find(kernels.begin(), kernels.end(), params[i]) == kernels.end()) continue;
    auto& p = *params[i];
    auto& g = *grads[i];
    for (std::int64_t j = 0; j < p.size(); ++j)
      g[j] += static_cast<float>(2.0 * coeff * static_cast<double>(p[j]));
  }
}

void clip_gradients(const std::vector<Tensor*>& grads, double max_norm) {
  double sq = 0.0;
  for (auto* g : grads)
    for (std::int64_t i = 0; i < g->size(); ++i)
      sq += static_cast<double>((*g)[i]) * static_cast<double>((*g)[i]);
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const float scale = static_cast<float>(max_norm / norm);
  for (auto* g : grads)
    for (std::int64_t i = 0; i < g->size(); ++i) (*g)[i] *= scale;
}

namespace {

double dataset_ce(Network& net, const Dataset& ds, int batch_size) {
  std::vector<int> order(static_cast<size_t>(ds.size()));
  for (int i = 0; i < ds.size(); ++i) order[static_cast<size_t>(i)] = i;
  double total = 0.0;
  Tensor xb;
  std::vector<int> yb;
  for (int first = 0; first < ds.size(); first += batch_size) {
    const int count = std::min(batch_size, ds.size() - first);
    gather_batch(ds, order, first, count, xb, yb);
    const Tensor logits = net.forward(xb, Mode::Infer);
    total += loss_ce(logits, yb) * count;
  }
  return total / ds.size();
}

TrainReport train_loop(Network& net, const Dataset& train_set, const Dataset& control_set,
                       const TrainConfig& tc, const OptimizerConfig& oc,
                       const AttackConfig* adv, const ThreatModel* tm) {
  TrainReport report;
  Rng rng(tc.rng_seed);

  const int steps_per_epoch = (train_set.size() + tc.batch_size - 1) / tc.batch_size;
  OptimizerConfig oc_resolved = oc;
  // epoch-indexed step decay boundaries resolve against this dataset
  oc_resolved.step_boundaries.clear();
  for (long long e : oc.step_epochs)
    oc_resolved.step_boundaries.push_back(e * steps_per_epoch);
  if (oc.schedule == LrSchedule::Cosine && oc.cosine_total_steps == 0)
    oc_resolved.cosine_total_steps =
        std::min<long long>(tc.budget, tc.epochs_cap * steps_per_epoch);

  Optimizer opt(oc_resolved, net.parameters());
  auto grads = net.gradients();

  long long budget_left = tc.budget;
  std::vector<int> order(static_cast<size_t>(train_set.size()));
  for (int i = 0; i < train_set.size(); ++i) order[static_cast<size_t>(i)] = i;

  double best_control = std::numeric_limits<double>::infinity();
  int no_improve = 0;
  bool stopped = false;

  Tensor xb;
  std::vector<int> yb;
  for (long long epoch = 0; epoch < tc.epochs_cap && !stopped; ++epoch) {
    if (budget_left <= 0) {
      report.stop_reason = StopReason::Budget;
      stopped = true;
      break;
    }
    // Fisher-Yates shuffle from the epoch stream
    for (int i = train_set.size() - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.uniform_int(0, i));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    double epoch_loss = 0.0;
    int batches = 0;
    bool nonfinite = false;
    for (int first = 0; first < train_set.size() && budget_left > 0; first += tc.batch_size) {
      const int count = std::min(tc.batch_size, train_set.size() - first);
      gather_batch(train_set, order, first, count, xb, yb);
      if (tc.augment) augment(xb, rng);
      if (adv && adv->steps > 0) xb = pgd(net, xb, yb, *tm, *adv, rng, Mode::AttackStats);

      const Tensor logits = net.forward(xb, Mode::Train);
      const double data_loss = loss_ce(logits, yb);
      const double loss = data_loss + tc.l2_coeff * kernel_l2_penalty(net);
      ++batches;
      epoch_loss += loss;
      if (!std::isfinite(loss)) {
        report.train_loss.push_back(loss);  // preserve the non-finite entry
        report.nonfinite_seen = true;
        report.stop_reason = StopReason::NonFinite;
        nonfinite = true;
        stopped = true;
        break;
      }

      net.zero_grads();
      net.backward(dloss_ce(logits, yb));
      if (tc.l2_coeff > 0.0) add_l2_gradients(net, tc.l2_coeff);
      if (tc.grad_clip_norm > 0.0) clip_gradients(grads, tc.grad_clip_norm);
      opt.step(grads);
      --budget_left;
    }
    if (nonfinite) break;

    report.train_loss.push_back(batches > 0 ? epoch_loss / batches : 0.0);
    const double control = dataset_ce(net, control_set, tc.batch_size);
    report.control_loss.push_back(control);
    ++report.epochs_run;

    if (!std::isfinite(control)) {
      report.nonfinite_seen = true;
      report.stop_reason = StopReason::NonFinite;
      stopped = true;
      break;
    }
    if (control < best_control) {
      best_control = control;
      no_improve = 0;
    } else if (++no_improve >= tc.early_stop_patience) {
      report.stop_reason = StopReason::EarlyStop;
      stopped = true;
      break;
    }
    if (budget_left <= 0) {
      report.stop_reason = StopReason::Budget;
      stopped = true;
      break;
    }
  }
  if (!stopped) report.stop_reason = StopReason::EpochsCap;
  report.budget_consumed = tc.budget - budget_left;
  return report;
}

}  // namespace

TrainReport train(Network& net, const Dataset& train_set, const Dataset& control_set,
                  const TrainConfig& tc, const OptimizerConfig& oc) {
  return train_loop(net, train_set, control_set, tc, oc, nullptr, nullptr);
}

TrainReport adversarial_train(Network& net, const Dataset& train_set,
                              const Dataset& control_set, const TrainConfig& tc,
                              const OptimizerConfig& oc, const AttackConfig& adv,
                              const ThreatModel& tm) {
  return train_loop(net, train_set, control_set, tc, oc, &adv, &tm);
}

EvalResult evaluate(Network& net, const Dataset& ds, int batch_size) {
  EvalResult res;
  res.mask.assign(static_cast<size_t>(ds.size()), 0);
  res.histogram.assign(static_cast<size_t>(ds.n_classes), 0);
  std::vector<int> order(static_cast<size_t>(ds.size()));
  for (int i = 0; i < ds.size(); ++i) order[static_cast<size_t>(i)] = i;

  Tensor xb;
  std::vector<int> yb;
  long long correct = 0;
  for (int first = 0; first < ds.size(); first += batch_size) {
    const int count = std::min(batch_size, ds.size() - first);
    gather_batch(ds, order, first, count, xb, yb);
    const Tensor logits = net.forward(xb, Mode::Infer);
    const int k = logits.dim(1);
    for (int b = 0; b < count; ++b) {
      const float* row = logits.data() + static_cast<std::int64_t>(b) * k;
      const int pred = static_cast<int>(std::max_element(row, row + k) - row);
      ++res.histogram[static_cast<size_t>(pred)];
      if (pred == yb[static_cast<size_t>(b)]) {
        res.mask[static_cast<size_t>(first + b)] = 1;
        ++correct;
      }
    }
  }
  res.accuracy = ds.size() > 0 ? static_cast<double>(correct) / ds.size() : 0.0;
  return res;
}

TrainConfig train_config_from_attrs(const AttributeList& learning, long long budget) {
  TrainConfig tc;
  tc.batch_size = attr_int(learning, "batch_size");
  tc.early_stop_patience = attr_int(learning, "early_stop");
  tc.epochs_cap = static_cast<long long>(attr_num(learning, "epochs"));
  tc.budget = budget;
  return tc;
}

// ---- checkpoint container ----
// layout: magic, version, n_classes, plan json, weights f32, optimizer f32,
// optimizer step count, report

namespace {

constexpr char kMagic[4] = {'N', 'E', 'R', 'C'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

void put_string(std::ofstream& f, const std::string& s) {
  put<std::uint64_t>(f, s.size());
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::ifstream& f) {
  const auto n = get<std::uint64_t>(f);
  std::string s(n, '\0');
  f.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

void put_floats(std::ofstream& f, const std::vector<float>& v) {
  put<std::uint64_t>(f, v.size());
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(float)));
}

std::vector<float> get_floats(std::ifstream& f) {
  const auto n = get<std::uint64_t>(f);
  std::vector<float> v(n);
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
  return v;
}

void put_doubles(std::ofstream& f, const std::vector<double>& v) {
  put<std::uint64_t>(f, v.size());
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> get_doubles(std::ifstream& f) {
  const auto n = get<std::uint64_t>(f);
  std::vector<double> v(n);
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const NetworkPlan& plan, const Network& net,
                     int n_classes, const Optimizer* opt, const TrainReport& report) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(kMagic, 4);
  put(f, kVersion);
  put<std::int32_t>(f, n_classes);
  put_string(f, plan_to_json(plan));
  put<std::uint64_t>(f, plan_hash(plan));
  put_floats(f, net.save_weights());
  put_floats(f, opt ? opt->save_state() : std::vector<float>{});
  put<std::int64_t>(f, opt ? opt->steps_done() : 0);
  put_doubles(f, report.train_loss);
  put_doubles(f, report.control_loss);
  put<std::int64_t>(f, report.epochs_run);
  put<std::int32_t>(f, static_cast<std::int32_t>(report.stop_reason));
  put<std::uint8_t>(f, report.nonfinite_seen ? 1 : 0);
  put<std::int64_t>(f, report.budget_consumed);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("not a checkpoint file");
  if (get<std::uint32_t>(f) != kVersion) throw std::runtime_error("checkpoint version mismatch");
  Checkpoint ck;
  ck.n_classes = get<std::int32_t>(f);
  ck.plan = plan_from_json(get_string(f));
  const auto stored_hash = get<std::uint64_t>(f);
  if (stored_hash != plan_hash(ck.plan)) throw std::runtime_error("checkpoint plan hash mismatch");
  ck.weights = get_floats(f);
  ck.optimizer_state = get_floats(f);
  ck.optimizer_steps = get<std::int64_t>(f);
  ck.report.train_loss = get_doubles(f);
  ck.report.control_loss = get_doubles(f);
  ck.report.epochs_run = get<std::int64_t>(f);
  ck.report.stop_reason = static_cast<StopReason>(get<std::int32_t>(f));
  ck.report.nonfinite_seen = get<std::uint8_t>(f) != 0;
  ck.report.budget_consumed = get<std::int64_t>(f);
  if (!f) throw std::runtime_error("truncated checkpoint: " + path);
  return ck;
}

Network restore_network(const Checkpoint& ck) {
  Rng rng(0);
  Network net = build_network(ck.plan, ck.n_classes, rng);
  net.load_weights(ck.weights);
  return net;
}

}  // namespace nero
