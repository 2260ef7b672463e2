#include "nero/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace nero {

OptimizerConfig optimizer_from_attrs(const AttributeList& learning) {
  OptimizerConfig cfg;
  const std::string kind = attr_str(learning, "learning");
  cfg.lr = attr_num(learning, "lr");
  cfg.decay = attr_num(learning, "decay");
  if (kind == "gradient-descent") {
    cfg.kind = OptKind::GradientDescent;
    cfg.momentum = attr_num(learning, "momentum");
    cfg.nesterov = attr_bool(learning, "nesterov");
  } else if (kind == "adam") {
    cfg.kind = OptKind::Adam;
    cfg.beta1 = attr_num(learning, "beta1");
    cfg.beta2 = attr_num(learning, "beta2");
  } else if (kind == "rmsprop") {
    cfg.kind = OptKind::RmsProp;
    cfg.rho = attr_num(learning, "rho");
  } else {
    throw GenotypeError("unknown optimizer: " + kind);
  }
  return cfg;
}

double lr_at(const OptimizerConfig& cfg, long long t) {
  switch (cfg.schedule) {
    case LrSchedule::InverseTime:
      return cfg.lr / (1.0 + cfg.decay * static_cast<double>(t));
    case LrSchedule::StepDecay: {
      double lr = cfg.lr;
      for (long long b : cfg.step_boundaries)
        if (t >= b) lr *= cfg.step_factor;
      return lr;
    }
    case LrSchedule::Cosine: {
      const long long horizon = std::max<long long>(cfg.cosine_total_steps, 1);
      const double frac = static_cast<double>(std::min(t, horizon)) / static_cast<double>(horizon);
      return 0.5 * cfg.lr * (1.0 + std::cos(3.14159265358979323846 * frac));
    }
  }
  return cfg.lr;
}

template <class T>
OptimizerT<T>::OptimizerT(OptimizerConfig cfg, std::vector<TensorT<T>*> params)
    : cfg_(cfg), params_(std::move(params)) {
  for (auto* p : params_) {
    slot1_.emplace_back(p->shape, T(0));
    if (cfg_.kind == OptKind::Adam) slot2_.emplace_back(p->shape, T(0));
  }
}

template <class T>
void OptimizerT<T>::step(const std::vector<TensorT<T>*>& grads) {
  if (grads.size() != params_.size()) throw std::runtime_error("optimizer: grad arity mismatch");
  const double lr = lr_at(cfg_, t_);
  switch (cfg_.kind) {
    case OptKind::GradientDescent:
      for (size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        const auto& g = *grads[i];
        auto& vel = slot1_[i];
        if (cfg_.momentum == 0.0) {
          for (std::int64_t j = 0; j < p.size(); ++j)
            p[j] -= static_cast<T>(lr * static_cast<double>(g[j]));
        } else {
          for (std::int64_t j = 0; j < p.size(); ++j) {
            const double v = cfg_.momentum * static_cast<double>(vel[j]) -
                             lr * static_cast<double>(g[j]);
            vel[j] = static_cast<T>(v);
            if (cfg_.nesterov)
              p[j] += static_cast<T>(cfg_.momentum * v - lr * static_cast<double>(g[j]));
            else
              p[j] += static_cast<T>(v);
          }
        }
      }
      break;
    case OptKind::Adam: {
      const double b1 = cfg_.beta1, b2 = cfg_.beta2, eps = 1e-7;
      const double t = static_cast<double>(t_ + 1);
      const double corr1 = 1.0 - std::pow(b1, t);
      const double corr2 = 1.0 - std::pow(b2, t);
      for (size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        const auto& g = *grads[i];
        auto& m = slot1_[i];
        auto& v = slot2_[i];
        for (std::int64_t j = 0; j < p.size(); ++j) {
          const double gj = static_cast<double>(g[j]);
          const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
          const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
          m[j] = static_cast<T>(mj);
          v[j] = static_cast<T>(vj);
          p[j] -= static_cast<T>(lr * (mj / corr1) / (std::sqrt(vj / corr2) + eps));
        }
      }
      break;
    }
    case OptKind::RmsProp: {
      const double eps = 1e-7;
      for (size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        const auto& g = *grads[i];
        auto& acc = slot1_[i];
        for (std::int64_t j = 0; j < p.size(); ++j) {
          const double gj = static_cast<double>(g[j]);
          const double a = cfg_.rho * static_cast<double>(acc[j]) + (1.0 - cfg_.rho) * gj * gj;
          acc[j] = static_cast<T>(a);
          p[j] -= static_cast<T>(lr * gj / (std::sqrt(a) + eps));
        }
      }
      break;
    }
  }
  ++t_;
}

template <class T>
std::vector<T> OptimizerT<T>::save_state() const {
  std::vector<T> flat;
  for (const auto& s : slot1_) flat.insert(flat.end(), s.v.begin(), s.v.end());
  for (const auto& s : slot2_) flat.insert(flat.end(), s.v.begin(), s.v.end());
  return flat;
}

template <class T>
void OptimizerT<T>::load_state(const std::vector<T>& flat, long long steps) {
  size_t off = 0;
  auto copy_into = [&](TensorT<T>& t) {
    if (off + t.v.size() > flat.size())
      throw std::runtime_error("optimizer state buffer too small");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + t.v.size()), t.v.begin());
    off += t.v.size();
  };
  for (auto& s : slot1_) copy_into(s);
  for (auto& s : slot2_) copy_into(s);
  if (off != flat.size()) throw std::runtime_error("optimizer state size mismatch");
  t_ = steps;
}

template class OptimizerT<float>;
template class OptimizerT<double>;

}  // namespace nero
