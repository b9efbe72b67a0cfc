#pragma once

#include <cmath>
#include <map>
#include <string>

#include "capellm/core/parameter.hpp"

namespace capellm {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// AdamW with decoupled weight decay (decay applied to the weights before the
// adaptive step, as in the reference formulation).
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(ParameterSet<T>& params, double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& p : params) {
      if (!p.trainable) continue;
      const std::size_t n = p.numel();
      if (!p.var.has_grad()) continue;
      const auto& g = p.var.grad();
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(static_cast<double>(g[i]))) {
          throw NonFiniteError("non-finite gradient in parameter '" + p.name + "'");
        }
      }
      auto& st = state_[p.name];
      if (st.m.size() != n) {
        st.m.assign(n, 0.0);
        st.v.assign(n, 0.0);
      }
      T* w = p.mutable_value().data();
      for (std::size_t i = 0; i < n; ++i) {
        const double gi = static_cast<double>(g[i]);
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        double wi = static_cast<double>(w[i]);
        wi -= lr * cfg_.weight_decay * wi;
        wi -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        w[i] = static_cast<T>(wi);
      }
    }
  }

  long step_count() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamWConfig cfg_;
  long step_ = 0;
  std::map<std::string, Moments> state_;
};

// Scales all trainable gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    if (!p.trainable || !p.var.has_grad()) continue;
    for (T g : p.var.grad().values()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm && max_norm > 0) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& p : params) {
      if (!p.trainable || !p.var.has_grad()) continue;
      for (auto& g : p.var.shared()->grad.values()) g *= s;
    }
  }
  return norm;
}

}  // namespace capellm
