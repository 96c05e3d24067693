#pragma once

// Adam with bias correction and optional decoupled L2 on the gradient.

#include <string>
#include <vector>

#include "cebsnet/config.hpp"
#include "cebsnet/layers.hpp"

namespace cebsnet {

template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(ParamStore<T>& params, const TrainConfig& cfg)
      : params_(&params),
        lr_(static_cast<T>(cfg.learning_rate)),
        beta1_(static_cast<T>(cfg.adam_beta1)),
        beta2_(static_cast<T>(cfg.adam_beta2)),
        eps_(static_cast<T>(cfg.adam_eps)),
        weight_decay_(static_cast<T>(cfg.weight_decay)) {
    m_.resize(params.params().size());
    v_.resize(params.params().size());
    for (size_t i = 0; i < params.params().size(); ++i) {
      const size_t n = params.params()[i].second.values().size();
      m_[i].assign(n, T(0));
      v_[i].assign(n, T(0));
    }
  }

  void step() {
    ++t_;
    const T bc1 = T(1) - static_cast<T>(std::pow(
                             static_cast<double>(beta1_), t_));
    const T bc2 = T(1) - static_cast<T>(std::pow(
                             static_cast<double>(beta2_), t_));
    for (size_t i = 0; i < params_->params().size(); ++i) {
      Tensor<T> p = params_->params()[i].second;
      if (!p.has_grad()) continue;
      const auto& g = p.grad();
      auto& vals = p.values_mut();
      auto& m = m_[i];
      auto& v = v_[i];
      for (size_t j = 0; j < vals.size(); ++j) {
        T gj = g[j];
        if (weight_decay_ != T(0)) gj += weight_decay_ * vals[j];
        m[j] = beta1_ * m[j] + (T(1) - beta1_) * gj;
        v[j] = beta2_ * v[j] + (T(1) - beta2_) * gj * gj;
        const T mhat = m[j] / bc1;
        const T vhat = v[j] / bc2;
        vals[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  long long step_count() const { return t_; }
  void set_step_count(long long t) { t_ = t; }
  std::vector<std::vector<T>>& moments_m() { return m_; }
  std::vector<std::vector<T>>& moments_v() { return v_; }
  const std::vector<std::vector<T>>& moments_m() const { return m_; }
  const std::vector<std::vector<T>>& moments_v() const { return v_; }

 private:
  ParamStore<T>* params_;
  T lr_, beta1_, beta2_, eps_, weight_decay_;
  long long t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace cebsnet
