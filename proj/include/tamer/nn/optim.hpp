#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "tamer/nn/tensor.hpp"

namespace tamer::nn {

struct SgdConfig {
  double lr = 0.1;
};

inline void sgd_step(std::span<Tensor> params, const SgdConfig& cfg) {
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    auto v = p.mutable_data();
    auto g = p.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= cfg.lr * g[i];
  }
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW)
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// One bias-corrected update. The parameter list must keep the same order
  /// between calls; moment buffers are matched by position.
  void step(std::span<Tensor> params) {
    if (m_.size() != params.size()) {
      m_.resize(params.size());
      v_.resize(params.size());
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& p = params[k];
      if (!p.has_grad()) continue;
      auto& m = m_[k];
      auto& v = v_[k];
      if (m.size() != p.numel()) {
        m.assign(p.numel(), 0.0);
        v.assign(p.numel(), 0.0);
      }
      auto w = p.mutable_data();
      auto g = p.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
      }
    }
  }

  long steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

inline void zero_grad(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace tamer::nn
