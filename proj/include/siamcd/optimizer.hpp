#pragma once

// AdamW with decoupled weight decay. Moments are float32, one pair per
// parameter tensor; updates are elementwise and deterministic.

#include <cmath>
#include <vector>

#include "siamcd/nn.hpp"

namespace siamcd {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

class AdamW {
 public:
  AdamW() = default;
  AdamW(std::vector<nn::Param*> params, const AdamWConfig& cfg) : cfg_(cfg), params_(std::move(params)) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i]->value.size(), 0.0f);
      v_[i].assign(params_[i]->value.size(), 0.0f);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      nn::Param& p = *params_[i];
      float* m = m_[i].data();
      float* v = v_[i].data();
      const std::int64_t n = static_cast<std::int64_t>(p.value.size());
      parallel_for(n, [&](std::int64_t j) {
        const double g = p.grad[static_cast<std::size_t>(j)];
        const double mj = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
        const double vj = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
        m[j] = static_cast<float>(mj);
        v[j] = static_cast<float>(vj);
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        const double w = p.value[static_cast<std::size_t>(j)];
        p.value[static_cast<std::size_t>(j)] = static_cast<float>(
            w - cfg_.learning_rate * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w));
      });
    }
  }

  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  const AdamWConfig& config() const { return cfg_; }

  // Moment access for checkpointing, index-aligned with the param list.
  std::vector<std::vector<float>>& moments_m() { return m_; }
  std::vector<std::vector<float>>& moments_v() { return v_; }
  const std::vector<nn::Param*>& params() const { return params_; }

 private:
  AdamWConfig cfg_;
  std::vector<nn::Param*> params_;
  std::vector<std::vector<float>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace siamcd
