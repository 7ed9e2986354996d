#pragma once

#include <cmath>
#include <vector>

#include "amtl/error.hpp"
#include "amtl/tensor.hpp"

namespace amtl {

// Linear warmup to `peak`, then linear decay toward zero over the
// remaining steps. `step` counts from 0.
inline double linear_then_decay_lr(int step, int total_steps, double peak, int warmup) {
  if (warmup < 1) warmup = 1;
  if (step < warmup)
    return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total_steps <= warmup) return peak;
  return peak * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

// Adam with decoupled weight decay. Decay applies to weight matrices
// (rank-2 parameters) only; biases, gains and embedded scalars are left
// undecayed. Moment state and the bias-correction step count are kept
// per parameter so that frozen phases leave untouched parameters
// bit-identical.
class AdamW {
 public:
  AdamW(const std::vector<Tensor>& params, double lr, double weight_decay,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(params),
        lr_(lr),
        wd_(weight_decay),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    t_.assign(params_.size(), 0);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].numel(), 0.0);
      v_[i].assign(params_[i].numel(), 0.0);
    }
  }

  double base_lr() const { return lr_; }

  // Applies one update at learning rate `lr` to every parameter whose
  // mask bit is set (an empty mask selects all).
  void step(double lr, const std::vector<unsigned char>& mask = {}) {
    require(mask.empty() || mask.size() == params_.size(), ErrorKind::contract,
            "optimizer mask size mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!mask.empty() && !mask[i]) continue;
      Tensor& p = params_[i];
      const bool decay = p.rank() == 2;
      ++t_[i];
      const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_[i]));
      const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_[i]));
      auto& g = p.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      auto& w = p.data();
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
        const double mh = m[j] / bc1;
        const double vh = v[j] / bc2;
        double upd = mh / (std::sqrt(vh) + eps_);
        if (decay) upd += wd_ * w[j];
        w[j] -= lr * upd;
      }
    }
  }

 private:
  std::vector<Tensor> params_;
  double lr_, wd_, beta1_, beta2_, eps_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<long> t_;
};

}  // namespace amtl
