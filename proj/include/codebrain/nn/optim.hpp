#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "codebrain/nn/layers.hpp"

namespace codebrain::nn {

struct CosineSchedule {
  double peak = 1e-4;
  double min = 1e-5;
  std::size_t total_steps = 1;

  double at(std::size_t step) const {
    if (total_steps == 0) return peak;
    const double s = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
    return min + 0.5 * (peak - min) * (1.0 + std::cos(std::numbers::pi * s));
  }
};

// Scales all gradients so their joint L2 norm is at most max_norm. Returns the
// norm before clipping.
template <class T>
double clip_grad_norm(const ParamList<T>& params, double max_norm) {
  double ss = 0.0;
  for (const auto& [name, p] : params) {
    for (T g : p.grad()) ss += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    // Shrunk by 1e-6 so float rounding cannot land above max_norm.
    const double s = max_norm / norm * (1.0 - 1e-6);
    for (auto [name, p] : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g = static_cast<T>(g * s);
    }
  }
  return norm;
}

template <class T>
double grad_norm(const ParamList<T>& params) {
  double ss = 0.0;
  for (const auto& [name, p] : params)
    for (T g : p.grad()) ss += static_cast<double>(g) * g;
  return std::sqrt(ss);
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Adam with decoupled weight decay. Moment buffers follow the parameter order
// given at construction.
template <class T>
class AdamW {
 public:
  AdamW(ParamList<T> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& [name, p] : params_) {
      first_.push_back(Tensor<T>::zeros(p.shape()));
      second_.push_back(Tensor<T>::zeros(p.shape()));
    }
  }

  void step(double lr) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].second;
      if (!p.has_grad()) continue;
      auto w = p.mutable_data();
      auto g = p.grad();
      auto m = first_[i].mutable_data();
      auto v = second_[i].mutable_data();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = g[j];
        const double mj = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        const double vj = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.eps);
        w[j] = static_cast<T>(w[j] - lr * (update + cfg_.weight_decay * w[j]));
      }
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  const ParamList<T>& params() const { return params_; }
  std::size_t steps() const { return steps_; }
  void set_steps(std::size_t s) { steps_ = s; }

  // Moment buffers as named tensors, for checkpointing.
  ParamList<T> state() const {
    ParamList<T> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.emplace_back("adam.m." + params_[i].first, first_[i]);
      out.emplace_back("adam.v." + params_[i].first, second_[i]);
    }
    return out;
  }

 private:
  ParamList<T> params_;
  AdamWConfig cfg_;
  std::vector<Tensor<T>> first_, second_;
  std::size_t steps_ = 0;
};

}  // namespace codebrain::nn
