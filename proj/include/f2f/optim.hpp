#pragma once

#include <cmath>
#include <vector>

#include "f2f/tape.hpp"

// SGD and Adam over a fixed parameter list. step() consumes whatever sits in
// each leaf's gradient buffer; callers own zero_grad() between steps so
// multi-loss accumulation (the fine-tuning recipe) stays possible.

namespace f2f::opt {

using autodiff::Var;

template <class T>
void zero_grads(const std::vector<Var<T>>& params) {
  for (const auto& p : params) p->zero_grad();
}

// Multiplies every gradient by a constant; the fine-tuning stage uses this to
// turn an accumulated (g_L2 + g_CE) into their mean before stepping.
template <class T>
void scale_grads(const std::vector<Var<T>>& params, T factor) {
  for (const auto& p : params) {
    if (!p->grad_allocated()) continue;
    for (auto& g : p->grad.data) g *= factor;
  }
}

template <class T>
class Sgd {
 public:
  Sgd(std::vector<Var<T>> params, T lr) : params_(std::move(params)), lr_(lr) {}

  void step() {
    for (auto& p : params_) {
      if (!p->grad_allocated()) continue;
      T* w = p->value.ptr();
      const T* g = p->grad.ptr();
      for (int64_t i = 0; i < p->value.numel(); ++i) w[i] -= lr_ * g[i];
    }
  }

  void zero_grad() { zero_grads(params_); }
  const std::vector<Var<T>>& params() const { return params_; }

 private:
  std::vector<Var<T>> params_;
  T lr_;
};

template <class T>
class Adam {
 public:
  Adam(std::vector<Var<T>> params, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
       T eps = T(1e-8))
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.push_back(Tensor<T>::zeros(p->value.shape));
      v_.push_back(Tensor<T>::zeros(p->value.shape));
    }
  }

  void step() {
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, T(t_));
    const T bc2 = T(1) - std::pow(beta2_, T(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (!p->grad_allocated()) continue;
      T* w = p->value.ptr();
      const T* g = p->grad.ptr();
      T* m = m_[k].ptr();
      T* v = v_[k].ptr();
      for (int64_t i = 0; i < p->value.numel(); ++i) {
        m[i] = beta1_ * m[i] + (T(1) - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (T(1) - beta2_) * g[i] * g[i];
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad() { zero_grads(params_); }
  int64_t steps_taken() const { return t_; }

 private:
  std::vector<Var<T>> params_;
  T lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace f2f::opt
