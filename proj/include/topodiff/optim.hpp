#pragma once

#include "topodiff/nn.hpp"

#include <cmath>
#include <cstdint>

namespace topodiff::optim {

struct AdamWHyper {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <typename T>
struct AdamWState {
  nn::ParamSet<T> m, v;
  std::uint64_t step = 0;

  static AdamWState like(const nn::ParamSet<T>& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
  }
};

/// Decoupled weight-decay Adam update. Returns false, leaving parameters and
/// state untouched, when any gradient is non-finite.
template <typename T>
bool adamw_step(nn::ParamSet<T>& params, const nn::ParamSet<T>& grads, AdamWState<T>& state,
                const AdamWHyper& h) {
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!all_finite(grads[i])) return false;
  ++state.step;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* w = params[i].data();
    const T* g = grads[i].data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    for (std::size_t k = 0; k < params[i].size(); ++k) {
      m[k] = static_cast<T>(h.beta1 * m[k] + (1.0 - h.beta1) * g[k]);
      v[k] = static_cast<T>(h.beta2 * v[k] + (1.0 - h.beta2) * g[k] * g[k]);
      const double mhat = m[k] / bc1, vhat = v[k] / bc2;
      const double decayed = w[k] * (1.0 - h.lr * h.weight_decay);
      w[k] = static_cast<T>(decayed - h.lr * mhat / (std::sqrt(vhat) + h.eps));
    }
  }
  return true;
}

/// Scales gradients so their global L2 norm is at most max_norm; returns
/// the norm before scaling.
template <typename T>
double clip_grad_norm(nn::ParamSet<T>& grads, double max_norm) {
  double sq = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i)
    for (T g : grads[i].storage()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (std::size_t i = 0; i < grads.size(); ++i)
      for (T& g : grads[i].storage()) g *= s;
  }
  return norm;
}

/// lr0 * (1 + cos(pi * step / total)) / 2.
double cosine_lr(std::uint64_t step, std::uint64_t total, double lr0);

}  // namespace topodiff::optim
