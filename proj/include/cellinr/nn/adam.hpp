#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cellinr/error.hpp"
#include "cellinr/nn/matrix.hpp"

namespace cellinr::nn {

struct AdamState {
  std::vector<std::vector<double>> m, v;  // one pair per parameter tensor
  std::int64_t step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 1e-6;

  template <class T>
  static AdamState for_params(std::span<Matrix<T>* const> params) {
    AdamState s;
    for (const auto* p : params) {
      s.m.emplace_back(p->size(), 0.0);
      s.v.emplace_back(p->size(), 0.0);
    }
    return s;
  }
};

// Decoupled weight decay (theta -= lr * wd * theta), then the bias-corrected
// Adam update. A non-finite gradient aborts before any parameter changes.
template <class T>
void adam_step(std::span<Matrix<T>* const> params, std::span<const std::vector<double>* const> grads, AdamState& s,
               double lr) {
  if (params.size() != grads.size() || params.size() != s.m.size()) throw ShapeError("adam: tensor count mismatch");
  if (!(lr > 0)) throw PreconditionError("adam: learning rate must be > 0");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i]->size() != params[i]->size() || s.m[i].size() != params[i]->size())
      throw ShapeError("adam: tensor shape mismatch");
    for (double g : *grads[i])
      if (!std::isfinite(g)) throw NumericError("non-finite gradient");
  }
  ++s.step;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const auto& g = *grads[i];
    auto& m = s.m[i];
    auto& v = s.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      double theta = p[k];
      theta -= lr * s.weight_decay * theta;
      m[k] = s.beta1 * m[k] + (1.0 - s.beta1) * g[k];
      v[k] = s.beta2 * v[k] + (1.0 - s.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1, vhat = v[k] / bc2;
      theta -= lr * mhat / (std::sqrt(vhat) + s.eps);
      p[k] = static_cast<T>(theta);
    }
  }
}

// Linear annealing from lr_start at step 0 to lr_end at total_steps.
inline double lr_schedule(std::int64_t step, std::int64_t total_steps, double lr_start = 2e-3, double lr_end = 2e-5) {
  if (step < 0 || step > total_steps) throw PreconditionError("lr_schedule: step outside [0, total]");
  if (total_steps == 0) return lr_start;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return (1.0 - t) * lr_start + t * lr_end;
}

}  // namespace cellinr::nn
