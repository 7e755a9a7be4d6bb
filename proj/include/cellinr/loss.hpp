#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cellinr/error.hpp"
#include "cellinr/nn/tape.hpp"

namespace cellinr {

// masked:    mean over mask = 1 voxels of (pred - raw)^2
// literal:   mean over all voxels of (pred - ReLU(raw - mask))^2
// rectified: sum over all voxels of (pred - raw * mask)^2, divided by the
//            number of mask = 1 voxels (background pulled towards zero)
enum class SignalLossMode { masked, literal, rectified };

inline const char* to_string(SignalLossMode m) {
  switch (m) {
    case SignalLossMode::masked: return "masked";
    case SignalLossMode::literal: return "literal";
    case SignalLossMode::rectified: return "rectified";
  }
  return "?";
}

inline SignalLossMode parse_signal_loss_mode(const std::string& s) {
  if (s == "masked") return SignalLossMode::masked;
  if (s == "literal") return SignalLossMode::literal;
  if (s == "rectified") return SignalLossMode::rectified;
  throw PreconditionError("unknown signal loss mode '" + s + "'");
}

struct LossBreakdown {
  double signal = 0.0, tv = 0.0, total = 0.0;
  std::int64_t n_signal = 0;
};

// Per-voxel squared-error terms: loss = sum_i weight_i * (pred_i - target_i)^2 / denom.
struct SignalTerms {
  std::vector<double> target, weight;
  double denom = 1.0;
  std::int64_t n_signal = 0;
};

// `batch_total` is the size of the full batch the normalization refers to;
// callers evaluating a slice of a batch pass the full-batch counts.
inline SignalTerms signal_terms(std::span<const double> raw, std::span<const double> mask, SignalLossMode mode,
                                std::optional<std::int64_t> n_signal_total = std::nullopt,
                                std::optional<std::int64_t> batch_total = std::nullopt) {
  if (raw.size() != mask.size()) throw ShapeError("signal loss: length mismatch");
  SignalTerms t;
  t.target.resize(raw.size());
  t.weight.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const bool sig = mask[i] > 0.5;
    t.n_signal += sig ? 1 : 0;
    switch (mode) {
      case SignalLossMode::masked:
        t.target[i] = raw[i];
        t.weight[i] = sig ? 1.0 : 0.0;
        break;
      case SignalLossMode::literal:
        t.target[i] = std::max(0.0, raw[i] - mask[i]);
        t.weight[i] = 1.0;
        break;
      case SignalLossMode::rectified:
        t.target[i] = raw[i] * mask[i];
        t.weight[i] = 1.0;
        break;
    }
  }
  const std::int64_t ns = n_signal_total.value_or(t.n_signal);
  const std::int64_t nb = batch_total.value_or(static_cast<std::int64_t>(raw.size()));
  switch (mode) {
    case SignalLossMode::masked: t.denom = static_cast<double>(ns); break;
    case SignalLossMode::literal: t.denom = static_cast<double>(nb); break;
    case SignalLossMode::rectified: t.denom = static_cast<double>(std::max<std::int64_t>(ns, 1)); break;
  }
  return t;
}

inline double signal_loss(std::span<const double> pred, std::span<const double> raw, std::span<const double> mask,
                          SignalLossMode mode = SignalLossMode::masked) {
  if (pred.size() != raw.size()) throw ShapeError("signal loss: length mismatch");
  const auto t = signal_terms(raw, mask, mode);
  if (t.denom <= 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - t.target[i];
    s += t.weight[i] * d * d;
  }
  return s / t.denom;
}

// Anisotropic 3D TV: mean over present forward-neighbour pairs of
// |pred_neighbor - pred_center|. Missing neighbours (outside the volume) are nullopt.
inline double tv_loss(std::span<const double> center, std::span<const std::array<std::optional<double>, 3>> neighbors) {
  if (center.size() != neighbors.size()) throw ShapeError("tv loss: length mismatch");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < center.size(); ++i)
    for (const auto& nb : neighbors[i])
      if (nb) {
        s += std::abs(*nb - center[i]);
        ++n;
      }
  return n ? s / static_cast<double>(n) : 0.0;
}

inline double total_loss(double signal, double tv, double lambda) {
  if (!(lambda >= 0)) throw PreconditionError("lambda must be >= 0");
  return signal + lambda * tv;
}

// ---- tape operations ----

// sum_k weight_k * (pred[rows_k] - target_k)^2 / denom; zero when denom == 0.
template <class T>
nn::NodeId signal_loss_node(nn::Tape<T>& t, nn::NodeId pred, std::vector<std::size_t> rows, const SignalTerms& terms) {
  if (rows.size() != terms.target.size()) throw ShapeError("signal loss node: length mismatch");
  const double inv = terms.denom > 0 ? 1.0 / terms.denom : 0.0;
  auto target = terms.target;
  auto weight = terms.weight;
  return t.record(
      {pred},
      [=](const nn::Tape<T>& tp) {
        const auto& p = tp.value(pred);
        double s = 0.0;
        for (std::size_t k = 0; k < rows.size(); ++k) {
          const double d = static_cast<double>(p[rows[k]]) - target[k];
          s += weight[k] * d * d;
        }
        nn::Matrix<T> y(1, 1);
        y[0] = static_cast<T>(s * inv);
        return y;
      },
      [=](nn::Tape<T>& tp, nn::NodeId self) {
        const double g = tp.adjoint(self)[0];
        const auto& p = tp.value(pred);
        auto& dp = tp.adjoint(pred);
        for (std::size_t k = 0; k < rows.size(); ++k)
          dp[rows[k]] += static_cast<T>(g * 2.0 * weight[k] * (static_cast<double>(p[rows[k]]) - target[k]) * inv);
      });
}

// sum over (center_row, neighbor_row) pairs of |pred[n] - pred[c]| / denom.
// The subgradient at a tie is 0.
template <class T>
nn::NodeId tv_loss_node(nn::Tape<T>& t, nn::NodeId pred, std::vector<std::pair<std::size_t, std::size_t>> pairs,
                        double denom) {
  const double inv = denom > 0 ? 1.0 / denom : 0.0;
  return t.record(
      {pred},
      [=](const nn::Tape<T>& tp) {
        const auto& p = tp.value(pred);
        double s = 0.0;
        for (const auto& [c, n] : pairs) s += std::abs(static_cast<double>(p[n]) - static_cast<double>(p[c]));
        nn::Matrix<T> y(1, 1);
        y[0] = static_cast<T>(s * inv);
        return y;
      },
      [=](nn::Tape<T>& tp, nn::NodeId self) {
        const double g = tp.adjoint(self)[0] * inv;
        const auto& p = tp.value(pred);
        auto& dp = tp.adjoint(pred);
        for (const auto& [c, n] : pairs) {
          const double d = static_cast<double>(p[n]) - static_cast<double>(p[c]);
          const double sgn = d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0;
          dp[n] += static_cast<T>(g * sgn);
          dp[c] -= static_cast<T>(g * sgn);
        }
      });
}

}  // namespace cellinr
