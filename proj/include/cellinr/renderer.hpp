#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "cellinr/error.hpp"
#include "cellinr/nn/encoding.hpp"
#include "cellinr/nn/mlp.hpp"
#include "cellinr/nn/networks.hpp"
#include "cellinr/nn/tape.hpp"
#include "cellinr/sampler.hpp"
#include "cellinr/volume.hpp"

namespace cellinr {

enum class PredictionMode { train_blind, infer_center };

struct Prediction {
  double value = 0.0;
  std::vector<double> colors, weights;
  PredictionMode mode = PredictionMode::train_blind;
};

namespace detail {

// Encoded sample points and the matching repeated centre encoding, one row per point.
template <class T>
std::pair<nn::Matrix<T>, nn::Matrix<T>> encode_sets(std::span<const SampleSet> sets, int epsilon) {
  std::vector<Vec3> pts, ctr;
  for (const auto& s : sets) {
    const Vec3 c = to_normalized(s.center, s.dims);
    for (const auto& p : s.coarse) {
      pts.push_back(to_normalized(p, s.dims));
      ctr.push_back(c);
    }
    for (const auto& p : s.fine) {
      pts.push_back(to_normalized(p, s.dims));
      ctr.push_back(c);
    }
  }
  return {nn::encode_rows<T>(pts, epsilon), nn::encode_rows<T>(ctr, epsilon)};
}

template <class T>
void check_finite(const nn::Matrix<T>& m, const char* what) {
  for (T v : m.span())
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
}

}  // namespace detail

// Blind convolution without a tape: colours c = F_fine(gamma(p)), scores from
// the kernel net with centre injection, weights = softmax over the whole set,
// value = sum c * w.
template <class T>
Prediction predict_blind(const SampleSet& set, const nn::Networks<T>& nets) {
  const std::span<const SampleSet> one(&set, 1);
  auto [x, c] = detail::encode_sets<T>(one, nets.epsilon);
  const auto colors = nn::mlp_forward(nets.fine, x);
  const auto scores = nn::mlp_forward(nets.kernel, x, &c);
  detail::check_finite(colors, "colour prediction");
  detail::check_finite(scores, "kernel score");
  Prediction p;
  p.mode = PredictionMode::train_blind;
  const std::size_t n = colors.rows();
  double mx = scores[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, static_cast<double>(scores[i]));
  double z = 0.0;
  p.weights.resize(n);
  p.colors.resize(n);
  for (std::size_t i = 0; i < n; ++i) z += p.weights[i] = std::exp(static_cast<double>(scores[i]) - mx);
  for (std::size_t i = 0; i < n; ++i) {
    p.weights[i] /= z;
    p.colors[i] = colors[i];
    p.value += p.colors[i] * p.weights[i];
  }
  return p;
}

// Inference: the fine net queried at the centre with unit weight.
template <class T>
std::vector<double> predict_center_batch(std::span<const Vec3> normalized, const nn::MlpParams<T>& fine, int epsilon) {
  const auto out = nn::mlp_forward(fine, nn::encode_rows<T>(normalized, epsilon));
  return {out.data(), out.data() + out.size()};
}

template <class T>
double predict_center(const Vec3& normalized, const nn::MlpParams<T>& fine, int epsilon) {
  return predict_center_batch<T>(std::span<const Vec3>(&normalized, 1), fine, epsilon)[0];
}

// Evaluates the centre query on a regular, cell-centred grid of out_dims spanning
// the normalized domain; spacing scales by train_dims / out_dims.
template <class T>
Volume3D render_volume(const nn::MlpParams<T>& fine, int epsilon, const Dims& out_dims, const Dims& train_dims,
                       const Spacing& train_spacing, std::size_t chunk = 65536) {
  if (!out_dims.positive()) throw PreconditionError("render dims must be >= 1");
  if (out_dims.count() > (std::size_t{1} << 34)) throw PreconditionError("render dims too large");
  const Spacing sp{train_spacing.sx * train_dims.nx / out_dims.nx, train_spacing.sy * train_dims.ny / out_dims.ny,
                   train_spacing.sz * train_dims.nz / out_dims.nz};
  Volume3D out(out_dims, sp);
  chunk = std::max<std::size_t>(chunk, 1);
  std::vector<Vec3> coords;
  for (std::size_t start = 0; start < out.size(); start += chunk) {
    const std::size_t end = std::min(out.size(), start + chunk);
    coords.clear();
    for (std::size_t i = start; i < end; ++i) {
      const auto [x, y, z] = out.coords(i);
      coords.push_back({voxel_to_normalized(x, out_dims.nx), voxel_to_normalized(y, out_dims.ny),
                        voxel_to_normalized(z, out_dims.nz)});
    }
    const auto v = predict_center_batch<T>(coords, fine, epsilon);
    for (std::size_t i = start; i < end; ++i) out[i] = static_cast<float>(v[i - start]);
  }
  return out;
}

struct NetBindings {
  nn::MlpBinding fine, kernel;
};

struct BlindNodes {
  nn::NodeId values, colors, weights;
};

// Tape-recorded blind convolution for a batch of sample sets, which must all
// have the same size. values has one row per set.
template <class T>
BlindNodes blind_forward(nn::Tape<T>& t, const nn::Networks<T>& nets, const NetBindings& b,
                         std::span<const SampleSet> sets) {
  if (sets.empty()) throw ShapeError("blind_forward: empty batch");
  const std::size_t group = sets.front().size();
  for (const auto& s : sets)
    if (s.size() != group) throw ShapeError("blind_forward: sample sets differ in size");
  auto [x, c] = detail::encode_sets<T>(sets, nets.epsilon);
  const auto xi = t.constant(std::move(x));
  const auto ci = t.constant(std::move(c));
  const auto colors = nn::mlp_forward(t, nets.fine, b.fine, xi);
  const auto scores = nn::mlp_forward(t, nets.kernel, b.kernel, xi, ci);
  detail::check_finite(t.value(colors), "colour prediction");
  detail::check_finite(t.value(scores), "kernel score");
  const auto weights = nn::group_softmax(t, scores, group);
  return {nn::group_weighted_sum(t, colors, weights, group), colors, weights};
}

// Tape-recorded centre query for a batch of normalized coordinates.
template <class T>
nn::NodeId center_forward(nn::Tape<T>& t, const nn::Networks<T>& nets, const nn::MlpBinding& fine,
                          std::span<const Vec3> normalized) {
  const auto x = t.constant(nn::encode_rows<T>(normalized, nets.epsilon));
  const auto out = nn::mlp_forward(t, nets.fine, fine, x);
  detail::check_finite(t.value(out), "colour prediction");
  return out;
}

}  // namespace cellinr
