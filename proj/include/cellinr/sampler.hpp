#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "cellinr/error.hpp"
#include "cellinr/nn/encoding.hpp"
#include "cellinr/nn/mlp.hpp"
#include "cellinr/nn/networks.hpp"
#include "cellinr/rng.hpp"
#include "cellinr/volume.hpp"

// Blind-spot cube sampling. All geometry here is in voxel units, where voxel i
// covers [i - 0.5, i + 0.5]; conversion to the network's [-1, 1] domain happens
// only when points are encoded.
namespace cellinr {

using nn::Vec3;

struct SamplerParams {
  double h = 1.0;      // cube half-width, voxels
  int n = 27;          // coarse samples (and fine samples) per target
  double d_ex = 0.25;  // L-infinity exclusion radius around the centre, voxels
};

struct SampleSet {
  Vec3 center{};  // voxel coordinates of the target
  Dims dims;
  double h = 1.0;
  std::vector<Vec3> coarse, fine;  // voxel coordinates

  [[nodiscard]] std::size_t size() const { return coarse.size() + fine.size(); }
  // Coarse points first, then fine points; index < coarse.size() marks coarse provenance.
  [[nodiscard]] std::vector<Vec3> merged() const {
    std::vector<Vec3> all(coarse);
    all.insert(all.end(), fine.begin(), fine.end());
    return all;
  }
};

inline Vec3 to_normalized(const Vec3& voxel, const Dims& d) {
  return {voxel_to_normalized(voxel[0], d.nx), voxel_to_normalized(voxel[1], d.ny),
          voxel_to_normalized(voxel[2], d.nz)};
}

inline double linf_distance(const Vec3& a, const Vec3& b) {
  return std::max({std::abs(a[0] - b[0]), std::abs(a[1] - b[1]), std::abs(a[2] - b[2])});
}

struct Box {
  Vec3 lo, hi;
};

// Axis-aligned cube [c - h, c + h] intersected with the volume domain.
inline Box sampling_box(const Vec3& c, double h, const Dims& d) {
  Box b;
  for (int a = 0; a < 3; ++a) {
    b.lo[a] = std::max(c[a] - h, -0.5);
    b.hi[a] = std::min(c[a] + h, d[a] - 0.5);
  }
  return b;
}

inline Box intersect(const Box& a, const Box& b) {
  Box r;
  for (int k = 0; k < 3; ++k) {
    r.lo[k] = std::max(a.lo[k], b.lo[k]);
    r.hi[k] = std::min(a.hi[k], b.hi[k]);
  }
  return r;
}

inline constexpr int kMaxRejections = 1000;

namespace detail {
inline bool draw_outside(const Box& box, const Vec3& center, double d_ex, Rng& rng, Vec3& out) {
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    for (int a = 0; a < 3; ++a) out[a] = box.lo[a] + (box.hi[a] - box.lo[a]) * uniform01(rng);
    if (linf_distance(out, center) >= d_ex) return true;
  }
  return false;
}
}  // namespace detail

// N i.i.d. uniform points in the clamped cube, rejection-resampled until they
// lie at least d_ex (L-infinity) from the centre.
inline std::vector<Vec3> sample_coarse(const Vec3& center, const Dims& dims, double h, int n, double d_ex, Rng& rng) {
  if (!(h > 0) || n < 1 || !(d_ex >= 0) || !(d_ex < h)) throw PreconditionError("sample_coarse: need h > 0, N >= 1, 0 <= d_ex < h");
  const Box box = sampling_box(center, h, dims);
  std::vector<Vec3> pts(static_cast<std::size_t>(n));
  for (auto& p : pts)
    if (!detail::draw_outside(box, center, d_ex, rng, p))
      throw SamplingError("blind-spot rejection failed after 1000 attempts");
  return pts;
}

struct ResampleResult {
  std::vector<Vec3> points;
  std::vector<std::size_t> parents;  // coarse index each fine point was drawn from
  bool uniform_fallback = false;
};

// Density-proportional resampling of coarse points by CDF inversion; each draw
// is jittered uniformly in a sub-cube of half-width h / ceil(N^(1/3)) around its
// parent, clamped to the cube and domain and kept outside the exclusion zone.
inline ResampleResult importance_resample(const Vec3& center, const Dims& dims, double h, double d_ex,
                                          std::span<const Vec3> coarse, std::span<const double> densities, int n_fine,
                                          Rng& rng) {
  if (coarse.size() != densities.size() || coarse.empty()) throw ShapeError("importance_resample: size mismatch");
  ResampleResult r;
  std::vector<double> cdf(coarse.size());
  double total = 0.0;
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    const double s = densities[i];
    if (!(s >= 0) || !std::isfinite(s)) throw PreconditionError("importance_resample: densities must be finite and >= 0");
    total += s;
    cdf[i] = total;
  }
  if (!(total > 0)) {
    r.uniform_fallback = true;
    for (std::size_t i = 0; i < cdf.size(); ++i) cdf[i] = static_cast<double>(i + 1);
    total = static_cast<double>(cdf.size());
  }
  const int per_axis = static_cast<int>(std::ceil(std::cbrt(static_cast<double>(coarse.size())) - 1e-9));
  const double jitter = h / std::max(per_axis, 1);
  const Box cube = sampling_box(center, h, dims);
  r.points.resize(static_cast<std::size_t>(n_fine));
  r.parents.resize(static_cast<std::size_t>(n_fine));
  for (int k = 0; k < n_fine; ++k) {
    const double u = uniform01(rng) * total;
    auto idx = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    idx = std::min(idx, coarse.size() - 1);
    const Vec3& parent = coarse[idx];
    const Box sub = intersect(cube, Box{{parent[0] - jitter, parent[1] - jitter, parent[2] - jitter},
                                        {parent[0] + jitter, parent[1] + jitter, parent[2] + jitter}});
    Vec3 p;
    // The parent itself satisfies the exclusion, so it is a valid last resort.
    if (!detail::draw_outside(sub, center, d_ex, rng, p)) p = parent;
    r.points[static_cast<std::size_t>(k)] = p;
    r.parents[static_cast<std::size_t>(k)] = idx;
  }
  return r;
}

// Sample sets for a batch of targets. Coarse points for every target are drawn
// first, their densities come from one batched pass of the coarse net, and then
// fine points are resampled target by target.
template <class T>
std::vector<SampleSet> build_sample_sets(std::span<const Vec3> centers, const Dims& dims, const SamplerParams& sp,
                                         const nn::MlpParams<T>& coarse_net, int epsilon, Rng& rng,
                                         std::size_t* fallbacks = nullptr) {
  std::vector<SampleSet> sets(centers.size());
  std::vector<Vec3> all;
  all.reserve(centers.size() * static_cast<std::size_t>(sp.n));
  for (std::size_t i = 0; i < centers.size(); ++i) {
    sets[i].center = centers[i];
    sets[i].dims = dims;
    sets[i].h = sp.h;
    sets[i].coarse = sample_coarse(centers[i], dims, sp.h, sp.n, sp.d_ex, rng);
    for (const auto& p : sets[i].coarse) all.push_back(to_normalized(p, dims));
  }
  const auto sigma = nn::mlp_forward(coarse_net, nn::encode_rows<T>(all, epsilon));
  std::vector<double> dens(static_cast<std::size_t>(sp.n));
  for (std::size_t i = 0; i < centers.size(); ++i) {
    for (int k = 0; k < sp.n; ++k) dens[static_cast<std::size_t>(k)] = sigma[i * static_cast<std::size_t>(sp.n) + static_cast<std::size_t>(k)];
    auto r = importance_resample(centers[i], dims, sp.h, sp.d_ex, sets[i].coarse, dens, sp.n, rng);
    if (r.uniform_fallback && fallbacks) ++*fallbacks;
    sets[i].fine = std::move(r.points);
  }
  return sets;
}

template <class T>
SampleSet build_sample_set(const Vec3& center, const Dims& dims, const SamplerParams& sp, const nn::Networks<T>& nets,
                           Rng& rng) {
  return std::move(build_sample_sets<T>(std::span<const Vec3>(&center, 1), dims, sp, nets.coarse, nets.epsilon, rng)[0]);
}

}  // namespace cellinr
