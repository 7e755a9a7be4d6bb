#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "cellinr/error.hpp"
#include "cellinr/rng.hpp"
#include "cellinr/volume.hpp"

namespace cellinr {

struct PhantomSpec {
  Dims dims{64, 64, 64};
  double membrane_thickness = 2.0;  // voxels
  int cell_count = 2;
  double artifact_amplitude = 0.3;  // fraction of the signal peak
  double artifact_scale = 16.0;     // voxels, std-dev of each artifact blob
  std::uint64_t seed = 0;
};

struct Phantom {
  Volume3D clean;
  Volume3D artifact;
  // 1 on membrane voxels, 0 elsewhere; same geometry as `clean`.
  Volume3D labels;
};

// Synthetic cell-membrane volume: `cell_count` ellipsoidal shells on a dark
// background, plus a separate smooth low-frequency artifact field built from
// broad Gaussian blobs and scaled so its maximum equals artifact_amplitude.
inline Phantom make_phantom(const PhantomSpec& spec) {
  const Dims d = spec.dims;
  if (d.nx < 16 || d.ny < 16 || d.nz < 16) throw PreconditionError("phantom dims must be at least 16 per axis");
  if (spec.cell_count < 1) throw PreconditionError("cell_count must be >= 1");
  if (!(spec.artifact_amplitude >= 0 && spec.artifact_amplitude <= 1))
    throw PreconditionError("artifact_amplitude must lie in [0, 1]");
  if (!(spec.membrane_thickness > 0) || !(spec.artifact_scale > 0))
    throw PreconditionError("membrane_thickness and artifact_scale must be > 0");

  Rng rng(mix64(spec.seed));
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };

  struct Cell {
    double c[3], r[3], intensity;
  };
  std::vector<Cell> cells;
  const double extent = d.min_axis();
  for (int i = 0; i < spec.cell_count; ++i) {
    Cell cell{};
    const double base = uni(0.18, 0.3) * extent;
    for (int a = 0; a < 3; ++a) {
      cell.r[a] = base * uni(0.85, 1.15);
      const double margin = cell.r[a] + spec.membrane_thickness + 1.0;
      const double lo = margin, hi = d[a] - 1.0 - margin;
      cell.c[a] = lo < hi ? uni(lo, hi) : 0.5 * (d[a] - 1.0);
    }
    cell.intensity = uni(0.8, 1.0);
    cells.push_back(cell);
  }

  Phantom ph{Volume3D(d), Volume3D(d), Volume3D(d)};
  const double half = 0.5 * spec.membrane_thickness;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const double p[3] = {double(x), double(y), double(z)};
        float value = 0.0f;
        for (const auto& cell : cells) {
          double q2 = 0.0, rmean = 0.0;
          for (int a = 0; a < 3; ++a) {
            const double t = (p[a] - cell.c[a]) / cell.r[a];
            q2 += t * t;
            rmean += cell.r[a] / 3.0;
          }
          // Approximate signed distance to the ellipsoid surface, in voxels.
          const double dist = (std::sqrt(q2) - 1.0) * rmean;
          if (std::abs(dist) <= half) value = std::max(value, static_cast<float>(cell.intensity));
        }
        ph.clean(x, y, z) = value;
        ph.labels(x, y, z) = value > 0.0f ? 1.0f : 0.0f;
      }

  if (spec.artifact_amplitude > 0) {
    const int blobs = 3 + spec.cell_count;
    struct Blob {
      double c[3], w;
    };
    std::vector<Blob> bl;
    for (int i = 0; i < blobs; ++i) bl.push_back({{uni(0, d.nx - 1), uni(0, d.ny - 1), uni(0, d.nz - 1)}, uni(0.5, 1.0)});
    const double inv2s2 = 1.0 / (2.0 * spec.artifact_scale * spec.artifact_scale);
    std::vector<double> field(d.count());
    double peak = 0.0;
    for (int z = 0; z < d.nz; ++z)
      for (int y = 0; y < d.ny; ++y)
        for (int x = 0; x < d.nx; ++x) {
          double s = 0.0;
          for (const auto& b : bl) {
            const double dx = x - b.c[0], dy = y - b.c[1], dz = z - b.c[2];
            s += b.w * std::exp(-(dx * dx + dy * dy + dz * dz) * inv2s2);
          }
          field[ph.artifact.index(x, y, z)] = s;
          peak = std::max(peak, s);
        }
    for (std::size_t i = 0; i < field.size(); ++i)
      ph.artifact[i] = static_cast<float>(field[i] / peak * spec.artifact_amplitude);
  }
  return ph;
}

// clean + artifact, clamped to [0, 1].
inline Volume3D compose(const Volume3D& clean, const Volume3D& artifact) {
  if (clean.dims() != artifact.dims()) throw ShapeError("compose: dims differ");
  Volume3D out(clean.dims(), clean.spacing());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(clean[i] + artifact[i], 0.0f, 1.0f);
  return out;
}

// Shot noise followed by read noise. Poisson: counts = v / factor, result =
// factor * Poisson(counts); skipped when factor == 0. Gaussian: sigma is on the
// 0-255 display scale and is added only where the input voxel is non-zero.
// The result is clamped to [0, 1].
inline Volume3D add_noise(const Volume3D& v, double poisson_factor, double gauss_sigma, std::uint64_t seed) {
  if (!(poisson_factor >= 0) || !(gauss_sigma >= 0)) throw PreconditionError("noise parameters must be >= 0");
  Rng rng(mix64(seed ^ 0x6e6f697365ULL));
  std::normal_distribution<double> gauss(0.0, gauss_sigma / 255.0);
  Volume3D out(v.dims(), v.spacing(), {v.data().begin(), v.data().end()}, v.intensity_range());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double in = v[i];
    double x = in;
    if (poisson_factor > 0 && in > 0) {
      std::poisson_distribution<long long> shot(in / poisson_factor);
      x = poisson_factor * static_cast<double>(shot(rng));
    }
    if (gauss_sigma > 0 && in != 0.0) x += gauss(rng);
    out[i] = static_cast<float>(std::clamp(x, 0.0, 1.0));
  }
  return out;
}

}  // namespace cellinr
