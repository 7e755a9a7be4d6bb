#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "cellinr/error.hpp"
#include "cellinr/volume.hpp"

// Structure amplification: Hessian eigen-analysis of the raw volume, |lambda3|
// normalization, and Otsu binarization into a signal mask.
namespace cellinr {

struct HessianField {
  Volume3D xx, yy, zz, xy, xz, yz;
  double sigma = 0.0;
};

// Upper triangle of a symmetric 3x3 matrix.
struct Sym3 {
  double xx = 0, yy = 0, zz = 0, xy = 0, xz = 0, yz = 0;

  [[nodiscard]] double operator()(int r, int c) const {
    if (r > c) std::swap(r, c);
    if (r == c) return r == 0 ? xx : r == 1 ? yy : zz;
    if (r == 0) return c == 1 ? xy : xz;
    return yz;
  }
  [[nodiscard]] double frobenius() const {
    return std::sqrt(xx * xx + yy * yy + zz * zz + 2 * (xy * xy + xz * xz + yz * yz));
  }
};

// Eigenpairs ordered by |value| ascending: |values[0]| <= |values[1]| <= |values[2]|.
// Equal magnitudes are allowed; the order is non-strict.
struct EigenTriple {
  std::array<double, 3> values{};
  std::array<std::array<double, 3>, 3> vectors{};  // vectors[i] pairs with values[i]
};

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& w : k) w /= sum;
  return k;
}

inline Volume3D smooth_axis(const Volume3D& v, const std::vector<double>& k, int axis) {
  const int radius = static_cast<int>(k.size() / 2);
  const Dims d = v.dims();
  Volume3D out(d, v.spacing(), v.intensity_range());
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        double s = 0.0;
        for (int o = -radius; o <= radius; ++o) {
          const double w = k[static_cast<std::size_t>(o + radius)];
          s += w * (axis == 0 ? v.clamped(x + o, y, z) : axis == 1 ? v.clamped(x, y + o, z) : v.clamped(x, y, z + o));
        }
        out(x, y, z) = static_cast<float>(s);
      }
  return out;
}

inline double det3(const double m[3][3]) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

inline std::array<double, 3> cross(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double dot(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

}  // namespace detail

// Separable Gaussian pre-smoothing (sigma in voxels, truncated at 3 sigma,
// replicate padding), then second differences. Unit voxel step: Ixx = v[i+1] - 2v[i] + v[i-1].
inline HessianField hessian(const Volume3D& v, double sigma_s) {
  const Dims d = v.dims();
  if (d.nx < 5 || d.ny < 5 || d.nz < 5) throw PreconditionError("hessian needs at least 5 voxels per axis");
  if (!(sigma_s >= 0)) throw PreconditionError("sigma_s must be >= 0");

  Volume3D f = v;
  if (sigma_s > 0) {
    const auto k = detail::gaussian_kernel(sigma_s);
    for (int axis = 0; axis < 3; ++axis) f = detail::smooth_axis(f, k, axis);
  }

  HessianField h{Volume3D(d), Volume3D(d), Volume3D(d), Volume3D(d), Volume3D(d), Volume3D(d), sigma_s};
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const double c = f(x, y, z);
        auto at = [&](int dx, int dy, int dz) { return static_cast<double>(f.clamped(x + dx, y + dy, z + dz)); };
        h.xx(x, y, z) = static_cast<float>(at(1, 0, 0) - 2 * c + at(-1, 0, 0));
        h.yy(x, y, z) = static_cast<float>(at(0, 1, 0) - 2 * c + at(0, -1, 0));
        h.zz(x, y, z) = static_cast<float>(at(0, 0, 1) - 2 * c + at(0, 0, -1));
        h.xy(x, y, z) = static_cast<float>((at(1, 1, 0) - at(1, -1, 0) - at(-1, 1, 0) + at(-1, -1, 0)) / 4);
        h.xz(x, y, z) = static_cast<float>((at(1, 0, 1) - at(1, 0, -1) - at(-1, 0, 1) + at(-1, 0, -1)) / 4);
        h.yz(x, y, z) = static_cast<float>((at(0, 1, 1) - at(0, 1, -1) - at(0, -1, 1) + at(0, -1, -1)) / 4);
      }
  return h;
}

inline Sym3 hessian_at(const HessianField& h, std::size_t i) {
  return {h.xx[i], h.yy[i], h.zz[i], h.xy[i], h.xz[i], h.yz[i]};
}

// Closed-form (trigonometric) eigenvalues, unsorted.
inline std::array<double, 3> eigenvalues3_symmetric(const Sym3& a) {
  const double p1 = a.xy * a.xy + a.xz * a.xz + a.yz * a.yz;
  const double q = (a.xx + a.yy + a.zz) / 3.0;
  const double p2 = (a.xx - q) * (a.xx - q) + (a.yy - q) * (a.yy - q) + (a.zz - q) * (a.zz - q) + 2.0 * p1;
  if (p2 <= 0.0) return {q, q, q};
  const double p = std::sqrt(p2 / 6.0);
  const double b[3][3] = {{(a.xx - q) / p, a.xy / p, a.xz / p},
                          {a.xy / p, (a.yy - q) / p, a.yz / p},
                          {a.xz / p, a.yz / p, (a.zz - q) / p}};
  const double r = std::clamp(detail::det3(b) / 2.0, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;
  const double e1 = q + 2.0 * p * std::cos(phi);
  const double e3 = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
  return {e1, 3.0 * q - e1 - e3, e3};
}

// Analytic eigenpairs followed by cyclic Jacobi polishing of E^T A E, which
// repairs eigenvectors that the closed form resolves poorly near degenerate
// spectra. Result is sorted by |lambda| ascending.
inline EigenTriple eigen3_symmetric(const Sym3& a) {
  using V3 = std::array<double, 3>;
  const auto vals = eigenvalues3_symmetric(a);
  const double scale = std::max(a.frobenius(), 1e-300);

  // Initial eigenvectors from cross products of rows of (A - lambda I).
  std::array<V3, 3> e{};
  std::array<bool, 3> ok{};
  for (int k = 0; k < 3; ++k) {
    const V3 r0{a.xx - vals[k], a.xy, a.xz}, r1{a.xy, a.yy - vals[k], a.yz}, r2{a.xz, a.yz, a.zz - vals[k]};
    const V3 c[3] = {detail::cross(r0, r1), detail::cross(r0, r2), detail::cross(r1, r2)};
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (detail::dot(c[i], c[i]) > detail::dot(c[best], c[best])) best = i;
    const double n = std::sqrt(detail::dot(c[best], c[best]));
    if (n > 1e-6 * scale * scale) {
      e[k] = {c[best][0] / n, c[best][1] / n, c[best][2] / n};
      ok[k] = true;
    }
  }
  // Modified Gram-Schmidt with completion from the canonical axes.
  std::array<V3, 3> basis{};
  int filled = 0;
  auto try_add = [&](V3 v) {
    for (int j = 0; j < filled; ++j) {
      const double d = detail::dot(v, basis[j]);
      for (int i = 0; i < 3; ++i) v[i] -= d * basis[j][i];
    }
    const double n = std::sqrt(detail::dot(v, v));
    if (n < 1e-3) return;
    for (int i = 0; i < 3; ++i) v[i] /= n;
    basis[filled++] = v;
  };
  for (int k = 0; k < 3 && filled < 3; ++k)
    if (ok[k]) try_add(e[k]);
  for (int k = 0; k < 3 && filled < 3; ++k) try_add(V3{k == 0 ? 1.0 : 0.0, k == 1 ? 1.0 : 0.0, k == 2 ? 1.0 : 0.0});

  // E columns = basis vectors; M = E^T A E.
  double E[3][3], M[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) E[i][j] = basis[j][i];
  auto rebuild = [&] {
    double AE[3][3];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        AE[i][j] = 0;
        for (int k = 0; k < 3; ++k) AE[i][j] += a(i, k) * E[k][j];
      }
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        M[i][j] = 0;
        for (int k = 0; k < 3; ++k) M[i][j] += E[k][i] * AE[k][j];
      }
  };
  rebuild();
  for (int sweep = 0; sweep < 12; ++sweep) {
    const double off = std::abs(M[0][1]) + std::abs(M[0][2]) + std::abs(M[1][2]);
    if (off <= 1e-17 * scale) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (std::abs(M[p][q]) <= 1e-300) continue;
        const double theta = (M[q][q] - M[p][p]) / (2.0 * M[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int i = 0; i < 3; ++i) {
          const double ep = E[i][p], eq = E[i][q];
          E[i][p] = c * ep - s * eq;
          E[i][q] = s * ep + c * eq;
        }
        rebuild();
      }
  }

  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int i, int j) { return std::abs(M[i][i]) < std::abs(M[j][j]); });
  EigenTriple out;
  for (int k = 0; k < 3; ++k) {
    out.values[k] = M[order[k]][order[k]];
    for (int i = 0; i < 3; ++i) out.vectors[k][i] = E[i][order[k]];
  }
  return out;
}

inline double largest_abs_eigenvalue(const Sym3& a) {
  const auto v = eigenvalues3_symmetric(a);
  return std::max({std::abs(v[0]), std::abs(v[1]), std::abs(v[2])});
}

// I_en = |lambda3| / max |lambda3|, in [0, 1]; all zeros for a constant input.
inline Volume3D enhance(const Volume3D& v, double sigma_s) {
  const auto h = hessian(v, sigma_s);
  Volume3D out(v.dims(), v.spacing());
  std::vector<double> mag(v.size());
  double peak = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    mag[i] = largest_abs_eigenvalue(hessian_at(h, i));
    peak = std::max(peak, mag[i]);
  }
  if (peak > 0)
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(std::min(1.0, mag[i] / peak));
  return out;
}

inline std::vector<double> histogram01(std::span<const float> values, int bins) {
  std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
  for (float v : values) {
    const int b = std::clamp(static_cast<int>(std::floor(static_cast<double>(v) * bins)), 0, bins - 1);
    counts[static_cast<std::size_t>(b)] += 1.0;
  }
  return counts;
}

// Returns the cut k in [1, bins-1] maximizing between-class variance when the
// lower class is bins [0, k); ties go to the lowest k. Bin b represents the
// value (b + 0.5) / bins. Returns 0 when no cut separates any mass.
inline int otsu_cut(std::span<const double> counts) {
  const auto bins = static_cast<int>(counts.size());
  double total = 0.0, total_moment = 0.0;
  for (int b = 0; b < bins; ++b) {
    total += counts[static_cast<std::size_t>(b)];
    total_moment += counts[static_cast<std::size_t>(b)] * (b + 0.5) / bins;
  }
  if (total <= 0) return 0;
  const double mean = total_moment / total;
  double n0 = 0.0, moment0 = 0.0, best = 0.0;
  int best_k = 0;
  for (int k = 1; k < bins; ++k) {
    n0 += counts[static_cast<std::size_t>(k - 1)];
    moment0 += counts[static_cast<std::size_t>(k - 1)] * (k - 0.5) / bins;
    if (n0 <= 0 || n0 >= total) continue;
    const double w0 = n0 / total, w1 = 1.0 - w0, m0 = moment0 / total;
    const double num = mean * w0 - m0;
    const double between = num * num / (w0 * w1);
    if (between > best) {
      best = between;
      best_k = k;
    }
  }
  return best_k;
}

// Otsu threshold mu on values in [0, 1]. When only one bin is occupied the
// upper edge of that bin is returned, so `> mu` yields an empty mask.
inline double otsu_threshold(std::span<const float> values, int bins = 256) {
  if (bins < 2) throw PreconditionError("otsu_threshold needs bins >= 2");
  const auto counts = histogram01(values, bins);
  const int k = otsu_cut(counts);
  if (k > 0) return static_cast<double>(k) / bins;
  int last = 0;
  for (int b = 0; b < bins; ++b)
    if (counts[static_cast<std::size_t>(b)] > 0) last = b;
  return static_cast<double>(last + 1) / bins;
}

// Signal mask: 1 where en > mu (strict), else 0. Exported to u8 files as {0, 255}.
inline Volume3D binarize(const Volume3D& en, double mu) {
  Volume3D out(en.dims(), en.spacing());
  for (std::size_t i = 0; i < en.size(); ++i) out[i] = en[i] > mu ? 1.0f : 0.0f;
  return out;
}

}  // namespace cellinr
