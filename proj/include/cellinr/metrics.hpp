#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "cellinr/error.hpp"
#include "cellinr/volume.hpp"

namespace cellinr {

// +inf for identical volumes.
inline double psnr(const Volume3D& a, const Volume3D& b, double peak = 1.0) {
  if (!(a.dims() == b.dims())) throw ShapeError("psnr: dims differ");
  if (!(peak > 0)) throw PreconditionError("psnr: peak must be > 0");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

struct SsimParams {
  double sigma = 1.5;
  int support = 11;
  double k1 = 0.01, k2 = 0.03;
  double peak = 1.0;
  bool per_slice = false;  // 2D windows in each z slice, averaged over slices
};

struct MetricReport {
  double psnr = 0.0, ssim = 0.0;
  std::vector<double> slice_ssim;  // filled in per-slice mode
};

namespace detail {

inline std::vector<double> ssim_window(const SsimParams& p) {
  std::vector<double> w(static_cast<std::size_t>(p.support));
  const double c = (p.support - 1) / 2.0;
  double s = 0.0;
  for (int i = 0; i < p.support; ++i) s += w[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * p.sigma * p.sigma));
  for (auto& v : w) v /= s;
  return w;
}

// "Valid" separable correlation of a dense nx*ny*nz field with w along `axis`.
inline std::vector<double> filter_valid(const std::vector<double>& f, int (&n)[3], const std::vector<double>& w, int axis) {
  int m[3] = {n[0], n[1], n[2]};
  const int k = static_cast<int>(w.size());
  m[axis] = n[axis] - k + 1;
  std::vector<double> out(static_cast<std::size_t>(m[0]) * m[1] * m[2], 0.0);
  const std::size_t stride[3] = {1, static_cast<std::size_t>(n[0]), static_cast<std::size_t>(n[0]) * n[1]};
  for (int z = 0; z < m[2]; ++z)
    for (int y = 0; y < m[1]; ++y)
      for (int x = 0; x < m[0]; ++x) {
        const std::size_t base = x + static_cast<std::size_t>(n[0]) * (y + static_cast<std::size_t>(n[1]) * z);
        double s = 0.0;
        for (int t = 0; t < k; ++t) s += w[static_cast<std::size_t>(t)] * f[base + t * stride[axis]];
        out[x + static_cast<std::size_t>(m[0]) * (y + static_cast<std::size_t>(m[1]) * z)] = s;
      }
  n[axis] = m[axis];
  return out;
}

// Mean local SSIM over every window position fully inside the block.
inline double ssim_block(const std::vector<double>& a, const std::vector<double>& b, const int (&dims)[3],
                         const SsimParams& p, int axes) {
  const auto w = ssim_window(p);
  const std::size_t n = a.size();
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  std::vector<double> f[5] = {a, b, aa, bb, ab};
  int out[3] = {dims[0], dims[1], dims[2]};
  for (auto& g : f) {
    int d[3] = {dims[0], dims[1], dims[2]};
    for (int ax = 0; ax < axes; ++ax) g = filter_valid(g, d, w, ax);
    std::copy(d, d + 3, out);
  }
  const double c1 = (p.k1 * p.peak) * (p.k1 * p.peak), c2 = (p.k2 * p.peak) * (p.k2 * p.peak);
  double s = 0.0;
  const std::size_t m = f[0].size();
  for (std::size_t i = 0; i < m; ++i) {
    const double mu_a = f[0][i], mu_b = f[1][i];
    const double va = f[2][i] - mu_a * mu_a, vb = f[3][i] - mu_b * mu_b, cov = f[4][i] - mu_a * mu_b;
    s += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
  }
  (void)out;
  return s / static_cast<double>(m);
}

}  // namespace detail

inline MetricReport ssim_report(const Volume3D& a, const Volume3D& b, const SsimParams& p = {}) {
  if (!(a.dims() == b.dims())) throw ShapeError("ssim: dims differ");
  if (p.support < 1 || p.support % 2 == 0 || !(p.sigma > 0) || !(p.peak > 0)) throw PreconditionError("ssim: bad window");
  const Dims& d = a.dims();
  const bool small = d.nx < p.support || d.ny < p.support || (!p.per_slice && d.nz < p.support);
  if (small) throw ShapeError("ssim: volume smaller than the window");
  MetricReport r;
  if (!p.per_slice) {
    const std::vector<double> av(a.data().begin(), a.data().end()), bv(b.data().begin(), b.data().end());
    const int dims[3] = {d.nx, d.ny, d.nz};
    r.ssim = detail::ssim_block(av, bv, dims, p, 3);
    return r;
  }
  const std::size_t plane = static_cast<std::size_t>(d.nx) * d.ny;
  const int dims[3] = {d.nx, d.ny, 1};
  double s = 0.0;
  for (int z = 0; z < d.nz; ++z) {
    const auto off = plane * static_cast<std::size_t>(z);
    const std::vector<double> av(a.data().begin() + off, a.data().begin() + off + plane),
        bv(b.data().begin() + off, b.data().begin() + off + plane);
    r.slice_ssim.push_back(detail::ssim_block(av, bv, dims, p, 2));
    s += r.slice_ssim.back();
  }
  r.ssim = s / d.nz;
  return r;
}

inline double ssim(const Volume3D& a, const Volume3D& b, const SsimParams& p = {}) { return ssim_report(a, b, p).ssim; }

inline MetricReport evaluate(const Volume3D& a, const Volume3D& b, const SsimParams& p = {}) {
  MetricReport r = ssim_report(a, b, p);
  r.psnr = psnr(a, b, p.peak);
  return r;
}

}  // namespace cellinr
