#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <vector>

#include "cellinr/error.hpp"
#include "cellinr/nn/encoding.hpp"
#include "cellinr/volume.hpp"

namespace cellinr {

// Trilinear interpolation at continuous voxel coordinates (voxel centres at
// integers), clamped to the grid.
inline double trilinear(const Volume3D& v, const nn::Vec3& p) {
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    const double c = std::clamp(p[a], 0.0, static_cast<double>(v.dims()[a] - 1));
    i0[a] = std::min(static_cast<int>(std::floor(c)), std::max(v.dims()[a] - 2, 0));
    f[a] = c - i0[a];
  }
  double s = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) * (dz ? f[2] : 1 - f[2]);
        if (w == 0.0) continue;
        s += w * v.clamped(i0[0] + dx, i0[1] + dy, i0[2] + dz);
      }
  return s;
}

struct ProfileRow {
  double t = 0.0;
  std::vector<double> values;  // one per volume
};

// `samples` evenly spaced points from p0 to p1 (t in [0, 1]); a zero-length
// segment yields a single row.
inline std::vector<ProfileRow> line_profile(const std::vector<const Volume3D*>& vols, const nn::Vec3& p0,
                                            const nn::Vec3& p1, int samples = 256) {
  if (vols.empty()) throw PreconditionError("profile needs at least one volume");
  if (samples < 1) throw PreconditionError("profile needs >= 1 sample");
  for (const auto* v : vols)
    if (!(v->dims() == vols.front()->dims())) throw ShapeError("profile volumes differ in dims");
  const bool point = p0 == p1;
  const int n = point ? 1 : samples;
  std::vector<ProfileRow> rows;
  for (int k = 0; k < n; ++k) {
    ProfileRow r;
    r.t = n == 1 ? 0.0 : static_cast<double>(k) / (n - 1);
    const nn::Vec3 p{p0[0] + r.t * (p1[0] - p0[0]), p0[1] + r.t * (p1[1] - p0[1]), p0[2] + r.t * (p1[2] - p0[2])};
    for (const auto* v : vols) r.values.push_back(trilinear(*v, p));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline void write_profile_csv(std::ostream& out, const std::vector<ProfileRow>& rows) {
  const std::size_t k = rows.empty() ? 0 : rows.front().values.size();
  out << "t";
  for (std::size_t i = 0; i < k; ++i) out << ",value_" << static_cast<char>('a' + i);
  out << "\n";
  out.precision(9);
  for (const auto& r : rows) {
    out << r.t;
    for (double v : r.values) out << "," << v;
    out << "\n";
  }
}

}  // namespace cellinr
