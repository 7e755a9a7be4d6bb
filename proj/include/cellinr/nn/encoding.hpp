#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "cellinr/error.hpp"
#include "cellinr/nn/matrix.hpp"

namespace cellinr::nn {

using Vec3 = std::array<double, 3>;

[[nodiscard]] inline std::size_t encoding_width(int epsilon) { return 6 * static_cast<std::size_t>(epsilon); }

// Frequency ladder per axis: [sin(2^0 pi r), cos(2^0 pi r), ..., sin(2^(e-1) pi r), cos(2^(e-1) pi r)],
// axes x, y, z concatenated. Higher octaves use the double-angle recurrence.
template <class T>
void encode_into(const Vec3& rho, int epsilon, T* out) {
  for (int a = 0; a < 3; ++a) {
    double s = std::sin(std::numbers::pi * rho[a]);
    double c = std::cos(std::numbers::pi * rho[a]);
    T* o = out + 2 * epsilon * a;
    for (int l = 0; l < epsilon; ++l) {
      o[2 * l] = static_cast<T>(s);
      o[2 * l + 1] = static_cast<T>(c);
      const double s2 = 2.0 * s * c;
      const double c2 = (c - s) * (c + s);
      s = s2;
      c = c2;
    }
  }
}

inline std::vector<double> encode(const Vec3& rho, int epsilon) {
  if (epsilon < 1) throw PreconditionError("encoding depth must be >= 1");
  std::vector<double> out(encoding_width(epsilon));
  encode_into(rho, epsilon, out.data());
  return out;
}

// One encoded row per point.
template <class T>
Matrix<T> encode_rows(std::span<const Vec3> points, int epsilon) {
  if (epsilon < 1) throw PreconditionError("encoding depth must be >= 1");
  Matrix<T> m(points.size(), encoding_width(epsilon));
  for (std::size_t i = 0; i < points.size(); ++i) encode_into(points[i], epsilon, m.row(i));
  return m;
}

}  // namespace cellinr::nn
