#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cellinr/error.hpp"

namespace cellinr {

struct Dims {
  int nx = 0, ny = 0, nz = 0;

  [[nodiscard]] std::size_t count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
  [[nodiscard]] int operator[](int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
  [[nodiscard]] bool positive() const { return nx > 0 && ny > 0 && nz > 0; }
  [[nodiscard]] int min_axis() const { return std::min(nx, std::min(ny, nz)); }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct Spacing {
  double sx = 1.0, sy = 1.0, sz = 1.0;
  [[nodiscard]] double operator[](int axis) const { return axis == 0 ? sx : axis == 1 ? sy : sz; }
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

struct IntensityRange {
  double lo = 0.0, hi = 1.0;
  friend bool operator==(const IntensityRange&, const IntensityRange&) = default;
};

// Dense scalar grid, x fastest: index = x + nx * (y + ny * z).
// In-memory intensities are normalized to [0, 1]; intensity_range remembers
// the on-disk range they came from.
class Volume3D {
 public:
  Volume3D() = default;

  Volume3D(Dims dims, Spacing spacing = {}, IntensityRange range = {})
      : dims_(dims), spacing_(spacing), range_(range), data_(checked_count(dims), 0.0f) {
    check_spacing();
  }

  Volume3D(Dims dims, Spacing spacing, std::vector<float> data, IntensityRange range = {})
      : dims_(dims), spacing_(spacing), range_(range), data_(std::move(data)) {
    if (data_.size() != checked_count(dims)) throw ShapeError("volume data length does not match dims");
    check_spacing();
  }

  [[nodiscard]] const Dims& dims() const { return dims_; }
  [[nodiscard]] const Spacing& spacing() const { return spacing_; }
  [[nodiscard]] const IntensityRange& intensity_range() const { return range_; }
  void set_intensity_range(IntensityRange r) { range_ = r; }
  void set_spacing(Spacing s) {
    spacing_ = s;
    check_spacing();
  }

  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] std::span<const float> data() const { return data_; }
  [[nodiscard]] std::span<float> data() { return data_; }

  [[nodiscard]] std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims_.nx) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims_.ny) * static_cast<std::size_t>(z));
  }
  [[nodiscard]] std::array<int, 3> coords(std::size_t i) const {
    const auto nx = static_cast<std::size_t>(dims_.nx), ny = static_cast<std::size_t>(dims_.ny);
    return {static_cast<int>(i % nx), static_cast<int>((i / nx) % ny), static_cast<int>(i / (nx * ny))};
  }

  float& operator()(int x, int y, int z) { return data_[index(x, y, z)]; }
  float operator()(int x, int y, int z) const { return data_[index(x, y, z)]; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // Replicate-padded access.
  [[nodiscard]] float clamped(int x, int y, int z) const {
    x = std::clamp(x, 0, dims_.nx - 1);
    y = std::clamp(y, 0, dims_.ny - 1);
    z = std::clamp(z, 0, dims_.nz - 1);
    return data_[index(x, y, z)];
  }

  [[nodiscard]] bool inside(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims_.nx && y < dims_.ny && z < dims_.nz;
  }

 private:
  static std::size_t checked_count(const Dims& d) {
    if (!d.positive()) throw ShapeError("volume dims must be positive");
    return d.count();
  }
  void check_spacing() const {
    if (!(spacing_.sx > 0 && spacing_.sy > 0 && spacing_.sz > 0)) throw ShapeError("voxel spacing must be > 0");
  }

  Dims dims_;
  Spacing spacing_;
  IntensityRange range_;
  std::vector<float> data_;
};

// FNV-1a, 64 bit.
class Fnv1a {
 public:
  void update(const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  template <class T>
  void update_value(const T& v) {
    update(&v, sizeof(T));
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  [[nodiscard]] std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

// Content hash over dims and voxel data; identifies the case a model was trained on.
inline std::uint64_t fingerprint(const Volume3D& v) {
  Fnv1a h;
  h.update_value(v.dims().nx);
  h.update_value(v.dims().ny);
  h.update_value(v.dims().nz);
  h.update(v.data().data(), v.data().size_bytes());
  return h.digest();
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

// Cell-centred normalized coordinate of voxel index i on an axis of n voxels: [-1, 1].
inline double voxel_to_normalized(double i, int n) { return -1.0 + (2.0 * i + 1.0) / n; }
inline double normalized_to_voxel(double rho, int n) { return ((rho + 1.0) * n - 1.0) / 2.0; }

}  // namespace cellinr
