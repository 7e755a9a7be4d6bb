#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"

using namespace cellinr;

namespace {

using M3 = std::array<std::array<double, 3>, 3>;

M3 to_dense(const Sym3& s) {
  M3 m{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m[i][j] = s(i, j);
  return m;
}

Sym3 random_sym(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  return {u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)};
}

// Q diag(l) Q^T with a random rotation, to get prescribed (possibly repeated) spectra.
Sym3 with_spectrum(std::mt19937_64& rng, std::array<double, 3> l) {
  std::normal_distribution<double> g;
  double q[4] = {g(rng), g(rng), g(rng), g(rng)};
  const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  for (double& x : q) x /= n;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  const double R[3][3] = {{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
                          {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
                          {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}};
  double m[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      m[i][j] = 0;
      for (int k = 0; k < 3; ++k) m[i][j] += R[i][k] * l[static_cast<std::size_t>(k)] * R[j][k];
    }
  return {m[0][0], m[1][1], m[2][2], 0.5 * (m[0][1] + m[1][0]), 0.5 * (m[0][2] + m[2][0]), 0.5 * (m[1][2] + m[2][1])};
}

double reconstruction_error(const Sym3& a, const EigenTriple& e) {
  const M3 m = to_dense(a);
  double s = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double r = 0.0;
      for (int k = 0; k < 3; ++k) r += e.vectors[k][i] * e.values[k] * e.vectors[k][j];
      s += (r - m[i][j]) * (r - m[i][j]);
    }
  return std::sqrt(s);
}

void check_decomposition(const Sym3& a) {
  const auto e = eigen3_symmetric(a);
  const double norm = a.frobenius();
  EXPECT_LE(std::abs(e.values[0]), std::abs(e.values[1]));
  EXPECT_LE(std::abs(e.values[1]), std::abs(e.values[2]));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double d = 0.0;
      for (int k = 0; k < 3; ++k) d += e.vectors[i][k] * e.vectors[j][k];
      EXPECT_NEAR(d, i == j ? 1.0 : 0.0, 1e-6);
    }
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < 3; ++i) {
      double hv = 0.0;
      for (int j = 0; j < 3; ++j) hv += a(i, j) * e.vectors[k][j];
      EXPECT_NEAR(hv, e.values[k] * e.vectors[k][i], 1e-5 * std::max(norm, 1e-30));
    }
  EXPECT_LE(reconstruction_error(a, e), 1e-8);
  const M3 m = to_dense(a);
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  EXPECT_NEAR(e.values[0] + e.values[1] + e.values[2], a.xx + a.yy + a.zz, 1e-8 * std::max(1.0, norm));
  EXPECT_NEAR(e.values[0] * e.values[1] * e.values[2], det, 1e-8 * std::max(1.0, norm * norm * norm));
}

// Straight from the definition: between-class variance w0 w1 (mu0 - mu1)^2 for
// every cut, recomputed from scratch, lowest cut on ties.
int brute_force_cut(const std::vector<double>& h) {
  const int bins = static_cast<int>(h.size());
  int best_k = 0;
  double best = 0.0;
  for (int k = 1; k < bins; ++k) {
    double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (int b = 0; b < bins; ++b) {
      const double x = (b + 0.5) / bins;
      if (b < k) {
        n0 += h[static_cast<std::size_t>(b)];
        s0 += h[static_cast<std::size_t>(b)] * x;
      } else {
        n1 += h[static_cast<std::size_t>(b)];
        s1 += h[static_cast<std::size_t>(b)] * x;
      }
    }
    if (n0 <= 0 || n1 <= 0) continue;
    const double n = n0 + n1, mu0 = s0 / n0, mu1 = s1 / n1;
    const double v = (n0 / n) * (n1 / n) * (mu0 - mu1) * (mu0 - mu1);
    if (v > best * (1 + 1e-12)) {
      best = v;
      best_k = k;
    }
  }
  return best_k;
}

Volume3D field(Dims d, auto f) {
  Volume3D v(d);
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) v(x, y, z) = static_cast<float>(f(x, y, z));
  return v;
}

bool interior(const Dims& d, int x, int y, int z) {
  return x > 0 && y > 0 && z > 0 && x < d.nx - 1 && y < d.ny - 1 && z < d.nz - 1;
}

}  // namespace

TEST(Hessian, QuadraticHasConstantHessian) {
  const Dims d{9, 9, 9};
  const auto h = hessian(field(d, [](int x, int, int) { return 0.01 * x * x; }), 0.0);
  for (int z = 0; z < 9; ++z)
    for (int y = 0; y < 9; ++y)
      for (int x = 1; x < 8; ++x) {
        const auto i = h.xx.index(x, y, z);
        ASSERT_NEAR(h.xx[i], 0.02, 1e-6);
        ASSERT_NEAR(h.yy[i], 0.0, 1e-7);
        ASSERT_NEAR(h.zz[i], 0.0, 1e-7);
        if (interior(d, x, y, z)) {
          ASSERT_NEAR(h.xy[i], 0.0, 1e-7);
        }
      }
}

TEST(Hessian, ConstantVolumeIsZero) {
  const auto v = field({7, 6, 5}, [](int, int, int) { return 0.37; });
  for (double s : {0.0, 1.0, 2.5}) {
    const auto h = hessian(v, s);
    for (const Volume3D* c : {&h.xx, &h.yy, &h.zz, &h.xy, &h.xz, &h.yz})
      for (float x : c->data()) ASSERT_NEAR(x, 0.0f, 1e-6f);
  }
}

TEST(Hessian, MixedPartialOfBilinear) {
  const Dims d{9, 9, 9};
  const auto h = hessian(field(d, [](int x, int y, int) { return 0.01 * x * y; }), 0.0);
  for (int z = 0; z < 9; ++z)
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 9; ++x) {
        if (!interior(d, x, y, z)) continue;
        const auto i = h.xx.index(x, y, z);
        ASSERT_NEAR(h.xy[i], 0.01, 1e-6);
        ASSERT_NEAR(h.xx[i], 0.0, 1e-6);
        ASSERT_NEAR(h.yy[i], 0.0, 1e-6);
        ASSERT_NEAR(h.xz[i], 0.0, 1e-6);
        ASSERT_NEAR(h.yz[i], 0.0, 1e-6);
      }
}

TEST(Hessian, RejectsSmallVolumes) {
  EXPECT_THROW(hessian(Volume3D({4, 9, 9}), 1.0), PreconditionError);
  EXPECT_THROW(hessian(Volume3D({9, 9, 9}), -1.0), PreconditionError);
}

TEST(Eigen3, DiagonalAndIdentity) {
  const auto e = eigen3_symmetric({2, 0, 0, 0, 0, 0});
  EXPECT_NEAR(e.values[2], 2.0, 1e-12);
  EXPECT_NEAR(e.values[0], 0.0, 1e-12);
  EXPECT_NEAR(e.values[1], 0.0, 1e-12);
  EXPECT_NEAR(std::abs(e.vectors[2][0]), 1.0, 1e-12);
  const auto id = eigen3_symmetric({1, 1, 1, 0, 0, 0});
  for (double v : id.values) EXPECT_NEAR(v, 1.0, 1e-12);
  check_decomposition({1, 1, 1, 0, 0, 0});
  check_decomposition({0, 0, 0, 0, 0, 0});
}

TEST(Eigen3, RandomMatricesReconstruct) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 2000; ++i) check_decomposition(random_sym(rng));
}

TEST(Eigen3, RepeatedAndNearRepeatedSpectra) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 500; ++i) {
    const double a = u(rng), b = u(rng);
    check_decomposition(with_spectrum(rng, {a, a, b}));
    check_decomposition(with_spectrum(rng, {a, a + 1e-9, b}));
    check_decomposition(with_spectrum(rng, {a, -a, b}));
    check_decomposition(with_spectrum(rng, {a * 1e-6, b * 1e3, 0.0}));
  }
}

TEST(Enhance, ConstantVolumeGivesZeros) {
  const auto en = enhance(field({8, 8, 8}, [](int, int, int) { return 0.6; }), 1.0);
  for (float x : en.data()) ASSERT_EQ(x, 0.0f);
}

TEST(Enhance, PlaneIsMaximalOnThePlane) {
  const Dims d{20, 20, 20};
  for (int plane : {6, 10, 13}) {
    const auto en = enhance(field(d, [&](int x, int, int) { return x == plane ? 1.0 : 0.0; }), 1.0);
    std::size_t arg = 0;
    float mx = -1;
    for (std::size_t i = 0; i < en.size(); ++i)
      if (en[i] > mx) {
        mx = en[i];
        arg = i;
      }
    EXPECT_EQ(mx, 1.0f);
    EXPECT_LE(std::abs(en.coords(arg)[0] - plane), 1);
  }
}

TEST(Enhance, OutputRangeAndInvariances) {
  const auto v = support::noisy_phantom(24, 4);
  const auto en = enhance(v, 1.0);
  float mx = 0;
  for (float x : en.data()) {
    ASSERT_GE(x, 0.0f);
    ASSERT_LE(x, 1.0f);
    mx = std::max(mx, x);
  }
  EXPECT_EQ(mx, 1.0f);

  Volume3D shifted = v, scaled = v;
  for (auto& x : shifted.data()) x += 0.25f;
  for (auto& x : scaled.data()) x *= 0.5f;  // exact in binary floating point
  const auto es = enhance(shifted, 1.0), ek = enhance(scaled, 1.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    ASSERT_NEAR(es[i], en[i], 2e-5);
    ASSERT_NEAR(ek[i], en[i], 1e-6);
  }
}

TEST(Otsu, SeparatesBimodalData) {
  std::vector<float> v(1000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i < 500 ? 0.1f : 0.9f;
  const double t = otsu_threshold(v);
  EXPECT_GT(t, 0.1);
  EXPECT_LT(t, 0.9);
}

TEST(Otsu, MatchesExhaustiveSweep) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const int bins = trial % 3 == 0 ? 256 : 2 + static_cast<int>(rng() % 60);
    std::vector<double> h(static_cast<std::size_t>(bins));
    for (auto& c : h) c = (rng() % 4 == 0) ? 0.0 : static_cast<double>(rng() % 1000);
    ASSERT_EQ(otsu_cut(h), brute_force_cut(h)) << "trial " << trial;
  }
}

TEST(Otsu, ConstantDataIsDegenerate) {
  std::vector<float> v(200, 0.4f);
  const double t = otsu_threshold(v);
  EXPECT_GE(t, 0.4);
  Volume3D en({200, 1, 1}, {}, v);
  const auto m = binarize(en, t);
  double s = 0;
  for (float x : m.data()) s += x;
  EXPECT_TRUE(s == 0 || s == 200);
}

TEST(Otsu, StableUnderMovesWithinBins) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<float> v(3000), w(3000);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double base = i % 3 == 0 ? 0.7 + 0.2 * u(rng) : 0.1 + 0.3 * u(rng);
    const int bin = static_cast<int>(base * 256);
    v[i] = static_cast<float>((bin + 0.1) / 256);
    w[i] = static_cast<float>((bin + 0.9) / 256);
  }
  EXPECT_EQ(otsu_threshold(v), otsu_threshold(w));
}

TEST(Binarize, StrictInequality) {
  const auto en = support::random_volume({6, 6, 6}, 2);
  const auto none = binarize(en, 1.0);
  const auto all = binarize(en, -1e-9);
  for (float x : none.data()) ASSERT_EQ(x, 0.0f);
  for (float x : all.data()) ASSERT_EQ(x, 1.0f);
  const auto m = binarize(en, 0.5);
  for (std::size_t i = 0; i < en.size(); ++i) ASSERT_EQ(m[i], en[i] > 0.5f ? 1.0f : 0.0f);
}

TEST(Binarize, PhantomMaskMatchesMembranes) {
  PhantomSpec s;
  s.dims = {48, 48, 48};
  s.seed = 7;
  const auto ph = make_phantom(s);
  const auto en = enhance(ph.clean, 1.0);
  const auto mask = binarize(en, otsu_threshold(en.data()));
  std::size_t mem = 0, mem_hit = 0, bg = 0, bg_hit = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (ph.labels[i] > 0.5f) {
      ++mem;
      mem_hit += mask[i] > 0.5f;
    } else {
      ++bg;
      bg_hit += mask[i] > 0.5f;
    }
  }
  EXPECT_GE(static_cast<double>(mem_hit) / mem, 0.95);
  EXPECT_LE(static_cast<double>(bg_hit) / bg, 0.05);
}
