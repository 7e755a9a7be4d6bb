#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace cellinr;

namespace {

// Wilson-Hilferty upper tail for a chi-square statistic.
double chi2_upper_p(double stat, double df) {
  const double z = (std::cbrt(stat / df) - (1 - 2 / (9 * df))) / std::sqrt(2 / (9 * df));
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

nn::MlpParams<float> random_coarse(std::uint64_t seed, int eps = 3) {
  return nn::make_networks<float>({eps, 2, 16, 2}, seed).coarse;
}

}  // namespace

TEST(Sampler, CoarsePointsAreUniformOutsideExclusion) {
  // 5 bins per axis over [c-1, c+1]; the exclusion cube of half-width 0.2 is exactly the centre cell.
  const Dims d{20, 20, 20};
  const Vec3 c{10, 10, 10};
  Rng rng(12);
  std::vector<double> counts(125, 0.0);
  const int draws = 100000;
  for (int i = 0; i < draws / 25; ++i)
    for (const auto& p : sample_coarse(c, d, 1.0, 25, 0.2, rng)) {
      int cell = 0;
      for (int a = 2; a >= 0; --a) {
        const int b = std::clamp(static_cast<int>((p[static_cast<std::size_t>(a)] - c[static_cast<std::size_t>(a)] + 1.0) / 0.4), 0, 4);
        cell = cell * 5 + b;
      }
      counts[static_cast<std::size_t>(cell)] += 1;
    }
  EXPECT_EQ(counts[62], 0.0);
  const double expect = draws / 124.0;
  double stat = 0;
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (i != 62) stat += (counts[i] - expect) * (counts[i] - expect) / expect;
  EXPECT_GT(chi2_upper_p(stat, 123), 0.001) << "chi2 = " << stat;
}

TEST(Sampler, ResamplingMatchesMultinomial) {
  const Dims d{20, 20, 20};
  const Vec3 c{10, 10, 10};
  Rng rng(4);
  const auto coarse = sample_coarse(c, d, 1.0, 8, 0.25, rng);
  const std::vector<double> dens{0.5, 0.0, 2.0, 1.0, 0.25, 3.0, 0.0, 1.25};
  const double total = 8.0;
  std::vector<double> counts(8, 0.0);
  const int draws = 100000;
  const auto r = importance_resample(c, d, 1.0, 0.25, coarse, dens, draws, rng);
  EXPECT_FALSE(r.uniform_fallback);
  for (auto p : r.parents) counts[p] += 1;
  for (std::size_t i = 0; i < 8; ++i) {
    const double p = dens[i] / total, mean = draws * p, sd = std::sqrt(draws * p * (1 - p));
    EXPECT_LE(std::abs(counts[i] - mean), 3 * sd + 1e-12) << "category " << i;
  }
}

TEST(Sampler, OneHotAndEqualDensities) {
  const Dims d{10, 10, 10};
  const Vec3 c{5, 5, 5};
  Rng rng(9);
  const auto coarse = sample_coarse(c, d, 1.0, 27, 0.25, rng);
  std::vector<double> one_hot(27, 0.0);
  one_hot[13] = 4.0;
  const auto r = importance_resample(c, d, 1.0, 0.25, coarse, one_hot, 500, rng);
  for (auto p : r.parents) ASSERT_EQ(p, 13u);
  for (std::size_t k = 0; k < r.points.size(); ++k)
    ASSERT_LE(linf_distance(r.points[k], coarse[13]), 1.0 / 3.0 + 1e-12);

  std::vector<double> eq(27, 0.7), counts(27, 0.0);
  const auto u = importance_resample(c, d, 1.0, 0.25, coarse, eq, 27000, rng);
  for (auto p : u.parents) counts[p] += 1;
  const double sd = std::sqrt(27000 * (1 / 27.0) * (26 / 27.0));
  for (double n : counts) EXPECT_LE(std::abs(n - 1000), 4 * sd);
}

TEST(Sampler, ZeroDensityFallsBackToUniform) {
  const Dims d{10, 10, 10};
  Rng rng(2);
  const auto coarse = sample_coarse({5, 5, 5}, d, 1.0, 8, 0.25, rng);
  const std::vector<double> zeros(8, 0.0);
  const auto r = importance_resample({5, 5, 5}, d, 1.0, 0.25, coarse, zeros, 800, rng);
  EXPECT_TRUE(r.uniform_fallback);
  std::vector<int> seen(8, 0);
  for (auto p : r.parents) seen[p] = 1;
  EXPECT_EQ(std::accumulate(seen.begin(), seen.end(), 0), 8);
  const std::vector<double> bad{1, 1, 1, 1, 1, 1, 1, -1};
  EXPECT_THROW(importance_resample({5, 5, 5}, d, 1.0, 0.25, coarse, bad, 8, rng), PreconditionError);
}

TEST(Sampler, BlindSpotNeverViolated) {
  const Dims d{12, 9, 7};
  const auto net = random_coarse(1);
  const SamplerParams sp{1.0, 27, 0.25};
  Rng rng(77);
  std::size_t points = 0, fallbacks = 0;
  std::vector<Vec3> centers;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) centers.push_back({double(x), double(y), double(z)});
  while (points < 1000000) {
    const auto sets = build_sample_sets<float>(centers, d, sp, net, 3, rng, &fallbacks);
    for (const auto& s : sets) {
      ASSERT_EQ(s.coarse.size(), 27u);
      ASSERT_EQ(s.fine.size(), 27u);
      for (const auto& p : s.merged()) {
        ASSERT_GE(linf_distance(p, s.center), sp.d_ex);
        ASSERT_LE(linf_distance(p, s.center), sp.h);
        for (int a = 0; a < 3; ++a) {
          ASSERT_GE(p[static_cast<std::size_t>(a)], -0.5);
          ASSERT_LE(p[static_cast<std::size_t>(a)], d[a] - 0.5);
        }
        ++points;
      }
    }
  }
  EXPECT_EQ(fallbacks, 0u);
}

TEST(Sampler, CornerTargetsAreClampedToDomain) {
  const Dims d{4, 4, 4};
  Rng rng(3);
  for (const Vec3 c : {Vec3{0, 0, 0}, Vec3{3, 3, 3}, Vec3{0, 3, 1}}) {
    const auto pts = sample_coarse(c, d, 1.0, 200, 0.25, rng);
    for (const auto& p : pts)
      for (int a = 0; a < 3; ++a) {
        ASSERT_GE(p[static_cast<std::size_t>(a)], std::max(-0.5, c[static_cast<std::size_t>(a)] - 1));
        ASSERT_LE(p[static_cast<std::size_t>(a)], std::min(3.5, c[static_cast<std::size_t>(a)] + 1));
      }
  }
}

TEST(Sampler, Preconditions) {
  Rng rng(1);
  const Dims d{5, 5, 5};
  EXPECT_THROW(sample_coarse({2, 2, 2}, d, 1.0, 0, 0.25, rng), PreconditionError);
  EXPECT_THROW(sample_coarse({2, 2, 2}, d, 0.0, 4, 0.0, rng), PreconditionError);
  EXPECT_THROW(sample_coarse({2, 2, 2}, d, 1.0, 4, 1.0, rng), PreconditionError);
  // A 1-voxel domain leaves nothing outside an exclusion of 0.6.
  EXPECT_THROW(sample_coarse({0, 0, 0}, {1, 1, 1}, 1.0, 4, 0.6, rng), SamplingError);
}

TEST(Sampler, ConstantNetBuildsTwoNPoints) {
  auto net = random_coarse(2);
  for (auto& l : net.layers) {
    l.weight.set_zero();
    l.bias.set_zero();
  }
  net.layers.back().bias[0] = 1.0f;
  const Dims d{8, 8, 8};
  const std::vector<Vec3> centers{{1, 2, 3}, {7, 7, 7}};
  Rng rng(5);
  std::size_t fallbacks = 0;
  const auto sets = build_sample_sets<float>(centers, d, {1.0, 10, 0.25}, net, 3, rng, &fallbacks);
  ASSERT_EQ(sets.size(), 2u);
  for (const auto& s : sets) {
    EXPECT_EQ(s.size(), 20u);
    EXPECT_EQ(s.merged().size(), 20u);
  }
  EXPECT_EQ(fallbacks, 0u);
}

TEST(Sampler, SameSeedSamePoints) {
  const auto net = random_coarse(3);
  const std::vector<Vec3> centers{{2, 2, 2}, {4, 1, 3}};
  Rng a(8), b(8);
  const auto sa = build_sample_sets<float>(centers, {6, 6, 6}, {}, net, 3, a);
  const auto sb = build_sample_sets<float>(centers, {6, 6, 6}, {}, net, 3, b);
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(sa[i].merged(), sb[i].merged());
}
