#include <gtest/gtest.h>

#include <algorithm>

#include "test_support.hpp"

using namespace cellinr;

namespace {

nn::Networks<float> nets(std::uint64_t seed) { return nn::make_networks<float>({4, 2, 16, 2}, seed); }

SampleSet random_set(const Dims& d, const nn::Networks<float>& n, Rng& rng) {
  std::uniform_int_distribution<int> ux(0, d.nx - 1), uy(0, d.ny - 1), uz(0, d.nz - 1);
  const Vec3 c{double(ux(rng)), double(uy(rng)), double(uz(rng))};
  return build_sample_set<float>(c, d, {1.0, 9, 0.25}, n, rng);
}

}  // namespace

TEST(Renderer, WeightsAreConvex) {
  const auto n = nets(1);
  const Dims d{10, 8, 6};
  Rng rng(3);
  for (int i = 0; i < 300; ++i) {
    const auto p = predict_blind(random_set(d, n, rng), n);
    ASSERT_EQ(p.weights.size(), 18u);
    double s = 0;
    for (double w : p.weights) {
      ASSERT_GE(w, 0.0);
      s += w;
    }
    ASSERT_NEAR(s, 1.0, 1e-6);
    const auto [lo, hi] = std::minmax_element(p.colors.begin(), p.colors.end());
    ASSERT_GE(p.value, *lo - 1e-12);
    ASSERT_LE(p.value, *hi + 1e-12);
  }
}

TEST(Renderer, EqualScoresAverageColours) {
  auto n = nets(2);
  for (auto& l : n.kernel.layers) l.weight.set_zero();
  const Dims d{6, 6, 6};
  Rng rng(1);
  const auto p = predict_blind(random_set(d, n, rng), n);
  double mean = 0;
  for (double c : p.colors) mean += c / static_cast<double>(p.colors.size());
  for (double w : p.weights) EXPECT_NEAR(w, 1.0 / 18.0, 1e-12);
  EXPECT_NEAR(p.value, mean, 1e-7);
}

TEST(Renderer, DominantScoreSelectsItsColour) {
  nn::Tape<double> t;
  nn::Matrix<double> s(6, 1, std::vector<double>{0.1, -0.3, 50.2, 0.0, 0.7, -1.0});
  nn::Matrix<double> c(6, 1, std::vector<double>{0.1, 0.2, 0.9, 0.4, 0.5, 0.6});
  const auto w = nn::group_softmax(t, t.constant(s), 6);
  const auto v = nn::group_weighted_sum(t, t.constant(c), w, 6);
  EXPECT_NEAR(t.value(w)[2], 1.0, 1e-20 + 1e-15);
  EXPECT_NEAR(t.value(v)[0], 0.9, 1e-12);
}

TEST(Renderer, CollapsedSetEqualsCentreQuery) {
  const auto n = nets(3);
  const Dims d{7, 7, 7};
  SampleSet s;
  s.center = {3, 1, 5};
  s.dims = d;
  s.coarse.assign(5, s.center);
  s.fine.assign(5, s.center);
  const auto p = predict_blind(s, n);
  EXPECT_NEAR(p.value, predict_center(to_normalized(s.center, d), n.fine, n.epsilon), 1e-6);
}

TEST(Renderer, TapeMatchesDirectPrediction) {
  const auto n = nets(4);
  const Dims d{9, 9, 9};
  Rng rng(6);
  std::vector<SampleSet> sets;
  for (int i = 0; i < 5; ++i) sets.push_back(random_set(d, n, rng));
  nn::Tape<float> t;
  const NetBindings b{nn::bind(t, n.fine), nn::bind(t, n.kernel)};
  const auto nodes = blind_forward(t, n, b, sets);
  for (std::size_t i = 0; i < sets.size(); ++i) EXPECT_NEAR(t.value(nodes.values)[i], predict_blind(sets[i], n).value, 1e-6);
  sets[1].fine.pop_back();
  nn::Tape<float> t2;
  const NetBindings b2{nn::bind(t2, n.fine), nn::bind(t2, n.kernel)};
  EXPECT_THROW(blind_forward(t2, n, b2, sets), ShapeError);
}

TEST(Renderer, RenderAtTrainingDims) {
  const auto n = nets(5);
  const Dims d{5, 4, 3};
  const Spacing sp{0.5, 0.5, 2.0};
  const auto v = render_volume(n.fine, n.epsilon, d, d, sp, 7);
  EXPECT_EQ(v.dims(), d);
  EXPECT_EQ(v.spacing(), sp);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto [x, y, z] = v.coords(i);
    const double want = predict_center(to_normalized({double(x), double(y), double(z)}, d), n.fine, n.epsilon);
    ASSERT_FLOAT_EQ(v[i], static_cast<float>(want));
    ASSERT_GT(v[i], 0.0f);
    ASSERT_LT(v[i], 1.0f);
  }
  const auto same = render_volume(n.fine, n.epsilon, d, d, sp, 7);
  EXPECT_TRUE(std::ranges::equal(same.data(), v.data()));
  const auto wide = render_volume(n.fine, n.epsilon, d, d, sp, 1000);
  for (std::size_t i = 0; i < v.size(); ++i) ASSERT_NEAR(wide[i], v[i], 1e-6);
}

TEST(Renderer, UpsampledRenderHalvesSpacing) {
  const auto n = nets(6);
  const Dims d{6, 6, 4};
  const auto v = render_volume(n.fine, n.epsilon, {12, 12, 8}, d, {1.0, 1.0, 3.0});
  EXPECT_EQ(v.dims(), (Dims{12, 12, 8}));
  EXPECT_DOUBLE_EQ(v.spacing().sx, 0.5);
  EXPECT_DOUBLE_EQ(v.spacing().sz, 1.5);
  EXPECT_THROW(render_volume(n.fine, n.epsilon, {0, 2, 2}, d, {}), PreconditionError);
}
