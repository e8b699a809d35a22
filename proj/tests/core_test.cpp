#include <cmath>
#include <memory>
#include <vector>

#include <gtest/gtest.h>

#include "gfsdro/loss.hpp"
#include "gfsdro/problem.hpp"
#include "test_support.hpp"

namespace gfsdro {
namespace {

using testing::throws_kind;

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

LabeledPoint point(std::initializer_list<double> x, double label = 0.0) { return {vec(x), label}; }

std::shared_ptr<UncertainLeastSquares> small_uls() {
  Matrix a0(2, 2);
  a0 << 1, 2, 0, 1;
  Matrix a1(2, 2);
  a1 << 0, 1, 1, 0;
  return std::make_shared<UncertainLeastSquares>(a0, a1, vec({1, -1}));
}

// One model of every family, with a label generator for its domain.
std::vector<std::shared_ptr<const LossModel>> all_families() {
  RngStream rng(5, {0});
  Matrix a0 = Matrix::NullaryExpr(4, 4, [&] { return rng.normal(); });
  Matrix a1 = Matrix::NullaryExpr(4, 4, [&] { return rng.normal(); });
  return {std::make_shared<MlpBce>(std::vector<int>{3, 8, 8, 1}), std::make_shared<SoftmaxLogistic>(5, 4),
          std::make_shared<UncertainLeastSquares>(a0, a1, rng.normal_vector(4)), std::make_shared<LinearLoss>(3)};
}

// ---------------------------------------------------------------------------
// Tilted potential

TEST(TiltedPotential, ZeroLossAtAnchorIsZero) {
  RobustProblem p(std::make_shared<LinearLoss>(2), CostKind::kSquaredEuclidean, {0.5, 0.1});
  EXPECT_EQ(tilted_potential(p, vec({0, 0}), point({1, 2}), vec({1, 2})), 0.0);
}

TEST(TiltedPotential, LinearLossHandValue) {
  RobustProblem p(std::make_shared<LinearLoss>(2), CostKind::kSquaredEuclidean, {0.5, 0.1});
  EXPECT_DOUBLE_EQ(tilted_potential(p, vec({1, 0}), point({0, 0}), vec({1, 0})), 0.0);
}

TEST(TiltedPotential, ZeroLossIsScaledCost) {
  RobustProblem p(std::make_shared<LinearLoss>(2), CostKind::kSquaredEuclidean, {0.5, 0.0});
  EXPECT_DOUBLE_EQ(tilted_potential(p, vec({0, 0}), point({0, 0}), vec({3, 4})), 25.0);
}

TEST(TiltedPotential, DimensionMismatchIsInvalidArgument) {
  RobustProblem p(std::make_shared<LinearLoss>(2), CostKind::kSquaredEuclidean, {0.5, 0.1});
  EXPECT_TRUE(throws_kind([&] { tilted_potential(p, vec({0, 0}), point({0, 0}), vec({1, 2, 3})); },
                          ErrorKind::kInvalidArgument));
  EXPECT_TRUE(throws_kind([&] { tilted_potential(p, vec({0, 0, 0}), point({0, 0}), vec({1, 2})); },
                          ErrorKind::kInvalidArgument));
}

TEST(TiltedPotential, AtAnchorEqualsNegativeLossForEveryFamily) {
  for (const auto& loss : all_families()) {
    RobustProblem p(loss, CostKind::kSquaredEuclidean, {0.3, 0.1});
    for (std::uint64_t s = 0; s < 5; ++s) {
      RngStream rng(17, {s});
      const Vector theta = rng.normal_vector(loss->param_count());
      LabeledPoint x{rng.normal_vector(loss->input_dim()), 0.0};
      x.label = loss->random_label(rng);
      EXPECT_EQ(tilted_potential(p, theta, x, x.features), -loss->value(theta, x)) << to_string(loss->family());
    }
  }
}

TEST(TiltedGradient, ZeroLossAtAnchorIsZero) {
  RobustProblem p(std::make_shared<LinearLoss>(2), CostKind::kSquaredEuclidean, {1.0, 0.0});
  EXPECT_EQ(tilted_gradient(p, vec({0, 0}), point({1, -1}), vec({1, -1})), vec({0, 0}));
}

TEST(TiltedGradient, LinearLossHandValue) {
  RobustProblem p(std::make_shared<LinearLoss>(2), CostKind::kSquaredEuclidean, {1.0, 0.0});
  EXPECT_EQ(tilted_gradient(p, vec({1, 0}), point({0, 0}), vec({2, 0})), vec({1, 0}));
}

TEST(TiltedGradient, MatchesCentralDifferencesForEveryFamily) {
  const double h = 1e-5;
  for (const auto& loss : all_families()) {
    RobustProblem p(loss, CostKind::kSquaredEuclidean, {0.7, 0.1});
    for (std::uint64_t s = 0; s < 20; ++s) {
      RngStream rng(23, {s});
      const Vector theta = rng.normal_vector(loss->param_count());
      LabeledPoint anchor{rng.normal_vector(loss->input_dim()), 0.0};
      anchor.label = loss->random_label(rng);
      const Vector y = rng.normal_vector(loss->input_dim());
      Vector numeric(y.size());
      for (Eigen::Index k = 0; k < y.size(); ++k) {
        Vector up = y, down = y;
        up[k] += h;
        down[k] -= h;
        numeric[k] = (tilted_potential(p, theta, anchor, up) - tilted_potential(p, theta, anchor, down)) / (2 * h);
      }
      const Vector analytic = tilted_gradient(p, theta, anchor, y);
      const double scale = std::max({analytic.norm(), numeric.norm(), 1e-8});
      EXPECT_LT((analytic - numeric).norm() / scale, 1e-5) << to_string(loss->family()) << " point " << s;
    }
  }
}

// ---------------------------------------------------------------------------
// Weights

TEST(NormalizeWeights, UniformRawWeights) {
  EXPECT_EQ(normalize_weights(vec({2, 2})), vec({0.5, 0.5}));
}

TEST(NormalizeWeights, ExtremeLogWeights) {
  const Vector w = normalize_log_weights(vec({-1000, -1001}));
  EXPECT_NEAR(w[0], 0.7310585786300049, 1e-15);
  EXPECT_NEAR(w[1], 1.0 - 0.7310585786300049, 1e-15);
}

TEST(NormalizeWeights, SingleParticleIsOne) {
  EXPECT_EQ(normalize_log_weights(vec({-42}))[0], 1.0);
}

TEST(NormalizeWeights, AllNegativeInfinityIsDegenerate) {
  const double ninf = -std::numeric_limits<double>::infinity();
  EXPECT_TRUE(throws_kind([&] { normalize_log_weights(vec({ninf, ninf})); }, ErrorKind::kDegenerateWeights));
}

TEST(NormalizeWeights, IdempotentAndScaleInvariant) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    RngStream rng(3, {s});
    Vector raw(7);
    for (Eigen::Index k = 0; k < raw.size(); ++k) raw[k] = rng.uniform(0.0, 5.0);
    const Vector w = normalize_weights(raw);
    EXPECT_NEAR(w.sum(), 1.0, 1e-12);
    EXPECT_TRUE(((normalize_weights(w) - w).array().abs() <= 1e-15).all());
    const double k = rng.uniform(1e-3, 1e3);
    EXPECT_TRUE(((normalize_weights(k * raw) - w).array().abs() <= 1e-15).all());
  }
}

TEST(ParticleCloud, AtAnchorIsUniform) {
  const ParticleCloud c = ParticleCloud::at_anchor(point({1, 2}), 4);
  EXPECT_EQ(c.size(), 4);
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_EQ(c.weights()[i], 0.25);
    EXPECT_EQ(Vector(c.position(i)), vec({1, 2}));
  }
  EXPECT_TRUE(throws_kind([] { ParticleCloud::at_anchor(point({0}), 0); }, ErrorKind::kInvalidArgument));
}

TEST(RobustParams, RejectsNonPositiveTau) {
  EXPECT_TRUE(throws_kind([] { RobustProblem(std::make_shared<LinearLoss>(1), CostKind::kSquaredEuclidean, {0.0, 0.1}); },
                          ErrorKind::kInvalidArgument));
  EXPECT_TRUE(throws_kind([] { RobustProblem(std::make_shared<LinearLoss>(1), CostKind::kSquaredEuclidean, {1.0, -0.1}); },
                          ErrorKind::kInvalidArgument));
}

TEST(TransportCost, SquaredDistanceProperties) {
  const Vector x = vec({1, -2, 3});
  const Vector y = vec({0, 1, 1});
  EXPECT_EQ(transport_cost(CostKind::kSquaredEuclidean, x, x), 0.0);
  EXPECT_EQ(transport_cost(CostKind::kSquaredEuclidean, x, y), 14.0);
  EXPECT_EQ(transport_cost(CostKind::kSquaredEuclideanFixedLabel, y, x), 14.0);
}

// ---------------------------------------------------------------------------
// Loss families

TEST(SoftmaxLogistic, ZeroWeightsGiveLogC) {
  SoftmaxLogistic m(3, 4);
  const Vector theta = Vector::Zero(12);
  const LabeledPoint z = point({1, 2, 3}, 2);
  EXPECT_NEAR(m.value(theta, z), std::log(4.0), 1e-15);
  const Vector g = m.grad_theta(theta, z);
  for (int c = 0; c < 4; ++c) {
    const Vector expected = vec({1, 2, 3}) * (0.25 - (c == 2 ? 1.0 : 0.0));
    EXPECT_TRUE(g.segment(3 * c, 3).isApprox(expected, 1e-15)) << "class " << c;
  }
  EXPECT_EQ(m.grad_input(theta, z), Vector::Zero(3));
}

TEST(SoftmaxLogistic, HandComputedTwoClassValues) {
  SoftmaxLogistic m(1, 2);
  const Vector theta = vec({1, -1});
  const LabeledPoint z = point({2}, 0);
  EXPECT_NEAR(m.value(theta, z), 0.018149927917809738, 1e-15);
  EXPECT_NEAR(m.grad_input(theta, z)[0], -0.03597241992418311, 1e-15);
}

TEST(SoftmaxLogistic, LabelOutOfRangeIsInvalid) {
  SoftmaxLogistic m(2, 3);
  EXPECT_TRUE(throws_kind([&] { m.value(Vector::Zero(6), point({1, 1}, 3)); }, ErrorKind::kInvalidArgument));
  EXPECT_TRUE(throws_kind([&] { m.value(Vector::Zero(5), point({1, 1}, 0)); }, ErrorKind::kInvalidArgument));
}

TEST(SoftmaxLogistic, ShiftingAllLogitsLeavesLossUnchanged) {
  SoftmaxLogistic m(6, 5);
  for (std::uint64_t s = 0; s < 20; ++s) {
    RngStream rng(31, {s});
    const Vector theta = rng.normal_vector(30);
    const LabeledPoint z{rng.normal_vector(6), static_cast<double>(rng.index(5))};
    // Adding v to every column of B shifts every logit by v.x.
    const Vector v = rng.normal_vector(6);
    Vector shifted = theta;
    for (int c = 0; c < 5; ++c) shifted.segment(6 * c, 6) += v;
    const double base = m.value(theta, z);
    EXPECT_NEAR(m.value(shifted, z), base, 1e-12 * std::max(1.0, std::abs(base)));
  }
}

TEST(UncertainLs, ZeroThetaGivesNormOfB) {
  const auto m = small_uls();
  const LabeledPoint z = point({0.5});
  EXPECT_EQ(m->value(Vector::Zero(2), z), 2.0);
  EXPECT_TRUE(m->grad_theta(Vector::Zero(2), z).isApprox(vec({-1, -3}), 1e-15));
}

TEST(UncertainLs, HandComputedInputGradient) {
  const auto m = small_uls();
  const LabeledPoint z = point({0.5});
  EXPECT_DOUBLE_EQ(m->value(vec({1, 1}), z), 12.5);
  EXPECT_DOUBLE_EQ(m->grad_input(vec({1, 1}), z)[0], 10.0);
}

TEST(UncertainLs, LossIsExactlyQuadraticInTheta) {
  for (const auto& loss : all_families()) {
    if (loss->family() != LossFamily::kUncertainLs) continue;
    const auto& uls = static_cast<const UncertainLeastSquares&>(*loss);
    for (std::uint64_t s = 0; s < 20; ++s) {
      RngStream rng(37, {s});
      const Vector theta = rng.normal_vector(uls.param_count());
      const LabeledPoint z{rng.normal_vector(1), 0.0};
      const Vector zero = Vector::Zero(uls.param_count());
      const double lhs = uls.value(theta, z) - uls.value(zero, z) - theta.dot(uls.grad_theta(zero, z));
      const double rhs = (uls.system(z.features[0]) * theta).squaredNorm();
      EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(rhs)));
    }
  }
}

TEST(MlpBce, ZeroWeightsGiveLog2AndNoInputDependence) {
  MlpBce m({2, 4, 1});
  const Vector theta = Vector::Zero(m.param_count());
  EXPECT_NEAR(m.value(theta, point({0.3, -2}, 1)), std::log(2.0), 1e-15);
  EXPECT_EQ(m.grad_input(theta, point({0.3, -2}, 1)), Vector::Zero(2));
}

TEST(MlpBce, HandComputedTinyNetwork) {
  MlpBce m({1, 1, 1});
  ASSERT_EQ(m.param_count(), 4);
  const Vector theta = vec({2, -1, 3, 0.5});  // w1, b1, w2, b2
  const LabeledPoint z = point({1}, 1);
  EXPECT_DOUBLE_EQ(m.logit(theta, z.features), 3.5);
  EXPECT_NEAR(m.value(theta, z), 0.029750418272620566, 1e-15);
  EXPECT_NEAR(m.grad_input(theta, z)[0], -0.17587338450813816, 1e-15);
}

TEST(MlpBce, RejectsNonBinaryLabels) {
  MlpBce m({2, 3, 1});
  EXPECT_TRUE(throws_kind([&] { m.value(Vector::Zero(m.param_count()), point({0, 0}, -1)); },
                          ErrorKind::kInvalidArgument));
  EXPECT_TRUE(throws_kind([] { MlpBce({2, 1}); }, ErrorKind::kInvalidArgument));
}

TEST(MlpBce, LogitIsPositivelyHomogeneousInFinalLayer) {
  MlpBce m({3, 5, 4, 1});
  for (std::uint64_t s = 0; s < 20; ++s) {
    RngStream rng(41, {s});
    const Vector theta = rng.normal_vector(m.param_count());
    const Vector x = rng.normal_vector(3);
    const double k = rng.uniform(0.1, 10.0);
    Vector scaled = theta;
    const std::size_t last = m.widths().size() - 2;
    const auto w_off = m.layer_w(theta, last).data() - theta.data();
    const auto b_off = m.layer_b(theta, last).data() - theta.data();
    scaled.segment(w_off, m.layer_w(theta, last).size()) *= k;
    scaled.segment(b_off, 1) *= k;
    const double base = m.logit(theta, x);
    EXPECT_NEAR(m.logit(scaled, x), k * base, 1e-12 * std::max(1.0, std::abs(k * base)));
  }
}

TEST(MlpBce, HeInitializationIsSeededAndBiasFree) {
  MlpBce m({2, 16, 16, 1});
  RngStream a(9, {1});
  RngStream b(9, {1});
  const Vector ta = m.initial_params(a);
  EXPECT_EQ(ta, m.initial_params(b));
  for (std::size_t l = 0; l + 1 < m.widths().size(); ++l) EXPECT_EQ(m.layer_b(ta, l).norm(), 0.0);
  EXPECT_GT(m.layer_w(ta, 0).norm(), 0.0);
}

// ---------------------------------------------------------------------------
// Finite-difference checker

TEST(FiniteDiff, EveryFamilyPassesAtTwentyPoints) {
  for (const auto& loss : all_families()) {
    const FiniteDiffReport r = finite_diff_check(*loss, 20, 2024);
    EXPECT_EQ(r.points, 20u);
    EXPECT_LT(r.max_rel_err_theta, 1e-5) << to_string(loss->family());
    EXPECT_LT(r.max_rel_err_input, 1e-5) << to_string(loss->family());
  }
}

TEST(FiniteDiff, WideReluNetworkAcrossSeeds) {
  const MlpBce mlp({2, 16, 16, 1});
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const FiniteDiffReport r = finite_diff_check(mlp, 20, seed);
    EXPECT_LT(std::max(r.max_rel_err_theta, r.max_rel_err_input), 1e-5) << seed;
  }
}

TEST(MlpBce, KinkDistanceIsSmallestHiddenPreactivation) {
  const MlpBce mlp({1, 1, 1});
  const Vector theta = (Vector(4) << 2, -1, 3, 0.5).finished();
  EXPECT_NEAR(mlp.kink_distance(theta, {Vector::Constant(1, 0.6), 1}), 0.2, 1e-15);
  EXPECT_EQ(mlp.kink_distance(theta, {Vector::Constant(1, 0.5), 1}), 0.0);
  EXPECT_EQ(SoftmaxLogistic(2, 2).kink_distance(Vector::Zero(4), {Vector::Zero(2), 0}),
            std::numeric_limits<double>::infinity());
}

TEST(FiniteDiff, ZeroPointsGivesEmptyReport) {
  const FiniteDiffReport r = finite_diff_check(LinearLoss(2), 0, 1);
  EXPECT_EQ(r.points, 0u);
  EXPECT_EQ(r.max_rel_err_theta, 0.0);
  EXPECT_EQ(r.max_rel_err_input, 0.0);
}

// Negative control: a model whose input gradient is off by 10%.
class CorruptedSoftmax final : public LossModel {
 public:
  LossFamily family() const override { return inner_.family(); }
  Eigen::Index input_dim() const override { return inner_.input_dim(); }
  Eigen::Index param_count() const override { return inner_.param_count(); }
  double value(const Vector& t, const LabeledPoint& z) const override { return inner_.value(t, z); }
  Vector grad_theta(const Vector& t, const LabeledPoint& z) const override { return inner_.grad_theta(t, z); }
  Vector grad_input(const Vector& t, const LabeledPoint& z) const override { return 1.1 * inner_.grad_input(t, z); }
  double random_label(RngStream& rng) const override { return inner_.random_label(rng); }

 private:
  SoftmaxLogistic inner_{4, 3};
};

TEST(FiniteDiff, DetectsCorruptedGradient) {
  const FiniteDiffReport r = finite_diff_check(CorruptedSoftmax{}, 20, 7);
  EXPECT_GT(r.max_rel_err_input, 1e-2);
  EXPECT_LT(r.max_rel_err_theta, 1e-5);
}

}  // namespace
}  // namespace gfsdro
