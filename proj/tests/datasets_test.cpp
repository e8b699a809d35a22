#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "gfsdro/datasets.hpp"
#include "test_support.hpp"

namespace gfsdro {
namespace {

using testing::bitwise_equal;
using testing::throws_kind;

std::size_t parse_error_line(const std::string& text) {
  std::istringstream in(text);
  try {
    read_features(in);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Circle

TEST(Circle, LabelsFollowRadiusAndBandIsEmpty) {
  const auto d = gen_circle(2000, 4, false);
  ASSERT_EQ(d.size(), 2000);
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const double r = d.features.row(i).norm();
    EXPECT_TRUE(r <= std::sqrt(2.0) / 1.3 || r >= 1.3 * std::sqrt(2.0));
    EXPECT_EQ(d.labels[i], r > std::sqrt(2.0) ? 1.0 : -1.0);
  }
}

TEST(Circle, BiasedVersionHasNoFirstQuadrantPoints) {
  const auto d = gen_biased_circle(3000, 5);
  for (Eigen::Index i = 0; i < d.size(); ++i) EXPECT_FALSE(d.features(i, 0) > 0 && d.features(i, 1) > 0);
  const auto full = gen_circle(3000, 5, false);
  Eigen::Index q1 = 0;
  for (Eigen::Index i = 0; i < full.size(); ++i) q1 += full.features(i, 0) > 0 && full.features(i, 1) > 0;
  EXPECT_GT(q1, 500);
}

TEST(Circle, NegativeClassIsTheMajority) {
  const auto d = gen_biased_circle(10000, 6);
  const double negative = (d.labels.array() < 0).cast<double>().mean();
  EXPECT_GT(negative, 0.5);
  EXPECT_LT(negative, 0.75);
}

TEST(Circle, PureFunctionOfSeed) {
  EXPECT_TRUE(bitwise_equal(gen_circle(100, 3, true).features, gen_circle(100, 3, true).features));
  EXPECT_FALSE(bitwise_equal(gen_circle(100, 3, true).features, gen_circle(100, 4, true).features));
}

TEST(Circle, BinaryMapping) {
  const auto d = to_binary01(gen_circle(200, 1, false));
  for (Eigen::Index i = 0; i < d.size(); ++i) EXPECT_TRUE(d.labels[i] == 0.0 || d.labels[i] == 1.0);
}

// ---------------------------------------------------------------------------
// Two moons

TEST(TwoMoons, NoiselessPointsLieOnTheirMoons) {
  const auto d = gen_two_moons(400, 0.0, 0.25, 2);
  EXPECT_EQ((d.labels.array() == 1.0).count(), 100);
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const double x = d.features(i, 0), y = d.features(i, 1);
    if (d.labels[i] == 1.0) {
      EXPECT_NEAR(std::hypot(1.0 - x, 0.5 - y), 1.0, 1e-12);
      EXPECT_LE(y, 0.5 + 1e-12);
    } else {
      EXPECT_NEAR(std::hypot(x, y), 1.0, 1e-12);
      EXPECT_GE(y, -1e-12);
    }
  }
}

TEST(TwoMoons, PositiveCountIsRounded) {
  EXPECT_EQ((gen_two_moons(200, 0.1, 0.9, 1).labels.array() == 1.0).count(), 180);
  EXPECT_EQ((gen_two_moons(7, 0.1, 0.5, 1).labels.array() == 1.0).count(), 4);
}

TEST(TwoMoons, InvalidArguments) {
  EXPECT_TRUE(throws_kind([] { gen_two_moons(10, 0.1, 1.0, 1); }, ErrorKind::kInvalidArgument));
  EXPECT_TRUE(throws_kind([] { gen_two_moons(1, 0.1, 0.5, 1); }, ErrorKind::kInvalidArgument));
}

// ---------------------------------------------------------------------------
// Uncertain least squares

TEST(UncertainLsData, ShapesAndRanges) {
  const auto inst = gen_uncertain_ls(3);
  EXPECT_EQ(inst.a0.rows(), 10);
  EXPECT_EQ(inst.a1.cols(), 10);
  EXPECT_EQ(inst.b.size(), 10);
  EXPECT_EQ(inst.train_xi.size(), 10);
  EXPECT_TRUE((inst.train_xi.array().abs() <= 0.5).all());
  const Vector xi = inst.test_xi(4.0, 5000, 11);
  EXPECT_TRUE((xi.array().abs() <= 2.5).all());
  EXPECT_GT(xi.array().abs().maxCoeff(), 2.3);
  const auto train = inst.train_set();
  EXPECT_EQ(train.dim(), 1);
  EXPECT_TRUE(bitwise_equal(train.features, inst.train_xi));
  EXPECT_TRUE(bitwise_equal(gen_uncertain_ls(3).a0, inst.a0));
}

// ---------------------------------------------------------------------------
// Synthetic features

TEST(SyntheticFeatures, NoiselessMeansArePairwiseMarginApart) {
  const auto d = gen_synthetic_features(5, 8, 5, 1.5, 1, 0.0);
  for (int a = 0; a < 5; ++a) {
    for (int b = a + 1; b < 5; ++b) {
      EXPECT_NEAR((d.features.row(a) - d.features.row(b)).norm(), 1.5, 1e-12);
    }
  }
  EXPECT_LT(d.features.colwise().sum().norm(), 1e-12);
}

TEST(SyntheticFeatures, BalancedClasses) {
  const auto d = gen_synthetic_features(1003, 12, 10, 1.0, 2);
  for (int c = 0; c < 10; ++c) {
    const auto count = (d.labels.array() == c).count();
    EXPECT_GE(count, 100);
    EXPECT_LE(count, 101);
  }
}

TEST(SyntheticFeatures, LargeMarginIsLinearlySeparable) {
  const auto d = gen_synthetic_features(400, 16, 4, 12.0, 3, 1.0);
  const auto means = gen_synthetic_features(4, 16, 4, 12.0, 3, 0.0).features;
  // Means share a norm, so argmax of mean . x is the nearest-mean rule.
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    Eigen::Index best = 0;
    (means * d.features.row(i).transpose()).maxCoeff(&best);
    EXPECT_EQ(best, static_cast<Eigen::Index>(d.labels[i]));
  }
}

TEST(SyntheticFeatures, PureFunctionOfSeedAndValidated) {
  EXPECT_TRUE(bitwise_equal(gen_synthetic_features(50, 6, 3, 1.0, 9).features,
                            gen_synthetic_features(50, 6, 3, 1.0, 9).features));
  EXPECT_TRUE(throws_kind([] { gen_synthetic_features(10, 6, 1, 1.0, 1); }, ErrorKind::kInvalidArgument));
  EXPECT_TRUE(throws_kind([] { gen_synthetic_features(10, 3, 4, 1.0, 1); }, ErrorKind::kInvalidArgument));
}

// ---------------------------------------------------------------------------
// Feature files

TEST(FeatureFile, RoundTripIsBitExact) {
  auto d = gen_synthetic_features(40, 7, 4, 0.3, 4);
  d.features(0, 0) = 1e-300;
  d.features(1, 1) = -0.1;
  d.features(2, 2) = 123456789.123456789;
  const auto path = std::filesystem::temp_directory_path() / "gfsdro_roundtrip.txt";
  save_features(path.string(), d, 4);
  int classes = 0;
  const auto back = load_features(path.string(), &classes);
  std::filesystem::remove(path);
  EXPECT_EQ(classes, 4);
  EXPECT_TRUE(bitwise_equal(back.features, d.features));
  EXPECT_TRUE(bitwise_equal(back.labels, d.labels));
}

TEST(FeatureFile, LabelOutOfRangeNamesLine) {
  EXPECT_EQ(parse_error_line("gfsdro-features v1 n=2 d=2 classes=10\n0.5 1 3\n0.1 0.2 10\n"), 3u);
}

TEST(FeatureFile, EmptyDataSection) {
  EXPECT_EQ(parse_error_line("gfsdro-features v1 n=2 d=2 classes=3\n\n"), 2u);
  EXPECT_EQ(parse_error_line("gfsdro-features v1 n=2 d=2 classes=3\n"), 1u);
}

TEST(FeatureFile, MalformedHeader) {
  EXPECT_EQ(parse_error_line("features v1 n=2 d=2 classes=3\n1 2 0\n"), 1u);
  EXPECT_EQ(parse_error_line("gfsdro-features v1 n=two d=2 classes=3\n1 2 0\n"), 1u);
  EXPECT_EQ(parse_error_line(""), 1u);
}

TEST(FeatureFile, RaggedRowBadFloatAndCountMismatch) {
  EXPECT_EQ(parse_error_line("gfsdro-features v1 n=2 d=2 classes=3\n1 2 0\n1 0\n"), 3u);
  EXPECT_EQ(parse_error_line("gfsdro-features v1 n=2 d=2 classes=3\n1 2 0\n1 x 0\n"), 3u);
  EXPECT_EQ(parse_error_line("gfsdro-features v1 n=3 d=2 classes=3\n1 2 0\n1 1 0\n"), 3u);
  EXPECT_EQ(parse_error_line("gfsdro-features v1 n=1 d=2 classes=3\n1 2 0\n1 1 0\n"), 3u);
  EXPECT_EQ(parse_error_line("gfsdro-features v1 n=1 d=2 classes=3\n1 2 0.5\n"), 2u);
}

TEST(FeatureFile, MissingFileIsInvalidArgument) {
  EXPECT_TRUE(throws_kind([] { load_features("/nonexistent/gfsdro.txt"); }, ErrorKind::kInvalidArgument));
}

}  // namespace
}  // namespace gfsdro
