#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gfsdro/datasets.hpp"
#include "gfsdro/error.hpp"
#include "gfsdro/parallel.hpp"
#include "gfsdro/problem.hpp"
#include "gfsdro/samplers.hpp"

namespace gfsdro {

/// l2 PGD settings. Perturbation levels are fractions of the mean l2 norm of
/// the evaluated features.
struct AttackConfig {
  std::vector<double> delta_grid{0.0, 0.02, 0.04, 0.08};
  std::size_t steps = 40;
  double step_scale = 2.5;

  bool operator==(const AttackConfig&) const = default;

  void validate() const {
    require(steps >= 1, ErrorKind::kInvalidConfig, "attack.steps must be >= 1");
    require(step_scale > 0.0, ErrorKind::kInvalidConfig, "attack.step_scale must be > 0");
    for (double d : delta_grid) require(d >= 0.0, ErrorKind::kInvalidConfig, "attack.delta values must be >= 0");
  }
};

/// Projected gradient ascent on the loss inside the l2 ball of `radius`
/// around x. Stepsize step_scale * radius / steps along the normalized
/// gradient; no random start. A zero gradient leaves the iterate in place.
inline Vector pgd_attack_l2(const LossModel& model, const Vector& theta, const Vector& x, double label, double radius,
                            std::size_t steps, double step_scale) {
  require(radius >= 0.0, ErrorKind::kInvalidArgument, "attack radius must be >= 0");
  if (radius == 0.0 || steps == 0) return x;
  const double alpha = step_scale * radius / static_cast<double>(steps);
  LabeledPoint z{x, label};
  for (std::size_t s = 0; s < steps; ++s) {
    const Vector g = model.grad_input(theta, z);
    const double gn = g.norm();
    if (!(gn > 0.0)) continue;
    Vector moved = z.features + (alpha / gn) * g;
    Vector offset = moved - x;
    const double dist = offset.norm();
    if (dist > radius) offset *= radius / dist;
    z.features = x + offset;
  }
  return z.features;
}

inline double mean_l2_norm(const Matrix& features) {
  require(features.rows() >= 1, ErrorKind::kInvalidArgument, "no features");
  return features.rowwise().norm().mean();
}

/// Fraction of points whose argmax prediction differs from the label.
inline double misclassification_rate(const LossModel& model, const Vector& theta, const LabeledDataset& data) {
  require(data.size() >= 1, ErrorKind::kInvalidArgument, "empty dataset");
  std::size_t wrong = 0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    if (model.predict(theta, data.features.row(i).transpose()) != static_cast<int>(data.labels[i])) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

/// Misclassification rate after attacking every point at radius
/// delta * mean_l2_norm(features).
inline double attacked_error_rate(const LossModel& model, const Vector& theta, const LabeledDataset& data, double delta,
                                  const AttackConfig& attack) {
  const double radius = delta * mean_l2_norm(data.features);
  std::vector<char> wrong(static_cast<std::size_t>(data.size()), 0);
  parallel_for(static_cast<std::size_t>(data.size()), [&](std::size_t i) {
    const auto row = static_cast<Eigen::Index>(i);
    const Vector x = data.features.row(row).transpose();
    const Vector adv = pgd_attack_l2(model, theta, x, data.labels[row], radius, attack.steps, attack.step_scale);
    wrong[i] = model.predict(theta, adv) != static_cast<int>(data.labels[row]) ? 1 : 0;
  });
  std::size_t count = 0;
  for (char w : wrong) count += static_cast<std::size_t>(w);
  return static_cast<double>(count) / static_cast<double>(data.size());
}

/// Error rate at each delta of the attack grid.
inline std::vector<double> robustness_curve(const LossModel& model, const Vector& theta, const LabeledDataset& data,
                                            const AttackConfig& attack) {
  attack.validate();
  std::vector<double> out;
  for (double delta : attack.delta_grid) out.push_back(attacked_error_rate(model, theta, data, delta, attack));
  return out;
}

/// Weighted mean of V~ over particles, averaged over anchors, at recorded
/// inner iterations.
struct InnerCurve {
  std::vector<std::size_t> iterations;
  std::vector<double> values;
  std::string method;
};

inline double weighted_tilted_mean(const RobustProblem& problem, const Vector& theta, const ParticleCloud& cloud) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    acc += cloud.weights()[i] * tilted_potential(problem, theta, cloud.anchor(), cloud.position(i));
  }
  return acc;
}

/// Runs the inner sampler from every anchor of `data` and records the
/// weighted E[V~] every `record_every` iterations and at the last one.
/// Anchor a draws from RngStream(seed, {a}).
inline InnerCurve inner_objective_curve(const RobustProblem& problem, const Vector& theta, const LabeledDataset& data,
                                        const SamplerConfig& config, std::size_t record_every, std::uint64_t seed) {
  require(record_every >= 1, ErrorKind::kInvalidArgument, "record_every must be >= 1");
  require(data.size() >= 1, ErrorKind::kInvalidArgument, "no anchors");
  config.validate(problem.params);
  const auto n = static_cast<std::size_t>(data.size());
  std::vector<std::vector<std::pair<std::size_t, double>>> per_anchor(n);
  parallel_for(n, [&](std::size_t a) {
    auto& rec = per_anchor[a];
    const auto observer = [&](std::size_t t, const ParticleCloud& cloud) {
      if (t % record_every == 0 || t == config.steps || config.method == SamplerMethod::kRgo) {
        rec.emplace_back(t, weighted_tilted_mean(problem, theta, cloud));
      }
    };
    sample_worst_case(problem, theta, data.point(static_cast<Eigen::Index>(a)), config, RngStream(seed, {a}), observer);
  });
  InnerCurve curve;
  curve.method = to_string(config.method);
  for (std::size_t k = 0; k < per_anchor[0].size(); ++k) {
    double acc = 0.0;
    for (std::size_t a = 0; a < n; ++a) acc += per_anchor[a][k].second;
    curve.iterations.push_back(per_anchor[0][k].first);
    curve.values.push_back(acc / static_cast<double>(n));
  }
  return curve;
}

/// Weight of worst-case samples with both coordinates > 0; every cloud
/// carries equal total mass.
inline double quadrant_fraction(const std::vector<ParticleCloud>& clouds) {
  require(!clouds.empty(), ErrorKind::kInvalidArgument, "no clouds");
  double acc = 0.0;
  for (const auto& cloud : clouds) {
    require(cloud.dim() == 2, ErrorKind::kInvalidArgument, "quadrant fraction needs 2-d samples");
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
      if (cloud.position(i)[0] > 0.0 && cloud.position(i)[1] > 0.0) acc += cloud.weights()[i];
    }
  }
  return acc / static_cast<double>(clouds.size());
}

}  // namespace gfsdro
