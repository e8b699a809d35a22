#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <utility>

#include <Eigen/Core>

#include "gfsdro/error.hpp"
#include "gfsdro/loss.hpp"

namespace gfsdro {

/// Penalty tau (transport weight 1/(2 tau)) and entropic regularization epsilon.
/// epsilon == 0 is the unregularized (WRM) limit.
struct RobustnessParams {
  double tau = 1.0;
  double epsilon = 0.0;

  bool operator==(const RobustnessParams&) const = default;

  void validate() const {
    require(tau > 0.0 && std::isfinite(tau), ErrorKind::kInvalidArgument, "tau must be > 0");
    require(epsilon >= 0.0 && std::isfinite(epsilon), ErrorKind::kInvalidArgument, "epsilon must be >= 0");
  }
};

/// Both kinds are ||x - x'||^2 on the feature block. The fixed-label kind
/// forbids moving labels, which holds structurally because samplers never
/// touch LabeledPoint::label.
enum class CostKind { kSquaredEuclidean, kSquaredEuclideanFixedLabel };

inline double transport_cost(CostKind /*kind*/, const Vector& y, const Vector& x) { return (y - x).squaredNorm(); }

/// Loss, cost and (tau, epsilon): everything that defines the inner
/// worst-case target for a given theta.
struct RobustProblem {
  std::shared_ptr<const LossModel> loss;
  CostKind cost = CostKind::kSquaredEuclidean;
  RobustnessParams params;

  RobustProblem() = default;
  RobustProblem(std::shared_ptr<const LossModel> loss_model, CostKind cost_kind, RobustnessParams p)
      : loss(std::move(loss_model)), cost(cost_kind), params(p) {
    require(loss != nullptr, ErrorKind::kInvalidArgument, "problem needs a loss model");
    params.validate();
  }

  Eigen::Index dim() const { return loss->input_dim(); }
};

namespace detail {

inline void check_point_dims(const RobustProblem& problem, const LabeledPoint& anchor, const Vector& y) {
  if (anchor.features.size() != problem.dim() || y.size() != problem.dim()) {
    throw Error(ErrorKind::kInvalidArgument, "point dimension does not match the problem dimension " +
                                                 std::to_string(problem.dim()));
  }
}

}  // namespace detail

/// V~(y) = -l(theta, y) + c(y, anchor) / (2 tau), with the anchor's label.
inline double tilted_potential(const RobustProblem& problem, const Vector& theta, const LabeledPoint& anchor,
                               const Vector& y) {
  detail::check_point_dims(problem, anchor, y);
  const LabeledPoint z{y, anchor.label};
  return -problem.loss->value(theta, z) +
         transport_cost(problem.cost, y, anchor.features) / (2.0 * problem.params.tau);
}

/// grad V~(y) = -grad_y l(theta, y) + (y - anchor) / tau.
inline Vector tilted_gradient(const RobustProblem& problem, const Vector& theta, const LabeledPoint& anchor,
                              const Vector& y) {
  detail::check_point_dims(problem, anchor, y);
  const LabeledPoint z{y, anchor.label};
  return -problem.loss->grad_input(theta, z) + (y - anchor.features) / problem.params.tau;
}

/// Maps log-weights to probabilities with max subtraction.
inline Vector normalize_log_weights(const Vector& log_weights) {
  require(log_weights.size() >= 1, ErrorKind::kInvalidArgument, "no weights to normalize");
  const double top = log_weights.maxCoeff();
  if (!(top > -std::numeric_limits<double>::infinity())) {
    throw Error(ErrorKind::kDegenerateWeights, "all log-weights are -inf");
  }
  if (!std::isfinite(top)) throw Error(ErrorKind::kDegenerateWeights, "non-finite log-weight");
  Vector w = (log_weights.array() - top).exp();
  return w / w.sum();
}

/// Normalizes nonnegative raw weights to the simplex.
inline Vector normalize_weights(const Vector& raw) {
  require((raw.array() >= 0.0).all(), ErrorKind::kInvalidArgument, "raw weights must be nonnegative");
  return normalize_log_weights(raw.array().log().matrix());
}

/// Weighted particle approximation of the worst-case conditional at one anchor.
///
/// Column i of `positions()` is particle i. Weights are kept as log-weights
/// and exposed as probabilities that sum to one.
class ParticleCloud {
 public:
  ParticleCloud(LabeledPoint anchor, Matrix positions) : anchor_(std::move(anchor)), positions_(std::move(positions)) {
    require(positions_.cols() >= 1, ErrorKind::kInvalidArgument, "cloud needs at least one particle");
    require(positions_.rows() == anchor_.features.size(), ErrorKind::kInvalidArgument,
            "particle dimension differs from anchor dimension");
    log_weights_ = Vector::Constant(positions_.cols(), -std::log(static_cast<double>(positions_.cols())));
    weights_ = Vector::Constant(positions_.cols(), 1.0 / static_cast<double>(positions_.cols()));
  }

  /// m copies of the anchor, uniform weights.
  static ParticleCloud at_anchor(const LabeledPoint& anchor, Eigen::Index m) {
    require(m >= 1, ErrorKind::kInvalidArgument, "m must be >= 1");
    return ParticleCloud(anchor, anchor.features.replicate(1, m));
  }

  Eigen::Index size() const { return positions_.cols(); }
  Eigen::Index dim() const { return positions_.rows(); }

  const LabeledPoint& anchor() const { return anchor_; }
  const Matrix& positions() const { return positions_; }
  Matrix& positions() { return positions_; }
  auto position(Eigen::Index i) const { return positions_.col(i); }
  auto position(Eigen::Index i) { return positions_.col(i); }

  const Vector& weights() const { return weights_; }
  const Vector& log_weights() const { return log_weights_; }

  /// Replaces the log-weights and renormalizes.
  void set_log_weights(Vector log_weights) {
    require(log_weights.size() == size(), ErrorKind::kInvalidArgument, "log-weight count differs from particle count");
    weights_ = normalize_log_weights(log_weights);
    log_weights_ = weights_.array().log().matrix();
  }

  /// Sets probabilities directly (not necessarily normalized) and renormalizes.
  void set_weights(const Vector& weights) { set_log_weights(weights.array().log().matrix()); }

  LabeledPoint particle(Eigen::Index i) const { return LabeledPoint{positions_.col(i), anchor_.label}; }

  Vector weighted_mean() const { return positions_ * weights_; }

 private:
  LabeledPoint anchor_;
  Matrix positions_;
  Vector log_weights_;
  Vector weights_;
};

}  // namespace gfsdro
