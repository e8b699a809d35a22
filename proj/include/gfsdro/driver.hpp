#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "gfsdro/datasets.hpp"
#include "gfsdro/error.hpp"
#include "gfsdro/parallel.hpp"
#include "gfsdro/problem.hpp"
#include "gfsdro/rng.hpp"
#include "gfsdro/samplers.hpp"

namespace gfsdro {

enum class StepSchedule { kConstant, kInverseSqrt };

/// Proj onto {||theta|| <= radius}; an infinite radius is the identity.
struct Projection {
  double radius = std::numeric_limits<double>::infinity();

  static Projection identity() { return {}; }
  static Projection l2_ball(double r) { return Projection{r}; }
  bool is_identity() const { return std::isinf(radius); }
  bool operator==(const Projection&) const = default;

  Vector apply(Vector theta) const {
    if (is_identity()) return theta;
    const double norm = theta.norm();
    if (norm > radius) theta *= radius / norm;
    return theta;
  }
};

struct OuterLoopConfig {
  std::size_t steps = 0;   // used when epochs == 0
  std::size_t epochs = 0;  // full passes over the data; overrides steps
  StepSchedule schedule = StepSchedule::kConstant;
  double stepsize = 1e-2;  // r, or r0 for the inverse-sqrt schedule
  std::size_t batch = 1;
  Projection projection;

  bool operator==(const OuterLoopConfig&) const = default;

  double rate(std::size_t s) const {
    return schedule == StepSchedule::kConstant ? stepsize : stepsize / std::sqrt(static_cast<double>(s) + 1.0);
  }

  std::size_t steps_per_epoch(std::size_t n) const { return (n + batch - 1) / batch; }

  std::size_t total_steps(std::size_t n) const { return epochs > 0 ? epochs * steps_per_epoch(n) : steps; }

  void validate() const {
    require(stepsize >= 0.0 && std::isfinite(stepsize), ErrorKind::kInvalidConfig, "outer.stepsize must be >= 0");
    require(batch >= 1, ErrorKind::kInvalidConfig, "outer.batch must be >= 1");
    require(projection.radius > 0.0, ErrorKind::kInvalidConfig, "outer.radius must be > 0");
  }
};

struct TrainReport {
  Vector theta;
  std::vector<double> grad_norms;
  std::vector<double> loss_estimates;
  std::vector<Vector> epoch_thetas;  // theta after each completed epoch
  double wall_clock_seconds = 0.0;
  std::uint64_t seed = 0;
};

/// theta' = Proj(theta - r g).
inline Vector outer_step(const Vector& theta, const Vector& gradient, double r, const Projection& projection) {
  require(theta.size() == gradient.size(), ErrorKind::kInvalidArgument, "gradient and theta differ in length");
  return projection.apply(theta - r * gradient);
}

/// Per-step observer: (step, epoch, worst-case clouds of the step's anchors).
using StepObserver = std::function<void(std::size_t, std::size_t, const std::vector<ParticleCloud>&)>;

struct GradientEstimate {
  Vector gradient;
  double loss = 0.0;  // batch mean of the weighted particle loss
};

/// For each anchor run the inner sampler and form sum_i w_i grad_theta l(theta, y_i);
/// average over anchors. Anchor b uses `rng.child(b)`.
inline GradientEstimate robust_gradient_estimate(const RobustProblem& problem, const Vector& theta,
                                                 const std::vector<LabeledPoint>& anchors,
                                                 const SamplerConfig& config, const RngStream& rng,
                                                 std::vector<ParticleCloud>* clouds_out = nullptr) {
  require(!anchors.empty(), ErrorKind::kInvalidArgument, "robust gradient needs a nonempty batch");
  const std::size_t batch = anchors.size();
  std::vector<Vector> grads(batch);
  std::vector<double> losses(batch, 0.0);
  std::vector<std::optional<ParticleCloud>> clouds(batch);
  parallel_for(batch, [&](std::size_t b) {
    ParticleCloud cloud = sample_worst_case(problem, theta, anchors[b], config, rng.child(b));
    Vector g = Vector::Zero(theta.size());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
      const LabeledPoint z = cloud.particle(i);
      g += cloud.weights()[i] * problem.loss->grad_theta(theta, z);
      loss += cloud.weights()[i] * problem.loss->value(theta, z);
    }
    grads[b] = std::move(g);
    losses[b] = loss;
    if (clouds_out != nullptr) clouds[b].emplace(std::move(cloud));
  });
  GradientEstimate out{Vector::Zero(theta.size()), 0.0};
  for (std::size_t b = 0; b < batch; ++b) {
    out.gradient += grads[b];
    out.loss += losses[b];
  }
  out.gradient /= static_cast<double>(batch);
  out.loss /= static_cast<double>(batch);
  if (clouds_out != nullptr) {
    clouds_out->clear();
    for (auto& c : clouds) clouds_out->push_back(std::move(*c));
  }
  return out;
}

inline Vector robust_gradient(const RobustProblem& problem, const Vector& theta, const std::vector<LabeledPoint>& anchors,
                              const SamplerConfig& config, const RngStream& rng) {
  return robust_gradient_estimate(problem, theta, anchors, config, rng).gradient;
}

/// Plain minibatch gradient of the empirical loss.
inline GradientEstimate empirical_gradient(const LossModel& loss, const Vector& theta,
                                           const std::vector<LabeledPoint>& anchors) {
  require(!anchors.empty(), ErrorKind::kInvalidArgument, "gradient needs a nonempty batch");
  GradientEstimate out{Vector::Zero(theta.size()), 0.0};
  for (const auto& z : anchors) {
    out.gradient += loss.grad_theta(theta, z);
    out.loss += loss.value(theta, z);
  }
  out.gradient /= static_cast<double>(anchors.size());
  out.loss /= static_cast<double>(anchors.size());
  return out;
}

namespace detail {

inline constexpr std::uint64_t kShuffleStream = 0x73687566ULL;
inline constexpr std::uint64_t kInitStream = 0x696e6974ULL;
inline constexpr std::uint64_t kStepStream = 0x73746570ULL;

// Anchor order for one epoch: a seeded Fisher-Yates permutation.
inline std::vector<Eigen::Index> epoch_order(Eigen::Index n, std::uint64_t seed, std::size_t epoch) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  RngStream rng(seed, {kShuffleStream, epoch});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return order;
}

// Shared outer loop. `estimate(step, epoch, theta, anchors)` supplies the
// search direction.
template <typename Estimator>
TrainReport run_outer_loop(const LossModel& loss, const LabeledDataset& data, const OuterLoopConfig& outer,
                           std::uint64_t seed, const std::optional<Vector>& theta0, Estimator&& estimate) {
  outer.validate();
  require(data.size() >= 1, ErrorKind::kInvalidArgument, "training set is empty");
  require(data.dim() == loss.input_dim(), ErrorKind::kInvalidArgument, "dataset dimension does not match the loss");
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.seed = seed;
  if (theta0) {
    require(theta0->size() == loss.param_count(), ErrorKind::kInvalidArgument, "initial theta has the wrong length");
    report.theta = *theta0;
  } else {
    RngStream init(seed, {kInitStream});
    report.theta = loss.initial_params(init);
  }
  const auto n = static_cast<std::size_t>(data.size());
  const std::size_t per_epoch = outer.steps_per_epoch(n);
  const std::size_t total = outer.total_steps(n);
  std::vector<Eigen::Index> order;
  for (std::size_t s = 0; s < total; ++s) {
    const std::size_t epoch = s / per_epoch;
    const std::size_t in_epoch = s % per_epoch;
    if (in_epoch == 0) order = epoch_order(data.size(), seed, epoch);
    std::vector<LabeledPoint> anchors;
    for (std::size_t k = in_epoch * outer.batch; k < std::min(n, (in_epoch + 1) * outer.batch); ++k) {
      anchors.push_back(data.point(order[k]));
    }
    GradientEstimate est = estimate(s, epoch, report.theta, anchors);
    report.grad_norms.push_back(est.gradient.norm());
    report.loss_estimates.push_back(est.loss);
    report.theta = outer_step(report.theta, est.gradient, outer.rate(s), outer.projection);
    if (!report.theta.allFinite()) {
      throw Error(ErrorKind::kDivergedSampler, "theta became non-finite at outer step " + std::to_string(s));
    }
    if (in_epoch + 1 == per_epoch) report.epoch_thetas.push_back(report.theta);
  }
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace detail

/// Sampler-based robust training: each outer step samples worst-case clouds
/// for a batch of anchors and takes a projected step along the weighted
/// particle gradient.
inline TrainReport train(const RobustProblem& problem, const LabeledDataset& data, const SamplerConfig& sampler,
                         const OuterLoopConfig& outer, std::uint64_t seed,
                         const std::optional<Vector>& theta0 = std::nullopt, const StepObserver& observer = {}) {
  sampler.validate(problem.params);
  return detail::run_outer_loop(
      *problem.loss, data, outer, seed, theta0,
      [&](std::size_t s, std::size_t epoch, const Vector& theta, const std::vector<LabeledPoint>& anchors) {
        const RngStream step_rng(seed, {detail::kStepStream, s});
        if (!observer) return robust_gradient_estimate(problem, theta, anchors, sampler, step_rng);
        std::vector<ParticleCloud> clouds;
        GradientEstimate est = robust_gradient_estimate(problem, theta, anchors, sampler, step_rng, &clouds);
        observer(s, epoch, clouds);
        return est;
      });
}

/// Empirical risk minimization with the same anchor schedule as `train`.
inline TrainReport saa_train(const LossModel& loss, const LabeledDataset& data, const OuterLoopConfig& outer,
                             std::uint64_t seed, const std::optional<Vector>& theta0 = std::nullopt) {
  return detail::run_outer_loop(loss, data, outer, seed, theta0,
                                [&](std::size_t, std::size_t, const Vector& theta,
                                    const std::vector<LabeledPoint>& anchors) {
                                  return empirical_gradient(loss, theta, anchors);
                                });
}

// ---------------------------------------------------------------------------
// Dual (nested Monte Carlo) baseline

struct DualEstimate {
  double value = 0.0;
  Vector grad_theta;
};

/// Nested Monte Carlo estimate of
///   r / (2 t) + (eps / (2 t)) E_x log E_{y ~ N(x, eps/2 I)} exp(2 t l(theta, y) / eps)
/// and its theta-gradient (softmax-weighted inner gradients), at dual variable t.
/// The plug-in log of an inner mean is biased for finite n_inner; the bias is
/// not corrected.
inline DualEstimate dual_objective_estimate(const RobustProblem& problem, const Vector& theta, double dual_tau,
                                            double radius_r, const std::vector<LabeledPoint>& anchors,
                                            std::size_t n_inner, const RngStream& rng) {
  require(dual_tau > 0.0, ErrorKind::kInvalidConfig, "dual tau must be > 0");
  require(problem.params.epsilon > 0.0, ErrorKind::kInvalidConfig, "dual objective needs epsilon > 0");
  require(n_inner >= 2, ErrorKind::kInvalidConfig, "dual objective needs n_inner >= 2");
  require(!anchors.empty(), ErrorKind::kInvalidArgument, "dual objective needs anchors");
  const double eps = problem.params.epsilon;
  const double scale = 2.0 * dual_tau / eps;
  const double kernel_std = std::sqrt(eps / 2.0);
  DualEstimate out{0.0, Vector::Zero(theta.size())};
  Vector exponents(static_cast<Eigen::Index>(n_inner));
  std::vector<LabeledPoint> draws(n_inner);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    RngStream draw_rng = rng.child(a);
    for (std::size_t j = 0; j < n_inner; ++j) {
      LabeledPoint y = anchors[a];
      for (Eigen::Index k = 0; k < y.features.size(); ++k) y.features[k] += kernel_std * draw_rng.normal();
      exponents[static_cast<Eigen::Index>(j)] = scale * problem.loss->value(theta, y);
      draws[j] = std::move(y);
    }
    const double lse = detail::log_sum_exp(exponents);
    out.value += lse - std::log(static_cast<double>(n_inner));
    const Vector soft = (exponents.array() - lse).exp();
    for (std::size_t j = 0; j < n_inner; ++j) {
      out.grad_theta += soft[static_cast<Eigen::Index>(j)] * problem.loss->grad_theta(theta, draws[j]);
    }
  }
  const double count = static_cast<double>(anchors.size());
  out.value = radius_r / (2.0 * dual_tau) + eps / (2.0 * dual_tau) * (out.value / count);
  out.grad_theta /= count;
  return out;
}

/// Overload drawing `n_outer` anchors uniformly (with replacement) from `data`.
inline DualEstimate dual_objective_estimate(const RobustProblem& problem, const Vector& theta, double dual_tau,
                                            double radius_r, const LabeledDataset& data, std::size_t n_outer,
                                            std::size_t n_inner, const RngStream& rng) {
  require(n_outer >= 1, ErrorKind::kInvalidConfig, "dual objective needs n_outer >= 1");
  RngStream pick = rng.child(0x7069636bULL);
  std::vector<LabeledPoint> anchors;
  for (std::size_t k = 0; k < n_outer; ++k) anchors.push_back(data.point(static_cast<Eigen::Index>(pick.index(data.size()))));
  return dual_objective_estimate(problem, theta, dual_tau, radius_r, anchors, n_inner, rng);
}

struct DualConfig {
  double radius_r = 0.1;
  std::size_t n_inner = 16;
  std::size_t search_anchors = 64;  // anchors used when choosing the dual variable
  double tau_lo = 1e-3;
  double tau_hi = 1e2;
  std::size_t search_iters = 30;

  bool operator==(const DualConfig&) const = default;

  void validate() const {
    require(radius_r > 0.0, ErrorKind::kInvalidConfig, "dual.radius must be > 0");
    require(n_inner >= 2, ErrorKind::kInvalidConfig, "dual.n_inner must be >= 2");
    require(tau_lo > 0.0 && tau_hi > tau_lo, ErrorKind::kInvalidConfig, "dual tau bracket must satisfy 0 < lo < hi");
    require(search_anchors >= 1, ErrorKind::kInvalidConfig, "dual.search_anchors must be >= 1");
  }
};

/// Golden-section search over log(t) on [tau_lo, tau_hi] with common random
/// numbers, minimizing the estimated dual objective at fixed theta.
inline double minimize_dual_tau(const RobustProblem& problem, const Vector& theta, const LabeledDataset& data,
                                const DualConfig& config, const RngStream& rng) {
  const auto objective = [&](double log_t) {
    return dual_objective_estimate(problem, theta, std::exp(log_t), config.radius_r, data, config.search_anchors,
                                   config.n_inner, rng)
        .value;
  };
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = std::log(config.tau_lo);
  double hi = std::log(config.tau_hi);
  double c = hi - inv_phi * (hi - lo);
  double d = lo + inv_phi * (hi - lo);
  double fc = objective(c);
  double fd = objective(d);
  for (std::size_t it = 0; it < config.search_iters; ++it) {
    if (fc < fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - inv_phi * (hi - lo);
      fc = objective(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + inv_phi * (hi - lo);
      fd = objective(d);
    }
  }
  return std::exp(0.5 * (lo + hi));
}

/// Dual baseline training. The dual variable is re-chosen at the start of
/// every epoch; steps use the nested-MC gradient at that value.
inline TrainReport dual_train(const RobustProblem& problem, const LabeledDataset& data, const DualConfig& dual,
                              const OuterLoopConfig& outer, std::uint64_t seed,
                              const std::optional<Vector>& theta0 = std::nullopt) {
  dual.validate();
  double dual_tau = 1.0;
  std::size_t current_epoch = std::numeric_limits<std::size_t>::max();
  return detail::run_outer_loop(
      *problem.loss, data, outer, seed, theta0,
      [&](std::size_t s, std::size_t epoch, const Vector& theta, const std::vector<LabeledPoint>& anchors) {
        if (epoch != current_epoch) {
          current_epoch = epoch;
          dual_tau = minimize_dual_tau(problem, theta, data, dual, RngStream(seed, {0x6475616cULL, epoch}));
        }
        const RngStream step_rng(seed, {detail::kStepStream, s});
        DualEstimate est = dual_objective_estimate(problem, theta, dual_tau, dual.radius_r, anchors, dual.n_inner, step_rng);
        return GradientEstimate{std::move(est.grad_theta), est.value};
      });
}

}  // namespace gfsdro
