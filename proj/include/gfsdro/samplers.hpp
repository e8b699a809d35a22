#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gfsdro/error.hpp"
#include "gfsdro/problem.hpp"
#include "gfsdro/rng.hpp"

namespace gfsdro {

enum class SamplerMethod { kWgfUla, kWfr, kSvgd, kRgo, kWrm };

inline const char* to_string(SamplerMethod method) {
  switch (method) {
    case SamplerMethod::kWgfUla: return "wgf-ula";
    case SamplerMethod::kWfr: return "wfr";
    case SamplerMethod::kSvgd: return "svgd";
    case SamplerMethod::kRgo: return "rgo";
    case SamplerMethod::kWrm: return "wrm";
  }
  return "unknown";
}

inline std::optional<SamplerMethod> parse_sampler_method(const std::string& name) {
  if (name == "wgf-ula" || name == "wgf") return SamplerMethod::kWgfUla;
  if (name == "wfr") return SamplerMethod::kWfr;
  if (name == "svgd") return SamplerMethod::kSvgd;
  if (name == "rgo") return SamplerMethod::kRgo;
  if (name == "wrm") return SamplerMethod::kWrm;
  return std::nullopt;
}

/// RBF kernel k(a, b) = exp(-||a - b||^2 / h). A non-positive `fixed_bandwidth`
/// selects the median heuristic h = med^2 / log(m + 1).
struct RbfKernel {
  double fixed_bandwidth = 0.0;

  bool operator==(const RbfKernel&) const = default;

  bool uses_median() const { return !(fixed_bandwidth > 0.0); }
};

struct SamplerConfig {
  SamplerMethod method = SamplerMethod::kWgfUla;
  double eta = 1e-2;                  // inner stepsize
  double eta_w = 0.0;                 // WFR weight stepsize
  double w_min = 0.0;                 // WFR birth-death threshold
  std::size_t steps = 0;              // T
  Eigen::Index particles = 1;         // m
  double sigma_init = 0.0;            // SVGD initial std
  double smoothness_L = 0.0;          // RGO smoothness constant
  RbfKernel kernel;                   // SVGD
  std::size_t rgo_max_trials = 100000;
  std::size_t rgo_max_iters = 10000;
  double rgo_tolerance = 1e-8;
  // When the RGO minimizer misses the tolerance: throw, or continue from the
  // lowest-U iterate found (useful on non-smooth losses such as ReLU nets).
  bool rgo_accept_unconverged = false;

  bool operator==(const SamplerConfig&) const = default;

  /// Checks everything that can be checked before a run. Message names the field.
  void validate(const RobustnessParams& params) const {
    require(eta > 0.0 && std::isfinite(eta), ErrorKind::kInvalidConfig, "sampler.eta must be > 0");
    require(particles >= 1, ErrorKind::kInvalidConfig, "sampler.m must be >= 1");
    switch (method) {
      case SamplerMethod::kWfr:
        require(eta_w >= 0.0, ErrorKind::kInvalidConfig, "sampler.eta_w must be >= 0");
        require(w_min >= 0.0 && w_min <= 1.0 / static_cast<double>(particles), ErrorKind::kInvalidConfig,
                "sampler.w_min must lie in [0, 1/m]");
        require(params.epsilon * eta_w / (2.0 * params.tau) < 1.0, ErrorKind::kInvalidConfig,
                "sampler.eta_w: epsilon*eta_w/(2*tau) must be < 1");
        break;
      case SamplerMethod::kSvgd:
        require(params.epsilon > 0.0, ErrorKind::kInvalidConfig,
                "svgd needs epsilon > 0 (score scale 2*tau/epsilon is undefined)");
        require(sigma_init >= 0.0, ErrorKind::kInvalidConfig, "sampler.sigma_init must be >= 0");
        break;
      case SamplerMethod::kRgo:
        require(params.epsilon > 0.0, ErrorKind::kInvalidConfig, "rgo needs epsilon > 0");
        require(smoothness_L >= 0.0, ErrorKind::kInvalidConfig, "sampler.L must be >= 0");
        require(smoothness_L * params.tau < 1.0, ErrorKind::kInvalidConfig, "rgo needs L*tau < 1");
        break;
      default:
        break;
    }
  }
};

namespace detail {

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

// Particle streams use ids [0, m); the birth-death stream sits far above.
inline constexpr std::uint64_t kBirthDeathStream = std::uint64_t{1} << 40;

}  // namespace detail

/// One unadjusted Langevin step y - eta grad V~(y) + sqrt(eta eps / tau) xi.
/// With epsilon == 0 no noise is drawn and the step is exactly `wrm_step`.
inline Vector ula_step(const Vector& y, const RobustProblem& problem, const Vector& theta, const LabeledPoint& anchor,
                       double eta, RngStream& rng) {
  Vector next = y - eta * tilted_gradient(problem, theta, anchor, y);
  const double eps = problem.params.epsilon;
  if (eps > 0.0) {
    const double scale = std::sqrt(eta * eps / problem.params.tau);
    for (Eigen::Index k = 0; k < next.size(); ++k) next[k] += scale * rng.normal();
  }
  if (!next.allFinite()) throw DivergedSampler(0, "ula_step");
  return next;
}

/// Deterministic inner gradient step on V~ (the WRM inner update).
inline Vector wrm_step(const Vector& y, const RobustProblem& problem, const Vector& theta, const LabeledPoint& anchor,
                       double eta) {
  Vector next = y - eta * tilted_gradient(problem, theta, anchor, y);
  if (!next.allFinite()) throw DivergedSampler(0, "wrm_step");
  return next;
}

/// log w'_i = (1 - eps eta_w / (2 tau)) log w_i - eta_w V~_i, then normalized.
inline Vector wfr_log_weight_update(const Vector& log_weights, const Vector& tilted_values, double eta_w,
                                    const RobustnessParams& params) {
  require(log_weights.size() == tilted_values.size(), ErrorKind::kInvalidArgument,
          "weights and potential values differ in length");
  require(eta_w >= 0.0, ErrorKind::kInvalidConfig, "eta_w must be >= 0");
  const double decay = params.epsilon * eta_w / (2.0 * params.tau);
  require(decay < 1.0, ErrorKind::kInvalidConfig, "epsilon*eta_w/(2*tau) must be < 1");
  const Vector updated = (1.0 - decay) * log_weights - eta_w * tilted_values;
  return normalize_log_weights(updated).array().log().matrix();
}

/// Probability-space form of `wfr_log_weight_update`.
inline Vector wfr_weight_update(const Vector& weights, const Vector& tilted_values, double eta_w,
                                const RobustnessParams& params) {
  return wfr_log_weight_update(weights.array().log().matrix(), tilted_values, eta_w, params).array().exp().matrix();
}

/// Birth-death resampling. Each particle with weight below `w_min` copies the
/// position of a donor drawn with probability proportional to the current
/// weights; donor and receiver then share the average of their two weights.
/// Particles are visited in index order.
inline void birth_death(ParticleCloud& cloud, double w_min, RngStream& rng) {
  Vector w = cloud.weights();
  bool changed = false;
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    if (!(w[i] < w_min)) continue;
    const double u = rng.uniform() * w.sum();
    Eigen::Index donor = cloud.size() - 1;
    double acc = 0.0;
    for (Eigen::Index j = 0; j < cloud.size(); ++j) {
      acc += w[j];
      if (u < acc) {
        donor = j;
        break;
      }
    }
    if (donor == i) continue;
    cloud.position(i) = cloud.position(donor);
    const double shared = 0.5 * (w[i] + w[donor]);
    w[i] = shared;
    w[donor] = shared;
    changed = true;
  }
  if (changed) cloud.set_weights(w);
}

/// Median-heuristic bandwidth med^2 / log(m + 1); 1 when undefined (m == 1 or
/// all particles coincide).
inline double median_bandwidth(const Matrix& positions) {
  const Eigen::Index m = positions.cols();
  if (m < 2) return 1.0;
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(m * (m - 1) / 2));
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) dists.push_back((positions.col(i) - positions.col(j)).norm());
  }
  const auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  double med = *mid;
  if (dists.size() % 2 == 0) {
    const double lower = *std::max_element(dists.begin(), mid);
    med = 0.5 * (med + lower);
  }
  const double h = med * med / std::log(static_cast<double>(m) + 1.0);
  return h > 0.0 ? h : 1.0;
}

/// One SVGD update y_i += eta * phi_i with
/// phi_i = (1/m) sum_j [ -k(y_i, y_j) (2 tau / eps) grad V~(y_j) + grad_{y_j} k(y_i, y_j) ].
/// Weights are left untouched.
inline void svgd_step(ParticleCloud& cloud, const RobustProblem& problem, const Vector& theta, const RbfKernel& kernel,
                      double eta) {
  require(problem.params.epsilon > 0.0, ErrorKind::kInvalidConfig,
          "svgd needs epsilon > 0 (score scale 2*tau/epsilon is undefined)");
  const Eigen::Index m = cloud.size();
  const double scale = 2.0 * problem.params.tau / problem.params.epsilon;
  const Matrix& y = cloud.positions();
  Matrix drive(cloud.dim(), m);
  for (Eigen::Index j = 0; j < m; ++j) {
    drive.col(j) = scale * tilted_gradient(problem, theta, cloud.anchor(), y.col(j));
  }
  const double h = kernel.uses_median() ? median_bandwidth(y) : kernel.fixed_bandwidth;
  Matrix phi = Matrix::Zero(cloud.dim(), m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const Vector diff = y.col(i) - y.col(j);
      const double k = std::exp(-diff.squaredNorm() / h);
      phi.col(i) -= k * drive.col(j);
      phi.col(i) += (2.0 * k / h) * diff;
    }
  }
  phi /= static_cast<double>(m);
  Matrix next = y + eta * phi;
  if (!next.allFinite()) throw DivergedSampler(0, "svgd_step");
  cloud.positions() = std::move(next);
}

/// Outcome of one restricted-Gaussian-oracle draw.
struct RgoDraw {
  Vector sample;
  std::size_t trials = 0;
};

/// RGO exponent U(y) = (2 tau / eps) V~(y) = (-2 tau l(theta, y) + ||y - x||^2) / eps.
inline double rgo_exponent(const RobustProblem& problem, const Vector& theta, const LabeledPoint& anchor,
                           const Vector& y) {
  return 2.0 * problem.params.tau / problem.params.epsilon * tilted_potential(problem, theta, anchor, y);
}

struct RgoCenter {
  Vector point;
  bool converged = true;
};

/// Gradient descent on U from the anchor with stepsize eps / (2 (1 + L tau))
/// until ||grad U|| <= tolerance.
inline RgoCenter rgo_minimize(const RobustProblem& problem, const Vector& theta, const LabeledPoint& anchor,
                              const SamplerConfig& config) {
  const auto& p = problem.params;
  const double scale = 2.0 * p.tau / p.epsilon;
  const double step = p.epsilon / (2.0 * (1.0 + config.smoothness_L * p.tau));
  Vector y = anchor.features;
  Vector best = y;
  double best_u = rgo_exponent(problem, theta, anchor, y);
  for (std::size_t it = 0; it < config.rgo_max_iters; ++it) {
    const Vector g = scale * tilted_gradient(problem, theta, anchor, y);
    if (!g.allFinite()) throw DivergedSampler(it, "rgo_minimize");
    if (g.norm() <= config.rgo_tolerance) return {y, true};
    y -= step * g;
    if (config.rgo_accept_unconverged) {
      const double u = rgo_exponent(problem, theta, anchor, y);
      if (u < best_u) {
        best_u = u;
        best = y;
      }
    }
  }
  if (config.rgo_accept_unconverged) return {best, false};
  throw Error(ErrorKind::kOptimizerFailure, "rgo inner minimization did not reach ||grad U|| <= " +
                                                std::to_string(config.rgo_tolerance) + " in " +
                                                std::to_string(config.rgo_max_iters) + " iterations");
}

/// Rejection step around the minimizer `center`. Proposal N(center, eps / (2 (1 - L tau)) I);
/// accept with probability min{1, exp(-U(Z) + U(center) + ((1 - L tau) / eps) ||Z - center||^2)}.
inline RgoDraw rgo_draw(const RobustProblem& problem, const Vector& theta, const LabeledPoint& anchor,
                        const Vector& center, const SamplerConfig& config, RngStream& rng) {
  const auto& p = problem.params;
  const double slack = 1.0 - config.smoothness_L * p.tau;
  require(slack > 0.0, ErrorKind::kInvalidConfig, "rgo needs L*tau < 1");
  const double proposal_std = std::sqrt(p.epsilon / (2.0 * slack));
  const double u_center = rgo_exponent(problem, theta, anchor, center);
  RgoDraw out;
  while (out.trials < config.rgo_max_trials) {
    ++out.trials;
    Vector z = center;
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] += proposal_std * rng.normal();
    const double log_accept = std::min(
        0.0, -rgo_exponent(problem, theta, anchor, z) + u_center + slack / p.epsilon * (z - center).squaredNorm());
    if (std::log(rng.uniform()) < log_accept) {
      out.sample = std::move(z);
      return out;
    }
  }
  throw Error(ErrorKind::kRejectionStall,
              "rgo rejection loop exceeded " + std::to_string(config.rgo_max_trials) + " trials");
}

/// Minimize, then one rejection draw.
inline RgoDraw rgo_sample(const RobustProblem& problem, const Vector& theta, const LabeledPoint& anchor,
                          const SamplerConfig& config, RngStream& rng) {
  config.validate(problem.params);
  const RgoCenter center = rgo_minimize(problem, theta, anchor, config);
  return rgo_draw(problem, theta, anchor, center.point, config, rng);
}

/// Called with (iteration, cloud) after initialization (iteration 0) and after
/// every inner iteration.
using CloudObserver = std::function<void(std::size_t, const ParticleCloud&)>;

struct SamplerStats {
  std::size_t rgo_trials = 0;
  std::size_t rgo_accepted = 0;
  std::size_t rgo_unconverged = 0;
};

/// Runs T inner iterations of the configured method at one anchor and
/// returns the last iterate. `rng` is the anchor's stream; particle i draws
/// from `rng.child(i)`.
inline ParticleCloud sample_worst_case(const RobustProblem& problem, const Vector& theta, const LabeledPoint& anchor,
                                       const SamplerConfig& config, const RngStream& rng,
                                       const CloudObserver& observer = {}, SamplerStats* stats = nullptr) {
  config.validate(problem.params);
  const Eigen::Index m = config.particles;
  std::vector<RngStream> streams;
  streams.reserve(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) streams.push_back(rng.child(static_cast<std::uint64_t>(i)));

  ParticleCloud cloud = ParticleCloud::at_anchor(anchor, m);
  if (config.method == SamplerMethod::kSvgd) {
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index k = 0; k < cloud.dim(); ++k) cloud.position(i)[k] += config.sigma_init * streams[i].normal();
    }
  }
  if (observer) observer(0, cloud);

  const auto check = [&](std::size_t t, const char* where) {
    if (!cloud.positions().allFinite()) throw DivergedSampler(t, where);
  };

  switch (config.method) {
    case SamplerMethod::kWgfUla:
    case SamplerMethod::kWrm: {
      const bool noisy = config.method == SamplerMethod::kWgfUla;
      for (std::size_t t = 1; t <= config.steps; ++t) {
        for (Eigen::Index i = 0; i < m; ++i) {
          const Vector y = cloud.position(i);
          try {
            cloud.position(i) = noisy ? ula_step(y, problem, theta, anchor, config.eta, streams[i])
                                      : wrm_step(y, problem, theta, anchor, config.eta);
          } catch (const DivergedSampler&) {
            throw DivergedSampler(t, to_string(config.method));
          }
        }
        if (observer) observer(t, cloud);
      }
      break;
    }
    case SamplerMethod::kWfr: {
      RngStream resample = rng.child(detail::kBirthDeathStream);
      Vector tilted(m);
      for (std::size_t t = 1; t <= config.steps; ++t) {
        for (Eigen::Index i = 0; i < m; ++i) {
          const Vector y = cloud.position(i);
          if (config.eta_w > 0.0) tilted[i] = tilted_potential(problem, theta, anchor, y);
          try {
            cloud.position(i) = ula_step(y, problem, theta, anchor, config.eta, streams[i]);
          } catch (const DivergedSampler&) {
            throw DivergedSampler(t, "wfr");
          }
        }
        if (config.eta_w > 0.0) {
          if (!tilted.allFinite()) throw DivergedSampler(t, "wfr weights");
          cloud.set_log_weights(wfr_log_weight_update(cloud.log_weights(), tilted, config.eta_w, problem.params));
        }
        if (config.w_min > 0.0) birth_death(cloud, config.w_min, resample);
        if (observer) observer(t, cloud);
      }
      break;
    }
    case SamplerMethod::kSvgd: {
      for (std::size_t t = 1; t <= config.steps; ++t) {
        try {
          svgd_step(cloud, problem, theta, config.kernel, config.eta);
        } catch (const DivergedSampler&) {
          throw DivergedSampler(t, "svgd");
        }
        if (observer) observer(t, cloud);
      }
      break;
    }
    case SamplerMethod::kRgo: {
      const RgoCenter center = rgo_minimize(problem, theta, anchor, config);
      if (stats != nullptr && !center.converged) ++stats->rgo_unconverged;
      for (Eigen::Index i = 0; i < m; ++i) {
        RgoDraw draw = rgo_draw(problem, theta, anchor, center.point, config, streams[i]);
        cloud.position(i) = draw.sample;
        if (stats != nullptr) {
          stats->rgo_trials += draw.trials;
          ++stats->rgo_accepted;
        }
      }
      check(config.steps, "rgo");
      if (observer) observer(std::max<std::size_t>(config.steps, 1), cloud);
      break;
    }
  }
  return cloud;
}

}  // namespace gfsdro
