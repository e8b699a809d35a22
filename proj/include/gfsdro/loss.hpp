#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "gfsdro/error.hpp"
#include "gfsdro/rng.hpp"

namespace gfsdro {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// A data point z = (features, label). Samplers only ever move `features`;
/// the label is carried through unchanged, which is how the label-preserving
/// transport cost is realized.
struct LabeledPoint {
  Vector features;
  double label = 0.0;
};

enum class LossFamily { kLinear, kMlpBce, kSoftmaxLogistic, kUncertainLs };

inline const char* to_string(LossFamily family) {
  switch (family) {
    case LossFamily::kLinear: return "linear";
    case LossFamily::kMlpBce: return "mlp-bce";
    case LossFamily::kSoftmaxLogistic: return "softmax-logistic";
    case LossFamily::kUncertainLs: return "uncertain-ls";
  }
  return "unknown";
}

/// Parameterized loss l(theta, z) with exact gradients in theta and in the
/// feature block of z. Implementations are stateless apart from shape data,
/// so one instance can be shared across threads.
class LossModel {
 public:
  virtual ~LossModel() = default;

  virtual LossFamily family() const = 0;
  virtual Eigen::Index input_dim() const = 0;
  virtual Eigen::Index param_count() const = 0;

  virtual double value(const Vector& theta, const LabeledPoint& z) const = 0;
  virtual Vector grad_theta(const Vector& theta, const LabeledPoint& z) const = 0;
  virtual Vector grad_input(const Vector& theta, const LabeledPoint& z) const = 0;

  /// Starting parameters for training.
  virtual Vector initial_params(RngStream& /*rng*/) const { return Vector::Zero(param_count()); }

  /// A label drawn from the family's label domain (used by the gradient checker).
  virtual double random_label(RngStream& /*rng*/) const { return 0.0; }

  virtual bool is_classifier() const { return false; }

  /// Smallest |pre-activation| of a piecewise-linear unit at (theta, z);
  /// infinity for smooth families.
  virtual double kink_distance(const Vector& /*theta*/, const LabeledPoint& /*z*/) const {
    return std::numeric_limits<double>::infinity();
  }

  /// Predicted class index; ties go to the lower index.
  virtual int predict(const Vector& /*theta*/, const Vector& /*x*/) const {
    throw Error(ErrorKind::kInvalidArgument, std::string(to_string(family())) + " is not a classifier");
  }

 protected:
  void check_dims(const Vector& theta, const LabeledPoint& z) const {
    if (theta.size() != param_count()) {
      throw Error(ErrorKind::kInvalidArgument, "parameter vector has length " + std::to_string(theta.size()) +
                                                   ", expected " + std::to_string(param_count()));
    }
    if (z.features.size() != input_dim()) {
      throw Error(ErrorKind::kInvalidArgument, "feature vector has length " + std::to_string(z.features.size()) +
                                                   ", expected " + std::to_string(input_dim()));
    }
  }
};

/// l(theta, y) = theta . y. The closed-form test problem: with squared cost
/// its worst-case conditional is Gaussian.
class LinearLoss final : public LossModel {
 public:
  explicit LinearLoss(Eigen::Index dim) : dim_(dim) {
    require(dim >= 1, ErrorKind::kInvalidArgument, "linear loss needs dim >= 1");
  }

  LossFamily family() const override { return LossFamily::kLinear; }
  Eigen::Index input_dim() const override { return dim_; }
  Eigen::Index param_count() const override { return dim_; }

  double value(const Vector& theta, const LabeledPoint& z) const override {
    check_dims(theta, z);
    return theta.dot(z.features);
  }
  Vector grad_theta(const Vector& theta, const LabeledPoint& z) const override {
    check_dims(theta, z);
    return z.features;
  }
  Vector grad_input(const Vector& theta, const LabeledPoint& z) const override {
    check_dims(theta, z);
    return theta;
  }

 private:
  Eigen::Index dim_;
};

namespace detail {

// log(sum(exp(v))) with max subtraction.
inline double log_sum_exp(const Vector& v) {
  const double top = v.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((v.array() - top).exp().sum());
}

inline Vector softmax(const Vector& v) {
  Vector e = (v.array() - v.maxCoeff()).exp();
  return e / e.sum();
}

inline double softplus(double o) { return std::max(o, 0.0) + std::log1p(std::exp(-std::abs(o))); }

inline double sigmoid(double o) {
  if (o >= 0.0) return 1.0 / (1.0 + std::exp(-o));
  const double e = std::exp(o);
  return e / (1.0 + e);
}

}  // namespace detail

/// Multiclass logistic regression h_B(x, y) = -y^T B^T x + log(1^T exp(B^T x)).
///
/// B is d x C and theta is B in column-major order, so theta[c*d .. c*d+d)
/// holds the weight vector of class c. Labels are class indices.
class SoftmaxLogistic final : public LossModel {
 public:
  SoftmaxLogistic(Eigen::Index dim, int classes) : dim_(dim), classes_(classes) {
    require(dim >= 1 && classes >= 2, ErrorKind::kInvalidArgument, "softmax-logistic needs dim >= 1, classes >= 2");
  }

  LossFamily family() const override { return LossFamily::kSoftmaxLogistic; }
  Eigen::Index input_dim() const override { return dim_; }
  Eigen::Index param_count() const override { return dim_ * classes_; }
  int classes() const { return classes_; }

  double value(const Vector& theta, const LabeledPoint& z) const override {
    check_dims(theta, z);
    const Vector logits = weights(theta).transpose() * z.features;
    return -logits[label_index(z)] + detail::log_sum_exp(logits);
  }

  Vector grad_theta(const Vector& theta, const LabeledPoint& z) const override {
    check_dims(theta, z);
    const Vector residual = residual_of(theta, z);
    Vector g(param_count());
    Eigen::Map<Matrix>(g.data(), dim_, classes_) = z.features * residual.transpose();
    return g;
  }

  Vector grad_input(const Vector& theta, const LabeledPoint& z) const override {
    check_dims(theta, z);
    return weights(theta) * residual_of(theta, z);
  }

  double random_label(RngStream& rng) const override { return static_cast<double>(rng.index(classes_)); }

  bool is_classifier() const override { return true; }

  int predict(const Vector& theta, const Vector& x) const override {
    const Vector logits = weights(theta).transpose() * x;
    int best = 0;
    for (int c = 1; c < classes_; ++c) {
      if (logits[c] > logits[best]) best = c;
    }
    return best;
  }

  Eigen::Map<const Matrix> weights(const Vector& theta) const {
    return Eigen::Map<const Matrix>(theta.data(), dim_, classes_);
  }

 private:
  int label_index(const LabeledPoint& z) const {
    const int y = static_cast<int>(z.label);
    if (y < 0 || y >= classes_ || static_cast<double>(y) != z.label) {
      throw Error(ErrorKind::kInvalidArgument, "label " + std::to_string(z.label) + " outside [0, classes)");
    }
    return y;
  }

  // softmax(B^T x) - onehot(y)
  Vector residual_of(const Vector& theta, const LabeledPoint& z) const {
    Vector r = detail::softmax(weights(theta).transpose() * z.features);
    r[label_index(z)] -= 1.0;
    return r;
  }

  Eigen::Index dim_;
  int classes_;
};

/// Uncertain least squares f_theta(xi) = ||(A0 + xi A1) theta - b||^2.
/// The perturbable input is the scalar xi.
class UncertainLeastSquares final : public LossModel {
 public:
  UncertainLeastSquares(Matrix a0, Matrix a1, Vector b) : a0_(std::move(a0)), a1_(std::move(a1)), b_(std::move(b)) {
    require(a0_.rows() == a1_.rows() && a0_.cols() == a1_.cols() && a0_.rows() == b_.size(),
            ErrorKind::kInvalidArgument, "uncertain-ls matrix shapes disagree");
  }

  LossFamily family() const override { return LossFamily::kUncertainLs; }
  Eigen::Index input_dim() const override { return 1; }
  Eigen::Index param_count() const override { return a0_.cols(); }

  Matrix system(double xi) const { return a0_ + xi * a1_; }

  double value(const Vector& theta, const LabeledPoint& z) const override {
    check_dims(theta, z);
    return residual(theta, z.features[0]).squaredNorm();
  }

  Vector grad_theta(const Vector& theta, const LabeledPoint& z) const override {
    check_dims(theta, z);
    const double xi = z.features[0];
    return 2.0 * system(xi).transpose() * residual(theta, xi);
  }

  Vector grad_input(const Vector& theta, const LabeledPoint& z) const override {
    check_dims(theta, z);
    Vector g(1);
    g[0] = 2.0 * (a1_ * theta).dot(residual(theta, z.features[0]));
    return g;
  }

  const Matrix& a0() const { return a0_; }
  const Matrix& a1() const { return a1_; }
  const Vector& b() const { return b_; }

 private:
  Vector residual(const Vector& theta, double xi) const { return system(xi) * theta - b_; }

  Matrix a0_, a1_;
  Vector b_;
};

/// Fully connected ReLU network with a scalar logit and sigmoid cross-entropy.
///
/// `widths` lists every layer width including input and the final 1, e.g.
/// {2, 4, 1}. Each layer stores W (out x in, column-major) followed by b.
/// Labels are {0, 1}.
class MlpBce final : public LossModel {
 public:
  explicit MlpBce(std::vector<int> widths) : widths_(std::move(widths)) {
    require(widths_.size() >= 3, ErrorKind::kInvalidArgument, "mlp needs at least one hidden layer");
    require(widths_.back() == 1, ErrorKind::kInvalidArgument, "mlp output width must be 1");
    for (int w : widths_) require(w >= 1, ErrorKind::kInvalidArgument, "mlp layer widths must be positive");
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      offsets_.push_back(offset);
      offset += static_cast<Eigen::Index>(widths_[l + 1]) * (widths_[l] + 1);
    }
    count_ = offset;
  }

  LossFamily family() const override { return LossFamily::kMlpBce; }
  Eigen::Index input_dim() const override { return widths_.front(); }
  Eigen::Index param_count() const override { return count_; }
  const std::vector<int>& widths() const { return widths_; }

  double value(const Vector& theta, const LabeledPoint& z) const override {
    check_dims(theta, z);
    const double o = logit(theta, z.features);
    return label01(z) == 1.0 ? detail::softplus(-o) : detail::softplus(o);
  }

  Vector grad_theta(const Vector& theta, const LabeledPoint& z) const override {
    check_dims(theta, z);
    Vector g = Vector::Zero(count_);
    backprop(theta, z, &g, nullptr);
    return g;
  }

  Vector grad_input(const Vector& theta, const LabeledPoint& z) const override {
    check_dims(theta, z);
    Vector gx;
    backprop(theta, z, nullptr, &gx);
    return gx;
  }

  /// He initialization: W ~ N(0, 2 / fan_in), b = 0.
  Vector initial_params(RngStream& rng) const override {
    Vector theta = Vector::Zero(count_);
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      const double scale = std::sqrt(2.0 / widths_[l]);
      const Eigen::Index n = static_cast<Eigen::Index>(widths_[l + 1]) * widths_[l];
      for (Eigen::Index k = 0; k < n; ++k) theta[offsets_[l] + k] = scale * rng.normal();
    }
    return theta;
  }

  double random_label(RngStream& rng) const override { return static_cast<double>(rng.index(2)); }

  bool is_classifier() const override { return true; }

  int predict(const Vector& theta, const Vector& x) const override { return logit(theta, x) > 0.0 ? 1 : 0; }

  double kink_distance(const Vector& theta, const LabeledPoint& z) const override {
    check_dims(theta, z);
    double out = std::numeric_limits<double>::infinity();
    Vector a = z.features;
    for (std::size_t l = 0; l + 2 < widths_.size(); ++l) {
      const Vector pre = layer_w(theta, l) * a + layer_b(theta, l);
      out = std::min(out, pre.cwiseAbs().minCoeff());
      a = pre.cwiseMax(0.0);
    }
    return out;
  }

  double logit(const Vector& theta, const Vector& x) const {
    Vector a = x;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      Vector pre = layer_w(theta, l) * a + layer_b(theta, l);
      a = (l + 2 < widths_.size()) ? Vector(pre.cwiseMax(0.0)) : pre;
    }
    return a[0];
  }

  Eigen::Map<const Matrix> layer_w(const Vector& theta, std::size_t l) const {
    return Eigen::Map<const Matrix>(theta.data() + offsets_[l], widths_[l + 1], widths_[l]);
  }
  Eigen::Map<const Vector> layer_b(const Vector& theta, std::size_t l) const {
    return Eigen::Map<const Vector>(theta.data() + offsets_[l] + Eigen::Index{widths_[l + 1]} * widths_[l],
                                    widths_[l + 1]);
  }

 private:
  static double label01(const LabeledPoint& z) {
    if (z.label != 0.0 && z.label != 1.0) {
      throw Error(ErrorKind::kInvalidArgument, "mlp-bce labels must be 0 or 1, got " + std::to_string(z.label));
    }
    return z.label;
  }

  void backprop(const Vector& theta, const LabeledPoint& z, Vector* g_theta, Vector* g_input) const {
    const std::size_t layers = widths_.size() - 1;
    std::vector<Vector> acts(layers + 1);
    std::vector<Vector> pres(layers);
    acts[0] = z.features;
    for (std::size_t l = 0; l < layers; ++l) {
      pres[l] = layer_w(theta, l) * acts[l] + layer_b(theta, l);
      acts[l + 1] = (l + 1 < layers) ? Vector(pres[l].cwiseMax(0.0)) : pres[l];
    }
    Vector delta(1);
    const double o = pres[layers - 1][0];
    delta[0] = label01(z) == 1.0 ? -detail::sigmoid(-o) : detail::sigmoid(o);
    for (std::size_t l = layers; l-- > 0;) {
      if (l + 1 < layers) {
        delta = delta.array() * (pres[l].array() > 0.0).cast<double>();
      }
      if (g_theta != nullptr) {
        const Eigen::Index rows = widths_[l + 1];
        const Eigen::Index cols = widths_[l];
        Eigen::Map<Matrix>(g_theta->data() + offsets_[l], rows, cols) = delta * acts[l].transpose();
        g_theta->segment(offsets_[l] + rows * cols, rows) = delta;
      }
      delta = layer_w(theta, l).transpose() * delta;
    }
    if (g_input != nullptr) *g_input = delta;
  }

  std::vector<int> widths_;
  std::vector<Eigen::Index> offsets_;
  Eigen::Index count_ = 0;
};

/// Worst relative errors found by `finite_diff_check`.
struct FiniteDiffReport {
  std::size_t points = 0;
  double max_rel_err_theta = 0.0;
  double max_rel_err_input = 0.0;
};

namespace detail {

inline double relative_error(const Vector& analytic, const Vector& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-8});
  return (analytic - numeric).norm() / scale;
}

}  // namespace detail

inline Vector finite_diff_grad_theta(const LossModel& model, const Vector& theta, const LabeledPoint& z,
                                     double step = 1e-5) {
  Vector g(theta.size());
  Vector probe = theta;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    probe[k] = theta[k] + step;
    const double up = model.value(probe, z);
    probe[k] = theta[k] - step;
    const double down = model.value(probe, z);
    probe[k] = theta[k];
    g[k] = (up - down) / (2.0 * step);
  }
  return g;
}

inline Vector finite_diff_grad_input(const LossModel& model, const Vector& theta, const LabeledPoint& z,
                                     double step = 1e-5) {
  Vector g(z.features.size());
  LabeledPoint probe = z;
  for (Eigen::Index k = 0; k < z.features.size(); ++k) {
    probe.features[k] = z.features[k] + step;
    const double up = model.value(theta, probe);
    probe.features[k] = z.features[k] - step;
    const double down = model.value(theta, probe);
    probe.features[k] = z.features[k];
    g[k] = (up - down) / (2.0 * step);
  }
  return g;
}

/// Compares analytic gradients with central differences (step 1e-5) at
/// `n_points` random (theta, z) draws. theta and features are N(0, 1); draws
/// with a ReLU pre-activation within `kink_margin` of zero are redrawn.
inline FiniteDiffReport finite_diff_check(const LossModel& model, std::size_t n_points, std::uint64_t seed,
                                          double kink_margin = 1e-3) {
  FiniteDiffReport report;
  report.points = n_points;
  for (std::size_t p = 0; p < n_points; ++p) {
    RngStream rng(seed, {p});
    Vector theta;
    LabeledPoint z;
    for (int attempt = 0;; ++attempt) {
      require(attempt < 1000, ErrorKind::kInvalidArgument, "no differentiable point found for the gradient check");
      theta = rng.normal_vector(model.param_count());
      z = LabeledPoint{rng.normal_vector(model.input_dim()), 0.0};
      z.label = model.random_label(rng);
      if (model.kink_distance(theta, z) >= kink_margin) break;
    }
    report.max_rel_err_theta = std::max(
        report.max_rel_err_theta,
        detail::relative_error(model.grad_theta(theta, z), finite_diff_grad_theta(model, theta, z)));
    report.max_rel_err_input = std::max(
        report.max_rel_err_input,
        detail::relative_error(model.grad_input(theta, z), finite_diff_grad_input(model, theta, z)));
  }
  return report;
}

}  // namespace gfsdro
