#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Core>

#include "gfsdro/error.hpp"
#include "gfsdro/loss.hpp"
#include "gfsdro/rng.hpp"

namespace gfsdro {

struct DatasetInfo {
  std::string name;
  std::string params;
  std::uint64_t seed = 0;
};

/// n x d features (one row per point) and n labels. Labels are class indices,
/// {0, 1}, or +-1 depending on the generator; `info` records which.
struct LabeledDataset {
  Matrix features;
  Vector labels;
  DatasetInfo info;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  LabeledPoint point(Eigen::Index i) const { return LabeledPoint{features.row(i).transpose(), labels[i]}; }
};

/// Maps +-1 labels to {0, 1}.
inline LabeledDataset to_binary01(LabeledDataset data) {
  for (Eigen::Index i = 0; i < data.labels.size(); ++i) data.labels[i] = data.labels[i] > 0.0 ? 1.0 : 0.0;
  return data;
}

/// Circle data: X ~ N(0, I_2), label sign(||X|| - sqrt 2), points with
/// ||X|| in (sqrt2 / 1.3, 1.3 sqrt2) rejected. `drop_first_quadrant` also
/// rejects points with both coordinates positive. Labels are +-1.
inline LabeledDataset gen_circle(Eigen::Index n, std::uint64_t seed, bool drop_first_quadrant) {
  require(n >= 1, ErrorKind::kInvalidArgument, "circle dataset needs n >= 1");
  const double r0 = std::numbers::sqrt2;
  LabeledDataset data;
  data.features.resize(n, 2);
  data.labels.resize(n);
  RngStream rng(seed, {0x636972636c65ULL});
  const std::int64_t cap = 100 * static_cast<std::int64_t>(n);
  std::int64_t draws = 0;
  Eigen::Index accepted = 0;
  while (accepted < n) {
    if (++draws > cap) throw Error(ErrorKind::kInvalidArgument, "circle rejection sampling exceeded 100x oversampling");
    const double x1 = rng.normal();
    const double x2 = rng.normal();
    const double radius = std::hypot(x1, x2);
    if (radius > r0 / 1.3 && radius < 1.3 * r0) continue;
    if (drop_first_quadrant && x1 > 0.0 && x2 > 0.0) continue;
    data.features(accepted, 0) = x1;
    data.features(accepted, 1) = x2;
    data.labels[accepted] = radius > r0 ? 1.0 : -1.0;
    ++accepted;
  }
  data.info = {drop_first_quadrant ? "biased-circle" : "circle", "n=" + std::to_string(n), seed};
  return data;
}

inline LabeledDataset gen_biased_circle(Eigen::Index n_raw, std::uint64_t seed) { return gen_circle(n_raw, seed, true); }

/// Two interleaved half circles. Label 0: (cos t, sin t); label 1:
/// (1 - cos t, 0.5 - sin t); t ~ U[0, pi]; plus N(0, sigma^2 I) noise.
/// round(n * positive_fraction) points carry label 1.
inline LabeledDataset gen_two_moons(Eigen::Index n, double noise_sigma, double positive_fraction, std::uint64_t seed) {
  require(n >= 2, ErrorKind::kInvalidArgument, "two moons needs n >= 2");
  require(positive_fraction > 0.0 && positive_fraction < 1.0, ErrorKind::kInvalidArgument,
          "positive_fraction must lie in (0, 1)");
  require(noise_sigma >= 0.0, ErrorKind::kInvalidArgument, "noise must be >= 0");
  const auto positives = static_cast<Eigen::Index>(std::llround(static_cast<double>(n) * positive_fraction));
  LabeledDataset data;
  data.features.resize(n, 2);
  data.labels.resize(n);
  RngStream rng(seed, {0x6d6f6f6e73ULL});
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool positive = i < positives;
    const double t = rng.uniform(0.0, std::numbers::pi);
    double x = positive ? 1.0 - std::cos(t) : std::cos(t);
    double y = positive ? 0.5 - std::sin(t) : std::sin(t);
    if (noise_sigma > 0.0) {
      x += noise_sigma * rng.normal();
      y += noise_sigma * rng.normal();
    }
    data.features(i, 0) = x;
    data.features(i, 1) = y;
    data.labels[i] = positive ? 1.0 : 0.0;
  }
  std::ostringstream params;
  params << "n=" << n << " noise=" << noise_sigma << " positive_fraction=" << positive_fraction;
  data.info = {"two-moons", params.str(), seed};
  return data;
}

/// A(xi) = A0 + xi A1 with standard normal A0, A1, b; N training draws of xi
/// uniform on [-0.5, 0.5].
struct UncertainLsInstance {
  Matrix a0;
  Matrix a1;
  Vector b;
  Vector train_xi;
  Vector delta_grid;
  std::uint64_t seed = 0;

  /// Training set in dataset form: one scalar feature xi per row, label 0.
  LabeledDataset train_set() const {
    LabeledDataset data;
    data.features = train_xi;
    data.labels = Vector::Zero(train_xi.size());
    data.info = {"uncertain-ls", "train", seed};
    return data;
  }

  /// n test draws of xi ~ U[-0.5 (1 + delta), 0.5 (1 + delta)].
  Vector test_xi(double delta, Eigen::Index n, std::uint64_t test_seed) const {
    require(delta >= 0.0, ErrorKind::kInvalidArgument, "delta must be >= 0");
    RngStream rng(test_seed, {0x7465737478ULL});
    const double half = 0.5 * (1.0 + delta);
    Vector xi(n);
    for (Eigen::Index i = 0; i < n; ++i) xi[i] = rng.uniform(-half, half);
    return xi;
  }
};

inline UncertainLsInstance gen_uncertain_ls(std::uint64_t seed, Eigen::Index n_train = 10, Eigen::Index dim = 10) {
  UncertainLsInstance inst;
  inst.seed = seed;
  RngStream rng(seed, {0x756c73ULL});
  inst.a0.resize(dim, dim);
  inst.a1.resize(dim, dim);
  for (Eigen::Index k = 0; k < inst.a0.size(); ++k) inst.a0.data()[k] = rng.normal();
  for (Eigen::Index k = 0; k < inst.a1.size(); ++k) inst.a1.data()[k] = rng.normal();
  inst.b = rng.normal_vector(dim);
  inst.train_xi.resize(n_train);
  for (Eigen::Index i = 0; i < n_train; ++i) inst.train_xi[i] = rng.uniform(-0.5, 0.5);
  inst.delta_grid = Vector::LinSpaced(11, 0.0, 10.0);
  return inst;
}

/// Gaussian class clouds around the vertices of a centered simplex. Class
/// means are (margin / sqrt 2) e_c minus the centroid, so every pair is
/// exactly `margin` apart. Class of point i is i mod classes.
inline LabeledDataset gen_synthetic_features(Eigen::Index n, Eigen::Index d, int classes, double margin,
                                             std::uint64_t seed, double noise_std = 1.0) {
  require(classes >= 2, ErrorKind::kInvalidArgument, "synthetic features need classes >= 2");
  require(classes <= d, ErrorKind::kInvalidArgument, "synthetic features need classes <= d");
  require(n >= 1 && margin >= 0.0 && noise_std >= 0.0, ErrorKind::kInvalidArgument,
          "synthetic features need n >= 1, margin >= 0, noise >= 0");
  Matrix means = Matrix::Zero(classes, d);
  const double scale = margin / std::numbers::sqrt2;
  for (int c = 0; c < classes; ++c) means(c, c) = scale;
  const Eigen::RowVectorXd centroid = means.colwise().mean();
  means.rowwise() -= centroid;

  LabeledDataset data;
  data.features.resize(n, d);
  data.labels.resize(n);
  RngStream rng(seed, {0x66656174ULL});
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % classes);
    for (Eigen::Index k = 0; k < d; ++k) data.features(i, k) = means(c, k) + noise_std * rng.normal();
    data.labels[i] = c;
  }
  std::ostringstream params;
  params << "n=" << n << " d=" << d << " classes=" << classes << " margin=" << margin << " noise=" << noise_std;
  data.info = {"synthetic-features", params.str(), seed};
  return data;
}

/// Shortest round-trip decimal form of a double.
inline std::string format_shortest(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

/// Writes the text feature format:
///   gfsdro-features v1 n=<n> d=<d> classes=<C>
///   <d floats> <label>
inline void write_features(std::ostream& out, const LabeledDataset& data, int classes) {
  out << "gfsdro-features v1 n=" << data.size() << " d=" << data.dim() << " classes=" << classes << '\n';
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index k = 0; k < data.dim(); ++k) out << format_shortest(data.features(i, k)) << ' ';
    out << static_cast<long long>(data.labels[i]) << '\n';
  }
}

inline void save_features(const std::string& path, const LabeledDataset& data, int classes) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::kInvalidArgument, "cannot open " + path + " for writing");
  write_features(out, data, classes);
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t' || line[pos] == '\r')) ++pos;
    const std::size_t start = pos;
    while (pos < line.size() && line[pos] != ' ' && line[pos] != '\t' && line[pos] != '\r') ++pos;
    if (pos > start) tokens.push_back(line.substr(start, pos - start));
  }
  return tokens;
}

template <typename T>
bool parse_number(std::string_view token, T& out) {
  const auto res = std::from_chars(token.data(), token.data() + token.size(), out);
  return res.ec == std::errc() && res.ptr == token.data() + token.size();
}

inline long long header_field(std::string_view token, std::string_view key, std::size_t line) {
  long long value = 0;
  if (token.substr(0, key.size()) != key || !parse_number(token.substr(key.size()), value)) {
    throw ParseError(line, "malformed header field, expected " + std::string(key) + "<int>");
  }
  return value;
}

}  // namespace detail

inline LabeledDataset read_features(std::istream& in, int* classes_out = nullptr) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  const auto head = detail::split_ws(line);
  if (head.size() != 5 || head[0] != "gfsdro-features" || head[1] != "v1") {
    throw ParseError(1, "malformed header, expected 'gfsdro-features v1 n=<int> d=<int> classes=<int>'");
  }
  const long long n = detail::header_field(head[2], "n=", 1);
  const long long d = detail::header_field(head[3], "d=", 1);
  const long long classes = detail::header_field(head[4], "classes=", 1);
  if (n < 1 || d < 1 || classes < 1) throw ParseError(1, "header values must be positive");

  LabeledDataset data;
  data.features.resize(n, d);
  data.labels.resize(n);
  long long row = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = detail::split_ws(line);
    if (tokens.empty()) continue;
    if (row >= n) throw ParseError(line_no, "more data rows than n=" + std::to_string(n));
    if (static_cast<long long>(tokens.size()) != d + 1) {
      throw ParseError(line_no, "expected " + std::to_string(d + 1) + " fields, found " + std::to_string(tokens.size()));
    }
    for (long long k = 0; k < d; ++k) {
      double v = 0.0;
      if (!detail::parse_number(tokens[k], v)) throw ParseError(line_no, "bad float '" + std::string(tokens[k]) + "'");
      data.features(row, k) = v;
    }
    long long label = 0;
    if (!detail::parse_number(tokens[d], label)) throw ParseError(line_no, "bad label '" + std::string(tokens[d]) + "'");
    if (label < 0 || label >= classes) {
      throw ParseError(line_no, "label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    }
    data.labels[row] = static_cast<double>(label);
    ++row;
  }
  if (row == 0) throw ParseError(line_no, "empty data section");
  if (row != n) throw ParseError(line_no, "found " + std::to_string(row) + " rows, header says n=" + std::to_string(n));
  data.info = {"features", "classes=" + std::to_string(classes), 0};
  if (classes_out != nullptr) *classes_out = static_cast<int>(classes);
  return data;
}

inline LabeledDataset load_features(const std::string& path, int* classes_out = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kInvalidArgument, "cannot open feature file " + path);
  LabeledDataset data = read_features(in, classes_out);
  data.info.name = path;
  return data;
}

}  // namespace gfsdro
