#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

#include <Eigen/Core>

namespace gfsdro {

namespace detail {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-based random stream.
///
/// A stream is identified by a seed plus a short tuple of integer ids, e.g.
/// (outer step, anchor slot, particle). Draw k of a stream is a pure function
/// of (seed, ids, k), so parallel and serial callers see the same numbers and
/// results do not depend on the host's standard library distributions.
class RngStream {
 public:
  RngStream() : RngStream(0, {}) {}

  RngStream(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
    std::uint64_t key = detail::mix64(seed + detail::kGoldenGamma);
    for (std::uint64_t id : ids) key = detail::mix64(key ^ detail::mix64(id + kIdOffset));
    key_ = key;
  }

  /// Derives an independent child stream.
  RngStream child(std::uint64_t id) const {
    RngStream out;
    out.key_ = detail::mix64(key_ ^ detail::mix64(id ^ 0xD1B54A32D192ED03ULL));
    return out;
  }

  std::uint64_t next_u64() {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGoldenGamma);
  }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Index in [0, n).
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

  /// Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double angle = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

  Eigen::VectorXd normal_vector(Eigen::Index d) {
    Eigen::VectorXd out(d);
    for (Eigen::Index k = 0; k < d; ++k) out[k] = normal();
    return out;
  }

  std::uint64_t draws() const { return counter_; }

 private:
  static constexpr std::uint64_t kIdOffset = 0x632BE59BD9B4E019ULL;

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace gfsdro
