#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gfsdro/datasets.hpp"
#include "gfsdro/driver.hpp"
#include "gfsdro/error.hpp"
#include "gfsdro/eval.hpp"
#include "gfsdro/problem.hpp"
#include "gfsdro/samplers.hpp"

namespace gfsdro {

enum class ExperimentKind { kBiasedCircle, kTwoMoons, kInnerObjective, kFeatureRobustness, kUncertainLs, kSamplerOracle };

inline const char* to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kBiasedCircle: return "biased-circle";
    case ExperimentKind::kTwoMoons: return "two-moons";
    case ExperimentKind::kInnerObjective: return "inner-objective";
    case ExperimentKind::kFeatureRobustness: return "feature-robustness";
    case ExperimentKind::kUncertainLs: return "uncertain-ls";
    case ExperimentKind::kSamplerOracle: return "sampler-oracle";
  }
  return "unknown";
}

/// Training method: one of the inner samplers, or a sampler-free baseline.
struct Method {
  enum class Kind { kSampler, kSaa, kDual } kind = Kind::kSampler;
  SamplerMethod sampler = SamplerMethod::kWgfUla;

  std::string name() const {
    switch (kind) {
      case Kind::kSaa: return "saa";
      case Kind::kDual: return "dual";
      case Kind::kSampler: return to_string(sampler);
    }
    return "unknown";
  }

  static std::optional<Method> parse(const std::string& text) {
    if (text == "saa") return Method{Kind::kSaa, SamplerMethod::kWgfUla};
    if (text == "dual") return Method{Kind::kDual, SamplerMethod::kWgfUla};
    if (auto s = parse_sampler_method(text)) return Method{Kind::kSampler, *s};
    return std::nullopt;
  }

  bool operator==(const Method&) const = default;
};

/// Dataset construction knobs. Which ones matter depends on the experiment.
struct DatasetSpec {
  std::int64_t n = 200;
  std::int64_t n_test = 2000;
  double noise = 0.1;               // two-moons jitter
  double positive_fraction = 0.9;   // two-moons class balance
  std::int64_t d = 64;              // synthetic features
  std::int64_t classes = 10;
  double margin = 0.4;
  double feature_noise = 0.1;
  std::string path;                 // feature file (train); empty -> synthetic
  std::string test_path;
  std::vector<std::int64_t> hidden;  // mlp hidden widths; empty -> per-experiment default
  std::vector<double> shift_grid{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};  // uncertain-ls test shifts

  bool operator==(const DatasetSpec&) const = default;
};

struct InnerSpec {
  std::size_t record_every = 1;
  std::size_t pretrain_epochs = 100;
  double pretrain_stepsize = 0.05;

  bool operator==(const InnerSpec&) const = default;
};

struct OracleSpec {
  std::vector<double> a{1.0, 0.0};
  std::vector<double> anchor{0.0, 0.0};

  bool operator==(const OracleSpec&) const = default;
};

/// Everything needed to reproduce one experiment run.
struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::kSamplerOracle;
  Method method;
  std::uint64_t seed = 0;
  std::string output = "out";
  RobustnessParams params;
  SamplerConfig sampler;
  OuterLoopConfig outer;
  DatasetSpec dataset;
  AttackConfig attack;
  DualConfig dual;
  InnerSpec inner;
  OracleSpec oracle;

  bool operator==(const ExperimentSpec&) const = default;

  /// Seed for held-out data.
  std::uint64_t test_seed() const { return seed + 1000003ULL; }
};

/// Parse/validation failure carrying every problem found.
class SpecError : public Error {
 public:
  explicit SpecError(std::vector<std::string> errors)
      : Error(ErrorKind::kInvalidConfig, join(errors)), errors_(std::move(errors)) {}

  const std::vector<std::string>& errors() const { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& errors) {
    std::string out;
    for (const auto& e : errors) out += (out.empty() ? "" : "; ") + e;
    return out;
  }
  std::vector<std::string> errors_;
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
  return std::string(s.substr(a, b - a));
}

inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return format_shortest(v);
}

inline bool parse_double(const std::string& text, double& out) {
  if (text == "inf") {
    out = std::numeric_limits<double>::infinity();
    return true;
  }
  const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc() && res.ptr == text.data() + text.size() && !std::isnan(out);
}

template <typename Int>
bool parse_int(const std::string& text, Int& out) {
  const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  if (trim(text).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = text.find(',', start);
    out.push_back(trim(std::string_view(text).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// One schema entry: how to read a value into the spec and write it back.
struct Field {
  std::function<std::optional<std::string>(ExperimentSpec&, const std::string&)> read;  // returns error text
  std::function<std::string(const ExperimentSpec&)> write;
};

using Schema = std::vector<std::pair<std::string, Field>>;  // ordered "section.key" -> field

template <typename T>
Field real_field(T ExperimentSpec::*section, double T::*member) {
  return {[=](ExperimentSpec& s, const std::string& v) -> std::optional<std::string> {
            if (!parse_double(v, s.*section.*member)) return "expected a number, got '" + v + "'";
            return std::nullopt;
          },
          [=](const ExperimentSpec& s) { return format_double(s.*section.*member); }};
}

template <typename T, typename Int>
Field int_field(T ExperimentSpec::*section, Int T::*member) {
  return {[=](ExperimentSpec& s, const std::string& v) -> std::optional<std::string> {
            if (!parse_int(v, s.*section.*member)) return "expected a non-negative integer, got '" + v + "'";
            return std::nullopt;
          },
          [=](const ExperimentSpec& s) { return std::to_string(s.*section.*member); }};
}

template <typename T>
Field string_field(T ExperimentSpec::*section, std::string T::*member) {
  return {[=](ExperimentSpec& s, const std::string& v) -> std::optional<std::string> {
            s.*section.*member = v;
            return std::nullopt;
          },
          [=](const ExperimentSpec& s) { return s.*section.*member; }};
}

template <typename T, typename Elem>
Field list_field(T ExperimentSpec::*section, std::vector<Elem> T::*member) {
  return {[=](ExperimentSpec& s, const std::string& v) -> std::optional<std::string> {
            std::vector<Elem> out;
            for (const auto& item : split_list(v)) {
              Elem e{};
              bool ok = false;
              if constexpr (std::is_floating_point_v<Elem>) {
                ok = parse_double(item, e);
              } else {
                ok = parse_int(item, e);
              }
              if (!ok) return "bad list element '" + item + "'";
              out.push_back(e);
            }
            s.*section.*member = std::move(out);
            return std::nullopt;
          },
          [=](const ExperimentSpec& s) {
            std::string out;
            for (const auto& e : s.*section.*member) {
              if (!out.empty()) out += ", ";
              if constexpr (std::is_floating_point_v<Elem>) {
                out += format_double(e);
              } else {
                out += std::to_string(e);
              }
            }
            return out;
          }};
}

inline const Schema& schema() {
  static const Schema table = [] {
    Schema t;
    t.emplace_back("experiment.kind",
                   Field{[](ExperimentSpec& s, const std::string& v) -> std::optional<std::string> {
                           for (auto k : {ExperimentKind::kBiasedCircle, ExperimentKind::kTwoMoons,
                                          ExperimentKind::kInnerObjective, ExperimentKind::kFeatureRobustness,
                                          ExperimentKind::kUncertainLs, ExperimentKind::kSamplerOracle}) {
                             if (v == to_string(k)) {
                               s.kind = k;
                               return std::nullopt;
                             }
                           }
                           return "unknown experiment '" + v + "'";
                         },
                         [](const ExperimentSpec& s) { return std::string(to_string(s.kind)); }});
    t.emplace_back("experiment.method",
                   Field{[](ExperimentSpec& s, const std::string& v) -> std::optional<std::string> {
                           if (auto m = Method::parse(v)) {
                             s.method = *m;
                             if (m->kind == Method::Kind::kSampler) s.sampler.method = m->sampler;
                             return std::nullopt;
                           }
                           return "unknown method '" + v + "' (wgf-ula, wfr, svgd, rgo, wrm, saa, dual)";
                         },
                         [](const ExperimentSpec& s) { return s.method.name(); }});
    t.emplace_back("experiment.seed", Field{[](ExperimentSpec& s, const std::string& v) -> std::optional<std::string> {
                                              if (!parse_int(v, s.seed)) return "expected an unsigned integer";
                                              return std::nullopt;
                                            },
                                            [](const ExperimentSpec& s) { return std::to_string(s.seed); }});
    t.emplace_back("experiment.output", Field{[](ExperimentSpec& s, const std::string& v) -> std::optional<std::string> {
                                                s.output = v;
                                                return std::nullopt;
                                              },
                                              [](const ExperimentSpec& s) { return s.output; }});

    t.emplace_back("params.tau", real_field(&ExperimentSpec::params, &RobustnessParams::tau));
    t.emplace_back("params.epsilon", real_field(&ExperimentSpec::params, &RobustnessParams::epsilon));

    t.emplace_back("sampler.eta", real_field(&ExperimentSpec::sampler, &SamplerConfig::eta));
    t.emplace_back("sampler.eta_w", real_field(&ExperimentSpec::sampler, &SamplerConfig::eta_w));
    t.emplace_back("sampler.w_min", real_field(&ExperimentSpec::sampler, &SamplerConfig::w_min));
    t.emplace_back("sampler.steps", int_field(&ExperimentSpec::sampler, &SamplerConfig::steps));
    t.emplace_back("sampler.m", int_field(&ExperimentSpec::sampler, &SamplerConfig::particles));
    t.emplace_back("sampler.sigma_init", real_field(&ExperimentSpec::sampler, &SamplerConfig::sigma_init));
    t.emplace_back("sampler.L", real_field(&ExperimentSpec::sampler, &SamplerConfig::smoothness_L));
    t.emplace_back("sampler.kernel",
                   Field{[](ExperimentSpec& s, const std::string& v) -> std::optional<std::string> {
                           if (v == "median") {
                             s.sampler.kernel.fixed_bandwidth = 0.0;
                             return std::nullopt;
                           }
                           double h = 0.0;
                           if (v.rfind("fixed(", 0) == 0 && v.back() == ')' &&
                               parse_double(v.substr(6, v.size() - 7), h) && h > 0.0) {
                             s.sampler.kernel.fixed_bandwidth = h;
                             return std::nullopt;
                           }
                           return "expected 'median' or 'fixed(<h > 0>)', got '" + v + "'";
                         },
                         [](const ExperimentSpec& s) {
                           return s.sampler.kernel.uses_median()
                                      ? std::string("median")
                                      : "fixed(" + format_double(s.sampler.kernel.fixed_bandwidth) + ")";
                         }});
    t.emplace_back("sampler.rgo_max_trials", int_field(&ExperimentSpec::sampler, &SamplerConfig::rgo_max_trials));
    t.emplace_back("sampler.rgo_max_iters", int_field(&ExperimentSpec::sampler, &SamplerConfig::rgo_max_iters));
    t.emplace_back("sampler.rgo_tolerance", real_field(&ExperimentSpec::sampler, &SamplerConfig::rgo_tolerance));
    t.emplace_back("sampler.rgo_unconverged",
                   Field{[](ExperimentSpec& s, const std::string& v) -> std::optional<std::string> {
                           if (v == "error") s.sampler.rgo_accept_unconverged = false;
                           else if (v == "best-iterate") s.sampler.rgo_accept_unconverged = true;
                           else return "expected 'error' or 'best-iterate'";
                           return std::nullopt;
                         },
                         [](const ExperimentSpec& s) {
                           return std::string(s.sampler.rgo_accept_unconverged ? "best-iterate" : "error");
                         }});

    t.emplace_back("outer.epochs", int_field(&ExperimentSpec::outer, &OuterLoopConfig::epochs));
    t.emplace_back("outer.steps", int_field(&ExperimentSpec::outer, &OuterLoopConfig::steps));
    t.emplace_back("outer.stepsize", real_field(&ExperimentSpec::outer, &OuterLoopConfig::stepsize));
    t.emplace_back("outer.schedule",
                   Field{[](ExperimentSpec& s, const std::string& v) -> std::optional<std::string> {
                           if (v == "constant") s.outer.schedule = StepSchedule::kConstant;
                           else if (v == "inverse-sqrt") s.outer.schedule = StepSchedule::kInverseSqrt;
                           else return "expected 'constant' or 'inverse-sqrt'";
                           return std::nullopt;
                         },
                         [](const ExperimentSpec& s) {
                           return std::string(s.outer.schedule == StepSchedule::kConstant ? "constant" : "inverse-sqrt");
                         }});
    t.emplace_back("outer.batch", int_field(&ExperimentSpec::outer, &OuterLoopConfig::batch));
    t.emplace_back("outer.projection",
                   Field{[](ExperimentSpec& s, const std::string& v) -> std::optional<std::string> {
                           if (v == "identity") {
                             s.outer.projection = Projection::identity();
                             return std::nullopt;
                           }
                           double r = 0.0;
                           if (v.rfind("l2-ball(", 0) == 0 && v.back() == ')' &&
                               parse_double(v.substr(8, v.size() - 9), r)) {
                             s.outer.projection = Projection::l2_ball(r);
                             return std::nullopt;
                           }
                           return "expected 'identity' or 'l2-ball(<R>)', got '" + v + "'";
                         },
                         [](const ExperimentSpec& s) {
                           return s.outer.projection.is_identity()
                                      ? std::string("identity")
                                      : "l2-ball(" + format_double(s.outer.projection.radius) + ")";
                         }});

    t.emplace_back("dataset.n", int_field(&ExperimentSpec::dataset, &DatasetSpec::n));
    t.emplace_back("dataset.n_test", int_field(&ExperimentSpec::dataset, &DatasetSpec::n_test));
    t.emplace_back("dataset.noise", real_field(&ExperimentSpec::dataset, &DatasetSpec::noise));
    t.emplace_back("dataset.positive_fraction", real_field(&ExperimentSpec::dataset, &DatasetSpec::positive_fraction));
    t.emplace_back("dataset.d", int_field(&ExperimentSpec::dataset, &DatasetSpec::d));
    t.emplace_back("dataset.classes", int_field(&ExperimentSpec::dataset, &DatasetSpec::classes));
    t.emplace_back("dataset.margin", real_field(&ExperimentSpec::dataset, &DatasetSpec::margin));
    t.emplace_back("dataset.feature_noise", real_field(&ExperimentSpec::dataset, &DatasetSpec::feature_noise));
    t.emplace_back("dataset.path", string_field(&ExperimentSpec::dataset, &DatasetSpec::path));
    t.emplace_back("dataset.test_path", string_field(&ExperimentSpec::dataset, &DatasetSpec::test_path));
    t.emplace_back("dataset.hidden", list_field(&ExperimentSpec::dataset, &DatasetSpec::hidden));
    t.emplace_back("dataset.shift_grid", list_field(&ExperimentSpec::dataset, &DatasetSpec::shift_grid));

    t.emplace_back("attack.delta", list_field(&ExperimentSpec::attack, &AttackConfig::delta_grid));
    t.emplace_back("attack.steps", int_field(&ExperimentSpec::attack, &AttackConfig::steps));
    t.emplace_back("attack.step_scale", real_field(&ExperimentSpec::attack, &AttackConfig::step_scale));

    t.emplace_back("dual.radius", real_field(&ExperimentSpec::dual, &DualConfig::radius_r));
    t.emplace_back("dual.n_inner", int_field(&ExperimentSpec::dual, &DualConfig::n_inner));
    t.emplace_back("dual.search_anchors", int_field(&ExperimentSpec::dual, &DualConfig::search_anchors));
    t.emplace_back("dual.tau_lo", real_field(&ExperimentSpec::dual, &DualConfig::tau_lo));
    t.emplace_back("dual.tau_hi", real_field(&ExperimentSpec::dual, &DualConfig::tau_hi));
    t.emplace_back("dual.search_iters", int_field(&ExperimentSpec::dual, &DualConfig::search_iters));

    t.emplace_back("inner.record_every", int_field(&ExperimentSpec::inner, &InnerSpec::record_every));
    t.emplace_back("inner.pretrain_epochs", int_field(&ExperimentSpec::inner, &InnerSpec::pretrain_epochs));
    t.emplace_back("inner.pretrain_stepsize", real_field(&ExperimentSpec::inner, &InnerSpec::pretrain_stepsize));

    t.emplace_back("oracle.a", list_field(&ExperimentSpec::oracle, &OracleSpec::a));
    t.emplace_back("oracle.anchor", list_field(&ExperimentSpec::oracle, &OracleSpec::anchor));
    return t;
  }();
  return table;
}

inline const Field* find_field(const std::string& key) {
  for (const auto& [name, field] : schema()) {
    if (name == key) return &field;
  }
  return nullptr;
}

}  // namespace config_detail

/// Semantic checks with key paths. Returns every problem found.
inline std::vector<std::string> check_spec(const ExperimentSpec& s) {
  std::vector<std::string> errs;
  const auto need = [&](bool ok, std::string msg) {
    if (!ok) errs.push_back(std::move(msg));
  };
  const auto& p = s.params;
  need(p.tau > 0.0 && std::isfinite(p.tau), "params.tau must be > 0");
  need(p.epsilon >= 0.0 && std::isfinite(p.epsilon), "params.epsilon must be >= 0");

  const bool sampler_run = s.method.kind == Method::Kind::kSampler;
  if (s.kind == ExperimentKind::kInnerObjective || s.kind == ExperimentKind::kSamplerOracle) {
    need(sampler_run, "experiment.method: " + std::string(to_string(s.kind)) + " needs an inner sampler method");
  }
  if (sampler_run) {
    const auto& c = s.sampler;
    need(c.eta > 0.0 && std::isfinite(c.eta), "sampler.eta must be > 0");
    need(c.particles >= 1, "sampler.m must be >= 1");
    if (c.method == SamplerMethod::kWfr) {
      need(c.eta_w >= 0.0, "sampler.eta_w must be >= 0");
      need(c.w_min >= 0.0 && c.w_min <= 1.0 / static_cast<double>(std::max<Eigen::Index>(c.particles, 1)),
           "sampler.w_min must lie in [0, 1/m]");
      need(p.epsilon * c.eta_w / (2.0 * p.tau) < 1.0, "sampler.eta_w: epsilon*eta_w/(2*tau) must be < 1");
    }
    if (c.method == SamplerMethod::kSvgd) {
      need(p.epsilon > 0.0, "params.epsilon: svgd needs epsilon > 0 (the score scale 2*tau/epsilon is undefined)");
      need(c.sigma_init >= 0.0, "sampler.sigma_init must be >= 0");
    }
    if (c.method == SamplerMethod::kRgo) {
      need(p.epsilon > 0.0, "params.epsilon: rgo needs epsilon > 0");
      need(c.smoothness_L >= 0.0, "sampler.L must be >= 0");
      need(c.smoothness_L * p.tau < 1.0, "sampler.L: rgo needs L*tau < 1");
      need(c.rgo_max_trials >= 1 && c.rgo_max_iters >= 1, "sampler.rgo_max_trials and rgo_max_iters must be >= 1");
    }
  }
  if (s.method.kind == Method::Kind::kDual) {
    need(p.epsilon > 0.0, "params.epsilon: dual needs epsilon > 0");
    need(s.dual.radius_r > 0.0, "dual.radius must be > 0");
    need(s.dual.n_inner >= 2, "dual.n_inner must be >= 2");
    need(s.dual.tau_lo > 0.0 && s.dual.tau_hi > s.dual.tau_lo, "dual.tau_lo/tau_hi must satisfy 0 < lo < hi");
    need(s.dual.search_anchors >= 1, "dual.search_anchors must be >= 1");
  }

  const bool trains = s.kind != ExperimentKind::kInnerObjective && s.kind != ExperimentKind::kSamplerOracle;
  if (trains) {
    need(s.outer.stepsize >= 0.0 && std::isfinite(s.outer.stepsize), "outer.stepsize must be >= 0");
    need(s.outer.batch >= 1, "outer.batch must be >= 1");
  }
  need(s.outer.projection.radius > 0.0, "outer.projection radius must be > 0");

  const auto& d = s.dataset;
  need(d.n >= 1, "dataset.n must be >= 1");
  need(d.n_test >= 1, "dataset.n_test must be >= 1");
  for (auto h : d.hidden) need(h >= 1, "dataset.hidden widths must be >= 1");
  switch (s.kind) {
    case ExperimentKind::kTwoMoons:
    case ExperimentKind::kInnerObjective:
      need(d.n >= 2, "dataset.n must be >= 2 for two moons");
      need(d.positive_fraction > 0.0 && d.positive_fraction < 1.0, "dataset.positive_fraction must lie in (0, 1)");
      need(d.noise >= 0.0, "dataset.noise must be >= 0");
      break;
    case ExperimentKind::kFeatureRobustness:
      if (d.path.empty()) {
        need(d.classes >= 2, "dataset.classes must be >= 2");
        need(d.classes <= d.d, "dataset.classes must be <= dataset.d");
        need(d.margin >= 0.0 && d.feature_noise >= 0.0, "dataset.margin and dataset.feature_noise must be >= 0");
      } else {
        need(!d.test_path.empty(), "dataset.test_path is required when dataset.path is set");
      }
      need(s.attack.steps >= 1, "attack.steps must be >= 1");
      need(s.attack.step_scale > 0.0, "attack.step_scale must be > 0");
      need(!s.attack.delta_grid.empty(), "attack.delta must not be empty");
      for (double v : s.attack.delta_grid) need(v >= 0.0, "attack.delta values must be >= 0");
      break;
    case ExperimentKind::kUncertainLs:
      need(!d.shift_grid.empty(), "dataset.shift_grid must not be empty");
      for (double v : d.shift_grid) need(v >= 0.0, "dataset.shift_grid values must be >= 0");
      break;
    case ExperimentKind::kSamplerOracle:
      need(!s.oracle.a.empty(), "oracle.a must not be empty");
      need(s.oracle.a.size() == s.oracle.anchor.size(), "oracle.anchor must have the same length as oracle.a");
      break;
    default:
      break;
  }
  if (s.kind == ExperimentKind::kInnerObjective) need(s.inner.record_every >= 1, "inner.record_every must be >= 1");
  return errs;
}

struct ValidationResult {
  std::optional<ExperimentSpec> spec;
  std::vector<std::string> errors;

  bool ok() const { return spec.has_value(); }
};

/// Strict parse of the `[section]` / `key = value` format. Unknown sections
/// or keys, duplicates, and missing required keys (experiment.kind,
/// experiment.method, params.tau, params.epsilon) are errors.
inline ValidationResult validate_spec(std::string_view text) {
  ExperimentSpec spec;
  std::vector<std::string> errs;
  std::set<std::string> seen;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') {
        errs.push_back(where + "malformed section header");
        continue;
      }
      section = config_detail::trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errs.push_back(where + "expected 'key = value'");
      continue;
    }
    const std::string key = section + "." + config_detail::trim(std::string_view(line).substr(0, eq));
    const std::string value = config_detail::trim(std::string_view(line).substr(eq + 1));
    const auto* field = config_detail::find_field(key);
    if (field == nullptr) {
      errs.push_back(key + ": unknown key");
      continue;
    }
    if (!seen.insert(key).second) {
      errs.push_back(key + ": duplicate key");
      continue;
    }
    if (auto err = field->read(spec, value)) errs.push_back(key + ": " + *err);
  }
  for (const char* required : {"experiment.kind", "experiment.method", "params.tau", "params.epsilon"}) {
    if (!seen.count(required)) errs.push_back(std::string(required) + ": required key is missing");
  }
  for (auto& e : check_spec(spec)) errs.push_back(std::move(e));
  ValidationResult result;
  if (errs.empty()) {
    result.spec = std::move(spec);
  } else {
    result.errors = std::move(errs);
  }
  return result;
}

/// Parses and validates or throws SpecError.
inline ExperimentSpec parse_spec(std::string_view text) {
  ValidationResult r = validate_spec(text);
  if (!r.ok()) throw SpecError(std::move(r.errors));
  return std::move(*r.spec);
}

/// Canonical form: every key in schema order, defaults filled in.
inline std::string serialize_spec(const ExperimentSpec& spec) {
  std::ostringstream out;
  std::string current;
  for (const auto& [key, field] : config_detail::schema()) {
    const std::string section = key.substr(0, key.find('.'));
    if (section != current) {
      if (!current.empty()) out << '\n';
      out << '[' << section << "]\n";
      current = section;
    }
    out << key.substr(key.find('.') + 1) << " = " << field.write(spec) << '\n';
  }
  return out.str();
}

}  // namespace gfsdro
