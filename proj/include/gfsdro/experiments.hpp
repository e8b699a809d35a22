#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "gfsdro/config.hpp"
#include "gfsdro/datasets.hpp"
#include "gfsdro/driver.hpp"
#include "gfsdro/eval.hpp"
#include "gfsdro/loss.hpp"
#include "gfsdro/parallel.hpp"
#include "gfsdro/samplers.hpp"

namespace gfsdro {

using Cell = std::variant<double, std::string>;

/// A CSV table. Numbers print with 9 significant digits.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row) {
    require(row.size() == columns.size(), ErrorKind::kInvalidArgument, "row width does not match the header");
    rows.push_back(std::move(row));
  }

  std::size_t column_index(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    require(it != columns.end(), ErrorKind::kInvalidArgument, "no column '" + name + "'");
    return static_cast<std::size_t>(it - columns.begin());
  }

  std::vector<double> numbers(const std::string& name) const {
    const std::size_t c = column_index(name);
    std::vector<double> out;
    for (const auto& row : rows) {
      const double* v = std::get_if<double>(&row[c]);
      require(v != nullptr, ErrorKind::kInvalidArgument, "column '" + name + "' is not numeric");
      out.push_back(*v);
    }
    return out;
  }

  static std::string format(const Cell& cell) {
    if (const auto* s = std::get_if<std::string>(&cell)) return *s;
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", std::get<double>(cell));
    return buf;
  }

  std::string csv() const {
    std::string out;
    for (std::size_t c = 0; c < columns.size(); ++c) out += (c ? "," : "") + columns[c];
    out += '\n';
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) out += (c ? "," : "") + format(row[c]);
      out += '\n';
    }
    return out;
  }
};

/// Everything a run produces. `tables` maps file names to tables; the
/// timestamp and wall clock live only in the metadata sidecar.
struct RunArtifact {
  ExperimentSpec spec;
  std::string config_echo;
  std::map<std::string, Table> tables;
  double wall_clock_seconds = 0.0;
  std::string started_at;

  const Table& table(const std::string& name) const {
    const auto it = tables.find(name);
    require(it != tables.end(), ErrorKind::kInvalidArgument, "run produced no " + name);
    return it->second;
  }

  std::string metadata_json() const {
    std::string out = "{\n";
    out += "  \"experiment\": \"" + std::string(to_string(spec.kind)) + "\",\n";
    out += "  \"method\": \"" + spec.method.name() + "\",\n";
    out += "  \"seed\": " + std::to_string(spec.seed) + ",\n";
    out += "  \"started_at\": \"" + started_at + "\",\n";
    out += "  \"wall_clock_seconds\": " + Table::format(wall_clock_seconds) + ",\n";
    out += "  \"threads\": " + std::to_string(configured_threads()) + ",\n";
    out += "  \"pgd\": {\"steps\": " + std::to_string(spec.attack.steps) +
           ", \"step_scale\": " + Table::format(spec.attack.step_scale) + ", \"random_start\": false}\n";
    out += "}\n";
    return out;
  }
};

/// Writes config.ini, every table, and metadata.json into `dir`.
inline void write_artifact(const RunArtifact& artifact, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto put = [&](const std::string& name, const std::string& body) {
    std::ofstream out(dir / name, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::kInvalidArgument, "cannot write " + (dir / name).string());
    out << body;
  };
  put("config.ini", artifact.config_echo);
  for (const auto& [name, table] : artifact.tables) put(name, table.csv());
  put("metadata.json", artifact.metadata_json());
}

namespace experiment_detail {

inline std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::vector<int> mlp_widths(Eigen::Index input, const std::vector<std::int64_t>& hidden,
                                   std::vector<std::int64_t> fallback) {
  std::vector<int> widths{static_cast<int>(input)};
  for (auto h : hidden.empty() ? fallback : hidden) widths.push_back(static_cast<int>(h));
  widths.push_back(1);
  return widths;
}

// Long-form theta per epoch.
inline Table checkpoint_table(const std::vector<Vector>& thetas, std::size_t first_epoch = 1) {
  Table t{{"epoch", "index", "value"}, {}};
  for (std::size_t e = 0; e < thetas.size(); ++e) {
    for (Eigen::Index k = 0; k < thetas[e].size(); ++k) {
      t.add({static_cast<double>(e + first_epoch), static_cast<double>(k), thetas[e][k]});
    }
  }
  return t;
}

// Per-epoch sum of Q1 weight and cloud count.
struct QuadrantTally {
  std::vector<double> mass;
  std::vector<double> clouds;

  void add(std::size_t epoch, const std::vector<ParticleCloud>& batch) {
    if (mass.size() <= epoch) {
      mass.resize(epoch + 1, 0.0);
      clouds.resize(epoch + 1, 0.0);
    }
    mass[epoch] += quadrant_fraction(batch) * static_cast<double>(batch.size());
    clouds[epoch] += static_cast<double>(batch.size());
  }
};

inline TrainReport train_with(const ExperimentSpec& spec, const std::shared_ptr<const LossModel>& loss, CostKind cost,
                              const LabeledDataset& data, const StepObserver& observer = {}) {
  switch (spec.method.kind) {
    case Method::Kind::kSaa:
      return saa_train(*loss, data, spec.outer, spec.seed);
    case Method::Kind::kDual:
      return dual_train(RobustProblem(loss, cost, spec.params), data, spec.dual, spec.outer, spec.seed);
    case Method::Kind::kSampler:
      break;
  }
  return train(RobustProblem(loss, cost, spec.params), data, spec.sampler, spec.outer, spec.seed, std::nullopt,
               observer);
}

inline void classification_run(const ExperimentSpec& spec, RunArtifact& art) {
  const bool circle = spec.kind == ExperimentKind::kBiasedCircle;
  const auto& ds = spec.dataset;
  const LabeledDataset train_set =
      circle ? to_binary01(gen_biased_circle(ds.n, spec.seed))
             : gen_two_moons(ds.n, ds.noise, ds.positive_fraction, spec.seed);
  const LabeledDataset test_set =
      circle ? to_binary01(gen_circle(ds.n_test, spec.test_seed(), false))
             : gen_two_moons(ds.n_test, ds.noise, ds.positive_fraction, spec.test_seed());
  auto mlp = std::make_shared<MlpBce>(mlp_widths(2, ds.hidden, circle ? std::vector<std::int64_t>{4}
                                                                       : std::vector<std::int64_t>{16, 16}));
  QuadrantTally tally;
  const StepObserver observer =
      circle ? StepObserver([&](std::size_t, std::size_t epoch, const std::vector<ParticleCloud>& c) { tally.add(epoch, c); })
             : StepObserver{};
  const TrainReport report = train_with(spec, mlp, CostKind::kSquaredEuclideanFixedLabel, train_set, observer);

  Table acc{{"epoch", "train_accuracy", "test_accuracy"}, {}};
  for (std::size_t e = 0; e < report.epoch_thetas.size(); ++e) {
    acc.add({static_cast<double>(e + 1), 1.0 - misclassification_rate(*mlp, report.epoch_thetas[e], train_set),
             1.0 - misclassification_rate(*mlp, report.epoch_thetas[e], test_set)});
  }
  art.tables["accuracy.csv"] = std::move(acc);
  if (circle && !tally.mass.empty()) {
    Table wc{{"epoch", "quadrant_fraction"}, {}};
    for (std::size_t e = 0; e < tally.mass.size(); ++e) {
      wc.add({static_cast<double>(e + 1), tally.mass[e] / tally.clouds[e]});
    }
    art.tables["worst_case.csv"] = std::move(wc);
  }
  art.tables["theta_checkpoints.csv"] = checkpoint_table(report.epoch_thetas);
}

inline void inner_objective_run(const ExperimentSpec& spec, RunArtifact& art) {
  const auto& ds = spec.dataset;
  const LabeledDataset data = gen_two_moons(ds.n, ds.noise, ds.positive_fraction, spec.seed);
  auto mlp = std::make_shared<MlpBce>(mlp_widths(2, ds.hidden, {16, 16}));
  OuterLoopConfig pre = spec.outer;
  pre.epochs = spec.inner.pretrain_epochs;
  pre.steps = 0;
  pre.stepsize = spec.inner.pretrain_stepsize;
  RngStream init(spec.seed, {detail::kInitStream});
  const Vector theta = pre.epochs > 0 ? saa_train(*mlp, data, pre, spec.seed).theta : mlp->initial_params(init);
  const RobustProblem problem(mlp, CostKind::kSquaredEuclideanFixedLabel, spec.params);
  const InnerCurve curve = inner_objective_curve(problem, theta, data, spec.sampler, spec.inner.record_every, spec.seed);
  Table t{{"method", "iteration", "expected_tilted_potential"}, {}};
  for (std::size_t k = 0; k < curve.values.size(); ++k) {
    t.add({curve.method, static_cast<double>(curve.iterations[k]), curve.values[k]});
  }
  art.tables["inner_objective.csv"] = std::move(t);
  art.tables["theta_checkpoints.csv"] = checkpoint_table({theta}, 0);
}

inline void feature_run(const ExperimentSpec& spec, RunArtifact& art) {
  const auto& ds = spec.dataset;
  LabeledDataset train_set;
  LabeledDataset test_set;
  int classes = static_cast<int>(ds.classes);
  if (!ds.path.empty()) {
    train_set = load_features(ds.path, &classes);
    int test_classes = 0;
    test_set = load_features(ds.test_path, &test_classes);
    require(test_classes == classes && test_set.dim() == train_set.dim(), ErrorKind::kInvalidArgument,
            "train and test feature files disagree on shape");
  } else {
    train_set = gen_synthetic_features(ds.n, ds.d, classes, ds.margin, spec.seed, ds.feature_noise);
    test_set = gen_synthetic_features(ds.n_test, ds.d, classes, ds.margin, spec.test_seed(), ds.feature_noise);
  }
  auto model = std::make_shared<SoftmaxLogistic>(train_set.dim(), classes);
  const TrainReport report = train_with(spec, model, CostKind::kSquaredEuclideanFixedLabel, train_set);
  const std::vector<double> errors = robustness_curve(*model, report.theta, test_set, spec.attack);
  const double scale = mean_l2_norm(test_set.features);
  Table t{{"delta", "radius", "error_rate"}, {}};
  for (std::size_t k = 0; k < errors.size(); ++k) {
    t.add({spec.attack.delta_grid[k], spec.attack.delta_grid[k] * scale, errors[k]});
  }
  art.tables["robustness_curve.csv"] = std::move(t);
  art.tables["theta_checkpoints.csv"] = checkpoint_table(report.epoch_thetas);
}

inline void uncertain_ls_run(const ExperimentSpec& spec, RunArtifact& art) {
  const auto& ds = spec.dataset;
  const UncertainLsInstance inst = gen_uncertain_ls(spec.seed, ds.n, ds.d);
  auto loss = std::make_shared<UncertainLeastSquares>(inst.a0, inst.a1, inst.b);
  const TrainReport report = train_with(spec, loss, CostKind::kSquaredEuclidean, inst.train_set());
  Table t{{"delta", "test_loss"}, {}};
  for (double delta : ds.shift_grid) {
    const Vector xi = inst.test_xi(delta, ds.n_test, spec.test_seed());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < xi.size(); ++i) acc += loss->value(report.theta, LabeledPoint{Vector::Constant(1, xi[i]), 0.0});
    t.add({delta, acc / static_cast<double>(xi.size())});
  }
  art.tables["robustness_curve.csv"] = std::move(t);
  art.tables["theta_checkpoints.csv"] = checkpoint_table(report.epoch_thetas);
}

// Linear loss l(theta, y) = a.y; the worst case is N(anchor + tau a, eps/2 I).
inline void sampler_oracle_run(const ExperimentSpec& spec, RunArtifact& art) {
  const auto d = static_cast<Eigen::Index>(spec.oracle.a.size());
  const Vector a = Eigen::Map<const Vector>(spec.oracle.a.data(), d);
  const Vector anchor = Eigen::Map<const Vector>(spec.oracle.anchor.data(), d);
  const RobustProblem problem(std::make_shared<LinearLoss>(d), CostKind::kSquaredEuclidean, spec.params);
  SamplerStats stats;
  const ParticleCloud cloud = sample_worst_case(problem, a, LabeledPoint{anchor, 0.0}, spec.sampler,
                                                RngStream(spec.seed, {0}), {}, &stats);
  const Vector mean = cloud.weighted_mean();
  const Vector oracle_mean = anchor + spec.params.tau * a;
  const double acceptance = stats.rgo_trials > 0 ? static_cast<double>(stats.rgo_accepted) / static_cast<double>(stats.rgo_trials)
                                                 : std::numeric_limits<double>::quiet_NaN();
  Table t{{"coordinate", "empirical_mean", "oracle_mean", "empirical_variance", "oracle_variance", "acceptance_rate"}, {}};
  for (Eigen::Index k = 0; k < d; ++k) {
    double var = 0.0;
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
      const double dev = cloud.position(i)[k] - mean[k];
      var += cloud.weights()[i] * dev * dev;
    }
    t.add({static_cast<double>(k), mean[k], oracle_mean[k], var, spec.params.epsilon / 2.0, acceptance});
  }
  art.tables["sampler_oracle.csv"] = std::move(t);
}

}  // namespace experiment_detail

/// Builds the dataset, trains or samples, evaluates, and returns the tables.
inline RunArtifact run_experiment(const ExperimentSpec& spec) {
  if (const auto errs = check_spec(spec); !errs.empty()) throw SpecError(errs);
  RunArtifact art;
  art.spec = spec;
  art.config_echo = serialize_spec(spec);
  art.started_at = experiment_detail::utc_now();
  const auto start = std::chrono::steady_clock::now();
  switch (spec.kind) {
    case ExperimentKind::kBiasedCircle:
    case ExperimentKind::kTwoMoons:
      experiment_detail::classification_run(spec, art);
      break;
    case ExperimentKind::kInnerObjective:
      experiment_detail::inner_objective_run(spec, art);
      break;
    case ExperimentKind::kFeatureRobustness:
      experiment_detail::feature_run(spec, art);
      break;
    case ExperimentKind::kUncertainLs:
      experiment_detail::uncertain_ls_run(spec, art);
      break;
    case ExperimentKind::kSamplerOracle:
      experiment_detail::sampler_oracle_run(spec, art);
      break;
  }
  art.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return art;
}

/// The (table, key column, value column) a comparison reads for each kind.
struct ComparisonView {
  std::string table;
  std::string key;
  std::string value;
};

inline ComparisonView comparison_view(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kBiasedCircle:
    case ExperimentKind::kTwoMoons: return {"accuracy.csv", "epoch", "test_accuracy"};
    case ExperimentKind::kInnerObjective: return {"inner_objective.csv", "iteration", "expected_tilted_potential"};
    case ExperimentKind::kFeatureRobustness: return {"robustness_curve.csv", "delta", "error_rate"};
    case ExperimentKind::kUncertainLs: return {"robustness_curve.csv", "delta", "test_loss"};
    case ExperimentKind::kSamplerOracle: return {"sampler_oracle.csv", "coordinate", "empirical_mean"};
  }
  return {};
}

/// Checks that runs are comparable: same experiment, dataset and seed.
inline void require_comparable(const std::vector<ExperimentSpec>& specs) {
  require(!specs.empty(), ErrorKind::kInvalidArgument, "compare needs at least one spec");
  for (const auto& s : specs) {
    require(s.kind == specs.front().kind, ErrorKind::kInvalidArgument, "compared specs run different experiments");
    require(s.seed == specs.front().seed, ErrorKind::kInvalidArgument, "compared specs use different seeds");
    require(s.dataset == specs.front().dataset, ErrorKind::kInvalidArgument, "compared specs use different datasets");
  }
}

/// Wide table: one row per key value (union over runs, ascending), one
/// column per method. Repeated method names get a _2, _3 ... suffix; missing
/// cells are left empty.
inline Table compare_artifacts(const std::vector<RunArtifact>& runs) {
  std::vector<ExperimentSpec> specs;
  for (const auto& r : runs) specs.push_back(r.spec);
  require_comparable(specs);
  const ComparisonView view = comparison_view(specs.front().kind);
  Table out{{view.key}, {}};
  std::map<std::string, int> seen;
  std::vector<std::map<double, double>> columns;
  std::set<double> keys;
  for (const auto& r : runs) {
    const std::string name = r.spec.method.name();
    const int count = ++seen[name];
    out.columns.push_back(count == 1 ? name : name + "_" + std::to_string(count));
    const Table& t = r.table(view.table);
    const auto k = t.numbers(view.key);
    const auto v = t.numbers(view.value);
    std::map<double, double> col;
    for (std::size_t i = 0; i < k.size(); ++i) {
      col[k[i]] = v[i];
      keys.insert(k[i]);
    }
    columns.push_back(std::move(col));
  }
  for (double key : keys) {
    std::vector<Cell> row{key};
    for (const auto& col : columns) {
      const auto it = col.find(key);
      row.push_back(it == col.end() ? Cell{std::string()} : Cell{it->second});
    }
    out.add(std::move(row));
  }
  return out;
}

inline Table compare_methods(const std::vector<ExperimentSpec>& specs) {
  require_comparable(specs);
  std::vector<RunArtifact> runs;
  for (const auto& s : specs) runs.push_back(run_experiment(s));
  return compare_artifacts(runs);
}

}  // namespace gfsdro
