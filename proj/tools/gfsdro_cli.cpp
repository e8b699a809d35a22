// gfsdro: run, compare and validate experiment specs; gradient and sampler self-checks.

#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gfsdro/experiments.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidationFailure = 1;
constexpr int kRuntimeFailure = 2;

struct SpecLoad {
  std::optional<gfsdro::ExperimentSpec> spec;
  std::vector<std::string> errors;
};

SpecLoad load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) return {std::nullopt, {path + ": cannot open"}};
  std::stringstream text;
  text << in.rdbuf();
  auto result = gfsdro::validate_spec(text.str());
  for (auto& e : result.errors) e = path + ": " + e;
  return {std::move(result.spec), std::move(result.errors)};
}

int report_errors(const std::vector<std::string>& errors) {
  for (const auto& e : errors) std::cerr << "error: " << e << '\n';
  return kValidationFailure;
}

int cmd_validate(const std::string& path) {
  const SpecLoad load = load_spec(path);
  if (!load.spec) return report_errors(load.errors);
  std::cout << gfsdro::serialize_spec(*load.spec);
  return kOk;
}

int cmd_run(const std::string& path, const std::string& out_dir) {
  const SpecLoad load = load_spec(path);
  if (!load.spec) return report_errors(load.errors);
  const gfsdro::RunArtifact art = gfsdro::run_experiment(*load.spec);
  const std::string dir = out_dir.empty() ? load.spec->output : out_dir;
  gfsdro::write_artifact(art, dir);
  std::cerr << "wrote " << art.tables.size() << " tables to " << dir << " in " << art.wall_clock_seconds << " s\n";
  return kOk;
}

int cmd_compare(const std::vector<std::string>& paths, const std::string& out_file) {
  std::vector<gfsdro::ExperimentSpec> specs;
  std::vector<std::string> errors;
  for (const auto& p : paths) {
    SpecLoad load = load_spec(p);
    if (load.spec) specs.push_back(std::move(*load.spec));
    errors.insert(errors.end(), load.errors.begin(), load.errors.end());
  }
  if (!errors.empty()) return report_errors(errors);
  try {
    gfsdro::require_comparable(specs);
  } catch (const gfsdro::Error& e) {
    return report_errors({e.what()});
  }
  const std::string csv = gfsdro::compare_methods(specs).csv();
  if (out_file.empty()) {
    std::cout << csv;
  } else {
    std::ofstream(out_file, std::ios::binary) << csv;
  }
  return kOk;
}

int cmd_gradcheck(std::size_t points, std::uint64_t seed, double tolerance) {
  using namespace gfsdro;
  Matrix a0 = Matrix::Identity(4, 4);
  Matrix a1 = Matrix::Constant(4, 4, 0.3);
  Vector b = Vector::LinSpaced(4, -1.0, 1.0);
  const std::vector<std::pair<std::string, std::shared_ptr<LossModel>>> models{
      {"mlp-bce", std::make_shared<MlpBce>(std::vector<int>{2, 16, 16, 1})},
      {"softmax-logistic", std::make_shared<SoftmaxLogistic>(8, 4)},
      {"uncertain-ls", std::make_shared<UncertainLeastSquares>(a0, a1, b)},
      {"linear", std::make_shared<LinearLoss>(3)},
  };
  bool ok = true;
  std::cout << "family,points,max_rel_err_theta,max_rel_err_input\n";
  for (const auto& [name, model] : models) {
    const FiniteDiffReport r = finite_diff_check(*model, points, seed);
    std::cout << name << ',' << r.points << ',' << Table::format(r.max_rel_err_theta) << ','
              << Table::format(r.max_rel_err_input) << '\n';
    ok = ok && r.max_rel_err_theta < tolerance && r.max_rel_err_input < tolerance;
  }
  return ok ? kOk : kRuntimeFailure;
}

// Linear loss a.y with a = (1, 0), tau = eps = 0.5: the worst case is N((0.5, 0), 0.25 I).
int cmd_oracle(std::uint64_t seed, Eigen::Index particles, std::size_t steps) {
  using namespace gfsdro;
  bool ok = true;
  std::cout << "method,coordinate,empirical_mean,oracle_mean,empirical_variance,oracle_variance,acceptance_rate\n";
  for (const auto method : {SamplerMethod::kWgfUla, SamplerMethod::kWfr, SamplerMethod::kSvgd, SamplerMethod::kRgo}) {
    ExperimentSpec spec;
    spec.kind = ExperimentKind::kSamplerOracle;
    spec.method = Method{Method::Kind::kSampler, method};
    spec.seed = seed;
    spec.params = {0.5, 0.5};
    spec.sampler.method = method;
    spec.sampler.eta = 1e-3;
    spec.sampler.steps = steps;
    spec.sampler.particles = particles;
    spec.sampler.sigma_init = 0.5;
    spec.sampler.eta_w = 0.0;
    const Table t = run_experiment(spec).table("sampler_oracle.csv");
    for (const auto& row : t.rows) {
      std::cout << to_string(method);
      for (const auto& cell : row) std::cout << ',' << Table::format(cell);
      std::cout << '\n';
      const double mean = std::get<double>(row[1]);
      const double var = std::get<double>(row[3]);
      if (method != SamplerMethod::kSvgd) {
        ok = ok && std::abs(mean - std::get<double>(row[2])) < 0.05 &&
             std::abs(var / std::get<double>(row[4]) - 1.0) < 0.15;
      }
    }
  }
  return ok ? kOk : kRuntimeFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-flow samplers for entropy-regularized Wasserstein DRO"};
  app.require_subcommand(1);

  std::string spec_path;
  std::string out_dir;
  auto* run = app.add_subcommand("run", "Run one experiment spec and write its tables");
  run->add_option("spec", spec_path, "Spec file")->required();
  run->add_option("--out", out_dir, "Output directory (default: experiment.output)");

  std::vector<std::string> compare_paths;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "Run several specs and emit one wide CSV");
  compare->add_option("specs", compare_paths, "Spec files")->required();
  compare->add_option("--out", compare_out, "CSV file (default: stdout)");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Check a spec and print its canonical form");
  validate->add_option("spec", validate_path, "Spec file")->required();

  std::size_t points = 20;
  std::uint64_t seed = 1;
  double tolerance = 1e-5;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every loss family");
  gradcheck->add_option("--points", points, "Random points per family");
  gradcheck->add_option("--seed", seed, "Seed");
  gradcheck->add_option("--tolerance", tolerance, "Maximum relative error");

  Eigen::Index particles = 2000;
  std::size_t steps = 5000;
  auto* oracle = app.add_subcommand("oracle", "Compare samplers against the closed-form Gaussian worst case");
  oracle->add_option("--seed", seed, "Seed");
  oracle->add_option("--particles", particles, "Particles per sampler");
  oracle->add_option("--steps", steps, "Inner iterations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidationFailure;
  }

  try {
    if (*run) return cmd_run(spec_path, out_dir);
    if (*compare) return cmd_compare(compare_paths, compare_out);
    if (*validate) return cmd_validate(validate_path);
    if (*gradcheck) return cmd_gradcheck(points, seed, tolerance);
    if (*oracle) return cmd_oracle(seed, particles, steps);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kOk;
}
