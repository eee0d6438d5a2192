#include "rflab/experiments.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <Eigen/Cholesky>

#include "rflab/analysis.hpp"
#include "rflab/ensembles.hpp"
#include "rflab/errors.hpp"
#include "rflab/kernels.hpp"
#include "rflab/regressors.hpp"
#include "rflab/version.hpp"

namespace rflab {

namespace {

constexpr std::uint64_t kKernelSeedTag = 0x6b65726e;
constexpr std::uint64_t kEvalSeedTag = 0x6576616c;
constexpr std::uint64_t kPairSeedTag = 0x70616972;
constexpr std::uint64_t kGaussSeedTag = 0x67617573;

const char* kExperimentNames[] = {
    "equivalence",      "hockey-stick",     "expectation-term",
    "variance-profile", "gaussian-variance", "ridge-path",
    "budget",           "underparam",        "counterexample",
};

std::string fmt_int(std::int64_t v) { return std::to_string(v); }

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

const char* experiment_name(ExperimentKind kind) {
  return kExperimentNames[static_cast<int>(kind)];
}

ExperimentKind experiment_from_name(const std::string& name) {
  for (int i = 0; i < 9; ++i)
    if (name == kExperimentNames[i]) return static_cast<ExperimentKind>(i);
  throw ConfigError("unknown experiment: " + name);
}

Dataset DatasetSpec::build() const {
  switch (kind) {
    case Kind::Synth:
      return synth_dataset(seed, n_train, n_test, dim, noise_sigma);
    case Kind::CalHousing:
      return load_calhousing(path, seed, n_train, n_test, normalize_target);
  }
  throw ConfigError("dataset: unknown kind");
}

void ExperimentConfig::validate() const {
  features.validate();
  if (members < 1) throw ConfigError("run.members must be >= 1");
  if (lambda < 0.0) throw ConfigError("run.lambda must be >= 0");
  if (kernel_samples < 1) throw ConfigError("run.kernel_samples must be >= 1");
  if (eval_points < 1) throw ConfigError("run.eval_points must be >= 1");
  if (dataset.kind == DatasetSpec::Kind::CalHousing && dataset.path.empty())
    throw ConfigError("dataset.path is required for calhousing");
}

ExperimentConfig default_experiment_config(ExperimentKind kind) {
  ExperimentConfig c;
  c.kind = kind;
  c.seed = 42;
  switch (kind) {
    case ExperimentKind::Equivalence:
      c.dataset = {DatasetSpec::Kind::CalHousing, "data/calhousing_sample.csv",
                   12, 100, 8, 0.0, false, 1};
      c.features.activation = ActivationSpec::softplus(1.0);
      c.features.width = 200;
      c.members = 10'000;
      c.eval_points = 500;
      c.kernel_samples = 10'000'000;
      break;
    case ExperimentKind::HockeyStick:
      // ReLU so the limiting kernel is exact (closed form); MC-estimated
      // smooth-activation kernels are not resolvable on this instance.
      c.dataset = {DatasetSpec::Kind::Synth, "", 6, 200, 1, 0.05, false, 1};
      c.features.activation = ActivationSpec::relu();
      c.features.width = 200;
      c.members = 2'000;
      c.eval_points = 200;
      c.d_values = {3, 6, 12, 24, 48, 96, 200};
      break;
    case ExperimentKind::ExpectationTerm:
      // 6-dimensional inputs keep the whitened Gram in its concentration
      // regime; see README on the 1-D instance's documented instability.
      c.dataset = {DatasetSpec::Kind::Synth, "", 6, 10, 6, 0.05, false, 2};
      c.features.activation = ActivationSpec::relu();
      c.features.width = 200;
      c.members = 20'000;
      c.lambda = 0.0;
      break;
    case ExperimentKind::VarianceProfile:
      c.dataset = {DatasetSpec::Kind::Synth, "", 6, 10, 1, 0.05, false, 1};
      c.features.activation = ActivationSpec::relu();
      c.features.width = 200;
      c.members = 20'000;
      c.grid_points = 101;
      break;
    case ExperimentKind::GaussianVarianceCheck:
      c.dataset = {DatasetSpec::Kind::Synth, "", 6, 20, 1, 0.05, false, 1};
      c.features.activation = ActivationSpec::relu();
      c.features.width = 200;
      c.members = 20'000;
      c.eval_points = 20;
      break;
    case ExperimentKind::RidgePath:
      c.dataset = {DatasetSpec::Kind::Synth, "", 6, 20, 1, 0.05, false, 1};
      c.features.activation = ActivationSpec::relu();
      c.features.width = 200;
      c.members = 2'000;
      c.eval_points = 20;
      c.lambda_grid = {0.0,  1e-4, 3e-4, 1e-3, 3e-3,
                       0.01, 0.03, 0.1,  0.3,  1.0};
      c.bound_pairs = 50;
      break;
    case ExperimentKind::BudgetMatch:
      c.dataset = {DatasetSpec::Kind::CalHousing, "data/calhousing_sample.csv",
                   12, 100, 8, 0.0, false, 1};
      c.features.activation = ActivationSpec::softplus(1.0);
      c.features.width = 200;
      c.members = 4;  // gap sweep ensemble size
      c.m_values = {1, 2, 4, 8};
      c.d_values = {24, 96, 384};
      c.replicates = 5;
      break;
    case ExperimentKind::Underparam:
      c.dataset = {DatasetSpec::Kind::Synth, "", 5, 10, 1, 0.05, false, 1};
      c.features.activation = ActivationSpec::erf();
      c.features.width = 2;
      c.members = 400'000;
      c.mc_draws = 400'000;
      c.eval_points = 10;
      break;
    case ExperimentKind::Counterexample:
      break;
  }
  return c;
}

namespace {

const std::set<std::string> kKnownKeys = {
    "dataset.kind",       "dataset.path",         "dataset.n_train",
    "dataset.n_test",     "dataset.dim",          "dataset.noise_sigma",
    "dataset.seed",       "dataset.normalize_target",
    "features.activation", "features.beta",       "features.weight_dist",
    "features.lo",        "features.hi",          "features.loc",
    "features.scale",     "features.width",       "features.bias",
    "run.seed",           "run.members",          "run.lambda",
    "run.lambda_grid",    "run.d_values",         "run.m_values",
    "run.eval_points",    "run.grid_points",      "run.kernel_samples",
    "run.mc_draws",       "run.replicates",       "run.bound_pairs",
    "output.path",
};

}  // namespace

ExperimentConfig experiment_config_from(ExperimentKind kind,
                                        const ConfigMap& cfg) {
  for (const std::string& key : cfg.keys())
    if (!kKnownKeys.count(key)) throw ConfigError("config: unknown key " + key);

  ExperimentConfig c = default_experiment_config(kind);
  if (cfg.has("dataset.kind")) {
    const std::string k = cfg.get_string("dataset.kind");
    if (k == "synth")
      c.dataset.kind = DatasetSpec::Kind::Synth;
    else if (k == "calhousing")
      c.dataset.kind = DatasetSpec::Kind::CalHousing;
    else
      throw ConfigError("dataset.kind must be synth or calhousing");
  }
  if (cfg.has("dataset.path")) c.dataset.path = cfg.get_string("dataset.path");
  if (cfg.has("dataset.n_train"))
    c.dataset.n_train = static_cast<int>(cfg.get_int("dataset.n_train"));
  if (cfg.has("dataset.n_test"))
    c.dataset.n_test = static_cast<int>(cfg.get_int("dataset.n_test"));
  if (cfg.has("dataset.dim"))
    c.dataset.dim = static_cast<int>(cfg.get_int("dataset.dim"));
  if (cfg.has("dataset.noise_sigma"))
    c.dataset.noise_sigma = cfg.get_double("dataset.noise_sigma");
  if (cfg.has("dataset.seed")) c.dataset.seed = cfg.get_u64("dataset.seed");
  if (cfg.has("dataset.normalize_target"))
    c.dataset.normalize_target = cfg.get_bool("dataset.normalize_target");

  if (cfg.has("features.activation")) {
    const std::string a = cfg.get_string("features.activation");
    const double beta =
        cfg.has("features.beta") ? cfg.get_double("features.beta") : 1.0;
    if (a == "relu")
      c.features.activation = ActivationSpec::relu();
    else if (a == "erf")
      c.features.activation = ActivationSpec::erf();
    else if (a == "softplus")
      c.features.activation = ActivationSpec::softplus(beta);
    else if (a == "identity")
      c.features.activation = ActivationSpec::identity();
    else
      throw ConfigError("features.activation must be relu|erf|softplus|identity");
  }
  if (cfg.has("features.weight_dist")) {
    const std::string w = cfg.get_string("features.weight_dist");
    if (w == "normal")
      c.features.weight_dist = WeightDistSpec::standard_normal();
    else if (w == "uniform")
      c.features.weight_dist = WeightDistSpec::uniform(
          cfg.has("features.lo") ? cfg.get_double("features.lo") : -10.0,
          cfg.has("features.hi") ? cfg.get_double("features.hi") : 10.0);
    else if (w == "laplace")
      c.features.weight_dist = WeightDistSpec::laplace(
          cfg.has("features.loc") ? cfg.get_double("features.loc") : 0.0,
          cfg.has("features.scale") ? cfg.get_double("features.scale") : 1.0);
    else
      throw ConfigError("features.weight_dist must be normal|uniform|laplace");
  }
  if (cfg.has("features.width"))
    c.features.width = static_cast<int>(cfg.get_int("features.width"));
  if (cfg.has("features.bias"))
    c.features.bias_augment = cfg.get_bool("features.bias");

  if (cfg.has("run.seed")) c.seed = cfg.get_u64("run.seed");
  if (cfg.has("run.members"))
    c.members = static_cast<int>(cfg.get_int("run.members"));
  if (cfg.has("run.lambda")) c.lambda = cfg.get_double("run.lambda");
  if (cfg.has("run.lambda_grid"))
    c.lambda_grid = cfg.get_double_list("run.lambda_grid");
  if (cfg.has("run.d_values")) c.d_values = cfg.get_int_list("run.d_values");
  if (cfg.has("run.m_values")) c.m_values = cfg.get_int_list("run.m_values");
  if (cfg.has("run.eval_points"))
    c.eval_points = static_cast<int>(cfg.get_int("run.eval_points"));
  if (cfg.has("run.grid_points"))
    c.grid_points = static_cast<int>(cfg.get_int("run.grid_points"));
  if (cfg.has("run.kernel_samples"))
    c.kernel_samples = cfg.get_int("run.kernel_samples");
  if (cfg.has("run.mc_draws"))
    c.mc_draws = static_cast<int>(cfg.get_int("run.mc_draws"));
  if (cfg.has("run.replicates"))
    c.replicates = static_cast<int>(cfg.get_int("run.replicates"));
  if (cfg.has("run.bound_pairs"))
    c.bound_pairs = static_cast<int>(cfg.get_int("run.bound_pairs"));
  if (cfg.has("output.path")) c.out_path = cfg.get_string("output.path");

  c.validate();
  return c;
}

namespace {

// Evaluation points for prediction comparisons: dataset test rows when
// enough are available, otherwise seeded uniform draws from the per-column
// range of the combined data.
Eigen::MatrixXd make_eval_points(const Dataset& ds, int count,
                                 std::uint64_t seed) {
  if (count <= ds.n_test())
    return ds.x_test.topRows(count);
  const Eigen::Index p = ds.dim();
  Eigen::VectorXd lo(p), hi(p);
  for (Eigen::Index c = 0; c < p; ++c) {
    lo[c] = std::min(ds.x.col(c).minCoeff(), ds.x_test.col(c).minCoeff());
    hi[c] = std::max(ds.x.col(c).maxCoeff(), ds.x_test.col(c).maxCoeff());
  }
  Eigen::MatrixXd pts(count, p);
  Rng rng(seed);
  for (int i = 0; i < count; ++i)
    for (Eigen::Index c = 0; c < p; ++c)
      pts(i, c) = rng.uniform(lo[c], hi[c]);
  return pts;
}

Eigen::MatrixXd make_grid_1d(double lo, double hi, int points) {
  Eigen::MatrixXd grid(points, 1);
  for (int i = 0; i < points; ++i)
    grid(i, 0) =
        lo + (hi - lo) * static_cast<double>(i) / (points > 1 ? points - 1 : 1);
  return grid;
}

void echo_config(const ExperimentConfig& c, ResultTable& t) {
  auto& p = t.provenance;
  p.emplace_back("artifact_version", kVersion);
  p.emplace_back("experiment", experiment_name(c.kind));
  p.emplace_back("dataset.kind", c.dataset.kind == DatasetSpec::Kind::Synth
                                     ? "synth"
                                     : "calhousing");
  if (!c.dataset.path.empty()) p.emplace_back("dataset.path", c.dataset.path);
  p.emplace_back("dataset.n_train", fmt_int(c.dataset.n_train));
  p.emplace_back("dataset.n_test", fmt_int(c.dataset.n_test));
  if (c.dataset.kind == DatasetSpec::Kind::Synth) {
    p.emplace_back("dataset.dim", fmt_int(c.dataset.dim));
    p.emplace_back("dataset.noise_sigma", format_double(c.dataset.noise_sigma));
  }
  p.emplace_back("dataset.seed", std::to_string(c.dataset.seed));
  p.emplace_back("features.activation", c.features.activation.describe());
  p.emplace_back("features.weight_dist", c.features.weight_dist.describe());
  p.emplace_back("features.width", fmt_int(c.features.width));
  p.emplace_back("features.bias", c.features.bias_augment ? "true" : "false");
  p.emplace_back("run.seed", std::to_string(c.seed));
  p.emplace_back("run.members", fmt_int(c.members));
  p.emplace_back("run.lambda", format_double(c.lambda));
  p.emplace_back("run.kernel_samples", fmt_int(c.kernel_samples));
}

KernelSpec config_kernel(const ExperimentConfig& c) {
  return limiting_kernel_spec(c.features, c.kernel_samples,
                              derive_seed(c.seed, kKernelSeedTag));
}

// --------------------------------------------------------------------------
// Per-experiment drivers.
// --------------------------------------------------------------------------

ResultTable run_equivalence(const ExperimentConfig& c) {
  const Dataset ds = c.dataset.build();
  const KernelSpec kernel = config_kernel(c);
  const Eigen::MatrixXd x_star =
      make_eval_points(ds, c.eval_points, derive_seed(c.seed, kEvalSeedTag));

  EnsembleConfig ec{c.features, c.members, c.lambda, c.seed};
  const EnsembleResult ens = mc_infinite_ensemble(ec, ds, x_star);
  const KernelPrediction kp =
      predict_kernel_with_se(kernel, ds.x, ds.y, c.lambda, x_star);

  ResultTable t;
  echo_config(c, t);
  t.provenance.emplace_back("eval_points", fmt_int(x_star.rows()));
  t.columns = {"point",     "ensemble_mean", "ensemble_se",
               "kernel_prediction", "kernel_se", "abs_diff",
               "z_score"};
  for (Eigen::Index i = 0; i < x_star.rows(); ++i) {
    const double diff = std::abs(ens.mean[i] - kp.value[i]);
    // The comparison is MC on both sides: the softplus kernel itself is a
    // Monte-Carlo estimate, so the relevant standard error combines both.
    const double se =
        std::sqrt(ens.mc_standard_error[i] * ens.mc_standard_error[i] +
                  kp.standard_error[i] * kp.standard_error[i]);
    t.rows.push_back({fmt_int(i), format_double(ens.mean[i]),
                      format_double(ens.mc_standard_error[i]),
                      format_double(kp.value[i]),
                      format_double(kp.standard_error[i]),
                      format_double(diff),
                      format_double(se > 0.0 ? diff / se : 0.0)});
  }
  return t;
}

ResultTable run_hockey_stick(const ExperimentConfig& c) {
  if (c.d_values.empty()) throw ConfigError("run.d_values is required");
  const Dataset ds = c.dataset.build();
  const KernelSpec kernel = config_kernel(c);
  const Eigen::MatrixXd x_star =
      make_eval_points(ds, c.eval_points, derive_seed(c.seed, kEvalSeedTag));
  const auto rows = hockey_stick_curve(c.features, kernel, c.d_values,
                                       c.members, ds, x_star, c.lambda, c.seed);
  ResultTable t;
  echo_config(c, t);
  t.columns = {"width", "mean_abs_diff", "mean_member_std"};
  for (const auto& r : rows)
    t.rows.push_back({fmt_int(r.width), format_double(r.mean_abs_diff),
                      format_double(r.mean_member_std)});
  return t;
}

ResultTable run_expectation_term(const ExperimentConfig& c) {
  const Dataset ds = c.dataset.build();
  const KernelSpec kernel = config_kernel(c);
  const Eigen::VectorXd x_star = ds.x_test.row(0).transpose();
  const ExpectationTermSamples samples =
      c.lambda == 0.0
          ? expectation_term_samples(c.features, ds, x_star, kernel, c.members,
                                     c.seed)
          : ridge_expectation_term_samples(c.features, ds, x_star, kernel,
                                           c.lambda, c.members, c.seed);
  const Eigen::VectorXd mean = samples.mean();
  const Eigen::VectorXd se = samples.standard_error();

  ResultTable t;
  echo_config(c, t);
  t.provenance.emplace_back("draws_kept",
                            fmt_int(samples.requested - samples.dropped));
  t.provenance.emplace_back("draws_dropped", fmt_int(samples.dropped));
  t.columns = {"coordinate", "mean", "standard_error", "abs_z"};
  for (Eigen::Index i = 0; i < mean.size(); ++i)
    t.rows.push_back(
        {fmt_int(i), format_double(mean[i]), format_double(se[i]),
         format_double(se[i] > 0.0 ? std::abs(mean[i]) / se[i] : 0.0)});
  return t;
}

ResultTable run_variance_profile(const ExperimentConfig& c) {
  const Dataset ds = c.dataset.build();
  const KernelSpec kernel = config_kernel(c);
  const Eigen::MatrixXd grid =
      ds.dim() == 1
          ? make_grid_1d(-5.0, 5.0, c.grid_points)
          : make_eval_points(ds, c.grid_points,
                             derive_seed(c.seed, kEvalSeedTag));

  const VarianceProfile rf =
      variance_vs_gp_profile(c.features, kernel, ds, grid, c.members, c.seed);
  const VarianceProfile gauss = gaussian_variance_profile(
      kernel, ds, grid, c.features.width, c.members,
      derive_seed(c.seed, kGaussSeedTag));

  ResultTable t;
  echo_config(c, t);
  t.columns = {"x0",          "ensemble_variance", "r_perp_squared",
               "ratio",       "gauss_variance",    "gauss_ratio"};
  for (std::size_t i = 0; i < rf.rows.size(); ++i) {
    t.rows.push_back({format_double(grid(static_cast<Eigen::Index>(i), 0)),
                      format_double(rf.rows[i].ensemble_variance),
                      format_double(rf.rows[i].r_perp_squared),
                      format_double(rf.rows[i].ratio),
                      format_double(gauss.rows[i].ensemble_variance),
                      format_double(gauss.rows[i].ratio)});
  }
  return t;
}

ResultTable run_gaussian_variance(const ExperimentConfig& c) {
  const Dataset ds = c.dataset.build();
  const KernelSpec kernel = config_kernel(c);
  const Eigen::MatrixXd x_star =
      make_eval_points(ds, c.eval_points, derive_seed(c.seed, kEvalSeedTag));

  const VarianceProfile prof = gaussian_variance_profile(
      kernel, ds, x_star, c.features.width, c.members,
      derive_seed(c.seed, kGaussSeedTag));
  const ConditionedKernel sys = kernel_system(kernel, ds.x);

  ResultTable t;
  echo_config(c, t);
  t.columns = {"point", "empirical_variance", "formula_variance", "rel_err"};
  for (std::size_t i = 0; i < prof.rows.size(); ++i) {
    const double formula = gaussian_variance_formula(
        sys.r, ds.y, std::sqrt(std::max(0.0, prof.rows[i].r_perp_squared)),
        c.features.width, static_cast<int>(ds.n_train()));
    const double emp = prof.rows[i].ensemble_variance;
    const double rel =
        formula > 0.0 ? std::abs(emp - formula) / formula : 0.0;
    t.rows.push_back({fmt_int(static_cast<std::int64_t>(i)),
                      format_double(emp), format_double(formula),
                      format_double(rel)});
  }
  return t;
}

ResultTable run_ridge_path(const ExperimentConfig& c) {
  if (c.lambda_grid.empty()) throw ConfigError("run.lambda_grid is required");
  const Dataset ds = c.dataset.build();
  const KernelSpec kernel = config_kernel(c);
  const Eigen::MatrixXd x_star =
      make_eval_points(ds, c.eval_points, derive_seed(c.seed, kEvalSeedTag));

  const RidgePathReport report = ensemble_lipschitz_diagnostic(
      c.features, kernel, ds, x_star, c.lambda_grid, c.members, c.seed);

  // Bound dominance over random (lambda, lambda') pairs, using the
  // jitter-conditioned kernel system throughout.
  const ConditionedKernel sys = kernel_system(kernel, ds.x);
  Eigen::MatrixXd k_cond = sys.k;
  k_cond.diagonal().array() += sys.jitter_used;
  const Eigen::MatrixXd k_cross = kernel.cross(x_star, ds.x);
  Rng pair_rng(derive_seed(c.seed, kPairSeedTag));
  int violations = 0;
  double max_bound_slack = 0.0;
  for (int pair = 0; pair < c.bound_pairs; ++pair) {
    const double l1 = 2.0 * pair_rng.uniform01();
    const double l2 = 2.0 * pair_rng.uniform01();
    Eigen::MatrixXd a = k_cond, b = k_cond;
    a.diagonal().array() += l1;
    b.diagonal().array() += l2;
    const Eigen::VectorXd pred1 =
        k_cross * Eigen::LLT<Eigen::MatrixXd>(a).solve(ds.y);
    const Eigen::VectorXd pred2 =
        k_cross * Eigen::LLT<Eigen::MatrixXd>(b).solve(ds.y);
    for (Eigen::Index ti = 0; ti < x_star.rows(); ++ti) {
      const double c1 = k_cross.row(ti).maxCoeff();
      const double bound =
          krr_lipschitz_bound(k_cond, ds.y, l1, l2, c1,
                              static_cast<int>(ds.n_train()));
      const double realized = std::abs(pred1[ti] - pred2[ti]);
      if (realized > bound) ++violations;
      if (bound > 0.0)
        max_bound_slack = std::max(max_bound_slack, realized / bound);
    }
  }

  ResultTable t;
  echo_config(c, t);
  t.provenance.emplace_back("bound_pairs", fmt_int(c.bound_pairs));
  t.provenance.emplace_back("bound_violations", fmt_int(violations));
  t.provenance.emplace_back("max_bound_usage", format_double(max_bound_slack));
  t.columns = {"lambda", "point", "ensemble_diff", "krr_diff", "bound"};
  for (std::size_t li = 0; li < report.lambdas.size(); ++li)
    for (Eigen::Index ti = 0; ti < x_star.rows(); ++ti)
      t.rows.push_back({format_double(report.lambdas[li]), fmt_int(ti),
                        format_double(report.ens_diffs(
                            static_cast<Eigen::Index>(li), ti)),
                        format_double(report.krr_diffs(
                            static_cast<Eigen::Index>(li), ti)),
                        format_double(report.bound_values(
                            static_cast<Eigen::Index>(li), ti))});
  return t;
}

ResultTable run_budget(const ExperimentConfig& c) {
  if (c.m_values.empty() || c.d_values.empty())
    throw ConfigError("run.m_values and run.d_values are required");
  const Dataset ds = c.dataset.build();
  const Eigen::MatrixXd x_star = ds.x_test;

  ResultTable t;
  echo_config(c, t);
  t.provenance.emplace_back("replicates", fmt_int(c.replicates));
  t.columns = {"mode", "m",       "width",      "replicate",
               "l2_gap", "ensemble_err", "single_err"};

  // Parity: fixed width, sweep ensemble size; total budget is m * width.
  for (const int m : c.m_values) {
    const BudgetComparison bc = budget_matched_comparison(
        c.features, m * c.features.width, m, ds, x_star,
        derive_seed(c.seed, static_cast<std::uint64_t>(m)));
    t.rows.push_back({"parity", fmt_int(m), fmt_int(c.features.width),
                      fmt_int(0), format_double(bc.l2_gap),
                      format_double(bc.ensemble_err),
                      format_double(bc.single_err)});
  }

  // Gap decay: fixed ensemble size, sweep member width, replicated seeds.
  for (const int d : c.d_values) {
    for (int r = 0; r < c.replicates; ++r) {
      FeatureConfig fc = c.features;
      fc.width = d;
      const BudgetComparison bc = budget_matched_comparison(
          fc, c.members * d, c.members, ds, x_star,
          derive_seed(c.seed, 1000003ULL * static_cast<std::uint64_t>(d) +
                                  static_cast<std::uint64_t>(r)));
      t.rows.push_back({"gap", fmt_int(c.members), fmt_int(d), fmt_int(r),
                        format_double(bc.l2_gap),
                        format_double(bc.ensemble_err),
                        format_double(bc.single_err)});
    }
  }
  return t;
}

ResultTable run_underparam(const ExperimentConfig& c) {
  const Dataset ds = c.dataset.build();
  const KernelSpec kernel = config_kernel(c);
  const Eigen::MatrixXd x_star =
      make_eval_points(ds, c.eval_points, derive_seed(c.seed, kEvalSeedTag));

  const UnderparamResult res = underparam_transformed_kernel(
      c.features, kernel, ds, x_star, c.mc_draws, c.seed);

  EnsembleConfig ec{c.features, c.members, 0.0,
                    derive_seed(c.seed, kGaussSeedTag)};
  const EnsembleResult ens = mc_infinite_ensemble(ec, ds, x_star);

  ResultTable t;
  echo_config(c, t);
  t.provenance.emplace_back("mc_draws", fmt_int(c.mc_draws));
  t.provenance.emplace_back("ktilde_min_eigenvalue",
                            format_double(res.min_eigenvalue));
  t.provenance.emplace_back("projection_norm",
                            format_double(res.projection_norm));
  t.provenance.emplace_back("draws_dropped", fmt_int(res.dropped));
  t.columns = {"point",     "ktilde_prediction", "ensemble_mean",
               "ktilde_se", "ensemble_se",       "combined_se",
               "z_score"};
  for (Eigen::Index i = 0; i < x_star.rows(); ++i) {
    const double se = std::sqrt(res.prediction_se[i] * res.prediction_se[i] +
                                ens.mc_standard_error[i] *
                                    ens.mc_standard_error[i]);
    const double diff = std::abs(res.predictions[i] - ens.mean[i]);
    t.rows.push_back({fmt_int(i), format_double(res.predictions[i]),
                      format_double(ens.mean[i]),
                      format_double(res.prediction_se[i]),
                      format_double(ens.mc_standard_error[i]),
                      format_double(se),
                      format_double(se > 0.0 ? diff / se : 0.0)});
  }
  return t;
}

ResultTable run_counterexample(const ExperimentConfig& c) {
  ResultTable t;
  echo_config(c, t);
  t.columns = {"case",           "expectation",      "expectation_decimal",
               "e_w_squared",    "e_wperp_squared",  "e_w_is_zero",
               "e_wperp_w_is_zero"};
  for (const auto which :
       {CounterexampleCase::ThreeMass, CounterexampleCase::FourMass}) {
    const CounterexampleResult r = counterexample_expectation(which);
    t.rows.push_back(
        {which == CounterexampleCase::ThreeMass ? "three-mass" : "four-mass",
         r.expectation.to_string(),
         format_double(r.expectation.to_double()),
         r.e_w_squared.to_string(), r.e_wperp_squared.to_string(),
         r.e_w_is_zero ? "1" : "0", r.e_wperp_w_is_zero ? "1" : "0"});
  }
  return t;
}

}  // namespace

ResultTable run_experiment(const ExperimentConfig& config) {
  config.validate();
  ResultTable table;
  switch (config.kind) {
    case ExperimentKind::Equivalence:
      table = run_equivalence(config);
      break;
    case ExperimentKind::HockeyStick:
      table = run_hockey_stick(config);
      break;
    case ExperimentKind::ExpectationTerm:
      table = run_expectation_term(config);
      break;
    case ExperimentKind::VarianceProfile:
      table = run_variance_profile(config);
      break;
    case ExperimentKind::GaussianVarianceCheck:
      table = run_gaussian_variance(config);
      break;
    case ExperimentKind::RidgePath:
      table = run_ridge_path(config);
      break;
    case ExperimentKind::BudgetMatch:
      table = run_budget(config);
      break;
    case ExperimentKind::Underparam:
      table = run_underparam(config);
      break;
    case ExperimentKind::Counterexample:
      table = run_counterexample(config);
      break;
  }
  if (!config.out_path.empty()) write_table_csv(table, config.out_path);
  return table;
}

const std::string& ResultTable::provenance_value(const std::string& key) const {
  for (const auto& [k, v] : provenance)
    if (k == key) return v;
  throw ConfigError("result table: missing provenance key " + key);
}

std::vector<double> ResultTable::column_as_double(
    const std::string& name) const {
  Eigen::Index idx = -1;
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) idx = static_cast<Eigen::Index>(i);
  if (idx < 0) throw ConfigError("result table: no column named " + name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& row : rows)
    out.push_back(std::stod(row[static_cast<std::size_t>(idx)]));
  return out;
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

using Summary = std::vector<std::pair<std::string, std::string>>;

void summarize_equivalence(const ResultTable& t, Summary& s) {
  const auto z = t.column_as_double("z_score");
  const auto diff = t.column_as_double("abs_diff");
  int within = 0;
  double max_z = 0.0;
  for (const double v : z) {
    if (v <= 5.0) ++within;
    max_z = std::max(max_z, v);
  }
  s.emplace_back("points", fmt_int(static_cast<std::int64_t>(z.size())));
  s.emplace_back("frac_within_5se",
                 format_double(static_cast<double>(within) /
                               static_cast<double>(z.size())));
  s.emplace_back("mean_abs_diff", format_double(mean_of(diff)));
  s.emplace_back("max_z", format_double(max_z));
}

void summarize_hockey(const ResultTable& t, Summary& s) {
  const auto widths = t.column_as_double("width");
  const auto diffs = t.column_as_double("mean_abs_diff");
  const int n_train = std::stoi(t.provenance_value("dataset.n_train"));
  double under = std::nan(""), over = std::nan("");
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] == n_train / 2.0) under = diffs[i];
    if (widths[i] == 4.0 * n_train) over = diffs[i];
  }
  if (!std::isnan(under) && !std::isnan(over) && over > 0.0)
    s.emplace_back("under_over_ratio", format_double(under / over));
  s.emplace_back("min_diff",
                 format_double(*std::min_element(diffs.begin(), diffs.end())));
  s.emplace_back("max_diff",
                 format_double(*std::max_element(diffs.begin(), diffs.end())));
}

void summarize_expectation(const ResultTable& t, Summary& s) {
  const auto z = t.column_as_double("abs_z");
  s.emplace_back("max_abs_z",
                 format_double(*std::max_element(z.begin(), z.end())));
  s.emplace_back("draws_dropped", t.provenance_value("draws_dropped"));
}

void summarize_variance_profile(const ResultTable& t, Summary& s) {
  const auto ratio = t.column_as_double("ratio");
  const auto gauss = t.column_as_double("gauss_ratio");
  std::vector<double> finite;
  for (const double r : ratio)
    if (std::isfinite(r)) finite.push_back(r);
  const double mu = mean_of(finite);
  double var = 0.0;
  for (const double r : finite) var += (r - mu) * (r - mu);
  var = finite.size() > 1 ? var / static_cast<double>(finite.size() - 1) : 0.0;
  s.emplace_back("ratio_cv", format_double(mu != 0.0 ? std::sqrt(var) / mu
                                                     : 0.0));
  double gmin = std::nan(""), gmax = std::nan("");
  for (const double g : gauss) {
    if (!std::isfinite(g)) continue;
    gmin = std::isnan(gmin) ? g : std::min(gmin, g);
    gmax = std::isnan(gmax) ? g : std::max(gmax, g);
  }
  s.emplace_back("gauss_ratio_max_min",
                 format_double(gmin > 0.0 ? gmax / gmin : std::nan("")));
  s.emplace_back("grid_points_used",
                 fmt_int(static_cast<std::int64_t>(finite.size())));
}

void summarize_gaussian_variance(const ResultTable& t, Summary& s) {
  const auto rel = t.column_as_double("rel_err");
  s.emplace_back("max_rel_err",
                 format_double(*std::max_element(rel.begin(), rel.end())));
  s.emplace_back("mean_rel_err", format_double(mean_of(rel)));
}

void summarize_ridge_path(const ResultTable& t, Summary& s) {
  s.emplace_back("bound_violations", t.provenance_value("bound_violations"));
  s.emplace_back("max_bound_usage", t.provenance_value("max_bound_usage"));
  // Continuity of the mean curves over the lambda grid: consecutive secant
  // slopes may not explode (jump > 3x the previous slope with a
  // non-negligible absolute change).
  const auto lambdas = t.column_as_double("lambda");
  const auto ens = t.column_as_double("ensemble_diff");
  const auto krr = t.column_as_double("krr_diff");
  std::vector<double> grid;
  for (const double l : lambdas)
    if (grid.empty() || l != grid.back()) grid.push_back(l);
  const std::size_t t_points = lambdas.size() / grid.size();
  auto curve_mean = [&](const std::vector<double>& col, std::size_t li) {
    double acc = 0.0;
    for (std::size_t ti = 0; ti < t_points; ++ti)
      acc += col[li * t_points + ti];
    return acc / static_cast<double>(t_points);
  };
  double max_ratio = 0.0;
  double scale = 0.0;
  for (std::size_t li = 0; li < grid.size(); ++li)
    scale = std::max({scale, curve_mean(ens, li), curve_mean(krr, li)});
  for (const auto* col : {&ens, &krr}) {
    double prev_slope = -1.0;
    for (std::size_t li = 1; li < grid.size(); ++li) {
      const double dl = grid[li] - grid[li - 1];
      if (dl <= 0.0) continue;
      const double jump =
          std::abs(curve_mean(*col, li) - curve_mean(*col, li - 1));
      const double slope = jump / dl;
      if (prev_slope > 0.0 && jump > 1e-6 * scale)
        max_ratio = std::max(max_ratio, slope / prev_slope);
      if (slope > 0.0) prev_slope = slope;
    }
  }
  s.emplace_back("max_slope_ratio", format_double(max_ratio));
  s.emplace_back("curve_scale", format_double(scale));
}

void summarize_budget(const ResultTable& t, Summary& s) {
  const auto width = t.column_as_double("width");
  const auto gap = t.column_as_double("l2_gap");
  const auto ens_err = t.column_as_double("ensemble_err");
  const auto single_err = t.column_as_double("single_err");

  double parity_max_rel = 0.0;
  std::map<int, std::vector<double>> gaps_by_width;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.rows[i][0] == "parity") {
      const double rel = std::abs(ens_err[i] - single_err[i]) /
                         std::max(std::abs(single_err[i]), 1e-300);
      parity_max_rel = std::max(parity_max_rel, rel);
    } else {
      gaps_by_width[static_cast<int>(width[i])].push_back(gap[i]);
    }
  }
  s.emplace_back("parity_max_rel_diff", format_double(parity_max_rel));

  // Monotone decay of the gap in width, up to twice the replicate noise.
  bool monotone = true;
  double prev_mean = std::nan(""), prev_se = 0.0;
  for (const auto& [w, gaps] : gaps_by_width) {
    const double mu = mean_of(gaps);
    double var = 0.0;
    for (const double g : gaps) var += (g - mu) * (g - mu);
    const double se =
        gaps.size() > 1
            ? std::sqrt(var / static_cast<double>(gaps.size() - 1) /
                        static_cast<double>(gaps.size()))
            : 0.0;
    s.emplace_back("gap_mean_d" + std::to_string(w), format_double(mu));
    if (!std::isnan(prev_mean) &&
        mu > prev_mean + 2.0 * std::sqrt(se * se + prev_se * prev_se))
      monotone = false;
    prev_mean = mu;
    prev_se = se;
  }
  s.emplace_back("gap_monotone", monotone ? "1" : "0");
}

void summarize_underparam(const ResultTable& t, Summary& s) {
  const auto z = t.column_as_double("z_score");
  s.emplace_back("max_z",
                 format_double(*std::max_element(z.begin(), z.end())));
  s.emplace_back("ktilde_min_eigenvalue",
                 t.provenance_value("ktilde_min_eigenvalue"));
  s.emplace_back("projection_norm", t.provenance_value("projection_norm"));
}

void summarize_counterexample(const ResultTable& t, Summary& s) {
  for (const auto& row : t.rows) {
    s.emplace_back(row[0], row[1]);
    s.emplace_back(row[0] + "_moments_ok",
                   (row[5] == "1" && row[6] == "1") ? "1" : "0");
  }
}

}  // namespace

std::vector<std::pair<std::string, std::string>> summarize(
    const ResultTable& table) {
  if (table.rows.empty() || table.columns.empty())
    throw ConfigError("summarize: empty result table");
  for (const auto& row : table.rows)
    if (row.size() != table.columns.size())
      throw ConfigError("summarize: ragged result table");

  Summary s;
  s.emplace_back("experiment", table.provenance_value("experiment"));
  const ExperimentKind kind =
      experiment_from_name(table.provenance_value("experiment"));
  switch (kind) {
    case ExperimentKind::Equivalence:
      summarize_equivalence(table, s);
      break;
    case ExperimentKind::HockeyStick:
      summarize_hockey(table, s);
      break;
    case ExperimentKind::ExpectationTerm:
      summarize_expectation(table, s);
      break;
    case ExperimentKind::VarianceProfile:
      summarize_variance_profile(table, s);
      break;
    case ExperimentKind::GaussianVarianceCheck:
      summarize_gaussian_variance(table, s);
      break;
    case ExperimentKind::RidgePath:
      summarize_ridge_path(table, s);
      break;
    case ExperimentKind::BudgetMatch:
      summarize_budget(table, s);
      break;
    case ExperimentKind::Underparam:
      summarize_underparam(table, s);
      break;
    case ExperimentKind::Counterexample:
      summarize_counterexample(table, s);
      break;
  }
  return s;
}

void write_table_csv(const ResultTable& table, const std::string& path) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot open output file " + tmp.string());
    for (const auto& [k, v] : table.provenance)
      out << "# " << k << " = " << v << "\n";
    for (std::size_t i = 0; i < table.columns.size(); ++i)
      out << (i ? "," : "") << table.columns[i];
    out << "\n";
    for (const auto& row : table.rows) {
      for (std::size_t i = 0; i < row.size(); ++i)
        out << (i ? "," : "") << row[i];
      out << "\n";
    }
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, target);
}

}  // namespace rflab
