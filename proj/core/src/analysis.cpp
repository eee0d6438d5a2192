#include "rflab/analysis.hpp"

#include <cmath>
#include <map>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "rflab/errors.hpp"
#include "rflab/parallel.hpp"
#include "rflab/stats.hpp"

namespace rflab {

namespace {

constexpr int kDrawWave = 64;
constexpr double kDropAbortFraction = 1e-3;
constexpr double kRatioFloorRel = 1e-9;

Eigen::MatrixXd cholesky_inverse(const Eigen::MatrixXd& r_chol) {
  const Eigen::Index n = r_chol.rows();
  const Eigen::MatrixXd rt_inv =
      r_chol.transpose().triangularView<Eigen::Lower>().solve(
          Eigen::MatrixXd::Identity(n, n));
  return rt_inv.transpose() * rt_inv;  // (R^T R)^-1 = R^-1 R^-T
}

// LLT with the standard jitter ladder; nullopt when nothing factorizes.
std::optional<Eigen::LLT<Eigen::MatrixXd>> llt_with_ladder(
    const Eigen::MatrixXd& a) {
  const double mean_diag = a.diagonal().mean();
  const double scales[] = {0.0, 1e-12, 1e-10, 1e-8};
  for (const double s : scales) {
    Eigen::MatrixXd trial = a;
    trial.diagonal().array() += s * mean_diag;
    Eigen::LLT<Eigen::MatrixXd> llt(trial);
    if (llt.info() == Eigen::Success) return llt;
  }
  return std::nullopt;
}

}  // namespace

Eigen::VectorXd ExpectationTermSamples::mean() const {
  return samples.colwise().mean().transpose();
}

Eigen::VectorXd ExpectationTermSamples::standard_error() const {
  const Eigen::Index m = samples.rows();
  if (m < 2) return Eigen::VectorXd::Zero(samples.cols());
  const Eigen::VectorXd mu = mean();
  const Eigen::VectorXd var =
      (samples.rowwise() - mu.transpose()).colwise().squaredNorm().transpose() /
      static_cast<double>(m - 1);
  return (var / static_cast<double>(m)).cwiseSqrt();
}

Eigen::VectorXd expectation_term_from_whitened(
    const Eigen::MatrixXd& w, const Eigen::VectorXd& w_perp,
    const Eigen::MatrixXd& ridge_term) {
  const Eigen::Index n = w.rows();
  if (w_perp.size() != w.cols())
    throw DimensionMismatch("expectation term: w_perp length != D");
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  a.selfadjointView<Eigen::Lower>().rankUpdate(w);
  a.triangularView<Eigen::StrictlyUpper>() =
      a.triangularView<Eigen::StrictlyLower>().transpose();
  a += ridge_term;
  const Eigen::VectorXd b = w * w_perp;
  const auto llt = llt_with_ladder(a);
  if (!llt) return Eigen::VectorXd::Constant(n, std::nan(""));
  return llt->solve(b);
}

namespace {

ExpectationTermSamples expectation_term_impl(const FeatureConfig& config,
                                             const Dataset& data,
                                             const Eigen::VectorXd& x_star,
                                             const KernelSpec& kernel,
                                             double lambda, int draws,
                                             std::uint64_t seed) {
  config.validate();
  if (draws < 1) throw ConfigError("expectation term: draws must be >= 1");
  if (lambda < 0.0) throw ConfigError("expectation term: lambda must be >= 0");
  const Eigen::Index n = data.n_train();
  if (config.width <= n)
    throw InvalidRegime("expectation term: requires D > N");

  const ConditionedKernel sys = kernel_system(kernel, data.x);
  const Eigen::VectorXd k_vec = kernel.cross(data.x, x_star.transpose());
  const double k_star = kernel.diag(x_star.transpose())[0];

  // D * lambda * K^-1 (exact zero matrix in the ridgeless case, so the
  // ridge path at lambda = 0 reproduces the ridgeless path bit for bit).
  Eigen::MatrixXd ridge_term;
  if (lambda == 0.0) {
    ridge_term = Eigen::MatrixXd::Zero(n, n);
  } else {
    ridge_term =
        static_cast<double>(config.width) * lambda * cholesky_inverse(sys.r);
  }

  // Probe the whitening once so a degenerate test point fails fast.
  {
    const WhitenedSystem probe = extend_whiten(sys.r, k_vec, k_star);
    if (probe.r_perp < 1e-12)
      throw DegenerateTestPoint(
          "expectation term: test point lies in the training span");
  }

  Eigen::MatrixXd samples(draws, n);
  std::vector<Eigen::VectorXd> wave(
      std::min<std::size_t>(static_cast<std::size_t>(draws), kDrawWave));
  for (int start = 0; start < draws; start += kDrawWave) {
    const int len = std::min<int>(kDrawWave, draws - start);
    parallel_for(static_cast<std::size_t>(len), [&](std::size_t i) {
      const int m = start + static_cast<int>(i);
      const FeatureDraw draw =
          sample_features(config, static_cast<int>(data.dim()),
                          member_seed(seed, static_cast<std::uint64_t>(m)));
      const Eigen::MatrixXd phi = feature_matrix(draw, data.x);
      const Eigen::VectorXd phi_star = feature_vector(draw, x_star);
      const WhitenedSystem ws =
          extend_whiten(sys.r, k_vec, k_star, &phi, &phi_star);
      wave[i] = expectation_term_from_whitened(*ws.w, *ws.w_perp, ridge_term);
    });
    for (int i = 0; i < len; ++i)
      samples.row(start + i) = wave[static_cast<std::size_t>(i)].transpose();
  }

  // Compact out non-finite draws, preserving order.
  ExpectationTermSamples out;
  out.requested = draws;
  Eigen::Index kept = 0;
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    if (samples.row(i).allFinite()) {
      if (kept != i) samples.row(kept) = samples.row(i);
      ++kept;
    }
  }
  out.dropped = draws - kept;
  if (static_cast<double>(out.dropped) >
      kDropAbortFraction * static_cast<double>(draws))
    throw SolverFailure("expectation term: " + std::to_string(out.dropped) +
                        " of " + std::to_string(draws) +
                        " draws were non-finite");
  out.samples = samples.topRows(kept);
  return out;
}

}  // namespace

ExpectationTermSamples expectation_term_samples(const FeatureConfig& config,
                                                const Dataset& data,
                                                const Eigen::VectorXd& x_star,
                                                const KernelSpec& kernel,
                                                int draws,
                                                std::uint64_t seed) {
  return expectation_term_impl(config, data, x_star, kernel, 0.0, draws, seed);
}

ExpectationTermSamples ridge_expectation_term_samples(
    const FeatureConfig& config, const Dataset& data,
    const Eigen::VectorXd& x_star, const KernelSpec& kernel, double lambda,
    int draws, std::uint64_t seed) {
  return expectation_term_impl(config, data, x_star, kernel, lambda, draws,
                               seed);
}

double gaussian_variance_formula(const Eigen::MatrixXd& r_chol,
                                 const Eigen::VectorXd& y, double r_perp,
                                 int width, int n_train) {
  if (width <= n_train + 1)
    throw InvalidRegime("gaussian_variance_formula: requires D > N + 1");
  if (r_chol.rows() != n_train || y.size() != n_train)
    throw DimensionMismatch("gaussian_variance_formula: shape mismatch");
  const Eigen::VectorXd z =
      r_chol.transpose().triangularView<Eigen::Lower>().solve(y);
  return r_perp * r_perp * z.squaredNorm() /
         static_cast<double>(width - n_train - 1);
}

namespace {

VarianceProfile profile_from_stats(const RunningStatsVec& stats,
                                   const Eigen::VectorXd& r_perp_sq,
                                   const Eigen::VectorXd& k_star_diag) {
  VarianceProfile out;
  out.members = static_cast<int>(stats.count());
  const Eigen::VectorXd var = stats.variance();
  out.rows.resize(static_cast<std::size_t>(var.size()));
  for (Eigen::Index t = 0; t < var.size(); ++t) {
    VarianceProfileRow row;
    row.ensemble_variance = var[t];
    row.r_perp_squared = r_perp_sq[t];
    const double floor = kRatioFloorRel * std::abs(k_star_diag[t]);
    row.ratio = r_perp_sq[t] > floor ? var[t] / r_perp_sq[t]
                                     : std::nan("");
    out.rows[static_cast<std::size_t>(t)] = row;
  }
  return out;
}

}  // namespace

VarianceProfile variance_vs_gp_profile(const FeatureConfig& config,
                                       const KernelSpec& kernel,
                                       const Dataset& data,
                                       const Eigen::MatrixXd& x_star,
                                       int members, std::uint64_t seed) {
  if (members < 2)
    throw ConfigError("variance_vs_gp_profile: members must be >= 2");
  EnsembleConfig econfig;
  econfig.feature_config = config;
  econfig.members = members;
  econfig.lambda = 0.0;
  econfig.base_seed = seed;
  const EnsembleResult res = mc_infinite_ensemble(econfig, data, x_star);

  const Eigen::VectorXd r_perp_sq =
      gp_posterior_variance_batch(kernel, data.x, x_star);
  const Eigen::VectorXd k_diag = kernel.diag(x_star);

  VarianceProfile out;
  out.members = res.members;
  out.rows.resize(static_cast<std::size_t>(x_star.rows()));
  for (Eigen::Index t = 0; t < x_star.rows(); ++t) {
    VarianceProfileRow row;
    row.ensemble_variance = res.variance[t];
    row.r_perp_squared = r_perp_sq[t];
    const double floor = kRatioFloorRel * std::abs(k_diag[t]);
    row.ratio = r_perp_sq[t] > floor ? res.variance[t] / r_perp_sq[t]
                                     : std::nan("");
    out.rows[static_cast<std::size_t>(t)] = row;
  }
  return out;
}

VarianceProfile gaussian_variance_profile(const KernelSpec& kernel,
                                          const Dataset& data,
                                          const Eigen::MatrixXd& x_star,
                                          int width, int members,
                                          std::uint64_t seed) {
  if (members < 2)
    throw ConfigError("gaussian_variance_profile: members must be >= 2");
  const Eigen::Index n = data.n_train();
  const Eigen::Index t = x_star.rows();

  Eigen::MatrixXd joint(n + t, data.dim());
  joint.topRows(n) = data.x;
  joint.bottomRows(t) = x_star;
  const ConditionedKernel sys = kernel_system(kernel, joint);

  RunningStatsVec stats(t);
  std::vector<Eigen::VectorXd> wave(
      std::min<std::size_t>(static_cast<std::size_t>(members), kDrawWave));
  for (int start = 0; start < members; start += kDrawWave) {
    const int len = std::min<int>(kDrawWave, members - start);
    parallel_for(static_cast<std::size_t>(len), [&](std::size_t i) {
      const int m = start + static_cast<int>(i);
      Rng rng(member_seed(seed, static_cast<std::uint64_t>(m)));
      Eigen::MatrixXd w_ext(n + t, width);
      fill_normal(rng, w_ext);
      const Eigen::MatrixXd phi_ext = sys.r.transpose() * w_ext;
      const RfFit fit = fit_min_norm(phi_ext.topRows(n), data.y);
      wave[i] = phi_ext.bottomRows(t) * fit.theta /
                std::sqrt(static_cast<double>(width));
    });
    for (int i = 0; i < len; ++i)
      stats.add(wave[static_cast<std::size_t>(i)]);
  }

  // r_perp^2 for the same joint factorization, via the train-only system.
  const Eigen::VectorXd r_perp_sq =
      gp_posterior_variance_batch(kernel, data.x, x_star);
  return profile_from_stats(stats, r_perp_sq, kernel.diag(x_star));
}

double krr_lipschitz_bound(const Eigen::MatrixXd& k, const Eigen::VectorXd& y,
                           double lambda, double lambda_prime, double c1,
                           int n) {
  if (lambda < 0.0 || lambda_prime < 0.0)
    throw ConfigError("krr_lipschitz_bound: lambdas must be >= 0");
  const ConditionedKernel sys = condition_kernel_matrix(k);
  auto solve_k = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd z =
        sys.r.transpose().triangularView<Eigen::Lower>().solve(v);
    return sys.r.triangularView<Eigen::Upper>().solve(z).eval();
  };
  const Eigen::VectorXd k2y = solve_k(solve_k(y));
  return std::sqrt(static_cast<double>(n)) * c1 *
         std::abs(lambda_prime - lambda) * k2y.norm();
}

RidgePathReport ensemble_lipschitz_diagnostic(
    const FeatureConfig& config, const KernelSpec& kernel, const Dataset& data,
    const Eigen::MatrixXd& x_star, const std::vector<double>& lambda_grid,
    int members, std::uint64_t seed) {
  config.validate();
  if (members < 1)
    throw ConfigError("lipschitz diagnostic: members must be >= 1");
  bool has_zero = false;
  for (const double l : lambda_grid) {
    if (l < 0.0)
      throw ConfigError("lipschitz diagnostic: lambdas must be >= 0");
    if (l == 0.0) has_zero = true;
  }
  if (!has_zero)
    throw ConfigError("lipschitz diagnostic: lambda grid must include 0");

  const Eigen::Index n = data.n_train();
  const Eigen::Index t = x_star.rows();
  const Eigen::Index n_lambda = static_cast<Eigen::Index>(lambda_grid.size());
  const int width = config.width;

  // Kernel regressor path, one factorization per lambda.
  const ConditionedKernel sys = kernel_system(kernel, data.x);
  const Eigen::MatrixXd k_cross = kernel.cross(x_star, data.x);  // T x N
  Eigen::MatrixXd krr_preds(n_lambda, t);
  for (Eigen::Index li = 0; li < n_lambda; ++li) {
    Eigen::MatrixXd shifted = sys.k;
    shifted.diagonal().array() +=
        sys.jitter_used + lambda_grid[static_cast<std::size_t>(li)];
    Eigen::LLT<Eigen::MatrixXd> llt(shifted);
    if (llt.info() != Eigen::Success)
      throw ConditioningFailure("lipschitz diagnostic: KRR solve failed");
    krr_preds.row(li) = (k_cross * llt.solve(data.y)).transpose();
  }

  // Ensemble path, feature draws shared across the lambda grid.
  std::vector<RunningStatsVec> stats(
      static_cast<std::size_t>(n_lambda), RunningStatsVec(t));
  std::vector<Eigen::MatrixXd> wave(
      std::min<std::size_t>(static_cast<std::size_t>(members), kDrawWave));
  for (int start = 0; start < members; start += kDrawWave) {
    const int len = std::min<int>(kDrawWave, members - start);
    parallel_for(static_cast<std::size_t>(len), [&](std::size_t i) {
      const int m = start + static_cast<int>(i);
      const FeatureDraw draw =
          sample_features(config, static_cast<int>(data.dim()),
                          member_seed(seed, static_cast<std::uint64_t>(m)));
      const Eigen::MatrixXd phi = feature_matrix(draw, data.x);
      const Eigen::MatrixXd phi_star = feature_matrix(draw, x_star);
      Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
      gram.selfadjointView<Eigen::Lower>().rankUpdate(
          phi, 1.0 / static_cast<double>(width));
      gram.triangularView<Eigen::StrictlyUpper>() =
          gram.triangularView<Eigen::StrictlyLower>().transpose();
      Eigen::MatrixXd preds(n_lambda, t);
      for (Eigen::Index li = 0; li < n_lambda; ++li) {
        const double l = lambda_grid[static_cast<std::size_t>(li)];
        Eigen::MatrixXd shifted = gram;
        shifted.diagonal().array() += (l == 0.0 ? 1e-8 : l);
        auto llt = llt_with_ladder(shifted);
        if (!llt)
          throw SolverFailure("lipschitz diagnostic: member solve failed");
        const Eigen::VectorXd alpha = llt->solve(data.y);
        preds.row(li) =
            (phi_star * (phi.transpose() * alpha)).transpose() /
            static_cast<double>(width);
      }
      wave[i] = std::move(preds);
    });
    for (int i = 0; i < len; ++i)
      for (Eigen::Index li = 0; li < n_lambda; ++li)
        stats[static_cast<std::size_t>(li)].add(
            wave[static_cast<std::size_t>(i)].row(li).transpose());
  }

  Eigen::Index zero_idx = 0;
  for (Eigen::Index li = 0; li < n_lambda; ++li)
    if (lambda_grid[static_cast<std::size_t>(li)] == 0.0) zero_idx = li;

  // Lipschitz slope per test point: sqrt(N) * C1(x*) * sqrt(y^T K^-4 y).
  auto solve_k = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd z =
        sys.r.transpose().triangularView<Eigen::Lower>().solve(v);
    return sys.r.triangularView<Eigen::Upper>().solve(z).eval();
  };
  const double k4_norm = solve_k(solve_k(data.y)).norm();

  RidgePathReport report;
  report.lambdas = lambda_grid;
  report.ens_diffs.resize(n_lambda, t);
  report.krr_diffs.resize(n_lambda, t);
  report.bound_values.resize(n_lambda, t);
  const Eigen::VectorXd mean0 = stats[static_cast<std::size_t>(zero_idx)].mean();
  for (Eigen::Index li = 0; li < n_lambda; ++li) {
    const Eigen::VectorXd mean_l = stats[static_cast<std::size_t>(li)].mean();
    report.ens_diffs.row(li) = (mean_l - mean0).cwiseAbs().transpose();
    report.krr_diffs.row(li) =
        (krr_preds.row(li) - krr_preds.row(zero_idx)).cwiseAbs();
    for (Eigen::Index ti = 0; ti < t; ++ti) {
      const double c1 = k_cross.row(ti).maxCoeff();
      report.bound_values(li, ti) =
          std::sqrt(static_cast<double>(n)) * c1 *
          lambda_grid[static_cast<std::size_t>(li)] * k4_norm;
    }
  }
  return report;
}

CounterexampleResult counterexample_expectation(CounterexampleCase which) {
  // W uniform on {+-4, +-3}/sqrt(12.5): W^2 in {32/25, 18/25}. The chosen
  // case puts w_perp = sqrt(2) on one |W| value and 0 on the other.
  const Rational prob(1, 4);
  const Rational w_sq_four(32, 25);   // (4/sqrt(12.5))^2
  const Rational w_sq_three(18, 25);  // (3/sqrt(12.5))^2
  const Rational wp_sq_hit = Rational::integer(2);
  const Rational zero = Rational::integer(0);

  struct Outcome {
    int sign;
    Rational w_sq;
    Rational wp_sq;
  };
  const Rational& hit = which == CounterexampleCase::ThreeMass ? w_sq_three
                                                               : w_sq_four;
  std::vector<Outcome> outcomes;
  for (const Rational& wsq : {w_sq_four, w_sq_three})
    for (const int sign : {+1, -1})
      outcomes.push_back({sign, wsq, wsq == hit ? wp_sq_hit : zero});

  CounterexampleResult res;
  res.expectation = zero;
  res.e_w_squared = zero;
  res.e_wperp_squared = zero;

  // Signed coefficient sums per irrational group; zero sums mean the exact
  // expectation vanishes.
  std::map<std::pair<std::int64_t, std::int64_t>, Rational> w_groups;
  std::map<std::pair<std::int64_t, std::int64_t>, Rational> wpw_groups;
  auto key = [](const Rational& r) {
    return std::make_pair(r.num(), r.den());
  };
  for (const Outcome& o : outcomes) {
    const Rational signed_prob =
        o.sign > 0 ? prob : zero - prob;
    res.e_w_squared = res.e_w_squared + prob * o.w_sq;
    res.e_wperp_squared = res.e_wperp_squared + prob * o.wp_sq;
    res.expectation = res.expectation + prob * (o.wp_sq / o.w_sq);

    auto& wg = w_groups[key(o.w_sq)];
    wg = wg + signed_prob;
    if (!o.wp_sq.is_zero()) {
      auto& cg = wpw_groups[key(o.w_sq * o.wp_sq)];
      cg = cg + signed_prob;
    }
  }
  res.e_w_is_zero = true;
  for (const auto& group : w_groups)
    if (!group.second.is_zero()) res.e_w_is_zero = false;
  res.e_wperp_w_is_zero = true;
  for (const auto& group : wpw_groups)
    if (!group.second.is_zero()) res.e_wperp_w_is_zero = false;
  return res;
}

UnderparamResult underparam_transformed_kernel(const FeatureConfig& config,
                                               const KernelSpec& kernel,
                                               const Dataset& data,
                                               const Eigen::MatrixXd& x_star,
                                               int mc_draws,
                                               std::uint64_t seed) {
  config.validate();
  const Eigen::Index n = data.n_train();
  const Eigen::Index t = x_star.rows();
  const int width = config.width;
  if (width >= n)
    throw InvalidRegime("underparam_transformed_kernel: requires D < N");
  if (mc_draws < 2)
    throw ConfigError("underparam_transformed_kernel: mc_draws must be >= 2");

  Eigen::MatrixXd joint(n + t, data.dim());
  joint.topRows(n) = data.x;
  joint.bottomRows(t) = x_star;
  const ConditionedKernel sys = kernel_system(kernel, joint);
  const Eigen::MatrixXd r_tilde = sys.r.leftCols(n);  // [R; 0]

  constexpr int kBatches = 10;
  const Eigen::Index dim = n + t;
  std::vector<Eigen::MatrixXd> batch_sums(
      kBatches, Eigen::MatrixXd::Zero(dim, dim));
  std::vector<std::int64_t> batch_counts(kBatches, 0);
  std::int64_t dropped = 0;

  std::vector<Eigen::MatrixXd> wave(
      std::min<std::size_t>(static_cast<std::size_t>(mc_draws), kDrawWave));
  for (int start = 0; start < mc_draws; start += kDrawWave) {
    const int len = std::min<int>(kDrawWave, mc_draws - start);
    parallel_for(static_cast<std::size_t>(len), [&](std::size_t i) {
      const int j = start + static_cast<int>(i);
      const FeatureDraw draw =
          sample_features(config, static_cast<int>(data.dim()),
                          member_seed(seed, static_cast<std::uint64_t>(j)));
      const Eigen::MatrixXd phi_ext = feature_matrix(draw, joint);
      const Eigen::MatrixXd w_tilde =
          sys.r.transpose().triangularView<Eigen::Lower>().solve(phi_ext);
      const Eigen::MatrixXd phi = phi_ext.topRows(n);
      Eigen::MatrixXd q = phi.transpose() * phi;  // D x D
      Eigen::LLT<Eigen::MatrixXd> llt(q);
      if (llt.info() != Eigen::Success) {
        wave[i].setZero(0, 0);
        return;
      }
      const Eigen::MatrixXd term =
          w_tilde * llt.solve(w_tilde.transpose());
      wave[i] = term.allFinite() ? term : Eigen::MatrixXd();
    });
    for (int i = 0; i < len; ++i) {
      const int j = start + i;
      Eigen::MatrixXd& term = wave[static_cast<std::size_t>(i)];
      if (term.size() == 0) {
        ++dropped;
        continue;
      }
      const int b = static_cast<int>(
          (static_cast<std::int64_t>(j) * kBatches) / mc_draws);
      batch_sums[static_cast<std::size_t>(b)] += term;
      ++batch_counts[static_cast<std::size_t>(b)];
    }
  }

  if (static_cast<double>(dropped) >
      kDropAbortFraction * static_cast<double>(mc_draws))
    throw SolverFailure("underparam_transformed_kernel: too many singular "
                        "draws (" + std::to_string(dropped) + ")");
  for (int b = 0; b < kBatches; ++b)
    if (batch_counts[static_cast<std::size_t>(b)] == 0)
      throw SolverFailure("underparam_transformed_kernel: empty MC batch");

  // Assemble the transformed kernel matrix from an estimate of
  // E[W~ (Phi^T Phi)^-1 W~^T] (Woodbury form; see the module docs).
  auto assemble = [&](const Eigen::MatrixXd& m_hat, Eigen::MatrixXd* k_tilde,
                      Eigen::VectorXd* preds, double* proj_norm) {
    Eigen::MatrixXd m_sym = 0.5 * (m_hat + m_hat.transpose());
    const Eigen::MatrixXd u = m_sym * r_tilde;            // (N+T) x N
    const Eigen::MatrixXd p_hat = r_tilde.transpose() * u;  // N x N
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(p_hat);
    const double norm2 =
        std::max(std::abs(eig.eigenvalues().minCoeff()),
                 std::abs(eig.eigenvalues().maxCoeff()));
    if (proj_norm) *proj_norm = norm2;
    if (norm2 >= 1.0 - 1e-6)
      throw ContractionViolated(
          "underparam_transformed_kernel: |E[P_W]| = " +
          std::to_string(norm2) + " is not a contraction");
    Eigen::MatrixXd i_minus_p = -p_hat;
    i_minus_p.diagonal().array() += 1.0;
    Eigen::LLT<Eigen::MatrixXd> llt(i_minus_p);
    if (llt.info() != Eigen::Success)
      throw SolverFailure("underparam_transformed_kernel: I - E[P] solve");
    const Eigen::MatrixXd a_inv =
        m_sym + u * llt.solve(u.transpose());
    Eigen::MatrixXd kt = sys.r.transpose() * a_inv * sys.r;
    kt = 0.5 * (kt + kt.transpose());
    Eigen::MatrixXd k_train = kt.topLeftCorner(n, n);
    k_train.diagonal().array() += 1.0;  // unit ridge
    Eigen::LLT<Eigen::MatrixXd> solve_llt(k_train);
    if (solve_llt.info() != Eigen::Success)
      throw SolverFailure("underparam_transformed_kernel: K~ + I solve");
    if (preds) *preds = kt.bottomLeftCorner(t, n) * solve_llt.solve(data.y);
    if (k_tilde) *k_tilde = std::move(kt);
  };

  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(dim, dim);
  std::int64_t total_count = 0;
  for (int b = 0; b < kBatches; ++b) {
    total += batch_sums[static_cast<std::size_t>(b)];
    total_count += batch_counts[static_cast<std::size_t>(b)];
  }

  UnderparamResult out;
  out.dropped = dropped;
  assemble(total / static_cast<double>(total_count), &out.k_tilde,
           &out.predictions, &out.projection_norm);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> keig(out.k_tilde);
  out.min_eigenvalue = keig.eigenvalues().minCoeff();

  // Batch-replicate standard error of the predictions.
  Eigen::MatrixXd batch_preds(kBatches, t);
  for (int b = 0; b < kBatches; ++b) {
    Eigen::VectorXd preds;
    assemble(batch_sums[static_cast<std::size_t>(b)] /
                 static_cast<double>(batch_counts[static_cast<std::size_t>(b)]),
             nullptr, &preds, nullptr);
    batch_preds.row(b) = preds.transpose();
  }
  const Eigen::VectorXd batch_mean = batch_preds.colwise().mean().transpose();
  const Eigen::VectorXd batch_var =
      (batch_preds.rowwise() - batch_mean.transpose())
          .colwise()
          .squaredNorm()
          .transpose() /
      static_cast<double>(kBatches - 1);
  out.prediction_se = (batch_var / static_cast<double>(kBatches)).cwiseSqrt();
  return out;
}

}  // namespace rflab
