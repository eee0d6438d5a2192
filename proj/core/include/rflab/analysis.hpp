#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "rflab/data.hpp"
#include "rflab/ensembles.hpp"
#include "rflab/kernels.hpp"
#include "rflab/rational.hpp"

namespace rflab {

/// Monte-Carlo samples of the whitened expectation term
///   w_perp^T W^T (W W^T + D lambda K^-1)^-1   (lambda = 0: ridgeless form)
/// one row per kept feature draw. Non-finite draws are dropped and counted;
/// more than 0.1% dropped aborts the run.
struct ExpectationTermSamples {
  Eigen::MatrixXd samples;  // kept x N
  std::int64_t requested = 0;
  std::int64_t dropped = 0;

  Eigen::VectorXd mean() const;
  Eigen::VectorXd standard_error() const;
};

ExpectationTermSamples expectation_term_samples(const FeatureConfig& config,
                                                const Dataset& data,
                                                const Eigen::VectorXd& x_star,
                                                const KernelSpec& kernel,
                                                int draws, std::uint64_t seed);

ExpectationTermSamples ridge_expectation_term_samples(
    const FeatureConfig& config, const Dataset& data,
    const Eigen::VectorXd& x_star, const KernelSpec& kernel, double lambda,
    int draws, std::uint64_t seed);

/// One sample of the expectation term from explicit whitened features.
/// ridge_term is D*lambda*K^-1 (pass a zero matrix for the ridgeless case).
Eigen::VectorXd expectation_term_from_whitened(
    const Eigen::MatrixXd& w, const Eigen::VectorXd& w_perp,
    const Eigen::MatrixXd& ridge_term);

/// Variance of a single min-norm RF model under Gaussian whitened features:
///   r_perp^2 * (y^T K^-1 y) / (D - N - 1),
/// with y^T K^-1 y = |R^-T y|^2. Requires D > N + 1.
double gaussian_variance_formula(const Eigen::MatrixXd& r_chol,
                                 const Eigen::VectorXd& y, double r_perp,
                                 int width, int n_train);

struct VarianceProfileRow {
  double ensemble_variance = 0.0;
  double r_perp_squared = 0.0;
  double ratio = 0.0;  // NaN where r_perp^2 is below the degeneracy floor
};

struct VarianceProfile {
  std::vector<VarianceProfileRow> rows;  // one per row of x_star
  int members = 0;
};

/// Empirical member variance vs. GP posterior variance r_perp^2 per test
/// point, for actual random features of the given config.
VarianceProfile variance_vs_gp_profile(const FeatureConfig& config,
                                       const KernelSpec& kernel,
                                       const Dataset& data,
                                       const Eigen::MatrixXd& x_star,
                                       int members, std::uint64_t seed);

/// Same profile with exact Gaussian features: each member samples the
/// whitened extended feature matrix with i.i.d. standard normal entries and
/// maps it through the Cholesky factor of the joint train/test kernel.
VarianceProfile gaussian_variance_profile(const KernelSpec& kernel,
                                          const Dataset& data,
                                          const Eigen::MatrixXd& x_star,
                                          int width, int members,
                                          std::uint64_t seed);

/// sqrt(n) * C1 * |l' - l| * sqrt(y^T K^-4 y); K^-4 via two Cholesky solves.
double krr_lipschitz_bound(const Eigen::MatrixXd& k, const Eigen::VectorXd& y,
                           double lambda, double lambda_prime, double c1,
                           int n);

/// Per-lambda curves of |ens_mean(lambda) - ens_mean(0)| and
/// |krr(lambda) - krr(0)|, plus the Lipschitz bound for the pair (0,
/// lambda). Member feature draws are shared across the lambda grid.
struct RidgePathReport {
  std::vector<double> lambdas;
  Eigen::MatrixXd ens_diffs;     // L x T
  Eigen::MatrixXd krr_diffs;     // L x T
  Eigen::MatrixXd bound_values;  // L x T, bound for the pair (0, lambda)
};

RidgePathReport ensemble_lipschitz_diagnostic(
    const FeatureConfig& config, const KernelSpec& kernel, const Dataset& data,
    const Eigen::MatrixXd& x_star, const std::vector<double>& lambda_grid,
    int members, std::uint64_t seed);

/// Exact enumeration of E = E[w_perp^2 / W^2] over the four-point weight
/// distribution W in {+-4, +-3}/sqrt(12.5) with w_perp = sqrt(2) on the
/// masses named by the case, 0 elsewhere.
enum class CounterexampleCase { ThreeMass, FourMass };

struct CounterexampleResult {
  Rational expectation;       // E[w_perp^2 / W^2]
  Rational e_w_squared;       // E[W^2]
  Rational e_wperp_squared;   // E[w_perp^2]
  bool e_w_is_zero = false;       // E[W] = 0, exact
  bool e_wperp_w_is_zero = false; // E[w_perp W] = 0, exact
};

CounterexampleResult counterexample_expectation(CounterexampleCase which);

/// Transformed-kernel construction for underparameterized ensembles
/// (D < N): MC-estimates E[W~ (Phi^T Phi)^-1 W~^T] over draws, assembles the
/// joint (N+T) x (N+T) transformed kernel matrix and returns kernel ridge
/// predictions with unit ridge under it.
struct UnderparamResult {
  Eigen::MatrixXd k_tilde;        // (N+T) x (N+T)
  Eigen::VectorXd predictions;    // T
  Eigen::VectorXd prediction_se;  // batch-replicate MC standard error
  double min_eigenvalue = 0.0;    // of k_tilde
  double projection_norm = 0.0;   // |E[P_W]|_2
  std::int64_t dropped = 0;
};

UnderparamResult underparam_transformed_kernel(const FeatureConfig& config,
                                               const KernelSpec& kernel,
                                               const Dataset& data,
                                               const Eigen::MatrixXd& x_star,
                                               int mc_draws,
                                               std::uint64_t seed);

}  // namespace rflab
