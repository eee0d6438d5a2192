#include "rflab/regressors.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "rflab/errors.hpp"

namespace rflab {

namespace {

constexpr double kRidgelessJitter = 1e-8;  // stabilizer for ridgeless fits
constexpr double kRankCut = 1e-10;         // relative eigenvalue cutoff

// Solve ((1/D) Phi Phi^T + shift I) alpha = y by Cholesky, escalating the
// shift if factorization fails; falls back to a rank-revealing eigensolve
// of the Gram when even the largest shift fails. Returns theta and fills
// diagnostics.
RfFit solve_dual(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y,
                 double base_shift, bool allow_svd_first) {
  const Eigen::Index n = phi.rows();
  const Eigen::Index d = phi.cols();
  if (y.size() != n)
    throw DimensionMismatch("fit: y length does not match Phi rows");
  if (!phi.allFinite() || !y.allFinite())
    throw SolverFailure("fit: non-finite inputs");

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
  gram.selfadjointView<Eigen::Lower>().rankUpdate(phi,
                                                  1.0 / static_cast<double>(d));
  gram.triangularView<Eigen::StrictlyUpper>() =
      gram.triangularView<Eigen::StrictlyLower>().transpose();

  RfFit fit;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  if (!allow_svd_first) {
    const double mean_diag = gram.diagonal().mean();
    const double shifts[] = {base_shift, base_shift + 1e-6 * mean_diag,
                             base_shift + 1e-4 * mean_diag};
    for (const double shift : shifts) {
      Eigen::MatrixXd sys = gram;
      sys.diagonal().array() += shift;
      Eigen::LLT<Eigen::MatrixXd> llt(sys);
      if (llt.info() == Eigen::Success) {
        const Eigen::VectorXd alpha = llt.solve(y);
        fit.theta = inv_sqrt_d * (phi.transpose() * alpha);
        fit.diagnostics.jitter_used = shift;
        fit.diagnostics.effective_rank = static_cast<int>(n);
        fit.diagnostics.residual_norm =
            (inv_sqrt_d * (phi * fit.theta) - y).norm();
        return fit;
      }
    }
  }

  // Rank-revealing route: pseudo-inverse of the PSD Gram.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success)
    throw SolverFailure("fit: eigendecomposition of the Gram failed");
  const Eigen::VectorXd& evals = eig.eigenvalues();
  const double cut = kRankCut * std::max(evals.maxCoeff(), 0.0);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(n);
  int rank = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ev = evals[i] + base_shift;
    if (evals[i] > cut && ev > 0.0) {
      inv[i] = 1.0 / ev;
      ++rank;
    }
  }
  const Eigen::VectorXd proj = eig.eigenvectors().transpose() * y;
  const Eigen::VectorXd alpha =
      eig.eigenvectors() * inv.cwiseProduct(proj);
  fit.theta = inv_sqrt_d * (phi.transpose() * alpha);
  fit.diagnostics.jitter_used = base_shift;
  fit.diagnostics.effective_rank = rank;
  fit.diagnostics.svd_path = true;
  fit.diagnostics.residual_norm = (inv_sqrt_d * (phi * fit.theta) - y).norm();
  return fit;
}

}  // namespace

RfFit fit_min_norm(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y) {
  // D < N cannot interpolate; go straight to the least-squares route.
  const bool underparameterized = phi.cols() < phi.rows();
  return solve_dual(phi, y, underparameterized ? 0.0 : kRidgelessJitter,
                    underparameterized);
}

RfFit fit_ridge(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y,
                double lambda) {
  if (!(lambda > 0.0)) throw ConfigError("fit_ridge: lambda must be > 0");
  return solve_dual(phi, y, lambda, false);
}

TrainedRFModel fit_rf_model(FeatureDraw draw, const Eigen::MatrixXd& x,
                            const Eigen::VectorXd& y, double lambda) {
  const Eigen::MatrixXd phi = feature_matrix(draw, x);
  RfFit fit = lambda == 0.0 ? fit_min_norm(phi, y) : fit_ridge(phi, y, lambda);
  return TrainedRFModel{std::move(draw), std::move(fit.theta), lambda,
                        fit.diagnostics};
}

double predict_rf(const TrainedRFModel& model, const Eigen::VectorXd& x_star) {
  const Eigen::VectorXd phi = feature_vector(model.draw, x_star);
  return phi.dot(model.theta) / std::sqrt(static_cast<double>(phi.size()));
}

Eigen::VectorXd predict_rf_batch(const TrainedRFModel& model,
                                 const Eigen::MatrixXd& x_star) {
  const Eigen::MatrixXd phi = feature_matrix(model.draw, x_star);
  return (phi * model.theta) / std::sqrt(static_cast<double>(phi.cols()));
}

KernelRegressor fit_kernel_regressor(const KernelSpec& spec,
                                     const Eigen::MatrixXd& x,
                                     const Eigen::VectorXd& y, double lambda) {
  if (lambda < 0.0)
    throw ConfigError("fit_kernel_regressor: lambda must be >= 0");
  if (y.size() != x.rows())
    throw DimensionMismatch("fit_kernel_regressor: y length != rows of X");
  const ConditionedKernel sys = kernel_system(spec, x);
  Eigen::MatrixXd shifted = sys.k;
  shifted.diagonal().array() += lambda + sys.jitter_used;
  Eigen::LLT<Eigen::MatrixXd> llt(shifted);
  if (llt.info() != Eigen::Success)
    throw ConditioningFailure("fit_kernel_regressor: factorization failed");
  KernelRegressor reg;
  reg.spec = spec;
  reg.x_train = x;
  reg.alpha = llt.solve(y);
  reg.chol_r = llt.matrixU();
  reg.lambda = lambda;
  reg.jitter_used = sys.jitter_used;
  return reg;
}

double predict_kernel(const KernelRegressor& reg,
                      const Eigen::VectorXd& x_star) {
  return predict_kernel_batch(reg, x_star.transpose())[0];
}

Eigen::VectorXd predict_kernel_batch(const KernelRegressor& reg,
                                     const Eigen::MatrixXd& x_star) {
  return reg.spec.cross(x_star, reg.x_train) * reg.alpha;
}

KernelPrediction predict_kernel_with_se(const KernelSpec& spec,
                                        const Eigen::MatrixXd& x,
                                        const Eigen::VectorXd& y,
                                        double lambda,
                                        const Eigen::MatrixXd& x_star,
                                        int replicas) {
  KernelPrediction out;
  if (spec.kind != KernelKind::Empirical) {
    const KernelRegressor reg = fit_kernel_regressor(spec, x, y, lambda);
    out.value = predict_kernel_batch(reg, x_star);
    out.standard_error = Eigen::VectorXd::Zero(x_star.rows());
    return out;
  }
  if (replicas < 2)
    throw ConfigError("predict_kernel_with_se: replicas must be >= 2");
  const std::int64_t per_replica =
      std::max<std::int64_t>(1, spec.n_mc_samples / replicas);
  Eigen::MatrixXd preds(replicas, x_star.rows());
  for (int r = 0; r < replicas; ++r) {
    KernelSpec rep = spec;
    rep.n_mc_samples = per_replica;
    rep.seed = derive_seed(spec.seed, static_cast<std::uint64_t>(r));
    const KernelRegressor reg = fit_kernel_regressor(rep, x, y, lambda);
    preds.row(r) = predict_kernel_batch(reg, x_star).transpose();
  }
  out.value = preds.colwise().mean().transpose();
  const Eigen::VectorXd var =
      (preds.rowwise() - out.value.transpose())
          .colwise()
          .squaredNorm()
          .transpose() /
      static_cast<double>(replicas - 1);
  out.standard_error = (var / static_cast<double>(replicas)).cwiseSqrt();
  return out;
}

}  // namespace rflab
