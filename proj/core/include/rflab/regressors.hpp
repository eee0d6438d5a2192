#pragma once

#include <cstdint>

#include <Eigen/Core>

#include "rflab/features.hpp"
#include "rflab/kernels.hpp"

namespace rflab {

struct FitDiagnostics {
  double residual_norm = 0.0;
  int effective_rank = 0;
  double jitter_used = 0.0;  // ridge-like stabilizer added to the N x N Gram
  bool svd_path = false;     // rank-revealing fallback was taken
};

struct RfFit {
  Eigen::VectorXd theta;
  FitDiagnostics diagnostics;
};

/// Minimum-norm interpolating fit (ridgeless):
///   theta = (1/sqrt(D)) Phi^T ((1/D) Phi Phi^T + jitter I)^-1 y
/// via Cholesky with a 1e-8 base jitter; a rank-revealing eigen/SVD route
/// handles D < N (plain least squares) and Cholesky failures.
RfFit fit_min_norm(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y);

/// Ridge fit, lambda > 0:
///   theta = (1/sqrt(D)) Phi^T ((1/D) Phi Phi^T + lambda I)^-1 y,
/// the minimizer of |(1/sqrt(D)) Phi theta - y|^2 + lambda |theta|^2.
RfFit fit_ridge(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y,
                double lambda);

/// A random-feature regressor: frozen draw + fitted coefficients.
struct TrainedRFModel {
  FeatureDraw draw;
  Eigen::VectorXd theta;
  double lambda = 0.0;
  FitDiagnostics diagnostics;
};

/// Build Phi from the draw and fit; lambda = 0 selects the min-norm route.
TrainedRFModel fit_rf_model(FeatureDraw draw, const Eigen::MatrixXd& x,
                            const Eigen::VectorXd& y, double lambda);

double predict_rf(const TrainedRFModel& model, const Eigen::VectorXd& x_star);
Eigen::VectorXd predict_rf_batch(const TrainedRFModel& model,
                                 const Eigen::MatrixXd& x_star);

/// Kernel ridge(less) regressor: alpha solves (K + lambda' I) alpha = y with
/// lambda' = lambda + conditioning jitter.
struct KernelRegressor {
  KernelSpec spec;
  Eigen::MatrixXd x_train;
  Eigen::VectorXd alpha;
  Eigen::MatrixXd chol_r;  // upper-triangular factor of K + lambda' I
  double lambda = 0.0;
  double jitter_used = 0.0;
};

KernelRegressor fit_kernel_regressor(const KernelSpec& spec,
                                     const Eigen::MatrixXd& x,
                                     const Eigen::VectorXd& y, double lambda);

double predict_kernel(const KernelRegressor& reg,
                      const Eigen::VectorXd& x_star);

/// Batch prediction; for empirical kernels this runs a single MC stream
/// over all test points instead of one per point.
Eigen::VectorXd predict_kernel_batch(const KernelRegressor& reg,
                                     const Eigen::MatrixXd& x_star);

struct KernelPrediction {
  Eigen::VectorXd value;
  Eigen::VectorXd standard_error;  // zero for closed-form kernels
};

/// Kernel-regressor prediction with an honest estimate of the MC
/// uncertainty of the kernel itself: for Empirical kernels the sample
/// budget is split across `replicas` independent estimation streams, each
/// fitted separately; the returned value is their mean and the SE the
/// replica standard error. Closed-form kernels take a single exact fit and
/// report zero SE.
KernelPrediction predict_kernel_with_se(const KernelSpec& spec,
                                        const Eigen::MatrixXd& x,
                                        const Eigen::VectorXd& y,
                                        double lambda,
                                        const Eigen::MatrixXd& x_star,
                                        int replicas = 4);

}  // namespace rflab
