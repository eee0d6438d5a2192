#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "rflab/data.hpp"
#include "rflab/regressors.hpp"

namespace rflab {

struct EnsembleConfig {
  FeatureConfig feature_config;  // per-member width D
  int members = 1;               // M
  double lambda = 0.0;           // 0 selects the min-norm route
  std::uint64_t base_seed = 0;

  void validate() const;
};

/// Pointwise statistics over ensemble members. Variance uses the unbiased
/// M-1 divisor; mc_standard_error = sqrt(variance / M).
struct EnsembleResult {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  Eigen::VectorXd mc_standard_error;
  int members = 0;
};

/// M models sharing the training set; member m is seeded with
/// member_seed(base_seed, m).
std::vector<TrainedRFModel> build_ensemble(const EnsembleConfig& config,
                                           const Dataset& data);

EnsembleResult ensemble_predict(const std::vector<TrainedRFModel>& models,
                                const Eigen::MatrixXd& x_star);

/// Streaming ensemble statistics: members are built, evaluated and
/// discarded, so memory is constant in M. Bit-identical to
/// build_ensemble + ensemble_predict for the same config.
EnsembleResult mc_infinite_ensemble(const EnsembleConfig& config,
                                    const Dataset& data,
                                    const Eigen::MatrixXd& x_star);

struct BudgetComparison {
  EnsembleResult ensemble;
  Eigen::VectorXd single_predictions;
  double l2_gap = 0.0;        // RMS gap between ensemble and single on x_star
  double ensemble_err = 0.0;  // MSE vs held-out targets
  double single_err = 0.0;
};

/// Ensemble of M models with D = total_features / M features each, against
/// one model built on the exact union of the member draws.
BudgetComparison budget_matched_comparison(const FeatureConfig& base_config,
                                           int total_features, int members,
                                           const Dataset& data,
                                           const Eigen::MatrixXd& x_star,
                                           std::uint64_t seed);

struct HockeyStickRow {
  int width = 0;
  double mean_abs_diff = 0.0;    // |ensemble mean - kernel prediction|, avg
  double mean_member_std = 0.0;  // avg member standard deviation
};

/// Ensemble-vs-kernel difference as the member width sweeps across the
/// under/overparameterized boundary.
std::vector<HockeyStickRow> hockey_stick_curve(
    const FeatureConfig& base_config, const KernelSpec& kernel,
    const std::vector<int>& d_values, int members, const Dataset& data,
    const Eigen::MatrixXd& x_star, double lambda, std::uint64_t seed);

}  // namespace rflab
