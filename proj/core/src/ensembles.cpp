#include "rflab/ensembles.hpp"

#include <cmath>

#include "rflab/errors.hpp"
#include "rflab/parallel.hpp"
#include "rflab/stats.hpp"

namespace rflab {

namespace {

// Members are evaluated in waves of fixed width and their predictions fed
// to the accumulator strictly in member order, so results do not depend on
// the thread count and match the materialized path bit for bit.
constexpr int kMemberWave = 64;

Eigen::VectorXd member_predictions(const EnsembleConfig& config,
                                   const Dataset& data,
                                   const Eigen::MatrixXd& x_star, int member) {
  const std::uint64_t seed =
      member_seed(config.base_seed, static_cast<std::uint64_t>(member));
  FeatureDraw draw = sample_features(
      config.feature_config, static_cast<int>(data.dim()), seed);
  try {
    const TrainedRFModel model =
        fit_rf_model(std::move(draw), data.x, data.y, config.lambda);
    return predict_rf_batch(model, x_star);
  } catch (const Error& e) {
    throw SolverFailure("ensemble member " + std::to_string(member) + ": " +
                        e.what());
  }
}

EnsembleResult finish(const RunningStatsVec& stats) {
  EnsembleResult out;
  out.mean = stats.mean();
  out.variance = stats.variance();
  out.mc_standard_error = stats.standard_error();
  out.members = static_cast<int>(stats.count());
  return out;
}

}  // namespace

void EnsembleConfig::validate() const {
  feature_config.validate();
  if (members < 1) throw ConfigError("ensemble: members must be >= 1");
  if (lambda < 0.0) throw ConfigError("ensemble: lambda must be >= 0");
}

std::vector<TrainedRFModel> build_ensemble(const EnsembleConfig& config,
                                           const Dataset& data) {
  config.validate();
  std::vector<TrainedRFModel> models(static_cast<std::size_t>(config.members));
  parallel_for(models.size(), [&](std::size_t m) {
    const std::uint64_t seed = member_seed(config.base_seed, m);
    FeatureDraw draw = sample_features(
        config.feature_config, static_cast<int>(data.dim()), seed);
    try {
      models[m] = fit_rf_model(std::move(draw), data.x, data.y, config.lambda);
    } catch (const Error& e) {
      throw SolverFailure("ensemble member " + std::to_string(m) + ": " +
                          e.what());
    }
  });
  return models;
}

EnsembleResult ensemble_predict(const std::vector<TrainedRFModel>& models,
                                const Eigen::MatrixXd& x_star) {
  if (models.empty()) throw ConfigError("ensemble_predict: no models");
  RunningStatsVec stats(x_star.rows());
  std::vector<Eigen::VectorXd> wave(
      std::min<std::size_t>(models.size(), kMemberWave));
  for (std::size_t start = 0; start < models.size(); start += kMemberWave) {
    const std::size_t len =
        std::min<std::size_t>(kMemberWave, models.size() - start);
    parallel_for(len, [&](std::size_t i) {
      wave[i] = predict_rf_batch(models[start + i], x_star);
    });
    for (std::size_t i = 0; i < len; ++i) stats.add(wave[i]);
  }
  return finish(stats);
}

EnsembleResult mc_infinite_ensemble(const EnsembleConfig& config,
                                    const Dataset& data,
                                    const Eigen::MatrixXd& x_star) {
  config.validate();
  RunningStatsVec stats(x_star.rows());
  const int m_total = config.members;
  std::vector<Eigen::VectorXd> wave(
      std::min<std::size_t>(static_cast<std::size_t>(m_total), kMemberWave));
  for (int start = 0; start < m_total; start += kMemberWave) {
    const int len = std::min<int>(kMemberWave, m_total - start);
    parallel_for(static_cast<std::size_t>(len), [&](std::size_t i) {
      wave[i] = member_predictions(config, data, x_star,
                                   start + static_cast<int>(i));
    });
    for (int i = 0; i < len; ++i)
      stats.add(wave[static_cast<std::size_t>(i)]);
  }
  return finish(stats);
}

BudgetComparison budget_matched_comparison(const FeatureConfig& base_config,
                                           int total_features, int members,
                                           const Dataset& data,
                                           const Eigen::MatrixXd& x_star,
                                           std::uint64_t seed) {
  if (members < 1)
    throw ConfigError("budget_matched_comparison: members must be >= 1");
  if (total_features % members != 0)
    throw ConfigError(
        "budget_matched_comparison: total_features must be divisible by M");
  const int width = total_features / members;

  EnsembleConfig config;
  config.feature_config = base_config;
  config.feature_config.width = width;
  config.members = members;
  config.lambda = 0.0;
  config.base_seed = seed;
  config.validate();

  const std::vector<TrainedRFModel> models = build_ensemble(config, data);

  // Single model on the exact union of the member draws.
  FeatureConfig big = base_config;
  big.width = total_features;
  Eigen::MatrixXd omega(total_features, models[0].draw.omega.cols());
  for (int m = 0; m < members; ++m)
    omega.middleRows(static_cast<Eigen::Index>(m) * width, width) =
        models[static_cast<std::size_t>(m)].draw.omega;
  FeatureDraw union_draw{std::move(omega), big, seed};
  const TrainedRFModel single =
      fit_rf_model(std::move(union_draw), data.x, data.y, 0.0);

  BudgetComparison out;
  out.ensemble = ensemble_predict(models, x_star);
  out.single_predictions = predict_rf_batch(single, x_star);
  out.l2_gap = std::sqrt(
      (out.ensemble.mean - out.single_predictions).squaredNorm() /
      static_cast<double>(x_star.rows()));

  const Eigen::VectorXd ens_test =
      ensemble_predict(models, data.x_test).mean;
  const Eigen::VectorXd single_test = predict_rf_batch(single, data.x_test);
  const double nt = static_cast<double>(data.n_test());
  out.ensemble_err = (ens_test - data.y_test).squaredNorm() / nt;
  out.single_err = (single_test - data.y_test).squaredNorm() / nt;
  return out;
}

std::vector<HockeyStickRow> hockey_stick_curve(
    const FeatureConfig& base_config, const KernelSpec& kernel,
    const std::vector<int>& d_values, int members, const Dataset& data,
    const Eigen::MatrixXd& x_star, double lambda, std::uint64_t seed) {
  if (d_values.empty())
    throw ConfigError("hockey_stick_curve: d_values is empty");

  const KernelRegressor reg =
      fit_kernel_regressor(kernel, data.x, data.y, lambda);
  const Eigen::VectorXd kernel_pred = predict_kernel_batch(reg, x_star);

  std::vector<HockeyStickRow> rows;
  rows.reserve(d_values.size());
  for (std::size_t i = 0; i < d_values.size(); ++i) {
    EnsembleConfig config;
    config.feature_config = base_config;
    config.feature_config.width = d_values[i];
    config.members = members;
    config.lambda = lambda;
    config.base_seed = derive_seed(seed, i);
    const EnsembleResult res = mc_infinite_ensemble(config, data, x_star);
    HockeyStickRow row;
    row.width = d_values[i];
    row.mean_abs_diff = (res.mean - kernel_pred).cwiseAbs().mean();
    row.mean_member_std = res.variance.cwiseSqrt().mean();
    rows.push_back(row);
  }
  return rows;
}

}  // namespace rflab
