#include "selftest.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <string>

#include <Eigen/Dense>

#include "rflab/analysis.hpp"
#include "rflab/data.hpp"
#include "rflab/ensembles.hpp"
#include "rflab/kernels.hpp"
#include "rflab/regressors.hpp"

namespace rflab_cli {

namespace {

using namespace rflab;

struct Runner {
  int failures = 0;

  void check(const std::string& name, const std::function<bool()>& fn) {
    bool ok = false;
    std::string note;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      note = std::string(" (") + e.what() + ")";
    }
    std::printf("%s %s%s\n", ok ? "PASS" : "FAIL", name.c_str(), note.c_str());
    if (!ok) ++failures;
  }
};

Eigen::VectorXd vec2(double a, double b) {
  Eigen::VectorXd v(2);
  v << a, b;
  return v;
}

}  // namespace

int run_selftest() {
  Runner r;

  r.check("arc_cosine_identity", [] {
    return std::abs(arc_cosine_kernel(vec2(1, 0), vec2(1, 0)) - 0.5) < 1e-15;
  });
  r.check("arc_cosine_orthogonal", [] {
    return std::abs(arc_cosine_kernel(vec2(1, 0), vec2(0, 1)) -
                    1.0 / (2.0 * M_PI)) < 1e-15;
  });
  r.check("erf_kernel_value", [] {
    Eigen::VectorXd one(1);
    one << 1.0;
    return std::abs(erf_kernel(one, one) -
                    (2.0 / M_PI) * std::asin(2.0 / 3.0)) < 1e-15;
  });
  r.check("counterexample_exact", [] {
    const auto three = counterexample_expectation(CounterexampleCase::ThreeMass);
    const auto four = counterexample_expectation(CounterexampleCase::FourMass);
    return three.expectation == Rational(25, 18) &&
           four.expectation == Rational(25, 32) && three.e_w_is_zero &&
           three.e_wperp_w_is_zero && three.e_w_squared == Rational(1, 1) &&
           three.e_wperp_squared == Rational(1, 1);
  });
  r.check("member_seed_injective_10k", [] {
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 10'000; ++i)
      if (!seen.insert(member_seed(7, i)).second) return false;
    return true;
  });
  r.check("whiten_reconstruction", [] {
    const Dataset ds = synth_dataset(3, 6, 4, 1);
    const KernelSpec kernel = KernelSpec::arc_cosine();
    const ConditionedKernel sys = kernel_system(kernel, ds.x);
    Eigen::MatrixXd kj = sys.k;
    kj.diagonal().array() += sys.jitter_used;
    const double rel = (sys.r.transpose() * sys.r - kj).norm() / kj.norm();
    return rel < 1e-8;
  });
  r.check("gp_variance_zero_at_training_point", [] {
    const Dataset ds = synth_dataset(3, 6, 4, 1);
    const KernelSpec kernel = KernelSpec::arc_cosine();
    const double v =
        gp_posterior_variance(kernel, ds.x, ds.x.row(2).transpose());
    return std::abs(v) < 1e-10;
  });
  r.check("min_norm_interpolates", [] {
    // Identity features on full-dimensional data give a well-conditioned
    // Gram, the regime where interpolation is exact.
    const Dataset ds = synth_dataset(5, 6, 4, 6);
    const FeatureConfig fc{WeightDistSpec::standard_normal(),
                           ActivationSpec::identity(), 64, false};
    const TrainedRFModel model =
        fit_rf_model(sample_features(fc, 6, 11), ds.x, ds.y, 0.0);
    const Eigen::VectorXd pred = predict_rf_batch(model, ds.x);
    return (pred - ds.y).cwiseAbs().maxCoeff() <
           1e-6 * (1.0 + ds.y.cwiseAbs().maxCoeff());
  });
  r.check("kernel_regressor_interpolates", [] {
    const Dataset ds = synth_dataset(5, 6, 4, 1);
    const KernelRegressor reg =
        fit_kernel_regressor(KernelSpec::arc_cosine(), ds.x, ds.y, 0.0);
    const Eigen::VectorXd pred = predict_kernel_batch(reg, ds.x);
    return (pred - ds.y).cwiseAbs().maxCoeff() <
           1e-6 * (1.0 + ds.y.cwiseAbs().maxCoeff());
  });
  r.check("ensemble_deterministic", [] {
    const Dataset ds = synth_dataset(5, 6, 8, 1);
    EnsembleConfig ec;
    ec.feature_config = FeatureConfig{WeightDistSpec::standard_normal(),
                                      ActivationSpec::relu(), 32, true};
    ec.members = 16;
    ec.base_seed = 9;
    const EnsembleResult a = mc_infinite_ensemble(ec, ds, ds.x_test);
    const EnsembleResult b = mc_infinite_ensemble(ec, ds, ds.x_test);
    return a.mean == b.mean && a.variance == b.variance;
  });
  r.check("dataset_deterministic", [] {
    const Dataset a = synth_dataset(17, 6, 4, 2);
    const Dataset b = synth_dataset(17, 6, 4, 2);
    return a.x == b.x && a.y == b.y && a.x_test == b.x_test;
  });
  r.check("empirical_kernel_matches_closed_form", [] {
    Eigen::MatrixXd pts(2, 2);
    pts << 1.0, 0.0, 0.0, 1.0;
    const auto est = empirical_kernel(ActivationSpec::relu(),
                                      WeightDistSpec::standard_normal(), pts,
                                      200'000, 21);
    const double expect = arc_cosine_kernel(pts.row(0), pts.row(1));
    return std::abs(est.k(0, 1) - expect) < 3.0 * est.standard_error(0, 1) +
                                                1e-12;
  });

  std::printf("%s (%d failure%s)\n", r.failures == 0 ? "SELFTEST OK" : "SELFTEST FAILED",
              r.failures, r.failures == 1 ? "" : "s");
  return r.failures;
}

}  // namespace rflab_cli
