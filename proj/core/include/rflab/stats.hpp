#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace rflab {

/// Streaming mean/variance accumulator (Welford recurrence with Kahan
/// compensation on both running sums). Feeding the same values in the same
/// order always produces bit-identical results, which is the summation
/// contract shared by batch and streaming ensemble statistics.
class RunningStats {
public:
  void add(double x) {
    ++n_;
    const double delta = x - mean_;
    kahan_add(mean_, mean_c_, delta / static_cast<double>(n_));
    const double delta2 = x - mean_;
    kahan_add(m2_, m2_c_, delta * delta2);
  }

  std::int64_t count() const { return n_; }
  double mean() const { return mean_; }

  /// Unbiased sample variance (divisor n-1); 0 for fewer than two samples.
  double variance() const {
    return n_ > 1 ? std::max(0.0, m2_ / static_cast<double>(n_ - 1)) : 0.0;
  }

  double standard_error() const {
    return n_ > 0 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0;
  }

private:
  static void kahan_add(double& sum, double& comp, double term) {
    const double y = term - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }

  std::int64_t n_ = 0;
  double mean_ = 0.0, mean_c_ = 0.0;
  double m2_ = 0.0, m2_c_ = 0.0;
};

/// One RunningStats per coordinate; used for pointwise ensemble statistics.
class RunningStatsVec {
public:
  explicit RunningStatsVec(Eigen::Index size) : stats_(size) {}

  void add(const Eigen::VectorXd& values) {
    for (Eigen::Index i = 0; i < values.size(); ++i)
      stats_[static_cast<std::size_t>(i)].add(values[i]);
  }

  Eigen::Index size() const { return static_cast<Eigen::Index>(stats_.size()); }
  std::int64_t count() const { return stats_.empty() ? 0 : stats_[0].count(); }

  Eigen::VectorXd mean() const {
    Eigen::VectorXd out(size());
    for (Eigen::Index i = 0; i < out.size(); ++i)
      out[i] = stats_[static_cast<std::size_t>(i)].mean();
    return out;
  }

  Eigen::VectorXd variance() const {
    Eigen::VectorXd out(size());
    for (Eigen::Index i = 0; i < out.size(); ++i)
      out[i] = stats_[static_cast<std::size_t>(i)].variance();
    return out;
  }

  Eigen::VectorXd standard_error() const {
    Eigen::VectorXd out(size());
    for (Eigen::Index i = 0; i < out.size(); ++i)
      out[i] = stats_[static_cast<std::size_t>(i)].standard_error();
    return out;
  }

private:
  std::vector<RunningStats> stats_;
};

}  // namespace rflab
