#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Core>

namespace rflab {

struct DatasetMeta {
  std::string source;
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
  std::string normalization = "none";
  bool normalize_target = false;
};

/// A fixed train/test split. Train and test rows are always distinct.
struct Dataset {
  Eigen::MatrixXd x;       // N x p
  Eigen::VectorXd y;       // N
  Eigen::MatrixXd x_test;  // Nt x p
  Eigen::VectorXd y_test;  // Nt
  DatasetMeta meta;

  Eigen::Index n_train() const { return x.rows(); }
  Eigen::Index n_test() const { return x_test.rows(); }
  Eigen::Index dim() const { return x.cols(); }
};

/// Synthetic sine target: inputs uniform on [-5,5]^p, b drawn standard
/// normal per seed (not renormalized), y = sin(5 b.x) + N(0, sigma^2).
Dataset synth_dataset(std::uint64_t seed, int n, int n_test, int p,
                      double noise_sigma = 0.05);

/// California-Housing-style CSV: one header line, 8 numeric feature columns
/// then the target. Features are max-min normalized over the entire file
/// before the seeded permutation and split (first n rows train, next n_test
/// rows test). The target is left in original units unless normalize_target.
Dataset load_calhousing(const std::string& path, std::uint64_t seed, int n,
                        int n_test, bool normalize_target = false);

}  // namespace rflab
