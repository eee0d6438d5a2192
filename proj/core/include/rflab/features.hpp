#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Core>

#include "rflab/rng.hpp"

namespace rflab {

enum class WeightDist { StandardNormal, Uniform, Laplace };

struct WeightDistSpec {
  WeightDist kind = WeightDist::StandardNormal;
  double lo = -10.0, hi = 10.0;     // Uniform
  double loc = 0.0, scale = 1.0;    // Laplace

  static WeightDistSpec standard_normal() { return {}; }
  static WeightDistSpec uniform(double lo, double hi);
  static WeightDistSpec laplace(double loc, double scale);

  void validate() const;
  std::string describe() const;
};

enum class Activation { ReLU, Erf, Softplus, Identity };

struct ActivationSpec {
  Activation kind = Activation::ReLU;
  double beta = 1.0;  // Softplus only

  static ActivationSpec relu() { return {Activation::ReLU, 1.0}; }
  static ActivationSpec erf() { return {Activation::Erf, 1.0}; }
  static ActivationSpec softplus(double beta = 1.0);
  static ActivationSpec identity() { return {Activation::Identity, 1.0}; }

  void validate() const;
  std::string describe() const;

  /// Apply elementwise, in place. Softplus uses the stable form
  /// max(z,0) + log1p(exp(-|z|)) scaled by 1/beta.
  void apply(Eigen::Ref<Eigen::MatrixXd> z) const;
  double apply_scalar(double z) const;
};

/// Fully determines the law of one random-feature draw.
struct FeatureConfig {
  WeightDistSpec weight_dist{};
  ActivationSpec activation{};
  int width = 200;            // D, rows of Omega
  bool bias_augment = true;   // prepend a constant-1 input coordinate

  void validate() const;
};

/// A concrete weight sample Omega: width x (p+1) with bias augmentation,
/// width x p without. Reconstructible bit-exactly from (config, seed, p).
struct FeatureDraw {
  Eigen::MatrixXd omega;
  FeatureConfig config;
  std::uint64_t seed = 0;

  Eigen::Index input_dim() const {
    return omega.cols() - (config.bias_augment ? 1 : 0);
  }
};

/// Deterministic per-member seed stream; injective in member_index for a
/// fixed base seed. Used for every ensemble member and MC replicate.
std::uint64_t member_seed(std::uint64_t base_seed, std::uint64_t member_index);

/// Draw Omega (config.width rows of dimension p, +1 with bias augmentation)
/// from the weight distribution. Rows are filled in order, each row left to
/// right; the order is part of the determinism contract.
FeatureDraw sample_features(const FeatureConfig& config, int p,
                            std::uint64_t seed);

/// Prepend a constant-1 column: [1 X].
Eigen::MatrixXd augment_ones(const Eigen::MatrixXd& x);
Eigen::VectorXd augment_ones(const Eigen::VectorXd& x);

/// Phi[i][j] = activation(omega_j . [1; x_i]); no 1/sqrt(D) scaling here
/// (scaling lives in the model).
Eigen::MatrixXd feature_matrix(const FeatureDraw& draw,
                               const Eigen::MatrixXd& x);

/// Feature vector at a single point (length D).
Eigen::VectorXd feature_vector(const FeatureDraw& draw,
                               const Eigen::VectorXd& x);

}  // namespace rflab
