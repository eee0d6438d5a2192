#include "rflab/features.hpp"

#include <cmath>

#include "rflab/errors.hpp"

namespace rflab {

WeightDistSpec WeightDistSpec::uniform(double lo, double hi) {
  WeightDistSpec s;
  s.kind = WeightDist::Uniform;
  s.lo = lo;
  s.hi = hi;
  s.validate();
  return s;
}

WeightDistSpec WeightDistSpec::laplace(double loc, double scale) {
  WeightDistSpec s;
  s.kind = WeightDist::Laplace;
  s.loc = loc;
  s.scale = scale;
  s.validate();
  return s;
}

void WeightDistSpec::validate() const {
  if (kind == WeightDist::Uniform && !(lo < hi))
    throw ConfigError("weight_dist: Uniform requires lo < hi");
  if (kind == WeightDist::Laplace && !(scale > 0.0))
    throw ConfigError("weight_dist: Laplace requires scale > 0");
}

std::string WeightDistSpec::describe() const {
  switch (kind) {
    case WeightDist::StandardNormal:
      return "normal";
    case WeightDist::Uniform:
      return "uniform(" + std::to_string(lo) + "," + std::to_string(hi) + ")";
    case WeightDist::Laplace:
      return "laplace(" + std::to_string(loc) + "," + std::to_string(scale) +
             ")";
  }
  return "?";
}

ActivationSpec ActivationSpec::softplus(double beta) {
  ActivationSpec s{Activation::Softplus, beta};
  s.validate();
  return s;
}

void ActivationSpec::validate() const {
  if (kind == Activation::Softplus && !(beta > 0.0))
    throw ConfigError("activation: Softplus requires beta > 0");
}

std::string ActivationSpec::describe() const {
  switch (kind) {
    case Activation::ReLU:
      return "relu";
    case Activation::Erf:
      return "erf";
    case Activation::Softplus:
      return "softplus(" + std::to_string(beta) + ")";
    case Activation::Identity:
      return "identity";
  }
  return "?";
}

void ActivationSpec::apply(Eigen::Ref<Eigen::MatrixXd> z) const {
  switch (kind) {
    case Activation::Identity:
      return;
    case Activation::ReLU:
      z = z.array().max(0.0);
      return;
    case Activation::Softplus:
      // max(z,0) + log(1 + exp(-|z|)): overflow-safe, and log/exp both
      // vectorize (log1p does not).
      if (beta != 1.0) z *= beta;
      z = (z.array().max(0.0) + (1.0 + (-z.array().abs()).exp()).log())
              .matrix();
      if (beta != 1.0) z /= beta;
      return;
    case Activation::Erf:
      z = z.array().unaryExpr([](double v) { return std::erf(v); }).matrix();
      return;
  }
}

double ActivationSpec::apply_scalar(double z) const {
  switch (kind) {
    case Activation::Identity:
      return z;
    case Activation::ReLU:
      return z > 0.0 ? z : 0.0;
    case Activation::Softplus: {
      const double b = beta * z;
      return (std::max(b, 0.0) + std::log1p(std::exp(-std::abs(b)))) / beta;
    }
    case Activation::Erf:
      return std::erf(z);
  }
  return z;
}

void FeatureConfig::validate() const {
  if (width < 1) throw ConfigError("feature_config: width must be >= 1");
  weight_dist.validate();
  activation.validate();
}

std::uint64_t member_seed(std::uint64_t base_seed, std::uint64_t member_index) {
  return derive_seed(base_seed, member_index);
}

FeatureDraw sample_features(const FeatureConfig& config, int p,
                            std::uint64_t seed) {
  config.validate();
  if (p < 1) throw DimensionMismatch("sample_features: p must be >= 1");
  const int dim = p + (config.bias_augment ? 1 : 0);
  Eigen::MatrixXd omega(config.width, dim);
  Rng rng(seed);
  switch (config.weight_dist.kind) {
    case WeightDist::StandardNormal:
      fill_normal(rng, omega);
      break;
    case WeightDist::Uniform:
      for (Eigen::Index i = 0; i < omega.rows(); ++i)
        for (Eigen::Index j = 0; j < omega.cols(); ++j)
          omega(i, j) = rng.uniform(config.weight_dist.lo, config.weight_dist.hi);
      break;
    case WeightDist::Laplace:
      for (Eigen::Index i = 0; i < omega.rows(); ++i)
        for (Eigen::Index j = 0; j < omega.cols(); ++j)
          omega(i, j) =
              rng.laplace(config.weight_dist.loc, config.weight_dist.scale);
      break;
  }
  return FeatureDraw{std::move(omega), config, seed};
}

Eigen::MatrixXd augment_ones(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out(x.rows(), x.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(x.cols()) = x;
  return out;
}

Eigen::VectorXd augment_ones(const Eigen::VectorXd& x) {
  Eigen::VectorXd out(x.size() + 1);
  out[0] = 1.0;
  out.tail(x.size()) = x;
  return out;
}

Eigen::MatrixXd feature_matrix(const FeatureDraw& draw,
                               const Eigen::MatrixXd& x) {
  if (x.cols() != draw.input_dim())
    throw DimensionMismatch("feature_matrix: X has " + std::to_string(x.cols()) +
                            " columns, draw expects " +
                            std::to_string(draw.input_dim()));
  Eigen::MatrixXd z;
  if (draw.config.bias_augment) {
    // [1 X] * Omega^T without materializing the augmented matrix.
    z = x * draw.omega.rightCols(draw.omega.cols() - 1).transpose();
    z.rowwise() += draw.omega.col(0).transpose();
  } else {
    z = x * draw.omega.transpose();
  }
  draw.config.activation.apply(z);
  return z;
}

Eigen::VectorXd feature_vector(const FeatureDraw& draw,
                               const Eigen::VectorXd& x) {
  Eigen::MatrixXd row = feature_matrix(draw, x.transpose());
  return row.transpose();
}

}  // namespace rflab
