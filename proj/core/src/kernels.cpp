#include "rflab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Cholesky>

#include "rflab/errors.hpp"
#include "rflab/parallel.hpp"

namespace rflab {

double arc_cosine_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size())
    throw DimensionMismatch("arc_cosine_kernel: size mismatch");
  const double nx = x.norm();
  const double ny = y.norm();
  if (nx == 0.0 || ny == 0.0) return 0.0;
  const double cos_t = std::clamp(x.dot(y) / (nx * ny), -1.0, 1.0);
  const double t = std::acos(cos_t);
  return (nx * ny) * (std::sin(t) + (M_PI - t) * cos_t) / (2.0 * M_PI);
}

double erf_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size())
    throw DimensionMismatch("erf_kernel: size mismatch");
  const double denom =
      std::sqrt((1.0 + 2.0 * x.squaredNorm()) * (1.0 + 2.0 * y.squaredNorm()));
  const double arg = std::clamp(2.0 * x.dot(y) / denom, -1.0, 1.0);
  return (2.0 / M_PI) * std::asin(arg);
}

KernelSpec KernelSpec::arc_cosine(bool augment) {
  KernelSpec s;
  s.kind = KernelKind::ArcCosine;
  s.augment_inputs = augment;
  return s;
}

KernelSpec KernelSpec::erf(bool augment) {
  KernelSpec s;
  s.kind = KernelKind::Erf;
  s.augment_inputs = augment;
  return s;
}

KernelSpec KernelSpec::empirical(ActivationSpec act, WeightDistSpec dist,
                                 std::int64_t n_samples, std::uint64_t seed,
                                 bool augment) {
  if (n_samples < 1)
    throw ConfigError("kernel: n_mc_samples must be >= 1");
  KernelSpec s;
  s.kind = KernelKind::Empirical;
  s.augment_inputs = augment;
  s.activation = act;
  s.weight_dist = dist;
  s.n_mc_samples = n_samples;
  s.seed = seed;
  return s;
}

std::string KernelSpec::describe() const {
  switch (kind) {
    case KernelKind::ArcCosine:
      return "arc-cosine";
    case KernelKind::Erf:
      return "erf";
    case KernelKind::Empirical:
      return "empirical(" + activation.describe() + "," +
             weight_dist.describe() + ",n=" + std::to_string(n_mc_samples) +
             ")";
  }
  return "?";
}

namespace {

// ---------------------------------------------------------------------------
// Streaming Monte-Carlo kernel estimation.
//
// Samples are processed in fixed-size blocks; block b draws its features
// from Rng(derive_seed(seed, b)). Partial results are reduced strictly in
// block order inside waves of constant width, so the estimate is
// bit-identical for any thread count.
// ---------------------------------------------------------------------------

constexpr std::int64_t kWaveWidth = 8;

std::int64_t mc_block_size(Eigen::Index n_points) {
  const std::int64_t target = 4'194'304 / std::max<Eigen::Index>(n_points, 1);
  return std::clamp<std::int64_t>(target, 1024, 65536);
}

void sample_weight_block(const WeightDistSpec& dist, Rng& rng,
                         Eigen::MatrixXd& omega) {
  switch (dist.kind) {
    case WeightDist::StandardNormal:
      fill_normal(rng, omega);
      return;
    case WeightDist::Uniform:
      for (Eigen::Index i = 0; i < omega.rows(); ++i)
        for (Eigen::Index j = 0; j < omega.cols(); ++j)
          omega(i, j) = rng.uniform(dist.lo, dist.hi);
      return;
    case WeightDist::Laplace:
      for (Eigen::Index i = 0; i < omega.rows(); ++i)
        for (Eigen::Index j = 0; j < omega.cols(); ++j)
          omega(i, j) = rng.laplace(dist.loc, dist.scale);
      return;
  }
}

// Feature block for `points` (P x dim): returns P x n_block.
Eigen::MatrixXd feature_block(const ActivationSpec& act,
                              const WeightDistSpec& dist,
                              const Eigen::MatrixXd& points,
                              std::int64_t n_block, std::uint64_t block_seed) {
  Eigen::MatrixXd omega(static_cast<Eigen::Index>(n_block), points.cols());
  Rng rng(block_seed);
  sample_weight_block(dist, rng, omega);
  Eigen::MatrixXd f = points * omega.transpose();
  act.apply(f);
  return f;
}

struct McPartial {
  Eigen::MatrixXd sum;     // accumulated F F^T (lower triangle valid)
  Eigen::MatrixXd sum_sq;  // accumulated F.^2 (F.^2)^T if requested
  bool used = false;
};

// Accumulates sum (and optionally sum of squared products) of phi_i phi_j
// over n_samples draws. Output matrices are fully symmetric.
void mc_gram_accumulate(const ActivationSpec& act, const WeightDistSpec& dist,
                        const Eigen::MatrixXd& points, std::int64_t n_samples,
                        std::uint64_t seed, Eigen::MatrixXd& sum,
                        Eigen::MatrixXd* sum_sq) {
  const Eigen::Index p = points.rows();
  const std::int64_t block = mc_block_size(p);
  const std::int64_t n_blocks = (n_samples + block - 1) / block;

  sum.setZero(p, p);
  if (sum_sq) sum_sq->setZero(p, p);

  std::vector<McPartial> wave(static_cast<std::size_t>(kWaveWidth));
  for (std::int64_t wave_start = 0; wave_start < n_blocks;
       wave_start += kWaveWidth) {
    const std::int64_t wave_len = std::min(kWaveWidth, n_blocks - wave_start);
    parallel_for(static_cast<std::size_t>(wave_len), [&](std::size_t wi) {
      const std::int64_t b = wave_start + static_cast<std::int64_t>(wi);
      const std::int64_t nb = std::min(block, n_samples - b * block);
      const Eigen::MatrixXd f =
          feature_block(act, dist, points, nb, derive_seed(seed, b));
      McPartial& part = wave[wi];
      part.sum.setZero(p, p);
      part.sum.selfadjointView<Eigen::Lower>().rankUpdate(f);
      if (sum_sq) {
        const Eigen::MatrixXd f2 = f.array().square().matrix();
        part.sum_sq.setZero(p, p);
        part.sum_sq.selfadjointView<Eigen::Lower>().rankUpdate(f2);
      }
      part.used = true;
    });
    for (std::int64_t wi = 0; wi < wave_len; ++wi) {
      sum += wave[wi].sum;
      if (sum_sq) *sum_sq += wave[wi].sum_sq;
    }
  }
  sum.triangularView<Eigen::StrictlyUpper>() =
      sum.triangularView<Eigen::StrictlyLower>().transpose();
  if (sum_sq)
    sum_sq->triangularView<Eigen::StrictlyUpper>() =
        sum_sq->triangularView<Eigen::StrictlyLower>().transpose();
}

// Cross-Gram accumulation between the first na rows and the remaining rows
// of `points`, sharing one feature draw per block.
Eigen::MatrixXd mc_cross_accumulate(const ActivationSpec& act,
                                    const WeightDistSpec& dist,
                                    const Eigen::MatrixXd& points,
                                    Eigen::Index na, std::int64_t n_samples,
                                    std::uint64_t seed) {
  const Eigen::Index p = points.rows();
  const Eigen::Index nb_rows = p - na;
  const std::int64_t block = mc_block_size(p);
  const std::int64_t n_blocks = (n_samples + block - 1) / block;

  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(na, nb_rows);
  std::vector<Eigen::MatrixXd> wave(static_cast<std::size_t>(kWaveWidth));
  for (std::int64_t wave_start = 0; wave_start < n_blocks;
       wave_start += kWaveWidth) {
    const std::int64_t wave_len = std::min(kWaveWidth, n_blocks - wave_start);
    parallel_for(static_cast<std::size_t>(wave_len), [&](std::size_t wi) {
      const std::int64_t b = wave_start + static_cast<std::int64_t>(wi);
      const std::int64_t nb = std::min(block, n_samples - b * block);
      const Eigen::MatrixXd f =
          feature_block(act, dist, points, nb, derive_seed(seed, b));
      wave[wi].noalias() = f.topRows(na) * f.bottomRows(nb_rows).transpose();
    });
    for (std::int64_t wi = 0; wi < wave_len; ++wi) sum += wave[wi];
  }
  return sum;
}

Eigen::VectorXd mc_diag_accumulate(const ActivationSpec& act,
                                   const WeightDistSpec& dist,
                                   const Eigen::MatrixXd& points,
                                   std::int64_t n_samples,
                                   std::uint64_t seed) {
  const Eigen::Index p = points.rows();
  const std::int64_t block = mc_block_size(p);
  const std::int64_t n_blocks = (n_samples + block - 1) / block;

  Eigen::VectorXd sum = Eigen::VectorXd::Zero(p);
  std::vector<Eigen::VectorXd> wave(static_cast<std::size_t>(kWaveWidth));
  for (std::int64_t wave_start = 0; wave_start < n_blocks;
       wave_start += kWaveWidth) {
    const std::int64_t wave_len = std::min(kWaveWidth, n_blocks - wave_start);
    parallel_for(static_cast<std::size_t>(wave_len), [&](std::size_t wi) {
      const std::int64_t b = wave_start + static_cast<std::int64_t>(wi);
      const std::int64_t nb = std::min(block, n_samples - b * block);
      const Eigen::MatrixXd f =
          feature_block(act, dist, points, nb, derive_seed(seed, b));
      wave[wi] = f.array().square().rowwise().sum();
    });
    for (std::int64_t wi = 0; wi < wave_len; ++wi) sum += wave[wi];
  }
  return sum;
}

Eigen::MatrixXd maybe_augment(const Eigen::MatrixXd& x, bool augment) {
  return augment ? augment_ones(x) : x;
}

}  // namespace

McKernelEstimate empirical_kernel(const ActivationSpec& activation,
                                  const WeightDistSpec& weight_dist,
                                  const Eigen::MatrixXd& x_eval,
                                  std::int64_t n_samples, std::uint64_t seed) {
  if (n_samples < 1)
    throw ConfigError("empirical_kernel: n_samples must be >= 1");
  activation.validate();
  weight_dist.validate();
  Eigen::MatrixXd sum, sum_sq;
  mc_gram_accumulate(activation, weight_dist, x_eval, n_samples, seed, sum,
                     &sum_sq);
  const double n = static_cast<double>(n_samples);
  McKernelEstimate out;
  out.k = sum / n;
  // Entrywise SE of the mean of products: sqrt(var / n), var from the
  // second moment of phi_i*phi_j.
  out.standard_error =
      ((sum_sq / n - out.k.array().square().matrix()).cwiseMax(0.0) / n)
          .cwiseSqrt();
  return out;
}

double KernelSpec::eval(const Eigen::VectorXd& x,
                        const Eigen::VectorXd& y) const {
  switch (kind) {
    case KernelKind::ArcCosine:
      return augment_inputs
                 ? arc_cosine_kernel(augment_ones(x), augment_ones(y))
                 : arc_cosine_kernel(x, y);
    case KernelKind::Erf:
      return augment_inputs ? erf_kernel(augment_ones(x), augment_ones(y))
                            : erf_kernel(x, y);
    case KernelKind::Empirical: {
      Eigen::MatrixXd pts(2, x.size());
      pts.row(0) = x.transpose();
      pts.row(1) = y.transpose();
      return gram(pts)(0, 1);
    }
  }
  return 0.0;
}

Eigen::MatrixXd KernelSpec::gram(const Eigen::MatrixXd& x) const {
  const Eigen::MatrixXd pts = maybe_augment(x, augment_inputs);
  const Eigen::Index n = pts.rows();
  if (kind == KernelKind::Empirical) {
    Eigen::MatrixXd sum;
    mc_gram_accumulate(activation, weight_dist, pts, n_mc_samples, seed, sum,
                       nullptr);
    return sum / static_cast<double>(n_mc_samples);
  }
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = kind == KernelKind::ArcCosine
                           ? arc_cosine_kernel(pts.row(i), pts.row(j))
                           : erf_kernel(pts.row(i), pts.row(j));
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

Eigen::MatrixXd KernelSpec::cross(const Eigen::MatrixXd& a,
                                  const Eigen::MatrixXd& b) const {
  if (a.cols() != b.cols())
    throw DimensionMismatch("kernel cross: dimension mismatch");
  if (kind == KernelKind::Empirical) {
    Eigen::MatrixXd pts(a.rows() + b.rows(), a.cols());
    pts.topRows(a.rows()) = a;
    pts.bottomRows(b.rows()) = b;
    const Eigen::MatrixXd aug = maybe_augment(pts, augment_inputs);
    return mc_cross_accumulate(activation, weight_dist, aug, a.rows(),
                               n_mc_samples, seed) /
           static_cast<double>(n_mc_samples);
  }
  const Eigen::MatrixXd pa = maybe_augment(a, augment_inputs);
  const Eigen::MatrixXd pb = maybe_augment(b, augment_inputs);
  Eigen::MatrixXd k(pa.rows(), pb.rows());
  for (Eigen::Index i = 0; i < pa.rows(); ++i)
    for (Eigen::Index j = 0; j < pb.rows(); ++j)
      k(i, j) = kind == KernelKind::ArcCosine
                    ? arc_cosine_kernel(pa.row(i), pb.row(j))
                    : erf_kernel(pa.row(i), pb.row(j));
  return k;
}

Eigen::VectorXd KernelSpec::diag(const Eigen::MatrixXd& x) const {
  const Eigen::MatrixXd pts = maybe_augment(x, augment_inputs);
  if (kind == KernelKind::Empirical) {
    return mc_diag_accumulate(activation, weight_dist, pts, n_mc_samples,
                              seed) /
           static_cast<double>(n_mc_samples);
  }
  Eigen::VectorXd d(pts.rows());
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    d[i] = kind == KernelKind::ArcCosine
               ? arc_cosine_kernel(pts.row(i), pts.row(i))
               : erf_kernel(pts.row(i), pts.row(i));
  return d;
}

KernelSpec limiting_kernel_spec(const FeatureConfig& config,
                                std::int64_t n_mc_samples,
                                std::uint64_t seed) {
  config.validate();
  const bool normal_weights =
      config.weight_dist.kind == WeightDist::StandardNormal;
  if (normal_weights && config.activation.kind == Activation::ReLU)
    return KernelSpec::arc_cosine(config.bias_augment);
  if (normal_weights && config.activation.kind == Activation::Erf)
    return KernelSpec::erf(config.bias_augment);
  return KernelSpec::empirical(config.activation, config.weight_dist,
                               n_mc_samples, seed, config.bias_augment);
}

ConditionedKernel condition_kernel_matrix(const Eigen::MatrixXd& k) {
  if (!k.allFinite())
    throw ConditioningFailure("kernel matrix has non-finite entries");
  const double mean_diag = k.diagonal().mean();
  const double scales[] = {0.0, 1e-12, 1e-10, 1e-8};
  for (const double s : scales) {
    const double jitter = s * mean_diag;
    Eigen::MatrixXd trial = k;
    trial.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(trial);
    if (llt.info() == Eigen::Success) {
      ConditionedKernel out;
      out.k = k;
      out.r = llt.matrixU();
      out.jitter_used = jitter;
      return out;
    }
  }
  throw ConditioningFailure(
      "kernel matrix not factorizable at maximum jitter; "
      "inputs likely contain duplicate or near-duplicate points");
}

KernelMatrix kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& x) {
  if (x.rows() < 1) throw DimensionMismatch("kernel_matrix: empty input");
  const ConditionedKernel sys = condition_kernel_matrix(spec.gram(x));
  return KernelMatrix{sys.k, sys.jitter_used};
}

ConditionedKernel kernel_system(const KernelSpec& spec,
                                const Eigen::MatrixXd& x) {
  if (x.rows() < 1) throw DimensionMismatch("kernel_system: empty input");
  return condition_kernel_matrix(spec.gram(x));
}

WhitenedSystem extend_whiten(const Eigen::MatrixXd& r_chol,
                             const Eigen::VectorXd& k_vec, double k_star,
                             const Eigen::MatrixXd* phi,
                             const Eigen::VectorXd* phi_star) {
  const Eigen::Index n = r_chol.rows();
  if (r_chol.cols() != n || k_vec.size() != n)
    throw DimensionMismatch("extend_whiten: inconsistent shapes");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(r_chol(i, i) > 0.0))
      throw ConditioningFailure("extend_whiten: R has a non-positive diagonal");

  WhitenedSystem out;
  out.r = r_chol;
  out.c = r_chol.transpose().triangularView<Eigen::Lower>().solve(k_vec);
  out.r_perp = std::sqrt(std::max(0.0, k_star - out.c.squaredNorm()));

  if (phi != nullptr) {
    if (phi->rows() != n)
      throw DimensionMismatch("extend_whiten: Phi row count != N");
    out.w = r_chol.transpose().triangularView<Eigen::Lower>().solve(*phi);
    if (phi_star != nullptr) {
      if (phi_star->size() != phi->cols())
        throw DimensionMismatch("extend_whiten: phi_star length != D");
      if (out.r_perp < 1e-12)
        throw DegenerateTestPoint(
            "extend_whiten: test point lies in the training span "
            "(r_perp < 1e-12)");
      out.w_perp =
          (*phi_star - out.w->transpose() * out.c) / out.r_perp;
    }
  }
  return out;
}

double gp_posterior_variance(const KernelSpec& spec, const Eigen::MatrixXd& x,
                             const Eigen::VectorXd& x_star) {
  return gp_posterior_variance_batch(spec, x, x_star.transpose())[0];
}

Eigen::VectorXd gp_posterior_variance_batch(const KernelSpec& spec,
                                            const Eigen::MatrixXd& x,
                                            const Eigen::MatrixXd& x_star) {
  const ConditionedKernel sys = kernel_system(spec, x);
  const Eigen::MatrixXd k_cross = spec.cross(x, x_star);  // N x T
  const Eigen::VectorXd k_star = spec.diag(x_star);
  const Eigen::MatrixXd c =
      sys.r.transpose().triangularView<Eigen::Lower>().solve(k_cross);
  return k_star - c.colwise().squaredNorm().transpose();
}

}  // namespace rflab
