#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <Eigen/Core>

#include "rflab/features.hpp"

namespace rflab {

/// Limiting kernel of ReLU features under standard-normal weights:
/// (1/2pi) |x| |x'| (sin t + (pi - t) cos t), t = angle(x, x').
/// Zero-norm inputs return 0 (the continuous limit).
double arc_cosine_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// Limiting kernel of erf features under standard-normal weights:
/// (2/pi) asin( 2 x.y / sqrt((1+2|x|^2)(1+2|x'|^2)) ).
double erf_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

enum class KernelKind { ArcCosine, Erf, Empirical };

/// Closed-form or Monte-Carlo-estimated kernel k(x,x') = E[phi(w,x)phi(w,x')].
///
/// When augment_inputs is set, a constant 1 is prepended to every point
/// before evaluation, matching bias-augmented feature maps. Empirical
/// kernels always evaluate a whole point list against one shared,
/// seed-determined feature draw, so every Gram matrix they produce is
/// symmetric PSD by construction.
struct KernelSpec {
  KernelKind kind = KernelKind::ArcCosine;
  bool augment_inputs = true;
  // Empirical only:
  ActivationSpec activation{};
  WeightDistSpec weight_dist{};
  std::int64_t n_mc_samples = 10'000'000;
  std::uint64_t seed = 0;

  static KernelSpec arc_cosine(bool augment = true);
  static KernelSpec erf(bool augment = true);
  static KernelSpec empirical(ActivationSpec act, WeightDistSpec dist,
                              std::int64_t n_samples, std::uint64_t seed,
                              bool augment = true);

  double eval(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const;
  /// Gram matrix over the rows of X; exactly symmetric.
  Eigen::MatrixXd gram(const Eigen::MatrixXd& x) const;
  /// |A| x |B| matrix of k(a_i, b_j).
  Eigen::MatrixXd cross(const Eigen::MatrixXd& a,
                        const Eigen::MatrixXd& b) const;
  Eigen::VectorXd diag(const Eigen::MatrixXd& x) const;

  std::string describe() const;
};

/// The kernel a FeatureConfig converges to as width grows: closed form for
/// ReLU/erf under standard-normal weights, an MC estimate otherwise.
KernelSpec limiting_kernel_spec(const FeatureConfig& config,
                                std::int64_t n_mc_samples, std::uint64_t seed);

struct McKernelEstimate {
  Eigen::MatrixXd k;
  Eigen::MatrixXd standard_error;  // per-entry MC standard error
};

/// (1/n) * F F^T where F holds n_samples fresh feature draws evaluated on
/// the rows of x_eval (no bias augmentation here; augment beforehand if
/// wanted). Deterministic given seed, independent of thread count.
McKernelEstimate empirical_kernel(const ActivationSpec& activation,
                                  const WeightDistSpec& weight_dist,
                                  const Eigen::MatrixXd& x_eval,
                                  std::int64_t n_samples, std::uint64_t seed);

struct KernelMatrix {
  Eigen::MatrixXd k;        // raw kernel matrix (no jitter applied)
  double jitter_used = 0.0; // smallest ladder value that factorizes k + j*I
};

/// Gram matrix over X with conditioning: if the raw matrix fails Cholesky,
/// the jitter ladder {1e-12, 1e-10, 1e-8} x mean(diag) is tried in order.
/// Throws ConditioningFailure if even the largest jitter fails.
KernelMatrix kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& x);

struct ConditionedKernel {
  Eigen::MatrixXd k;  // raw kernel matrix
  Eigen::MatrixXd r;  // upper-triangular, r^T r = k + jitter*I
  double jitter_used = 0.0;
};

/// kernel_matrix plus the Cholesky factor of the conditioned matrix.
ConditionedKernel kernel_system(const KernelSpec& spec,
                                const Eigen::MatrixXd& x);

/// Cholesky with the jitter ladder applied directly to a precomputed
/// symmetric matrix.
ConditionedKernel condition_kernel_matrix(const Eigen::MatrixXd& k);

/// Extended block factorization for one test point:
///   [K k; k^T k*] = [R c; 0 r_perp]^T [R c; 0 r_perp]
/// and optionally the whitened features [W; w_perp^T] solving
///   [Phi; phi*^T] = [R c; 0 r_perp]^T [W; w_perp^T].
struct WhitenedSystem {
  Eigen::MatrixXd r;       // N x N upper-triangular
  Eigen::VectorXd c;       // N
  double r_perp = 0.0;
  std::optional<Eigen::MatrixXd> w;       // N x D
  std::optional<Eigen::VectorXd> w_perp;  // D
};

WhitenedSystem extend_whiten(const Eigen::MatrixXd& r_chol,
                             const Eigen::VectorXd& k_vec, double k_star,
                             const Eigen::MatrixXd* phi = nullptr,
                             const Eigen::VectorXd* phi_star = nullptr);

/// r_perp^2 = k(x*,x*) - k_N(x*)^T K^-1 k_N(x*), computed through the
/// Cholesky factor (never an explicit inverse). May be a hair negative
/// from rounding; not clamped.
double gp_posterior_variance(const KernelSpec& spec, const Eigen::MatrixXd& x,
                             const Eigen::VectorXd& x_star);

/// One streamed pass for a whole batch of test points.
Eigen::VectorXd gp_posterior_variance_batch(const KernelSpec& spec,
                                            const Eigen::MatrixXd& x,
                                            const Eigen::MatrixXd& x_star);

}  // namespace rflab
