#pragma once

// Random logit model: logit gradients on sample mu are c_k + e_k^mu with
// class-independent means c_k (variance sigma_c^2 per component) and iid
// residuals (variance sigma_e^2). Provides estimation of the two variances,
// the expected G-term and its positive curvature, Gamma_p analytics, and
// the expected-gradient law.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "goldizone/numlin.hpp"

namespace gz {

struct LogitModelParams {
  double sigma_c2 = 0.0;
  double sigma_e2 = 0.0;
  std::size_t d = 0;
  std::size_t K = 0;
};

struct SigmaEstimate {
  LogitModelParams params;
  std::vector<double> class_sigma_c2;  // per logit k, same estimator restricted to row k
  std::vector<double> class_sigma_e2;
  std::size_t samples = 0;
};

/// Pooled estimates from per-sample K x d projected Jacobians. sigma_e2 uses
/// the (N - 1) denominator; sigma_c2 subtracts the sigma_e2 / N that the
/// sample mean inherits from the residuals and is clamped at 0.
SigmaEstimate estimate_sigmas(std::span<const Tensor> jacobians);

struct PMatrixStats {
  SymmetricMatrix M;     // mean over the batch of diag(p) - p p^T
  double gamma_p = 0.0;  // Tr(M) / ||M||_F
  double entropy = 0.0;  // mean per-sample entropy, nats
};

/// M for a single distribution.
SymmetricMatrix softmax_covariance(std::span<const double> p);

/// Throws DegenerateDistribution when every row is one-hot (M = 0).
PMatrixStats gamma_p(const Tensor& p_batch);
PMatrixStats gamma_p(std::span<const double> p);

/// Gamma_p^2 from the element-wise expression (sum p - sum p^2)^2 /
/// (sum (p - p^2)^2 + sum_{k != c} p_k^2 p_c^2).
double gamma_sq_closed_form(std::span<const double> p);

/// p(S, eps): S - 1 entries equal to eps, entry S - 1 holds 1 - (S - 1) eps,
/// the remaining K - S entries are zero.
std::vector<double> collapse_family(std::size_t K, std::size_t S, double eps);

/// 4 (S - 1) / (S + 2).
double collapse_gamma_sq_limit(std::size_t S);

/// d sigma_c^2 [diag(p) - p p^T] in the leading K x K block plus
/// (1 - ||p||^2) sigma_e^2 I_d.
SymmetricMatrix expected_gterm(const LogitModelParams& params, std::span<const double> p);
/// Batch form: M and its trace averaged over rows.
SymmetricMatrix expected_gterm(const LogitModelParams& params, const Tensor& p_batch);

/// sqrt(d) (sc + se) / sqrt(se^2 + 2 se sc + d sc^2 / Gamma_p^2), sc = sigma_c2,
/// se = sigma_e2, Gamma_p from the batch-averaged M.
double expected_gterm_curvature(const LogitModelParams& params, const Tensor& p_batch);
double expected_gterm_curvature(const LogitModelParams& params, std::span<const double> p);
double expected_gterm_curvature(const LogitModelParams& params, double gamma);

struct BiLevelSpectrum {
  double bulk = 0.0;
  std::vector<double> outliers;      // K - 1 values, descending
  std::vector<double> lambda_tilde;  // top K - 1 eigenvalues of diag(p) - p p^T
  bool interlaced = false;           // p_(i) >= lambda_tilde_i >= p_(i+1)
};

BiLevelSpectrum bilevel_spectrum(const LogitModelParams& params, std::span<const double> p);

struct GradLawPrediction {
  double distance = 0.0;       // ||Qhat - Q||
  double variance = 0.0;       // d sigma_c^2 ||Qhat - Q||
  double root_variance = 0.0;  // sqrt(d sigma_c^2) ||Qhat - Q||
};

GradLawPrediction expected_grad_law(const LogitModelParams& params, std::span<const double> qhat,
                                    std::span<const double> q);

enum class GradLawVariant { Variance, RootVariance };

const char* to_string(GradLawVariant v) noexcept;

struct GradLawMonteCarlo {
  GradLawPrediction prediction;
  double empirical = 0.0;  // norm of the simulated mean gradient
  double variance_rel_error = 0.0;
  double root_variance_rel_error = 0.0;
  GradLawVariant winner = GradLawVariant::RootVariance;
};

/// Simulates n samples from the model with orthogonal c_k (||c_k||^2 =
/// d sigma_c^2), labels allocated to match q, and every prediction equal
/// to qhat; compares the mean-gradient norm with both variants.
GradLawMonteCarlo grad_law_monte_carlo(const LogitModelParams& params,
                                       std::span<const double> qhat, std::span<const double> q,
                                       std::size_t n, std::uint64_t seed);

}  // namespace gz
