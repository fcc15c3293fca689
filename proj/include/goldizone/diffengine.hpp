#pragma once

// Exact first- and second-order derivatives of the tempered cross-entropy
// loss of a HomogeneousNet: gradients, logit Jacobians, Hessian-vector
// products (forward-over-reverse), Gauss-Newton products, and the projected
// Gauss-Newton decomposition H_d = G_d + H*_d on a sparse random subspace.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "goldizone/netzoo.hpp"
#include "goldizone/numlin.hpp"

namespace gz {

/// Sparse orthonormal basis R (P x d). Columns have pairwise disjoint
/// supports, so R^T R = I_d holds exactly up to rounding of 1/sqrt(n).
class Projector {
 public:
  struct Entry {
    std::size_t index;
    double value;
  };

  Projector(std::size_t ambient, std::vector<std::vector<Entry>> columns);

  std::size_t ambient_dim() const noexcept { return ambient_; }
  std::size_t dim() const noexcept { return columns_.size(); }
  std::span<const Entry> column(std::size_t j) const { return columns_.at(j); }

  /// R x, x in R^d.
  std::vector<double> lift(std::span<const double> latent) const;
  /// R^T v, v in R^P.
  std::vector<double> project(std::span<const double> v) const;
  /// R e_j as a dense P-vector.
  std::vector<double> dense_column(std::size_t j) const;

 private:
  std::size_t ambient_;
  std::vector<std::vector<Entry>> columns_;
};

/// Random partition of [0, P) into d near-equal buckets; column j carries
/// +-1/sqrt(|bucket j|) with random signs on its bucket.
Projector make_projector(std::size_t ambient, std::size_t d, std::uint64_t seed);

/// Identity columns on the coordinates [begin, begin + count).
Projector coordinate_projector(std::size_t ambient, std::size_t begin, std::size_t count);

/// Optional per-sample replacement of the coefficient rows p - y.
/// Empty span = use the actual softmax output.
using CoeffOverride = std::span<const double>;

/// Row (1/K - [k == y]) per sample: the uniform-softmax-output coefficients.
std::vector<double> uniform_output_coefficients(const Batch& batch);

struct LossGradient {
  double loss = 0.0;
  std::vector<double> grad;
  Tensor logits;
  SoftmaxBatch probs;
};

/// Loss, gradient, and the forward products in one pass.
LossGradient loss_and_grad(const HomogeneousNet& net, const Batch& batch, double temperature,
                           CoeffOverride coeff_override = {});

/// Mean over the batch of (1/T) sum_k coeff_k dz_k/dtheta.
std::vector<double> loss_grad(const HomogeneousNet& net, const Batch& batch, double temperature,
                              CoeffOverride coeff_override = {});

/// Mean loss only (no reverse pass).
double loss_value(const HomogeneousNet& net, const Batch& batch, double temperature);

/// K x P matrix of dz_k/dtheta for one sample (K reverse passes).
Tensor logit_jacobian(const HomogeneousNet& net, const Tensor& x_single);
/// K x d matrix (J R).
Tensor logit_jacobian(const HomogeneousNet& net, const Tensor& x_single, const Projector& r);

/// Holds one forward pass so repeated curvature products at the same point
/// do not re-run it. Products only read the cache, so one probe may serve
/// several threads.
class CurvatureProbe {
 public:
  CurvatureProbe(const HomogeneousNet& net, const Batch& batch, double temperature);
  ~CurvatureProbe();
  CurvatureProbe(CurvatureProbe&&) noexcept;
  CurvatureProbe& operator=(CurvatureProbe&&) noexcept;

  const HomogeneousNet& net() const noexcept;
  const SoftmaxBatch& probs() const noexcept;
  const Tensor& logits() const noexcept;
  double temperature() const noexcept;
  std::size_t batch_size() const noexcept;

  /// Exact H v.
  std::vector<double> hvp(std::span<const double> v) const;
  /// H v together with the logit tangents J v (B x K).
  std::vector<double> hvp(std::span<const double> v, std::vector<double>& logit_tangent) const;
  /// G v = mean_mu J^T [diag(p) - p p^T] J v / T^2.
  std::vector<double> gnvp(std::span<const double> v) const;
  /// J v for every sample (B x K).
  std::vector<double> logit_tangent(std::span<const double> v) const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

/// Exact Hessian-vector product of the mean loss. Throws InvalidInput on a
/// non-finite or zero direction.
std::vector<double> hvp(const HomogeneousNet& net, const Batch& batch, double temperature,
                        std::span<const double> v);

struct ProjectedDecomposition {
  SymmetricMatrix H;      // R^T H R
  SymmetricMatrix G;      // R^T G_* R
  SymmetricMatrix Hstar;  // H - G
  double alpha = 1.0;
  double temperature = 1.0;
};

/// d HVPs for H_d; G_d from the projected Jacobians collected in the same
/// passes. `threads` > 1 distributes columns; results do not depend on it.
ProjectedDecomposition projected_decomposition(const HomogeneousNet& net, const Batch& batch,
                                               double temperature, const Projector& r,
                                               std::size_t threads = 1);

/// Per-sample projected Jacobians J^mu R (each K x d), via d tangent passes.
std::vector<Tensor> projected_jacobians(const HomogeneousNet& net, const Tensor& X,
                                        const Projector& r);

/// Per-sample G-terms (J^mu R)^T [diag(p^mu) - p^mu p^mu^T] (J^mu R) / T^2;
/// their mean is the G_d of projected_decomposition.
std::vector<SymmetricMatrix> per_sample_gterms(const HomogeneousNet& net, const Batch& batch,
                                               double temperature, const Projector& r);

}  // namespace gz
