#pragma once

// Curvature metrics on symmetric matrices, deflated power iteration for
// matrix-free operators, the G-term vs H-term dominance verdict, and the
// pre-collapse probe of the first-layer Hessian.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "goldizone/diffengine.hpp"
#include "goldizone/netzoo.hpp"
#include "goldizone/numlin.hpp"

namespace gz {

struct CurvatureReport {
  double trace = 0.0;
  double frobenius = 0.0;
  double positive_curvature = 0.0;  // trace / frobenius
  double local_convexity = 0.0;     // fraction of eigenvalues > tol * frobenius
  double spec_norm = 0.0;           // max |lambda|
  std::vector<double> top_eigs;     // leading eigenvalues, descending
  bool degenerate = false;          // frobenius < 1e-300; metrics reported as 0
};

/// Metrics of A from its full eigendecomposition.
CurvatureReport curvature_report(const SymmetricMatrix& a, double tol = 1e-10,
                                 std::size_t top_m = 5);

struct EigenPair {
  double value = 0.0;
  std::vector<double> vector;
};

using MatVec = std::function<std::vector<double>(std::span<const double>)>;

/// Top-m eigenpairs of a symmetric operator by |lambda|, found one at a
/// time with previously converged vectors projected out. Converged when
/// ||Av - lambda v|| <= tol |lambda|.
std::vector<EigenPair> power_iteration_deflated(const MatVec& matvec, std::size_t dim,
                                                std::size_t m, double tol = 1e-8,
                                                std::size_t max_iter = 5000,
                                                std::uint64_t seed = 0);

struct GoldilocksVerdict {
  double gnorm = 0.0;      // ||G_d||_2
  double hstarnorm = 0.0;  // ||H*_d||_2
  double ratio = 0.0;      // gnorm / hstarnorm (inf when H* = 0 < G)
  double threshold = 1.0;
  bool in_zone = false;
};

GoldilocksVerdict goldilocks_verdict(const ProjectedDecomposition& dec,
                                     double zone_threshold = 1.0);

struct DecompositionReport {
  CurvatureReport H, G, Hstar;
  GoldilocksVerdict verdict;
};

DecompositionReport report_decomposition(const ProjectedDecomposition& dec,
                                         double zone_threshold = 1.0);

struct PrecollapseOptions {
  double temperature = 1.0;
  std::size_t d = 50;          // projector size for the G_d / H_d curvature
  std::uint64_t seed = 0;      // projector and power-iteration seed
  double eig_tol = 1e-8;
  std::size_t max_iter = 5000;
};

struct PrecollapseRow {
  double alpha = 0.0;
  std::vector<double> entropies;  // per sample, nats
  std::size_t mu0 = 0;            // least confident sample
  double max_entropy = 0.0;
  double top_eigenvalue = 0.0;    // first-layer Hessian block
  double alignment = 0.0;         // |cos| of hidden-averaged eigenvector with X^mu0
  double gterm_curvature = 0.0;   // positive curvature of G_d
  double hessian_curvature = 0.0; // positive curvature of H_d
  double dominance_gap = 0.0;     // ||G_d - G_d^mu0 / B||_F / ||G_d||_F
};

/// Evaluates the base net scaled by each alpha. The first parameterized
/// layer must be Linear (optionally preceded by Flatten).
std::vector<PrecollapseRow> precollapse_probe(const HomogeneousNet& net, const Batch& batch,
                                              std::span<const double> alpha_grid,
                                              const PrecollapseOptions& options = {});

/// Largest per-sample softmax entropy of the net scaled by alpha.
double max_sample_entropy(const HomogeneousNet& net, const Batch& batch, double alpha,
                          double temperature = 1.0);

/// Bisection in log(alpha) for the scale at which the largest per-sample
/// entropy crosses `threshold` nats. Requires the crossing inside [lo, hi].
double locate_collapse_alpha(const HomogeneousNet& net, const Batch& batch, double lo, double hi,
                             double threshold = 1e-6, double temperature = 1.0,
                             int iterations = 60);

}  // namespace gz
