#pragma once

// Layer-graph execution for HomogeneousNet: cached forward pass, forward
// tangent propagation (J v), and the reverse pass with an optional tangent
// channel that yields the exact Hessian-vector product.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "goldizone/netzoo.hpp"
#include "kernels.hpp"

namespace gz::detail {

struct ForwardCache {
  std::size_t batch = 0;
  // acts[l] is the input of layer l; acts.back() holds the logits.
  std::vector<std::vector<double>> acts;
  std::vector<std::vector<std::uint32_t>> argmax;
};

ConvGeom conv_geom(const LayerPlan& plan);

constexpr std::size_t kAllLayers = std::numeric_limits<std::size_t>::max();

/// Runs layers [0, stop) on `x` (batch samples, row-major).
void run_forward(const HomogeneousNet& net, std::span<const double> x, std::size_t batch,
                 ForwardCache& cache, std::size_t stop = kAllLayers);

/// Tangent activations along parameter direction `dir`; tang.back() is J dir.
void run_tangent(const HomogeneousNet& net, const ForwardCache& cache,
                 std::span<const double> dir, std::vector<std::vector<double>>& tang);

struct TangentChannel {
  std::span<const double> dir;                      // parameter direction v
  const std::vector<std::vector<double>>* tang;     // from run_tangent(v)
  std::span<const double> delta_out_dot;            // d/dt of the logit cotangent
  std::span<double> grad_dot;                       // receives H v contribution
};

/// Back-propagates logit cotangents `delta_out` (batch x K) and accumulates
/// the parameter gradient into `grad` (skipped when `grad` is empty).
void run_reverse(const HomogeneousNet& net, const ForwardCache& cache,
                 std::span<const double> delta_out, std::span<double> grad,
                 const TangentChannel* tangent = nullptr);

}  // namespace gz::detail
