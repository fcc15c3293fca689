#pragma once

// Reference computations and random generators shared by the test
// binaries. Everything here is deliberately naive: plain loops, finite
// differences, no reuse of the library's derivative code.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "goldizone/diffengine.hpp"
#include "goldizone/netzoo.hpp"
#include "goldizone/numlin.hpp"

namespace oracle {

inline double rel_diff(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

// Loss recomputed from logits with textbook formulas (no log-sum-exp
// helper from the library).
inline double naive_loss(const gz::HomogeneousNet& net, const gz::Batch& b, double T) {
  const gz::Tensor z = gz::forward_logits(net, b.X);
  const std::size_t K = z.extent(1);
  double total = 0.0;
  for (std::size_t mu = 0; mu < b.size(); ++mu) {
    double m = -INFINITY;
    for (std::size_t k = 0; k < K; ++k) m = std::max(m, z.at(mu, k) / T);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(z.at(mu, k) / T - m);
    total += m + std::log(s) - z.at(mu, static_cast<std::size_t>(b.y[mu])) / T;
  }
  return total / static_cast<double>(b.size());
}

inline gz::HomogeneousNet perturbed(const gz::HomogeneousNet& net, std::size_t i, double h) {
  std::vector<double> t(net.theta().begin(), net.theta().end());
  t[i] += h;
  return net.with_theta(std::move(t));
}

inline gz::HomogeneousNet moved(const gz::HomogeneousNet& net, std::span<const double> v, double h) {
  std::vector<double> t(net.theta().begin(), net.theta().end());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] += h * v[i];
  return net.with_theta(std::move(t));
}

/// Central differences of the loss, one coordinate at a time.
inline std::vector<double> fd_gradient(const gz::HomogeneousNet& net, const gz::Batch& b, double T,
                                       double h = 1e-6) {
  std::vector<double> g(net.param_count());
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = (naive_loss(perturbed(net, i, h), b, T) - naive_loss(perturbed(net, i, -h), b, T)) /
           (2.0 * h);
  return g;
}

/// Dense Hessian from second central differences of the loss.
inline std::vector<double> fd_hessian(const gz::HomogeneousNet& net, const gz::Batch& b, double T,
                                      double h = 1e-4) {
  const std::size_t P = net.param_count();
  std::vector<double> H(P * P);
  const double f0 = naive_loss(net, b, T);
  for (std::size_t i = 0; i < P; ++i) {
    const double fp = naive_loss(perturbed(net, i, h), b, T);
    const double fm = naive_loss(perturbed(net, i, -h), b, T);
    H[i * P + i] = (fp - 2.0 * f0 + fm) / (h * h);
    for (std::size_t j = 0; j < i; ++j) {
      auto pp = perturbed(perturbed(net, i, h), j, h);
      auto pm = perturbed(perturbed(net, i, h), j, -h);
      auto mp = perturbed(perturbed(net, i, -h), j, h);
      auto mm = perturbed(perturbed(net, i, -h), j, -h);
      const double v = (naive_loss(pp, b, T) - naive_loss(pm, b, T) - naive_loss(mp, b, T) +
                        naive_loss(mm, b, T)) /
                       (4.0 * h * h);
      H[i * P + j] = H[j * P + i] = v;
    }
  }
  return H;
}

/// Numerical logit Jacobian (K x P) of one sample.
inline std::vector<double> fd_logit_jacobian(const gz::HomogeneousNet& net, const gz::Tensor& x,
                                             double h = 1e-6) {
  const std::size_t P = net.param_count();
  const std::size_t K = net.num_classes();
  std::vector<double> J(K * P);
  for (std::size_t i = 0; i < P; ++i) {
    const gz::Tensor zp = gz::forward_logits(perturbed(net, i, h), x);
    const gz::Tensor zm = gz::forward_logits(perturbed(net, i, -h), x);
    for (std::size_t k = 0; k < K; ++k) J[k * P + i] = (zp[k] - zm[k]) / (2.0 * h);
  }
  return J;
}

// ---- generators --------------------------------------------------------

inline std::vector<double> random_simplex(gz::Rng& rng, std::size_t K) {
  std::vector<double> p(K);
  double s = 0.0;
  for (auto& v : p) {
    v = -std::log(1.0 - rng.uniform());
    s += v;
  }
  for (auto& v : p) v /= s;
  return p;
}

inline gz::Tensor random_tensor(gz::Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  gz::Tensor t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

inline gz::Batch random_batch(gz::Rng& rng, std::vector<std::size_t> sample_shape, std::size_t n,
                              std::size_t K) {
  std::vector<std::size_t> shape{n};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.below(K));
  return gz::Batch(random_tensor(rng, shape), std::move(y), K);
}

/// 3 -> 4 -> 4 -> 2 ReLU net, P = 36, L = 3.
inline gz::HomogeneousNet tiny_net(std::uint64_t seed) {
  using gz::LayerSpec;
  gz::HomogeneousNet net("tiny", {3},
                         {LayerSpec::linear(3, 4), LayerSpec::relu(), LayerSpec::linear(4, 4),
                          LayerSpec::relu(), LayerSpec::linear(4, 2)},
                         2);
  gz::Rng rng(seed);
  std::vector<double> t(net.param_count());
  for (auto& v : t) v = rng.normal(0.0, 0.8);
  return net.with_theta(std::move(t));
}

/// Smallest |pre-activation| over all hidden ReLU units and samples; finite
/// differences with steps well below this never cross a kink.
inline double relu_margin(const gz::HomogeneousNet& net, const gz::Tensor& X) {
  // Rebuild pre-activations layer by layer for fully connected nets.
  const auto& layers = net.layers();
  const std::size_t B = X.extent(0);
  std::vector<double> act(X.values().begin(), X.values().end());
  std::size_t width = X.size() / B;
  double margin = INFINITY;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& spec = layers[l].spec;
    if (spec.kind == gz::LayerKind::Linear) {
      const auto W = net.layer_params(l);
      std::vector<double> out(B * spec.out_features, 0.0);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < spec.out_features; ++o) {
          double s = 0.0;
          for (std::size_t i = 0; i < spec.in_features; ++i)
            s += W[o * spec.in_features + i] * act[b * width + i];
          out[b * spec.out_features + o] = s;
        }
      act = std::move(out);
      width = spec.out_features;
    } else if (spec.kind == gz::LayerKind::ReLU) {
      for (double& v : act) {
        margin = std::min(margin, std::abs(v));
        v = std::max(v, 0.0);
      }
    }
  }
  return margin;
}

// Nonzero eigenvalues of diag(p) - p p^T as roots of the secular function
// 1 - sum_k p_k^2 / (p_k - x), one per gap between sorted distinct p.
inline std::vector<double> secular_roots(std::vector<double> p) {
  std::sort(p.begin(), p.end(), std::greater<>());
  auto f = [&](double x) {
    double s = 1.0;
    for (double v : p) s -= v * v / (v - x);
    return s;
  };
  std::vector<double> roots;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    double lo = p[i + 1], hi = p[i];  // f(lo+) = +inf, f(hi-) = -inf
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      (f(mid) > 0.0 ? lo : hi) = mid;
    }
    roots.push_back(0.5 * (lo + hi));
  }
  return roots;
}

// ---- curvature constructions -------------------------------------------

struct Point {
  gz::HomogeneousNet net;
  gz::Batch batch;
};

// Random (net, batch) pairs whose ReLU pre-activations all stay at least
// `margin` away from zero, so finite differences never straddle a kink.
inline Point kink_free_point(std::uint64_t seed, bool small_mlp, double margin = 1e-3) {
  for (std::uint64_t s = seed;; s += 1000) {
    gz::Rng rng(s);
    gz::HomogeneousNet net = small_mlp ? gz::build_net("mlp-small", {5}, 3, s) : tiny_net(s);
    gz::Batch b = small_mlp ? random_batch(rng, {5}, 6, 3) : random_batch(rng, {3}, 5, 2);
    if (relu_margin(net, b.X) > margin) return {std::move(net), std::move(b)};
  }
}

inline gz::Tensor as_batch(const gz::Tensor& x) {
  std::vector<std::size_t> shape{1};
  shape.insert(shape.end(), x.shape().begin(), x.shape().end());
  return gz::Tensor(shape, x.data());
}

inline std::vector<double> unit_direction(gz::Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  double s = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    s += x * x;
  }
  for (auto& x : v) x /= std::sqrt(s);
  return v;
}

// p - onehot(y), row per sample.
inline std::vector<double> frozen_coefficients(const gz::HomogeneousNet& net, const gz::Batch& b, double T) {
  const auto sm = gz::softmax_batch(gz::forward_logits(net, b.X), T);
  std::vector<double> c(sm.p.values().begin(), sm.p.values().end());
  for (std::size_t mu = 0; mu < b.size(); ++mu) c[mu * b.num_classes + b.y[mu]] -= 1.0;
  return c;
}

// Dense K x K softmax covariance written out directly.
inline std::vector<double> dense_m(std::span<const double> p) {
  const std::size_t K = p.size();
  std::vector<double> M(K * K);
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j) M[i * K + j] = (i == j ? p[i] : 0.0) - p[i] * p[j];
  return M;
}

// G_d = mean_mu (J R)^T M (J R) / T^2 from finite-difference Jacobians.
inline gz::SymmetricMatrix oracle_gd(const gz::HomogeneousNet& net, const gz::Batch& b, double T, const gz::Projector& r) {
  const std::size_t K = net.num_classes(), d = r.dim(), P = net.param_count();
  const auto sm = gz::softmax_batch(gz::forward_logits(net, b.X), T);
  std::vector<double> G(d * d, 0.0);
  for (std::size_t mu = 0; mu < b.size(); ++mu) {
    const auto J = fd_logit_jacobian(net, as_batch(b.sample(mu)));
    std::vector<double> JR(K * d, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<double> row(J.begin() + static_cast<long>(k * P), J.begin() + static_cast<long>((k + 1) * P));
      const auto pr = r.project(row);
      std::copy(pr.begin(), pr.end(), JR.begin() + static_cast<long>(k * d));
    }
    const auto M = dense_m(sm.p.row(mu));
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t c = 0; c < d; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < K; ++i)
          for (std::size_t j = 0; j < K; ++j) s += JR[i * d + a] * M[i * K + j] * JR[j * d + c];
        G[a * d + c] += s / (T * T * static_cast<double>(b.size()));
      }
  }
  return gz::SymmetricMatrix(d, G);
}

// H*_d from central differences of the gradient with the coefficients
// frozen at their values at theta.
inline gz::SymmetricMatrix oracle_hstar_d(const gz::HomogeneousNet& net, const gz::Batch& b, double T,
                               const gz::Projector& r, double h = 1e-6) {
  const auto c = frozen_coefficients(net, b, T);
  const std::size_t d = r.dim();
  std::vector<double> out(d * d);
  for (std::size_t j = 0; j < d; ++j) {
    const auto col = r.dense_column(j);
    const auto gp = gz::loss_grad(moved(net, col, h), b, T, c);
    const auto gm = gz::loss_grad(moved(net, col, -h), b, T, c);
    std::vector<double> diff(gp.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = (gp[i] - gm[i]) / (2.0 * h);
    const auto pr = r.project(diff);
    for (std::size_t i = 0; i < d; ++i) out[i * d + j] = pr[i];
  }
  return gz::SymmetricMatrix(d, out);
}

inline double mat_rel(const gz::SymmetricMatrix& a, const gz::SymmetricMatrix& b) {
  return rel_diff(a.dense(), b.dense());
}


}  // namespace oracle
