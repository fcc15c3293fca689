#include "goldizone/logitmodel.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "goldizone/errors.hpp"
#include "goldizone/netzoo.hpp"

namespace gz {

namespace {

void check_distribution(std::span<const double> p) {
  if (p.empty()) throw InvalidInput("empty distribution");
  double s = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < -1e-12) throw InvalidInput("distribution has invalid entries");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9)
    throw InvalidInput("distribution sums to " + std::to_string(s) + ", expected 1");
}

void check_params(const LogitModelParams& params) {
  if (!(params.sigma_c2 >= 0.0) || !(params.sigma_e2 >= 0.0))
    throw InvalidInput("logit-model variances must be non-negative");
}

// out[k] = sum_{c != k} v_c from prefix and suffix sums, so no entry is
// formed by subtracting two nearly equal totals.
std::vector<double> sums_of_others(std::span<const double> v) {
  const std::size_t k = v.size();
  std::vector<double> out(k, 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    out[i] = acc;
    acc += v[i];
  }
  acc = 0.0;
  for (std::size_t i = k; i-- > 0;) {
    out[i] += acc;
    acc += v[i];
  }
  return out;
}

// 1 - ||p||^2 = sum_k p_k (1 - p_k), with 1 - p_k taken as the sum of the
// other entries.
double one_minus_sq_norm(std::span<const double> p) {
  const auto rest = sums_of_others(p);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * rest[i];
  return s;
}

}  // namespace

SigmaEstimate estimate_sigmas(std::span<const Tensor> jacobians) {
  const std::size_t n = jacobians.size();
  if (n < 2) throw InvalidInput("estimate_sigmas needs at least 2 samples");
  const auto& shape = jacobians[0].shape();
  if (shape.size() != 2) throw ShapeMismatch("jacobians must be K x d");
  const std::size_t k = shape[0], d = shape[1];
  for (const auto& j : jacobians)
    if (j.shape() != shape) throw ShapeMismatch("jacobians must share one shape");

  std::vector<double> mean(k * d, 0.0);
  for (const auto& j : jacobians)
    for (std::size_t i = 0; i < k * d; ++i) mean[i] += j[i];
  const double dn = static_cast<double>(n);
  for (auto& m : mean) m /= dn;

  SigmaEstimate est;
  est.samples = n;
  est.class_sigma_c2.assign(k, 0.0);
  est.class_sigma_e2.assign(k, 0.0);
  for (const auto& j : jacobians)
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t t = 0; t < d; ++t) {
        const double r = j.at(c, t) - mean[c * d + t];
        est.class_sigma_e2[c] += r * r;
      }
  double se = 0.0, mc = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    se += est.class_sigma_e2[c];
    est.class_sigma_e2[c] /= (dn - 1.0) * static_cast<double>(d);
    double m2 = 0.0;
    for (std::size_t t = 0; t < d; ++t) m2 += mean[c * d + t] * mean[c * d + t];
    mc += m2;
    est.class_sigma_c2[c] = std::max(0.0, m2 / static_cast<double>(d) - est.class_sigma_e2[c] / dn);
  }
  const double kd = static_cast<double>(k * d);
  est.params.sigma_e2 = se / ((dn - 1.0) * kd);
  est.params.sigma_c2 = std::max(0.0, mc / kd - est.params.sigma_e2 / dn);
  est.params.d = d;
  est.params.K = k;
  return est;
}

SymmetricMatrix softmax_covariance(std::span<const double> p) {
  const std::size_t k = p.size();
  std::vector<double> m(k * k);
  const auto rest = sums_of_others(p);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) m[i * k + j] = i == j ? p[i] * rest[i] : -p[i] * p[j];
  return SymmetricMatrix(k, std::move(m));
}

PMatrixStats gamma_p(const Tensor& p_batch) {
  if (p_batch.rank() != 2 || p_batch.extent(0) == 0)
    throw ShapeMismatch("gamma_p expects a non-empty B x K matrix");
  const std::size_t b = p_batch.extent(0), k = p_batch.extent(1);
  std::vector<double> acc(k * k, 0.0);
  double ent = 0.0;
  for (std::size_t mu = 0; mu < b; ++mu) {
    const auto p = p_batch.row(mu);
    check_distribution(p);
    const auto m = softmax_covariance(p);
    for (std::size_t i = 0; i < k * k; ++i) acc[i] += m.dense()[i];
    ent += entropy(p);
  }
  for (auto& v : acc) v /= static_cast<double>(b);
  PMatrixStats s{SymmetricMatrix(k, std::move(acc)), 0.0, ent / static_cast<double>(b)};
  const double f = s.M.frobenius();
  if (f == 0.0) throw DegenerateDistribution("Gamma_p is undefined for one-hot distributions");
  s.gamma_p = s.M.trace() / f;
  return s;
}

PMatrixStats gamma_p(std::span<const double> p) {
  return gamma_p(Tensor({1, p.size()}, std::vector<double>(p.begin(), p.end())));
}

double gamma_sq_closed_form(std::span<const double> p) {
  check_distribution(p);
  // Same sums as the element-wise expression, but 1 - p_k and
  // sum_{c != k} p_c^2 come from sums of the other entries, which keeps
  // near one-hot inputs accurate.
  const std::size_t k = p.size();
  std::vector<double> sq(k);
  for (std::size_t i = 0; i < k; ++i) sq[i] = p[i] * p[i];
  const auto rest = sums_of_others(p);
  const auto rest_sq = sums_of_others(sq);
  double tr = 0.0, diag = 0.0, off = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double m = p[i] * rest[i];
    tr += m;
    diag += m * m;
    off += sq[i] * rest_sq[i];
  }
  const double den = diag + off;
  if (den == 0.0) throw DegenerateDistribution("Gamma_p is undefined for one-hot distributions");
  return tr * tr / den;
}

std::vector<double> collapse_family(std::size_t K, std::size_t S, double eps) {
  if (S < 2 || S > K) throw InvalidInput("collapse family needs 2 <= S <= K");
  if (!(eps > 0.0) || (S - 1) * eps >= 1.0) throw InvalidInput("collapse family needs 0 < (S-1) eps < 1");
  std::vector<double> p(K, 0.0);
  for (std::size_t i = 0; i + 1 < S; ++i) p[i] = eps;
  p[S - 1] = 1.0 - static_cast<double>(S - 1) * eps;
  return p;
}

double collapse_gamma_sq_limit(std::size_t S) {
  return 4.0 * (static_cast<double>(S) - 1.0) / (static_cast<double>(S) + 2.0);
}

namespace {

SymmetricMatrix expected_from_m(const LogitModelParams& params, const SymmetricMatrix& m) {
  check_params(params);
  const std::size_t k = m.dim(), d = params.d;
  if (d < k) throw InvalidInput("expected_gterm needs d >= K");
  const double t = m.trace();  // equals 1 - ||p||^2 (batch mean)
  const double dc = static_cast<double>(d) * params.sigma_c2;
  std::vector<double> out(d * d, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * d + j] = dc * m(i, j);
  for (std::size_t i = 0; i < d; ++i) out[i * d + i] += t * params.sigma_e2;
  return SymmetricMatrix(d, std::move(out));
}

}  // namespace

SymmetricMatrix expected_gterm(const LogitModelParams& params, std::span<const double> p) {
  check_distribution(p);
  return expected_from_m(params, softmax_covariance(p));
}

SymmetricMatrix expected_gterm(const LogitModelParams& params, const Tensor& p_batch) {
  if (p_batch.rank() != 2 || p_batch.extent(0) == 0)
    throw ShapeMismatch("expected_gterm expects a non-empty B x K matrix");
  const std::size_t b = p_batch.extent(0), k = p_batch.extent(1);
  std::vector<double> acc(k * k, 0.0);
  for (std::size_t mu = 0; mu < b; ++mu) {
    check_distribution(p_batch.row(mu));
    const auto m = softmax_covariance(p_batch.row(mu));
    for (std::size_t i = 0; i < k * k; ++i) acc[i] += m.dense()[i] / static_cast<double>(b);
  }
  return expected_from_m(params, SymmetricMatrix(k, std::move(acc)));
}

double expected_gterm_curvature(const LogitModelParams& params, double gamma) {
  check_params(params);
  if (!(gamma > 0.0)) throw DegenerateDistribution("Gamma_p must be positive");
  const double sc = params.sigma_c2, se = params.sigma_e2, d = static_cast<double>(params.d);
  const double den = std::sqrt(se * se + 2.0 * se * sc + d * sc * sc / (gamma * gamma));
  if (den == 0.0) throw DegenerateDistribution("expected G-term is zero");
  return std::sqrt(d) * (sc + se) / den;
}

double expected_gterm_curvature(const LogitModelParams& params, const Tensor& p_batch) {
  return expected_gterm_curvature(params, gamma_p(p_batch).gamma_p);
}

double expected_gterm_curvature(const LogitModelParams& params, std::span<const double> p) {
  return expected_gterm_curvature(params, gamma_p(p).gamma_p);
}

BiLevelSpectrum bilevel_spectrum(const LogitModelParams& params, std::span<const double> p) {
  check_params(params);
  check_distribution(p);
  const std::size_t k = p.size();
  const auto m = softmax_covariance(p);
  if (m.frobenius() == 0.0) throw DegenerateDistribution("bi-level spectrum needs a non one-hot p");
  const auto eig = eigh(m);

  BiLevelSpectrum s;
  s.bulk = one_minus_sq_norm(p) * params.sigma_e2;
  const double dc = static_cast<double>(params.d) * params.sigma_c2;
  std::vector<double> sorted(p.begin(), p.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  s.interlaced = true;
  const double tol = 1e-12;
  for (std::size_t i = 0; i + 1 < k; ++i) {
    const double l = eig.values[i];
    s.lambda_tilde.push_back(l);
    s.outliers.push_back(s.bulk + dc * l);
    if (!(sorted[i] + tol >= l && l + tol >= sorted[i + 1])) s.interlaced = false;
  }
  return s;
}

GradLawPrediction expected_grad_law(const LogitModelParams& params, std::span<const double> qhat,
                                    std::span<const double> q) {
  check_params(params);
  check_distribution(qhat);
  check_distribution(q);
  if (qhat.size() != q.size()) throw ShapeMismatch("Qhat and Q differ in length");
  GradLawPrediction g;
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) s += (qhat[i] - q[i]) * (qhat[i] - q[i]);
  g.distance = std::sqrt(s);
  const double dc = static_cast<double>(params.d) * params.sigma_c2;
  g.variance = dc * g.distance;
  g.root_variance = std::sqrt(dc) * g.distance;
  return g;
}

const char* to_string(GradLawVariant v) noexcept {
  return v == GradLawVariant::Variance ? "variance" : "root-variance";
}

GradLawMonteCarlo grad_law_monte_carlo(const LogitModelParams& params,
                                       std::span<const double> qhat, std::span<const double> q,
                                       std::size_t n, std::uint64_t seed) {
  GradLawMonteCarlo mc;
  mc.prediction = expected_grad_law(params, qhat, q);
  const std::size_t k = q.size(), d = params.d;
  if (d < k) throw InvalidInput("Monte-Carlo grad law needs d >= K");
  if (n == 0) throw InvalidInput("Monte-Carlo grad law needs samples");
  Rng rng(mix64(seed ^ 0x6772616c6177ULL));

  // Orthogonal class means with ||c_k||^2 = d sigma_c^2 (Gram-Schmidt).
  std::vector<std::vector<double>> c(k, std::vector<double>(d));
  for (std::size_t a = 0; a < k; ++a) {
    for (auto& v : c[a]) v = rng.normal();
    for (std::size_t b = 0; b < a; ++b) {
      const double proj = dot(c[a], c[b]);
      for (std::size_t t = 0; t < d; ++t) c[a][t] -= proj * c[b][t];
    }
    const double nrm = norm2(c[a]);
    for (auto& v : c[a]) v /= nrm;
  }
  const double len = std::sqrt(static_cast<double>(d) * params.sigma_c2);
  for (auto& ck : c)
    for (auto& v : ck) v *= len;

  // Label counts by largest remainder so the realized prior matches q.
  std::vector<std::size_t> counts(k);
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t a = 0; a < k; ++a) {
    const double exact = q[a] * static_cast<double>(n);
    counts[a] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[a];
    rem.push_back({exact - std::floor(exact), a});
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto x, auto y) { return x.first > y.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[rem[i % k].second];

  const double se = std::sqrt(params.sigma_e2);
  std::vector<double> g(d, 0.0);
  for (std::size_t y = 0; y < k; ++y)
    for (std::size_t s = 0; s < counts[y]; ++s)
      for (std::size_t a = 0; a < k; ++a) {
        const double coeff = qhat[a] - (a == y ? 1.0 : 0.0);
        for (std::size_t t = 0; t < d; ++t) g[t] += coeff * (c[a][t] + se * rng.normal());
      }
  for (auto& v : g) v /= static_cast<double>(n);
  mc.empirical = norm2(g);
  auto rel = [&](double pred) {
    return mc.empirical > 0.0 ? std::abs(pred - mc.empirical) / mc.empirical
                              : std::abs(pred);
  };
  mc.variance_rel_error = rel(mc.prediction.variance);
  mc.root_variance_rel_error = rel(mc.prediction.root_variance);
  mc.winner = mc.variance_rel_error < mc.root_variance_rel_error ? GradLawVariant::Variance
                                                        : GradLawVariant::RootVariance;
  return mc;
}

}  // namespace gz
