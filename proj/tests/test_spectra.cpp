#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "goldizone/datasets.hpp"
#include "goldizone/errors.hpp"
#include "goldizone/spectra.hpp"
#include "support/oracles.hpp"

using namespace gz;

namespace {

// Q diag(lambda) Q^T with a random orthogonal Q from Gram-Schmidt.
SymmetricMatrix with_spectrum(Rng& rng, const std::vector<double>& lambda) {
  const std::size_t n = lambda.size();
  std::vector<std::vector<double>> q;
  while (q.size() < n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    for (const auto& u : q) {
      const double c = dot(v, u);
      for (std::size_t i = 0; i < n; ++i) v[i] -= c * u[i];
    }
    const double nv = std::sqrt(dot(v, v));
    for (auto& x : v) x /= nv;
    q.push_back(v);
  }
  std::vector<double> a(n * n, 0.0);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) a[i * n + j] += lambda[k] * q[k][i] * q[k][j];
  return SymmetricMatrix(n, a);
}

ProjectedDecomposition decomposition_from(const SymmetricMatrix& G, const SymmetricMatrix& Hs) {
  ProjectedDecomposition d;
  d.G = G;
  d.Hstar = Hs;
  d.H = G + Hs;
  return d;
}

}  // namespace

TEST_CASE("spectra: curvature report on a matrix with known spectrum") {
  Rng rng(1);
  const std::vector<double> lambda = {5.0, 2.0, 1e-14, -1.0, -3.0};
  const auto r = curvature_report(with_spectrum(rng, lambda), 1e-10, 3);
  const double fro = std::sqrt(25.0 + 4.0 + 1.0 + 9.0);
  CHECK(r.trace == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(r.frobenius == doctest::Approx(fro).epsilon(1e-12));
  CHECK(r.positive_curvature == doctest::Approx(3.0 / fro).epsilon(1e-12));
  CHECK(r.local_convexity == doctest::Approx(0.4));
  CHECK(r.spec_norm == doctest::Approx(5.0).epsilon(1e-12));
  REQUIRE(r.top_eigs.size() == 3);
  CHECK(r.top_eigs[0] == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(r.top_eigs[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK_FALSE(r.degenerate);
}

TEST_CASE("spectra: positive curvature is bounded by sqrt(n) and scale free") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(10);
    std::vector<double> lambda(n);
    for (auto& v : lambda) v = rng.normal();
    const auto a = with_spectrum(rng, lambda);
    const auto r = curvature_report(a);
    CHECK(std::abs(r.positive_curvature) <= std::sqrt(static_cast<double>(n)) + 1e-12);
    const auto s = curvature_report(a.scaled(1e-150));
    CHECK(s.positive_curvature == doctest::Approx(r.positive_curvature).epsilon(1e-10));
  }
  const auto id = curvature_report(SymmetricMatrix::identity(9));
  CHECK(id.positive_curvature == doctest::Approx(3.0));
  CHECK(id.local_convexity == 1.0);
}

TEST_CASE("spectra: zero matrix is flagged degenerate") {
  const auto r = curvature_report(SymmetricMatrix(4));
  CHECK(r.degenerate);
  CHECK(r.positive_curvature == 0.0);
  SymmetricMatrix bad(2);
  bad.set(0, 0, INFINITY);
  CHECK_THROWS_AS(curvature_report(bad), InvalidInput);
}

TEST_CASE("spectra: deflated power iteration agrees with the dense eigensolver") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 8 + rng.below(20);
    std::vector<double> lambda(n);
    for (std::size_t i = 0; i < n; ++i) lambda[i] = (i % 2 ? -1.0 : 1.0) * (10.0 / (1.0 + static_cast<double>(i)));
    const auto a = with_spectrum(rng, lambda);
    const MatVec mv = [&](std::span<const double> v) { return a.multiply(v); };
    const auto pairs = power_iteration_deflated(mv, n, 3, 1e-10, 20000, trial);
    REQUIRE(pairs.size() == 3);
    CHECK(pairs[0].value == doctest::Approx(10.0).epsilon(1e-8));
    CHECK(pairs[1].value == doctest::Approx(-5.0).epsilon(1e-8));
    CHECK(pairs[2].value == doctest::Approx(10.0 / 3.0).epsilon(1e-8));
    for (const auto& p : pairs) {
      const auto av = a.multiply(p.vector);
      std::vector<double> lv(p.vector);
      for (auto& x : lv) x *= p.value;
      CHECK(oracle::rel_diff(av, lv) < 1e-8);
    }
  }
}

TEST_CASE("spectra: power iteration reports failure with its best estimate") {
  // +1 and -1 have equal magnitude: the iteration cannot settle.
  const SymmetricMatrix a = SymmetricMatrix::diagonal(std::vector<double>{1.0, -1.0, 0.1});
  const MatVec mv = [&](std::span<const double> v) { return a.multiply(v); };
  try {
    power_iteration_deflated(mv, 3, 1, 1e-12, 50, 1);
    FAIL("expected ConvergenceFailure");
  } catch (const ConvergenceFailure& e) {
    CHECK(e.best_iterate().size() == 3);
    CHECK(std::abs(e.best_value()) <= 1.0 + 1e-12);
  }
  CHECK_THROWS_AS(power_iteration_deflated(mv, 3, 0), InvalidInput);
  CHECK_THROWS_AS(power_iteration_deflated(mv, 3, 4), InvalidInput);
}

TEST_CASE("spectra: verdict compares spectral norms against the threshold") {
  const auto G = SymmetricMatrix::diagonal(std::vector<double>{2.0, 0.0});
  const auto Hs = SymmetricMatrix::diagonal(std::vector<double>{0.0, -4.0});
  const auto v = goldilocks_verdict(decomposition_from(G, Hs), 0.5);
  CHECK(v.gnorm == doctest::Approx(2.0));
  CHECK(v.hstarnorm == doctest::Approx(4.0));
  CHECK(v.ratio == doctest::Approx(0.5));
  CHECK(v.in_zone);
  CHECK_FALSE(goldilocks_verdict(decomposition_from(G, Hs), 0.51).in_zone);

  const auto only_g = goldilocks_verdict(decomposition_from(G, SymmetricMatrix(2)));
  CHECK(std::isinf(only_g.ratio));
  CHECK(only_g.in_zone);
  const auto nothing = goldilocks_verdict(decomposition_from(SymmetricMatrix(2), SymmetricMatrix(2)));
  CHECK(nothing.ratio == 0.0);
  CHECK_FALSE(nothing.in_zone);

  const auto rep = report_decomposition(decomposition_from(G, Hs), 0.5);
  CHECK(rep.H.trace == doctest::Approx(-2.0));
  CHECK(rep.verdict.in_zone);
}

TEST_CASE("spectra: collapse search and the pre-collapse probe") {
  const Dataset ds = make_blobs(3, 6, 4, 1.0, 5, 3.0);
  const Batch b = ds.train().batch();
  const auto net = build_net("mlp-small", {6}, 3, 2);

  CHECK(max_sample_entropy(net, b, 1e-3) == doctest::Approx(std::log(3.0)).epsilon(1e-6));
  const double a_star = locate_collapse_alpha(net, b, 1e-2, 1e3, 1e-6);
  CHECK(max_sample_entropy(net, b, a_star) == doctest::Approx(1e-6).epsilon(1e-6));
  CHECK_THROWS_AS(locate_collapse_alpha(net, b, 1e2, 1e3, 1e-6), InvalidInput);

  const std::vector<double> grid = {0.1, 1.0, a_star / 2.0};
  PrecollapseOptions opt;
  opt.d = 20;
  const auto rows = precollapse_probe(net, b, grid, opt);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) {
    CHECK(r.entropies.size() == b.size());
    const auto it = std::max_element(r.entropies.begin(), r.entropies.end());
    CHECK(r.mu0 == static_cast<std::size_t>(it - r.entropies.begin()));
    CHECK(r.max_entropy == *it);
    CHECK(r.alignment >= 0.0);
    CHECK(r.alignment <= 1.0 + 1e-12);
    CHECK(r.dominance_gap >= 0.0);
  }
  CHECK(rows[0].max_entropy > rows[2].max_entropy);
  // Close to collapse one sample carries the G-term.
  CHECK(rows[2].dominance_gap < rows[0].dominance_gap);

  CHECK_THROWS_AS(precollapse_probe(build_net("cnn-small", {1, 4, 4}, 3, 0),
                                    Batch(Tensor({2, 1, 4, 4}, 1.0), {0, 1}, 3), grid, opt),
                  UnsupportedArchitecture);
}
