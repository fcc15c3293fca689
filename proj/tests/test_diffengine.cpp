#include <doctest.h>

#include <cmath>

#include "goldizone/diffengine.hpp"
#include "goldizone/errors.hpp"
#include "support/oracles.hpp"

using oracle::as_batch;
using oracle::frozen_coefficients;
using oracle::kink_free_point;
using oracle::mat_rel;
using oracle::oracle_gd;
using oracle::oracle_hstar_d;
using oracle::unit_direction;

using namespace gz;

TEST_CASE("diffengine: gradient matches finite differences at kink-free points") {
  for (bool small : {false, true})
    for (std::uint64_t seed = 1; seed <= 4; ++seed)
      for (double T : {0.5, 1.0, 3.0}) {
        CAPTURE(small);
        CAPTURE(seed);
        CAPTURE(T);
        const auto pt = kink_free_point(seed, small);
        const auto lg = loss_and_grad(pt.net, pt.batch, T);
        CHECK(lg.loss == doctest::Approx(oracle::naive_loss(pt.net, pt.batch, T)).epsilon(1e-13));
        CHECK(oracle::rel_diff(lg.grad, oracle::fd_gradient(pt.net, pt.batch, T)) < 1e-7);
        CHECK(loss_value(pt.net, pt.batch, T) == doctest::Approx(lg.loss).epsilon(1e-15));
      }
}

TEST_CASE("diffengine: logit Jacobian matches finite differences") {
  const auto pt = kink_free_point(7, true);
  const auto r = make_projector(pt.net.param_count(), 9, 3);
  for (std::size_t mu = 0; mu < pt.batch.size(); ++mu) {
    const Tensor x = pt.batch.sample(mu);
    const Tensor J = logit_jacobian(pt.net, x);
    CHECK(oracle::rel_diff(J.values(), oracle::fd_logit_jacobian(pt.net, as_batch(x))) < 1e-7);
    const Tensor JR = logit_jacobian(pt.net, x, r);
    for (std::size_t k = 0; k < pt.net.num_classes(); ++k) {
      const auto expect = r.project(J.row(k));
      CHECK(oracle::rel_diff(JR.row(k), expect) < 1e-14);
    }
  }
  CHECK_THROWS_AS(logit_jacobian(pt.net, pt.batch.X), ShapeMismatch);
}

TEST_CASE("diffengine: Hessian-vector products match differences of the gradient") {
  Rng rng(21);
  for (bool small : {false, true})
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto pt = kink_free_point(seed + 10, small);
      const double T = 0.8;
      for (int t = 0; t < 3; ++t) {
        const auto v = unit_direction(rng, pt.net.param_count());
        const double h = 1e-6;
        const auto gp = loss_grad(oracle::moved(pt.net, v, h), pt.batch, T);
        const auto gm = loss_grad(oracle::moved(pt.net, v, -h), pt.batch, T);
        std::vector<double> fd(gp.size());
        for (std::size_t i = 0; i < fd.size(); ++i) fd[i] = (gp[i] - gm[i]) / (2.0 * h);
        CHECK(oracle::rel_diff(hvp(pt.net, pt.batch, T, v), fd) < 1e-6);
      }
    }
}

TEST_CASE("diffengine: Gauss-Newton product equals J^T M J v / T^2") {
  Rng rng(22);
  const auto pt = kink_free_point(31, true);
  const double T = 1.7;
  const CurvatureProbe probe(pt.net, pt.batch, T);
  const std::size_t P = pt.net.param_count(), K = pt.net.num_classes();
  const auto v = unit_direction(rng, P);
  std::vector<double> expect(P, 0.0);
  for (std::size_t mu = 0; mu < pt.batch.size(); ++mu) {
    const Tensor J = logit_jacobian(pt.net, pt.batch.sample(mu));
    std::vector<double> jv(K, 0.0), mjv(K, 0.0);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t i = 0; i < P; ++i) jv[k] += J.at(k, i) * v[i];
    const auto M = oracle::dense_m(probe.probs().p.row(mu));
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < K; ++j) mjv[i] += M[i * K + j] * jv[j];
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t i = 0; i < P; ++i)
        expect[i] += J.at(k, i) * mjv[k] / (T * T * static_cast<double>(pt.batch.size()));
  }
  CHECK(oracle::rel_diff(probe.gnvp(v), expect) < 1e-12);

  std::vector<double> tangent;
  const auto hv = probe.hvp(v, tangent);
  CHECK(oracle::rel_diff(hv, probe.hvp(v)) == 0.0);
  CHECK(oracle::rel_diff(tangent, probe.logit_tangent(v)) == 0.0);
}

TEST_CASE("diffengine: random projectors are orthonormal with disjoint supports") {
  Rng rng(23);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t P = 1 + rng.below(300);
    const std::size_t d = 1 + rng.below(P);
    const auto r = make_projector(P, d, rng.next_u64());
    REQUIRE(r.dim() == d);
    std::vector<int> hits(P, 0);
    std::size_t smallest = P, largest = 0;
    for (std::size_t j = 0; j < d; ++j) {
      double norm = 0.0;
      for (const auto& e : r.column(j)) {
        ++hits[e.index];
        norm += e.value * e.value;
      }
      CHECK(norm == doctest::Approx(1.0).epsilon(1e-14));
      smallest = std::min(smallest, r.column(j).size());
      largest = std::max(largest, r.column(j).size());
    }
    for (int h : hits) CHECK(h == 1);
    CHECK(largest - smallest <= 1);
    // R^T R = I through the public lift/project pair.
    for (std::size_t j = 0; j < std::min<std::size_t>(d, 5); ++j) {
      std::vector<double> e(d, 0.0);
      e[j] = 1.0;
      const auto back = r.project(r.lift(e));
      CHECK(oracle::rel_diff(back, e) < 1e-15);
    }
  }
  CHECK_THROWS_AS(make_projector(10, 0, 1), InvalidInput);
  CHECK_THROWS_AS(make_projector(10, 11, 1), InvalidInput);
  CHECK_THROWS_AS(coordinate_projector(10, 8, 3), InvalidInput);
  CHECK_THROWS_AS(Projector(3, {{{0, 1.0}}, {{0, 1.0}}}), InvalidInput);
  CHECK_THROWS_AS(Projector(3, {{{1, 0.5}}}), InvalidInput);
}

TEST_CASE("diffengine: projected decomposition agrees with independent constructions") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    CAPTURE(seed);
    const auto pt = kink_free_point(40 + seed, true);
    const double T = 0.9;
    const auto r = make_projector(pt.net.param_count(), 12, seed);
    const auto dec = projected_decomposition(pt.net, pt.batch, T, r);

    // H_d column by column from full HVPs.
    std::vector<double> hd(144);
    for (std::size_t j = 0; j < 12; ++j) {
      const auto pr = r.project(hvp(pt.net, pt.batch, T, r.dense_column(j)));
      for (std::size_t i = 0; i < 12; ++i) hd[i * 12 + j] = pr[i];
    }
    CHECK(mat_rel(dec.H, SymmetricMatrix(12, hd)) < 1e-12);

    const auto G = oracle_gd(pt.net, pt.batch, T, r);
    const auto Hs = oracle_hstar_d(pt.net, pt.batch, T, r);
    CHECK(mat_rel(dec.G, G) < 1e-7);
    CHECK(mat_rel(dec.Hstar, Hs) < 1e-6);
    CHECK(mat_rel(G + Hs, dec.H) < 1e-6);
    CHECK(mat_rel(dec.Hstar, dec.H - dec.G) < 1e-15);

    const auto terms = per_sample_gterms(pt.net, pt.batch, T, r);
    SymmetricMatrix mean(12);
    for (const auto& t : terms) mean = mean + t.scaled(1.0 / static_cast<double>(terms.size()));
    CHECK(mat_rel(mean, dec.G) < 1e-12);
  }
}

TEST_CASE("diffengine: full-dimension projection reproduces the dense Hessian") {
  const auto pt = kink_free_point(50, false, 2e-2);
  const std::size_t P = pt.net.param_count();
  const auto dec = projected_decomposition(pt.net, pt.batch, 1.0, coordinate_projector(P, 0, P));
  const auto H = oracle::fd_hessian(pt.net, pt.batch, 1.0);
  CHECK(oracle::rel_diff(dec.H.dense(), H) < 1e-4);
}

TEST_CASE("diffengine: results do not depend on the thread count") {
  const auto pt = kink_free_point(60, true);
  const auto r = make_projector(pt.net.param_count(), 20, 9);
  const auto a = projected_decomposition(pt.net, pt.batch, 1.0, r, 1);
  const auto b = projected_decomposition(pt.net, pt.batch, 1.0, r, 4);
  for (std::size_t i = 0; i < a.H.dense().size(); ++i) {
    CHECK(a.H.dense()[i] == b.H.dense()[i]);
    CHECK(a.G.dense()[i] == b.G.dense()[i]);
  }
}

TEST_CASE("diffengine: scaling alpha with T = alpha^L rescales gradient and curvature") {
  const auto pt = kink_free_point(70, true);
  const auto r = make_projector(pt.net.param_count(), 10, 4);
  const auto g1 = loss_grad(pt.net, pt.batch, 1.0);
  const auto d1 = projected_decomposition(pt.net, pt.batch, 1.0, r);
  for (double alpha : {0.1, 3.0, 20.0}) {
    CAPTURE(alpha);
    const auto net = scale_params(pt.net, alpha);
    const double T = std::pow(alpha, 3.0);
    auto g = loss_grad(net, pt.batch, T);
    for (auto& v : g) v *= alpha;
    CHECK(oracle::rel_diff(g, g1) < 1e-12);
    const auto d = projected_decomposition(net, pt.batch, T, r);
    CHECK(mat_rel(d.H.scaled(alpha * alpha), d1.H) < 1e-11);
    CHECK(mat_rel(d.G.scaled(alpha * alpha), d1.G) < 1e-11);
  }
}

TEST_CASE("diffengine: coefficient overrides") {
  const auto pt = kink_free_point(80, true);
  const auto c = uniform_output_coefficients(pt.batch);
  const std::size_t K = pt.batch.num_classes;
  for (std::size_t mu = 0; mu < pt.batch.size(); ++mu) {
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += c[mu * K + k];
    CHECK(std::abs(s) < 1e-15);
  }
  // At zero logits the softmax is uniform, so the override changes nothing.
  const auto zero = pt.net.with_theta(std::vector<double>(pt.net.param_count(), 0.0));
  const auto g_real = loss_grad(pt.net, pt.batch, 1.0, frozen_coefficients(pt.net, pt.batch, 1.0));
  CHECK(oracle::rel_diff(g_real, loss_grad(pt.net, pt.batch, 1.0)) < 1e-14);
  CHECK(oracle::max_abs(loss_grad(zero, pt.batch, 1.0, c)) == 0.0);
  CHECK_THROWS_AS(loss_grad(pt.net, pt.batch, 1.0, std::vector<double>(3)), ShapeMismatch);
}

TEST_CASE("diffengine: argument validation") {
  const auto pt = kink_free_point(90, true);
  std::vector<double> v(pt.net.param_count(), 0.0);
  CHECK_THROWS_AS(hvp(pt.net, pt.batch, 1.0, v), InvalidInput);
  v[0] = NAN;
  CHECK_THROWS_AS(hvp(pt.net, pt.batch, 1.0, v), InvalidInput);
  CHECK_THROWS_AS(hvp(pt.net, pt.batch, 1.0, std::vector<double>(3, 1.0)), ShapeMismatch);
  CHECK_THROWS_AS(loss_grad(pt.net, pt.batch, 0.0), InvalidInput);
  CHECK_THROWS_AS(loss_grad(pt.net, pt.batch, -1.0), InvalidInput);
  CHECK_THROWS_AS(projected_decomposition(pt.net, pt.batch, 1.0, make_projector(7, 2, 0)),
                  ShapeMismatch);
}
