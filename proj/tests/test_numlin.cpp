#include <doctest.h>

#include <cmath>
#include <numeric>

#include "goldizone/errors.hpp"
#include "goldizone/numlin.hpp"
#include "support/oracles.hpp"

using namespace gz;

namespace {

SymmetricMatrix random_symmetric(Rng& rng, std::size_t n, double scale = 1.0) {
  SymmetricMatrix a(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) a.set(i, j, scale * rng.normal());
  return a;
}

}  // namespace

TEST_CASE("numlin: eigh reconstructs random symmetric matrices") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng.below(24);
    const SymmetricMatrix a = random_symmetric(rng, n);
    const EigenDecomposition e = eigh(a);
    REQUIRE(e.values.size() == n);
    for (std::size_t j = 1; j < n; ++j) CHECK(e.values[j - 1] >= e.values[j]);
    for (std::size_t j = 0; j < n; ++j) {
      const auto v = e.column(j);
      const auto av = a.multiply(v);
      for (std::size_t i = 0; i < n; ++i) CHECK(av[i] == doctest::Approx(e.values[j] * v[i]).epsilon(1e-9).scale(1.0));
      for (std::size_t k = 0; k <= j; ++k)
        CHECK(dot(v, e.column(k)) == doctest::Approx(k == j ? 1.0 : 0.0).scale(1.0).epsilon(1e-10));
    }
    CHECK(std::accumulate(e.values.begin(), e.values.end(), 0.0) ==
          doctest::Approx(a.trace()).scale(1.0).epsilon(1e-10));
  }
}

TEST_CASE("numlin: eigh on a 2x2 matches the quadratic formula") {
  SymmetricMatrix a(2, {2.0, 1.0, 1.0, -3.0});
  const auto e = eigh(a);
  const double disc = std::sqrt(25.0 / 4.0 + 1.0);
  CHECK(e.values[0] == doctest::Approx(-0.5 + disc).epsilon(1e-14));
  CHECK(e.values[1] == doctest::Approx(-0.5 - disc).epsilon(1e-14));
}

TEST_CASE("numlin: eigh rejects non-finite input") {
  SymmetricMatrix a(2);
  a.set(0, 1, NAN);
  CHECK_THROWS_AS(eigh(a), InvalidInput);
}

TEST_CASE("numlin: frobenius survives extreme scales") {
  Rng rng(4);
  const SymmetricMatrix a = random_symmetric(rng, 6);
  for (double s : {1e-200, 1e200}) {
    const SymmetricMatrix b = a.scaled(s);
    CHECK(std::isfinite(b.frobenius()));
    CHECK(b.frobenius() / s == doctest::Approx(a.frobenius()).epsilon(1e-12));
  }
}

TEST_CASE("numlin: symmetrizing constructor averages transposes") {
  SymmetricMatrix a(2, {1.0, 4.0, 2.0, 5.0});
  CHECK(a(0, 1) == 3.0);
  CHECK(a(1, 0) == 3.0);
  CHECK_THROWS_AS(SymmetricMatrix(2, {1.0, 2.0, 3.0}), ShapeMismatch);
}

TEST_CASE("numlin: softmax properties over random logits") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t K = 2 + rng.below(12);
    const double scale = std::pow(10.0, 4.0 * rng.uniform() - 1.0);
    const double T = std::pow(10.0, 2.0 * rng.uniform() - 1.0);
    std::vector<double> z(K);
    for (auto& v : z) v = scale * rng.normal();
    const auto p = stable_softmax(z, T);
    double s = 0.0;
    for (double v : p) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    // Shift invariance.
    std::vector<double> shifted(z);
    for (auto& v : shifted) v += 17.0;
    const auto q = stable_softmax(shifted, T);
    CHECK(oracle::rel_diff(q, p) < 1e-9);
  }
}

TEST_CASE("numlin: log_sum_exp agrees with the naive formula when it is safe") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z(5);
    for (auto& v : z) v = rng.normal();
    double s = 0.0;
    for (double v : z) s += std::exp(v / 0.7);
    CHECK(log_sum_exp(z, 0.7) == doctest::Approx(0.7 * std::log(s)).epsilon(1e-13));
  }
  const std::vector<double> big = {1e6, 1e6 - 1.0};
  CHECK(std::isfinite(log_sum_exp(big, 1.0)));
  CHECK_THROWS_AS(stable_softmax(big, 0.0), InvalidInput);
}

TEST_CASE("numlin: rng streams are reproducible and well spread") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng(42).next_u64() != c.next_u64());
  CHECK(Rng(42).split(1).next_u64() != Rng(42).split(2).next_u64());

  Rng r(7);
  const int n = 200000;
  double m = 0.0, m2 = 0.0, u = 0.0, g = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    m += x;
    m2 += x * x;
    const double v = r.uniform();
    CHECK_FALSE((v < 0.0 || v >= 1.0));
    u += v;
    g += r.gamma(2.5);
  }
  CHECK(std::abs(m / n) < 0.01);
  CHECK(std::abs(m2 / n - 1.0) < 0.01);
  CHECK(std::abs(u / n - 0.5) < 0.005);
  CHECK(std::abs(g / n - 2.5) < 0.02);
  for (int i = 0; i < 1000; ++i) CHECK(r.below(7) < 7u);
}

TEST_CASE("numlin: conv2d matches a direct loop") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t N = 2, C = 1 + rng.below(3), H = 5 + rng.below(4), O = 1 + rng.below(3);
    const std::size_t k = 1 + rng.below(3), stride = 1 + rng.below(2), pad = rng.below(2);
    const Tensor x = oracle::random_tensor(rng, {N, C, H, H});
    const Tensor w = oracle::random_tensor(rng, {O, C, k, k});
    const Tensor y = conv2d_forward(x, w, stride, pad);
    const std::size_t Ho = (H + 2 * pad - k) / stride + 1;
    REQUIRE(y.shape() == std::vector<std::size_t>{N, O, Ho, Ho});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t i = 0; i < Ho; ++i)
          for (std::size_t j = 0; j < Ho; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t a = 0; a < k; ++a)
                for (std::size_t b = 0; b < k; ++b) {
                  const long r = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                  const long q = static_cast<long>(j * stride + b) - static_cast<long>(pad);
                  if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(H)) continue;
                  s += w[((o * C + c) * k + a) * k + b] * x[((n * C + c) * H + r) * H + q];
                }
            CHECK(y[((n * O + o) * Ho + i) * Ho + j] == doctest::Approx(s).epsilon(1e-12));
          }
  }
}

TEST_CASE("numlin: maxpool takes window maxima and drops ragged edges") {
  Tensor x({1, 1, 3, 5}, {1, 2, 3, 4, 5,  //
                          6, 7, 8, 9, 10,  //
                          -1, -2, -3, -4, -5});
  const Tensor y = maxpool2d_forward(x, 2);
  REQUIRE(y.shape() == std::vector<std::size_t>{1, 1, 1, 2});
  CHECK(y[0] == 7);
  CHECK(y[1] == 9);
  CHECK_THROWS_AS(maxpool2d_forward(Tensor({1, 1, 1, 1}), 2), ShapeMismatch);
}

TEST_CASE("numlin: tensor shape checks") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeMismatch);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.row(1).size() == 3);
  t[4] = INFINITY;
  CHECK_FALSE(t.all_finite());
}
