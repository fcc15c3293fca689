#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "goldizone/datasets.hpp"
#include "goldizone/errors.hpp"
#include "support/oracles.hpp"

using namespace gz;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "goldizone_test_datasets";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> be32(std::uint32_t v) {
  return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
}

std::vector<unsigned char> concat(std::initializer_list<std::vector<unsigned char>> parts) {
  std::vector<unsigned char> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::size_t format_offset(const fs::path& img, const fs::path& lab) {
  try {
    load_idx(img.string(), lab.string());
  } catch (const FormatError& e) {
    return e.byte_offset();
  }
  FAIL("expected FormatError");
  return 0;
}

}  // namespace

TEST_CASE("datasets: blobs are deterministic, balanced and split 80/20") {
  const Dataset a = make_blobs(4, 10, 25, 0.5, 3, 2.0);
  const Dataset b = make_blobs(4, 10, 25, 0.5, 3, 2.0);
  CHECK(checksum(a) == checksum(b));
  CHECK(checksum(a) != checksum(make_blobs(4, 10, 25, 0.5, 4, 2.0)));
  REQUIRE(a.size() == 100);
  CHECK(a.sample_shape() == std::vector<std::size_t>{10});
  const Dataset tr = a.train(), te = a.test();
  CHECK(tr.size() == 80);
  CHECK(te.size() == 20);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(tr.class_pools[k].size() == 20);
    CHECK(te.class_pools[k].size() == 5);
  }
  for (double q : a.prior()) CHECK(q == doctest::Approx(0.25));
}

TEST_CASE("datasets: blob class means are orthogonal at the requested radius") {
  const std::size_t K = 5, dim = 12, n = 4000;
  const Dataset ds = make_blobs(K, dim, n, 0.0, 8, 3.0);
  std::vector<std::vector<double>> mean(K, std::vector<double>(dim, 0.0));
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t t = 0; t < dim; ++t) mean[ds.y[i]][t] += ds.X[i * dim + t] / static_cast<double>(n);
  for (std::size_t a = 0; a < K; ++a)
    for (std::size_t b = 0; b <= a; ++b)
      CHECK(dot(mean[a], mean[b]) == doctest::Approx(a == b ? 9.0 : 0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("datasets: blob clouds have the requested spread") {
  const std::size_t dim = 8, n = 20000;
  const Dataset ds = make_blobs(2, dim, n, 0.7, 9, 1.0);
  std::vector<double> mean(dim, 0.0);
  double m2 = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.y[i] != 0) continue;
    for (std::size_t t = 0; t < dim; ++t) mean[t] += ds.X[i * dim + t];
    ++count;
  }
  for (auto& v : mean) v /= static_cast<double>(count);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.y[i] != 0) continue;
    for (std::size_t t = 0; t < dim; ++t) m2 += std::pow(ds.X[i * dim + t] - mean[t], 2);
  }
  CHECK(m2 / static_cast<double>(count * dim) == doctest::Approx(0.49).epsilon(0.02));
}

TEST_CASE("datasets: IDX round trip") {
  const auto img = scratch("rt-images.idx"), lab = scratch("rt-labels.idx");
  const std::vector<std::uint8_t> pixels = {0, 255, 51, 102, 0, 0, 255, 255, 10, 20, 30, 40};
  const std::vector<std::uint8_t> labels = {2, 0, 1};
  write_idx_images(img.string(), 3, 2, 2, pixels);
  write_idx_labels(lab.string(), labels);
  const Dataset ds = load_idx(img.string(), lab.string());
  REQUIRE(ds.X.shape() == std::vector<std::size_t>{3, 1, 2, 2});
  for (std::size_t i = 0; i < pixels.size(); ++i) CHECK(ds.X[i] == doctest::Approx(pixels[i] / 255.0));
  CHECK(ds.y == std::vector<int>{2, 0, 1});
  CHECK(ds.num_classes == 3);

  const Dataset st = load_idx(img.string(), lab.string(), true);
  double m = 0.0, v = 0.0;
  for (double x : st.X.values()) m += x;
  m /= static_cast<double>(st.X.size());
  for (double x : st.X.values()) v += (x - m) * (x - m);
  CHECK(std::abs(m) < 1e-14);
  CHECK(v / static_cast<double>(st.X.size()) == doctest::Approx(1.0));
}

TEST_CASE("datasets: malformed IDX files report byte offsets") {
  const auto good_img = scratch("good-images.idx"), good_lab = scratch("good-labels.idx");
  write_idx_images(good_img.string(), 2, 1, 1, std::vector<std::uint8_t>{1, 2});
  write_idx_labels(good_lab.string(), std::vector<std::uint8_t>{0, 1});

  const auto bad = scratch("bad.idx");
  write_bytes(bad, concat({be32(0x00000802), be32(2), be32(1), be32(1), {1, 2}}));
  CHECK(format_offset(bad, good_lab) == 0);

  write_bytes(bad, concat({be32(0x00000803), be32(2), be32(1)}));
  CHECK(format_offset(bad, good_lab) == 12);

  write_bytes(bad, concat({be32(0x00000803), be32(3), be32(1), be32(1), {1, 2}}));
  CHECK(format_offset(bad, good_lab) == 18);

  write_bytes(bad, concat({be32(0x00000801), be32(3), {0, 1, 0}}));
  CHECK(format_offset(good_img, bad) == 4);

  write_bytes(bad, concat({be32(0x00000801), be32(2), {0}}));
  CHECK(format_offset(good_img, bad) == 9);

  CHECK_THROWS_AS(load_idx(scratch("missing.idx").string(), good_lab.string()), IoError);
}

TEST_CASE("datasets: checksum is FNV-1a over shape, bit patterns and labels") {
  Dataset ds;
  ds.X = Tensor({2, 1}, {1.0, -2.5});
  ds.y = {0, 1};
  ds.num_classes = 2;
  ds.is_test = {0, 0};
  ds.index();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  feed(2);
  feed(1);
  for (double v : {1.0, -2.5}) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    feed(bits);
  }
  feed(0);
  feed(1);
  CHECK(checksum(ds) == h);
}

TEST_CASE("datasets: balanced batches") {
  const Dataset ds = make_blobs(3, 4, 20, 1.0, 1);
  for (std::size_t size : {1u, 7u, 30u, 60u}) {
    const auto idx = balanced_batch(ds, size, size);
    REQUIRE(idx.size() == size);
    std::map<int, int> counts;
    for (std::size_t i : idx) ++counts[ds.y[i]];
    int lo = 1 << 30, hi = 0;
    for (int k = 0; k < 3; ++k) {
      lo = std::min(lo, counts[k]);
      hi = std::max(hi, counts[k]);
    }
    CHECK(hi - lo <= 1);
    CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
  }
  CHECK(balanced_batch(ds, 10, 5) == balanced_batch(ds, 10, 5));
  CHECK_THROWS_AS(balanced_batch(ds, 61, 0), InvalidInput);
  CHECK_THROWS_AS(balanced_batch(ds, 0, 0), InvalidInput);
}

TEST_CASE("datasets: prior resampling follows the requested prior") {
  const Dataset ds = make_blobs(4, 3, 10, 1.0, 2);
  const std::vector<double> prior = {0.7, 0.1, 0.2, 0.0};
  const Dataset r = resample_by_prior(ds, prior, 20000, 4);
  const auto q = r.prior();
  for (std::size_t k = 0; k < 4; ++k) CHECK(q[k] == doctest::Approx(prior[k]).scale(1.0).epsilon(0.01));
  // Every resampled row is a copy of a source row of the same class.
  for (std::size_t i = 0; i < 50; ++i) {
    bool found = false;
    for (std::size_t j : ds.class_pools[r.y[i]])
      found = found || std::equal(r.X.values().begin() + static_cast<long>(3 * i),
                                  r.X.values().begin() + static_cast<long>(3 * i + 3),
                                  ds.X.values().begin() + static_cast<long>(3 * j));
    CHECK(found);
  }
  CHECK_THROWS_AS(resample_by_prior(ds, std::vector<double>{0.5, 0.5}, 10, 0), ShapeMismatch);
  CHECK_THROWS_AS(resample_by_prior(ds, std::vector<double>{0.5, 0.6, 0.0, 0.0}, 10, 0), InvalidInput);
}

TEST_CASE("datasets: shuffled labels keep the histogram") {
  Rng rng(3);
  std::vector<int> y(500);
  for (auto& v : y) v = static_cast<int>(rng.below(7));
  const auto s = shuffled_labels(y, 11);
  CHECK(s != y);
  auto a = y, b = s;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
  CHECK(shuffled_labels(y, 11) == s);
}

TEST_CASE("datasets: gaussian images and input scaling") {
  const Dataset g = gaussian_images({1, 4, 4}, 50, 3, 6);
  CHECK(g.X.shape() == std::vector<std::size_t>{50, 1, 4, 4});
  for (int v : g.y) CHECK((v >= 0 && v < 3));
  const Dataset s = g.scaled_inputs(1e-7);
  CHECK(s.X[17] == g.X[17] * 1e-7);
  CHECK(s.y == g.y);
  CHECK_THROWS_AS(make_blobs(1, 4, 4, 1.0, 0), InvalidInput);
}
