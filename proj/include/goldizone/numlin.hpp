#pragma once

// Dense numeric substrate: tensors, symmetric matrices and their
// eigendecomposition, a counter-based RNG, stable softmax, and the
// bias-free convolution / max-pool kernels used by the network zoo.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace gz {

/// Dense row-major float64 array.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D convenience accessors.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::span<const double> row(std::size_t r) const;
  std::span<double> row(std::size_t r);

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  bool all_finite() const noexcept;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_product(std::span<const std::size_t> shape);

/// Square symmetric matrix, stored densely. Construction from arbitrary
/// data symmetrizes as (A + A^T) / 2.
class SymmetricMatrix {
 public:
  SymmetricMatrix() = default;
  explicit SymmetricMatrix(std::size_t n);
  SymmetricMatrix(std::size_t n, std::vector<double> dense);

  static SymmetricMatrix identity(std::size_t n);
  static SymmetricMatrix diagonal(std::span<const double> diag);

  std::size_t dim() const noexcept { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return a_[i * n_ + j]; }
  /// Sets both (i, j) and (j, i).
  void set(std::size_t i, std::size_t j, double v);
  void add(std::size_t i, std::size_t j, double v);

  std::span<const double> dense() const noexcept { return a_; }

  double trace() const noexcept;
  double frobenius() const noexcept;
  double max_abs() const noexcept;
  bool all_finite() const noexcept;

  std::vector<double> multiply(std::span<const double> v) const;

  SymmetricMatrix operator+(const SymmetricMatrix& o) const;
  SymmetricMatrix operator-(const SymmetricMatrix& o) const;
  SymmetricMatrix scaled(double c) const;

 private:
  std::size_t n_ = 0;
  std::vector<double> a_;
};

struct EigenDecomposition {
  std::size_t n = 0;
  std::vector<double> values;   // descending
  std::vector<double> vectors;  // row-major n x n; column j pairs with values[j]

  double vector_entry(std::size_t row, std::size_t col) const { return vectors[row * n + col]; }
  std::vector<double> column(std::size_t col) const;
};

/// Cyclic Jacobi eigensolver. Throws InvalidInput on non-finite entries or
/// n > 2048, ConvergenceFailure if off-diagonal mass survives max_sweeps.
EigenDecomposition eigh(const SymmetricMatrix& a, int max_sweeps = 100);

/// Splittable counter-based generator (SplitMix64 finalizer over
/// seed + counter). Streams depend only on the seed, never the platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : seed_(seed) {}

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Standard normal via Box-Muller.
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }
  /// Gamma(shape, 1) draw (Marsaglia-Tsang), used for Dirichlet priors.
  double gamma(double shape) noexcept;

  /// Independent child stream.
  Rng split(std::uint64_t stream) const noexcept;
  std::uint64_t seed() const noexcept { return seed_; }

  template <typename T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

/// Softmax of z / T with max-subtraction.
std::vector<double> stable_softmax(std::span<const double> z, double temperature);

/// T * log(sum_k exp(z_k / T)), stable for any finite z.
double log_sum_exp(std::span<const double> z, double temperature);

/// Bias-free cross-correlation, input NCHW, weights OIHW.
Tensor conv2d_forward(const Tensor& input, const Tensor& weights, std::size_t stride,
                      std::size_t padding);

/// Non-overlapping max pooling with a square window (floor on edges).
Tensor maxpool2d_forward(const Tensor& input, std::size_t window);

double dot(std::span<const double> a, std::span<const double> b) noexcept;
double norm2(std::span<const double> a) noexcept;

}  // namespace gz
