#include "goldizone/numlin.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "goldizone/errors.hpp"
#include "kernels.hpp"

namespace gz {

// ---------------------------------------------------------------- Tensor

std::size_t shape_product(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size())
    throw ShapeMismatch("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape product " +
                        std::to_string(shape_product(shape_)));
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t stride = data_.size() / shape_.at(0);
  return std::span<const double>(data_).subspan(r * stride, stride);
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t stride = data_.size() / shape_.at(0);
  return std::span<double>(data_).subspan(r * stride, stride);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

// ------------------------------------------------------- SymmetricMatrix

SymmetricMatrix::SymmetricMatrix(std::size_t n) : n_(n), a_(n * n, 0.0) {}

SymmetricMatrix::SymmetricMatrix(std::size_t n, std::vector<double> dense)
    : n_(n), a_(std::move(dense)) {
  if (a_.size() != n * n)
    throw ShapeMismatch("symmetric matrix expects " + std::to_string(n * n) + " entries, got " +
                        std::to_string(a_.size()));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double m = 0.5 * (a_[i * n + j] + a_[j * n + i]);
      a_[i * n + j] = m;
      a_[j * n + i] = m;
    }
  }
}

SymmetricMatrix SymmetricMatrix::identity(std::size_t n) {
  SymmetricMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) m.a_[i * n + i] = 1.0;
  return m;
}

SymmetricMatrix SymmetricMatrix::diagonal(std::span<const double> diag) {
  SymmetricMatrix m(diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m.a_[i * diag.size() + i] = diag[i];
  return m;
}

void SymmetricMatrix::set(std::size_t i, std::size_t j, double v) {
  a_[i * n_ + j] = v;
  a_[j * n_ + i] = v;
}

void SymmetricMatrix::add(std::size_t i, std::size_t j, double v) {
  a_[i * n_ + j] += v;
  if (i != j) a_[j * n_ + i] += v;
}

double SymmetricMatrix::trace() const noexcept {
  double t = 0.0;
  for (std::size_t i = 0; i < n_; ++i) t += a_[i * n_ + i];
  return t;
}

double SymmetricMatrix::frobenius() const noexcept {
  // Scaled accumulation so tiny (1e-200) and huge entries both survive.
  const double scale = max_abs();
  if (scale == 0.0 || !std::isfinite(scale)) return scale;
  double s = 0.0;
  for (double v : a_) {
    const double r = v / scale;
    s += r * r;
  }
  return scale * std::sqrt(s);
}

double SymmetricMatrix::max_abs() const noexcept {
  double m = 0.0;
  for (double v : a_) m = std::max(m, std::abs(v));
  return m;
}

bool SymmetricMatrix::all_finite() const noexcept {
  return std::all_of(a_.begin(), a_.end(), [](double v) { return std::isfinite(v); });
}

std::vector<double> SymmetricMatrix::multiply(std::span<const double> v) const {
  if (v.size() != n_) throw ShapeMismatch("matrix-vector size mismatch");
  std::vector<double> out(n_, 0.0);
  for (std::size_t i = 0; i < n_; ++i) out[i] = dot(std::span(a_).subspan(i * n_, n_), v);
  return out;
}

SymmetricMatrix SymmetricMatrix::operator+(const SymmetricMatrix& o) const {
  if (o.n_ != n_) throw ShapeMismatch("symmetric matrix sum dimension mismatch");
  SymmetricMatrix r(n_);
  for (std::size_t i = 0; i < a_.size(); ++i) r.a_[i] = a_[i] + o.a_[i];
  return r;
}

SymmetricMatrix SymmetricMatrix::operator-(const SymmetricMatrix& o) const {
  if (o.n_ != n_) throw ShapeMismatch("symmetric matrix difference dimension mismatch");
  SymmetricMatrix r(n_);
  for (std::size_t i = 0; i < a_.size(); ++i) r.a_[i] = a_[i] - o.a_[i];
  return r;
}

SymmetricMatrix SymmetricMatrix::scaled(double c) const {
  SymmetricMatrix r(n_);
  for (std::size_t i = 0; i < a_.size(); ++i) r.a_[i] = c * a_[i];
  return r;
}

// ------------------------------------------------------------------ eigh

std::vector<double> EigenDecomposition::column(std::size_t col) const {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = vectors[i * n + col];
  return v;
}

EigenDecomposition eigh(const SymmetricMatrix& input, int max_sweeps) {
  const std::size_t n = input.dim();
  if (n > 2048) throw InvalidInput("eigh supports n <= 2048, got " + std::to_string(n));
  if (!input.all_finite()) throw InvalidInput("eigh: matrix has non-finite entries");

  std::vector<double> a(input.dense().begin(), input.dense().end());
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  auto off_mass = [&] {
    double s = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) s += a[p * n + q] * a[p * n + q];
    return std::sqrt(2.0 * s);
  };

  const double norm = input.frobenius();
  const double target = 1e-15 * norm;
  bool converged = (norm == 0.0);

  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    const double off = off_mass();
    if (off <= target || off == 0.0) {
      converged = true;
      break;
    }
    // Threshold strategy: early sweeps only touch the large elements.
    const double thresh = sweep < 3 ? 0.2 * off / static_cast<double>(n * n) : 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        const double app = a[p * n + p], aqq = a[q * n + q];
        const double g = 100.0 * std::abs(apq);
        if (sweep > 3 && std::abs(app) + g == std::abs(app) &&
            std::abs(aqq) + g == std::abs(aqq)) {
          a[p * n + q] = 0.0;
          a[q * n + p] = 0.0;
          continue;
        }
        if (std::abs(apq) <= thresh || apq == 0.0) continue;

        const double h = aqq - app;
        double t;
        if (std::abs(h) + g == std::abs(h)) {
          t = apq / h;
        } else {
          const double theta = 0.5 * h / apq;
          t = 1.0 / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
          if (theta < 0.0) t = -t;
        }
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        const double tau = s / (1.0 + c);

        a[p * n + p] = app - t * apq;
        a[q * n + q] = aqq + t * apq;
        a[p * n + q] = 0.0;
        a[q * n + p] = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r == p || r == q) continue;
          const double arp = a[r * n + p], arq = a[r * n + q];
          const double nrp = arp - s * (arq + tau * arp);
          const double nrq = arq + s * (arp - tau * arq);
          a[r * n + p] = nrp;
          a[p * n + r] = nrp;
          a[r * n + q] = nrq;
          a[q * n + r] = nrq;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double vrp = v[r * n + p], vrq = v[r * n + q];
          v[r * n + p] = vrp - s * (vrq + tau * vrp);
          v[r * n + q] = vrq + s * (vrp - tau * vrq);
        }
      }
    }
  }
  if (!converged) {
    const double off = off_mass();
    if (off > target && off != 0.0)
      throw ConvergenceFailure("eigh: Jacobi sweeps exhausted, off-diagonal mass " +
                                   std::to_string(off),
                               off);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a[i * n + i] > a[j * n + j]; });

  EigenDecomposition out;
  out.n = n;
  out.values.resize(n);
  out.vectors.resize(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = a[order[j] * n + order[j]];
    for (std::size_t i = 0; i < n; ++i) out.vectors[i * n + j] = v[i * n + order[j]];
  }
  return out;
}

// ------------------------------------------------------------------- Rng

std::uint64_t mix64(std::uint64_t x) noexcept {
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t Rng::next_u64() noexcept {
  ++counter_;
  return mix64(seed_ + counter_ * 0x9E3779B97F4A7C15ULL);
}

double Rng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) noexcept {
  if (n == 0) return 0;
  const unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
  return static_cast<std::uint64_t>(m >> 64);
}

double Rng::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double Rng::gamma(double shape) noexcept {
  if (shape < 1.0) {
    const double u = 1.0 - uniform();
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - uniform();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
  }
}

Rng Rng::split(std::uint64_t stream) const noexcept {
  return Rng(mix64(seed_ ^ mix64(stream + 0x632BE59BD9B4E019ULL)));
}

// --------------------------------------------------------------- softmax

namespace {
void require_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw InvalidInput("temperature must be positive and finite, got " +
                       std::to_string(temperature));
}
}  // namespace

std::vector<double> stable_softmax(std::span<const double> z, double temperature) {
  require_temperature(temperature);
  if (z.empty()) throw InvalidInput("softmax of empty logit vector");
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    p[k] = std::exp((z[k] - m) / temperature);
    s += p[k];
  }
  for (double& v : p) v /= s;
  return p;
}

double log_sum_exp(std::span<const double> z, double temperature) {
  require_temperature(temperature);
  if (z.empty()) throw InvalidInput("log_sum_exp of empty vector");
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp((v - m) / temperature);
  return m + temperature * std::log(s);
}

// ---------------------------------------------------------- conv / pool

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, std::size_t stride,
                      std::size_t padding) {
  if (input.rank() != 4 || weights.rank() != 4)
    throw ShapeMismatch("conv2d expects NCHW input and OIHW weights");
  if (weights.extent(1) != input.extent(1))
    throw ShapeMismatch("conv2d channel mismatch: input " + std::to_string(input.extent(1)) +
                        ", weights " + std::to_string(weights.extent(1)));
  if (weights.extent(2) != weights.extent(3))
    throw ShapeMismatch("conv2d supports square kernels only");
  if (stride == 0) throw InvalidInput("conv2d stride must be positive");
  detail::ConvGeom g;
  g.channels = input.extent(1);
  g.height = input.extent(2);
  g.width = input.extent(3);
  g.out_channels = weights.extent(0);
  g.kernel = weights.extent(2);
  g.stride = stride;
  g.padding = padding;
  if (g.height + 2 * padding < g.kernel || g.width + 2 * padding < g.kernel)
    throw ShapeMismatch("conv2d kernel larger than padded input");
  g.out_height = (g.height + 2 * padding - g.kernel) / stride + 1;
  g.out_width = (g.width + 2 * padding - g.kernel) / stride + 1;
  const std::size_t batch = input.extent(0);
  Tensor out({batch, g.out_channels, g.out_height, g.out_width});
  detail::conv_forward(weights.values(), input.values(), out.values(), batch, g, false);
  return out;
}

Tensor maxpool2d_forward(const Tensor& input, std::size_t window) {
  if (input.rank() != 4) throw ShapeMismatch("maxpool expects NCHW input");
  if (window == 0 || input.extent(2) < window || input.extent(3) < window)
    throw ShapeMismatch("maxpool window does not fit input");
  const std::size_t b = input.extent(0), c = input.extent(1);
  const std::size_t h = input.extent(2), w = input.extent(3);
  Tensor out({b, c, h / window, w / window});
  std::vector<std::uint32_t> argmax(out.size());
  detail::maxpool_forward(input.values(), out.values(), argmax, b, c, h, w, window);
  return out;
}

}  // namespace gz
