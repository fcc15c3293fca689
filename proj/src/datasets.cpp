#include "goldizone/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "goldizone/errors.hpp"

namespace gz {

std::vector<std::size_t> Dataset::sample_shape() const {
  if (X.rank() == 0) return {};
  return {X.shape().begin() + 1, X.shape().end()};
}

void Dataset::index() {
  if (num_classes == 0) throw InvalidInput("dataset needs at least one class");
  if (X.rank() == 0 || X.extent(0) != y.size())
    throw ShapeMismatch("dataset inputs and labels disagree in length");
  if (is_test.empty()) is_test.assign(y.size(), 0);
  if (is_test.size() != y.size()) throw ShapeMismatch("split tags do not match the labels");
  class_pools.assign(num_classes, {});
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= num_classes)
      throw InvalidInput("label " + std::to_string(y[i]) + " outside [0, " +
                         std::to_string(num_classes) + ")");
    class_pools[y[i]].push_back(i);
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  const std::size_t s = shape_product(sample_shape());
  std::vector<std::size_t> shape = X.shape();
  shape[0] = indices.size();
  Dataset out;
  out.X = Tensor(shape);
  out.num_classes = num_classes;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= size()) throw InvalidInput("subset index out of range");
    std::copy_n(X.values().begin() + src * s, s, out.X.values().begin() + i * s);
    out.y.push_back(y[src]);
    out.is_test.push_back(is_test[src]);
  }
  out.index();
  return out;
}

namespace {

Dataset split_part(const Dataset& ds, std::uint8_t tag) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.is_test[i] == tag) idx.push_back(i);
  return ds.subset(idx);
}

}  // namespace

Dataset Dataset::train() const { return split_part(*this, 0); }
Dataset Dataset::test() const { return split_part(*this, 1); }

Batch Dataset::batch() const { return Batch(X, y, num_classes); }

std::vector<double> Dataset::prior() const {
  std::vector<double> q(num_classes, 0.0);
  if (y.empty()) return q;
  for (int v : y) q[v] += 1.0;
  for (auto& v : q) v /= static_cast<double>(y.size());
  return q;
}

Dataset Dataset::scaled_inputs(double s) const {
  Dataset out = *this;
  for (auto& v : out.X.values()) v *= s;
  return out;
}

Dataset make_blobs(std::size_t K, std::size_t dim, std::size_t n_per_class, double spread,
                   std::uint64_t seed, double radius) {
  if (K < 2) throw InvalidInput("make_blobs needs K >= 2");
  if (dim == 0 || n_per_class == 0) throw InvalidInput("make_blobs needs dim, n_per_class >= 1");
  if (!(spread >= 0.0)) throw InvalidInput("make_blobs spread must be non-negative");
  Rng rng(mix64(seed ^ 0x626c6f6273ULL));

  std::vector<std::vector<double>> means(K, std::vector<double>(dim));
  for (std::size_t k = 0; k < K; ++k) {
    auto& m = means[k];
    for (auto& v : m) v = rng.normal();
    if (k < dim)
      for (std::size_t j = 0; j < k; ++j) {
        const double c = dot(m, means[j]);
        for (std::size_t t = 0; t < dim; ++t) m[t] -= c * means[j][t];
      }
    const double n = norm2(m);
    for (auto& v : m) v /= n;
  }
  for (auto& m : means)
    for (auto& v : m) v *= radius;

  Dataset ds;
  ds.num_classes = K;
  ds.X = Tensor({K * n_per_class, dim});
  const std::size_t n_train = (n_per_class * 4 + 4) / 5;  // ceil(0.8 n)
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<std::size_t> order(n_per_class);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::vector<std::uint8_t> test_tag(n_per_class);
    for (std::size_t i = 0; i < n_per_class; ++i) test_tag[order[i]] = i >= n_train ? 1 : 0;
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const std::size_t row = k * n_per_class + i;
      for (std::size_t t = 0; t < dim; ++t) ds.X.at(row, t) = means[k][t] + spread * rng.normal();
      ds.y.push_back(static_cast<int>(k));
      ds.is_test.push_back(test_tag[i]);
    }
  }
  ds.index();
  return ds;
}

Dataset gaussian_images(std::vector<std::size_t> shape, std::size_t n, std::size_t K,
                        std::uint64_t seed) {
  if (n == 0) throw InvalidInput("gaussian_images needs n >= 1");
  if (K == 0) throw InvalidInput("gaussian_images needs K >= 1");
  Rng rng(mix64(seed ^ 0x6e6f697365ULL));
  std::vector<std::size_t> full{n};
  full.insert(full.end(), shape.begin(), shape.end());
  Dataset ds;
  ds.num_classes = K;
  ds.X = Tensor(full);
  for (auto& v : ds.X.values()) v = rng.normal();
  for (std::size_t i = 0; i < n; ++i) ds.y.push_back(static_cast<int>(rng.below(K)));
  ds.index();
  return ds;
}

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t off,
                        const std::string& what) {
  if (off + 4 > buf.size()) throw FormatError(what + ": truncated header", buf.size());
  return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) |
         (std::uint32_t{buf[off + 2]} << 8) | std::uint32_t{buf[off + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path);
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 bool standardize) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  if (read_be32(img, 0, images_path) != kImageMagic)
    throw FormatError(images_path + ": bad image magic", 0);
  const std::size_t n = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  const std::size_t need = 16 + n * rows * cols;
  if (img.size() < need)
    throw FormatError(images_path + ": truncated pixel payload, expected " +
                          std::to_string(need) + " bytes",
                      img.size());

  if (read_be32(lab, 0, labels_path) != kLabelMagic)
    throw FormatError(labels_path + ": bad label magic", 0);
  const std::size_t nl = read_be32(lab, 4, labels_path);
  if (nl != n) throw FormatError(labels_path + ": label count does not match image count", 4);
  if (lab.size() < 8 + n)
    throw FormatError(labels_path + ": truncated label payload", lab.size());

  Dataset ds;
  ds.X = Tensor({n, 1, rows, cols});
  for (std::size_t i = 0; i < n * rows * cols; ++i) ds.X[i] = img[16 + i] / 255.0;
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.y.push_back(lab[8 + i]);
    max_label = std::max(max_label, ds.y.back());
  }
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  if (standardize && ds.X.size() > 0) {
    double mean = 0.0, var = 0.0;
    for (double v : ds.X.values()) mean += v;
    mean /= static_cast<double>(ds.X.size());
    for (double v : ds.X.values()) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(ds.X.size()));
    for (auto& v : ds.X.values()) v = sd > 0.0 ? (v - mean) / sd : 0.0;
  }
  ds.index();
  return ds;
}

void write_idx_images(const std::string& path, std::size_t n, std::size_t rows, std::size_t cols,
                      std::span<const std::uint8_t> pixels) {
  if (pixels.size() != n * rows * cols) throw ShapeMismatch("pixel count does not match n x rows x cols");
  std::vector<std::uint8_t> out;
  put_be32(out, kImageMagic);
  put_be32(out, static_cast<std::uint32_t>(n));
  put_be32(out, static_cast<std::uint32_t>(rows));
  put_be32(out, static_cast<std::uint32_t>(cols));
  out.insert(out.end(), pixels.begin(), pixels.end());
  write_file(path, out);
}

void write_idx_labels(const std::string& path, std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  put_be32(out, kLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  write_file(path, out);
}

Dataset resample_by_prior(const Dataset& ds, std::span<const double> prior, std::size_t size,
                          std::uint64_t seed) {
  if (size == 0) throw InvalidInput("resample_by_prior needs size >= 1");
  if (prior.size() != ds.num_classes) throw ShapeMismatch("prior length differs from K");
  double total = 0.0;
  for (std::size_t k = 0; k < prior.size(); ++k) {
    if (!(prior[k] >= 0.0)) throw InvalidInput("prior entries must be non-negative");
    if (prior[k] > 0.0 && ds.class_pools[k].empty())
      throw InvalidInput("class " + std::to_string(k) + " has positive prior but an empty pool");
    total += prior[k];
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidInput("prior must sum to 1");

  Rng rng(mix64(seed ^ 0x7072696f72ULL));
  std::vector<std::size_t> idx;
  idx.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    const double u = rng.uniform() * total;
    double acc = 0.0;
    std::size_t k = 0;
    for (; k + 1 < prior.size(); ++k) {
      acc += prior[k];
      if (u < acc && prior[k] > 0.0) break;
    }
    while (prior[k] == 0.0) --k;  // u landed past the last positive mass
    const auto& pool = ds.class_pools[k];
    idx.push_back(pool[rng.below(pool.size())]);
  }
  return ds.subset(idx);
}

std::vector<std::size_t> balanced_batch(const Dataset& ds, std::size_t batch_size,
                                        std::uint64_t seed) {
  const std::size_t k = ds.num_classes;
  if (batch_size == 0) throw InvalidInput("batch size must be positive");
  Rng rng(mix64(seed ^ 0x62616c616e6365ULL));
  std::vector<std::size_t> classes(k);
  std::iota(classes.begin(), classes.end(), std::size_t{0});
  rng.shuffle(classes);  // which classes receive the remainder
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t c = classes[r];
    const std::size_t want = batch_size / k + (r < batch_size % k ? 1 : 0);
    auto pool = ds.class_pools[c];
    if (want > pool.size())
      throw InvalidInput("class " + std::to_string(c) + " has too few samples for a balanced batch");
    rng.shuffle(pool);
    out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(want));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> shuffled_labels(std::span<const int> labels, std::uint64_t seed) {
  std::vector<int> out(labels.begin(), labels.end());
  Rng rng(mix64(seed ^ 0x6c6162656c73ULL));
  rng.shuffle(out);
  return out;
}

std::uint64_t checksum(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t e : ds.X.shape()) feed(e);
  for (double v : ds.X.values()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    feed(bits);
  }
  for (int v : ds.y) feed(static_cast<std::uint64_t>(static_cast<std::int64_t>(v)));
  return h;
}

}  // namespace gz
