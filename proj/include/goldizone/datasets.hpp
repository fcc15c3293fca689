#pragma once

// Synthetic and file-backed classification data: Gaussian blobs, IDX
// images, Gaussian-noise images, prior resampling, balanced batches and
// label shuffling. Everything is deterministic in its seed.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "goldizone/netzoo.hpp"
#include "goldizone/numlin.hpp"

namespace gz {

struct Dataset {
  Tensor X;  // [N, sample shape...]
  std::vector<int> y;
  std::size_t num_classes = 0;
  std::vector<std::vector<std::size_t>> class_pools;  // indices per class
  std::vector<std::uint8_t> is_test;                  // split tag per sample

  std::size_t size() const noexcept { return y.size(); }
  std::vector<std::size_t> sample_shape() const;

  /// Rebuilds class_pools from y and checks invariants.
  void index();
  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset train() const;
  Dataset test() const;
  Batch batch() const;
  /// Empirical label frequencies.
  std::vector<double> prior() const;
  /// Multiplies every input value by s.
  Dataset scaled_inputs(double s) const;
};

/// Class means are radius times orthonormal random directions (a scaled
/// simplex when dim >= K); clouds are isotropic with std `spread`. Each
/// class is split 80/20 into train/test.
Dataset make_blobs(std::size_t K, std::size_t dim, std::size_t n_per_class, double spread,
                   std::uint64_t seed, double radius = 1.0);

/// i.i.d. standard normal inputs of the given sample shape, labels uniform in [0, K).
Dataset gaussian_images(std::vector<std::size_t> shape, std::size_t n, std::size_t K,
                        std::uint64_t seed);

/// Big-endian IDX files (images 0x00000803, labels 0x00000801). Pixels are
/// scaled to [0, 1]; with `standardize` each image set is shifted and scaled
/// to zero mean and unit variance. Samples have shape [1, rows, cols].
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 bool standardize = false);

void write_idx_images(const std::string& path, std::size_t n, std::size_t rows, std::size_t cols,
                      std::span<const std::uint8_t> pixels);
void write_idx_labels(const std::string& path, std::span<const std::uint8_t> labels);

/// Class identities drawn from `prior`, samples drawn uniformly with
/// replacement inside each class pool.
Dataset resample_by_prior(const Dataset& ds, std::span<const double> prior, std::size_t size,
                          std::uint64_t seed);

/// Indices of a batch whose class counts differ by at most one.
std::vector<std::size_t> balanced_batch(const Dataset& ds, std::size_t batch_size,
                                        std::uint64_t seed);

/// Labels permuted across samples (preserves the label histogram).
std::vector<int> shuffled_labels(std::span<const int> labels, std::uint64_t seed);

/// FNV-1a over the shape, the little-endian bit patterns of X, and y.
std::uint64_t checksum(const Dataset& ds);

}  // namespace gz
