#pragma once

// Full-batch gradient descent on alpha-scaled homogeneous nets with the
// effective step eta0 * alpha^(2 - L), the uniform-softmax-output (USO)
// reference dynamics, regime classification, and the experiment protocols
// built on top (linear probes, gradient similarity, prior sweeps,
// confidence scatters).

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "goldizone/datasets.hpp"
#include "goldizone/netzoo.hpp"
#include "goldizone/numlin.hpp"

namespace gz {

enum class LabelMode { True, ShuffledFixed, ShuffledEveryStep };
enum class RegimeLabel { Normal, Diverged, ZeroLogit, Lazy, Stalled };

const char* to_string(LabelMode m) noexcept;
const char* to_string(RegimeLabel r) noexcept;
LabelMode parse_label_mode(const std::string& s);

struct RegimeThresholds {
  double divergence_norm_factor = 1e3;  // ||theta|| growth that counts as divergence
  double zero_logit_enter = 0.75;
  double zero_logit_recover = 0.5;
  double lazy_gap = 0.05;
  double normal_gap = 0.02;
  double lazy_train_accuracy = 0.99;
};

struct TrainConfig {
  double alpha = 1.0;
  double eta0 = 0.01;
  double temperature = 1.0;
  std::size_t steps = 2000;
  bool uso_mode = false;
  LabelMode label_mode = LabelMode::True;
  std::uint64_t label_seed = 0;
  std::size_t dense_log_steps = 100;  // log every step below this
  std::size_t log_every = 10;         // then every log_every-th step
  bool record_theta = false;          // keep theta at each logged step
  double baseline_accuracy = std::numeric_limits<double>::quiet_NaN();
  RegimeThresholds thresholds;
};

struct TrajectoryPoint {
  std::size_t step = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double theta_norm = 0.0;
  double grad_norm = 0.0;
  double cos_theta_neg_grad = 0.0;
  double zero_logit_fraction = 0.0;
  double mean_entropy = 0.0;
  double max_uniform_deviation = 0.0;  // max |p - 1/K| over the train batch
  bool finite = true;
};

struct TrajectoryRecord {
  std::vector<TrajectoryPoint> points;
  std::vector<std::vector<double>> thetas;  // aligned with points when recorded
  double initial_theta_norm = 0.0;
  double effective_eta = 0.0;
  std::size_t degree = 0;
  bool aborted = false;  // stopped on a non-finite loss or parameter
};

struct TrainResult {
  TrajectoryRecord trajectory;
  RegimeLabel regime = RegimeLabel::Stalled;
  double max_train_accuracy = 0.0;
  double max_test_accuracy = 0.0;
  double max_theta_norm = 0.0;
  std::vector<double> final_theta;
};

/// eta0 * alpha^(2 - L).
double effective_learning_rate(double eta0, double alpha, std::size_t degree);

/// Trains scale_params(base, alpha). With uso_mode the gradient always uses
/// coefficients 1/K - [k == y] at T = 1.
TrainResult train(const HomogeneousNet& base, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& config);

/// train() with uso_mode forced on.
TrainResult uso_train(const HomogeneousNet& base, const Dataset& train_set,
                      const Dataset& test_set, TrainConfig config);

/// Fraction of rows with max_k |z_k| <= tol.
double zero_logit_fraction(const Tensor& logits, double tol);
/// The default tolerance 1e-9 * (1 + max |z|).
double zero_logit_fraction(const Tensor& logits);

/// Rules in order: Diverged, ZeroLogit, Lazy, Normal, else Stalled. A NaN
/// baseline falls back to the run's own final test accuracy.
RegimeLabel classify_regime(const TrajectoryRecord& traj, double baseline,
                            const RegimeThresholds& thresholds = {});

double accuracy(const Tensor& logits, std::span<const int> labels);

struct ProbeConfig {
  std::size_t steps = 500;
  double learning_rate = 0.5;
};

/// Multinomial logistic regression (with bias) on standardized features,
/// trained by full-batch GD; returns held-out accuracy.
double linear_probe(const Tensor& train_features, std::span<const int> train_labels,
                    const Tensor& test_features, std::span<const int> test_labels,
                    std::size_t num_classes, const ProbeConfig& config = {});

/// Cosine of the two full-parameter gradients at T = 1.
double grad_similarity(const HomogeneousNet& net, const Batch& a, const Batch& b);

struct PriorSweepRow {
  std::vector<double> prior;     // realized label frequencies of the subset
  std::vector<double> qhat;      // mean softmax output on the subset
  double distance = 0.0;         // ||Qhat - Q||
  double grad_norm = 0.0;
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

LinearFit least_squares(std::span<const double> x, std::span<const double> y);

struct PriorSweepResult {
  std::vector<PriorSweepRow> rows;
  LinearFit fit;  // grad_norm against distance
};

/// Priors ~ Dirichlet(1, ..., 1); each subset of `subset_size` samples is
/// drawn with resample_by_prior.
PriorSweepResult prior_sweep(const HomogeneousNet& net, const Dataset& ds, std::size_t n_priors,
                             std::size_t subset_size, std::uint64_t seed, double temperature = 1.0,
                             std::size_t threads = 1);

struct ScatterRow {
  std::uint64_t init_seed = 0;
  double mean_entropy = 0.0;
  double grad_norm = 0.0;
  double curvature = 0.0;        // positive curvature of H_d
  double gterm_curvature = 0.0;  // positive curvature of G_d
  double loss = 0.0;
};

struct ScatterConfig {
  std::string arch = "mlp-small";
  std::size_t n_inits = 200;
  std::size_t d = 50;
  std::uint64_t seed = 0;
  double temperature = 1.0;
};

std::vector<ScatterRow> confidence_scatter(const Batch& batch, std::vector<std::size_t> input_shape,
                                           const ScatterConfig& config, std::size_t threads = 1);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace gz
