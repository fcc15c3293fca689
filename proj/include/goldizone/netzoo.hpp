#pragma once

// Bias-free homogeneous ReLU networks. Every parameterized layer is linear in
// its own weights and carries no additive bias, so scaling the flat parameter
// vector by alpha scales the logits by alpha^L, L = number of weight layers.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "goldizone/numlin.hpp"

namespace gz {

enum class LayerKind { Linear, Conv2d, ReLU, MaxPool, Flatten };

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  std::size_t in_features = 0, out_features = 0;   // Linear
  std::size_t in_channels = 0, out_channels = 0;   // Conv2d
  std::size_t kernel = 0, stride = 1, padding = 0; // Conv2d
  std::size_t window = 2;                          // MaxPool

  static LayerSpec linear(std::size_t in, std::size_t out);
  static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                          std::size_t stride = 1, std::size_t padding = 0);
  static LayerSpec relu();
  static LayerSpec maxpool(std::size_t window = 2);
  static LayerSpec flatten();

  bool has_params() const noexcept { return kind == LayerKind::Linear || kind == LayerKind::Conv2d; }
  std::size_t param_count() const noexcept;
  std::size_t fan_in() const noexcept;
};

/// A layer placed in a concrete network: per-sample shapes and the slice of
/// the flat parameter vector it owns.
struct LayerPlan {
  LayerSpec spec;
  std::vector<std::size_t> in_shape;
  std::vector<std::size_t> out_shape;
  std::size_t offset = 0;
  std::size_t count = 0;

  std::size_t in_size() const { return shape_product(in_shape); }
  std::size_t out_size() const { return shape_product(out_shape); }
};

struct NetLayout {
  std::string arch;
  std::vector<std::size_t> input_shape;
  std::size_t num_classes = 0;
  std::size_t degree = 0;       // L
  std::size_t param_count = 0;  // P
  std::vector<LayerPlan> layers;
};

class HomogeneousNet {
 public:
  /// Validates shapes and lays out parameters; theta starts at zero.
  HomogeneousNet(std::string arch, std::vector<std::size_t> input_shape,
                 std::vector<LayerSpec> layers, std::size_t num_classes);

  const std::string& arch() const noexcept { return layout_->arch; }
  const std::vector<std::size_t>& input_shape() const noexcept { return layout_->input_shape; }
  std::size_t input_size() const { return shape_product(layout_->input_shape); }
  std::size_t num_classes() const noexcept { return layout_->num_classes; }
  std::size_t degree() const noexcept { return layout_->degree; }
  std::size_t param_count() const noexcept { return layout_->param_count; }
  const std::vector<LayerPlan>& layers() const noexcept { return layout_->layers; }

  std::span<const double> theta() const noexcept { return theta_; }
  std::span<const double> layer_params(std::size_t layer) const;
  /// Index of the first / last parameterized layer.
  std::size_t first_param_layer() const;
  std::size_t last_param_layer() const;

  /// Cumulative alpha applied through scale_params (1 at construction).
  double scale() const noexcept { return scale_; }

  /// Same architecture, new parameter vector.
  HomogeneousNet with_theta(std::vector<double> theta) const;

 private:
  friend HomogeneousNet scale_params(const HomogeneousNet&, double);
  std::shared_ptr<const NetLayout> layout_;
  std::vector<double> theta_;
  double scale_ = 1.0;
};

/// Known identifiers: mlp-300-100, mlp-small, lenet5, cnn-small, linear.
/// Parameters are i.i.d. N(0, 2 / fan_in) per layer (Kaiming normal).
HomogeneousNet build_net(std::string_view arch, std::vector<std::size_t> input_shape,
                         std::size_t num_classes, std::uint64_t init_seed);

std::vector<std::string> known_architectures();

HomogeneousNet scale_params(const HomogeneousNet& net, double alpha);

/// Labelled inputs; X has shape [B, sample shape...].
struct Batch {
  Tensor X;
  std::vector<int> y;
  std::size_t num_classes = 0;

  Batch() = default;
  Batch(Tensor x, std::vector<int> labels, std::size_t k);
  std::size_t size() const noexcept { return y.size(); }
  std::size_t sample_size() const { return X.size() / y.size(); }
  Tensor sample(std::size_t i) const;
};

/// B x K logits.
Tensor forward_logits(const HomogeneousNet& net, const Tensor& X);

/// Activations entering the final Linear layer (B x F).
Tensor penultimate_features(const HomogeneousNet& net, const Tensor& X);

struct SoftmaxBatch {
  Tensor p;  // B x K
  double temperature = 1.0;

  std::size_t batch() const { return p.extent(0); }
  std::size_t classes() const { return p.extent(1); }
};

SoftmaxBatch softmax_batch(const Tensor& logits, double temperature);

struct CrossEntropy {
  double loss = 0.0;
  SoftmaxBatch probs;
};

/// Mean of -log p_y with p = softmax(z / T); per-sample loss is
/// (lse(z, T) - z_y) / T, finite for any finite logits.
CrossEntropy cross_entropy(const Tensor& logits, std::span<const int> labels, double temperature);

struct ConfidenceStats {
  double mean_entropy = 0.0;   // nats
  std::vector<double> qhat;    // column mean of p
};

ConfidenceStats confidence_stats(const SoftmaxBatch& probs);

/// Shannon entropy (nats) of one distribution, with 0 log 0 = 0.
double entropy(std::span<const double> p);

}  // namespace gz
