#include "goldizone/netzoo.hpp"

#include <algorithm>
#include <cmath>

#include "engine.hpp"
#include "goldizone/errors.hpp"

namespace gz {

// ------------------------------------------------------------- LayerSpec

LayerSpec LayerSpec::linear(std::size_t in, std::size_t out) {
  LayerSpec s;
  s.kind = LayerKind::Linear;
  s.in_features = in;
  s.out_features = out;
  return s;
}

LayerSpec LayerSpec::conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                            std::size_t stride, std::size_t padding) {
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.in_channels = in_ch;
  s.out_channels = out_ch;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::maxpool(std::size_t window) {
  LayerSpec s;
  s.kind = LayerKind::MaxPool;
  s.window = window;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::Flatten;
  return s;
}

std::size_t LayerSpec::param_count() const noexcept {
  switch (kind) {
    case LayerKind::Linear: return in_features * out_features;
    case LayerKind::Conv2d: return out_channels * in_channels * kernel * kernel;
    default: return 0;
  }
}

std::size_t LayerSpec::fan_in() const noexcept {
  switch (kind) {
    case LayerKind::Linear: return in_features;
    case LayerKind::Conv2d: return in_channels * kernel * kernel;
    default: return 0;
  }
}

// -------------------------------------------------------- HomogeneousNet

namespace {

std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

}  // namespace

HomogeneousNet::HomogeneousNet(std::string arch, std::vector<std::size_t> input_shape,
                               std::vector<LayerSpec> specs, std::size_t num_classes) {
  auto layout = std::make_shared<NetLayout>();
  layout->arch = std::move(arch);
  layout->input_shape = input_shape;
  layout->num_classes = num_classes;
  if (input_shape.empty() || shape_product(input_shape) == 0)
    throw InvalidInput("network input shape must be non-empty");

  std::vector<std::size_t> shape = std::move(input_shape);
  std::size_t offset = 0;
  for (const LayerSpec& spec : specs) {
    LayerPlan plan;
    plan.spec = spec;
    plan.in_shape = shape;
    switch (spec.kind) {
      case LayerKind::Linear:
        if (shape.size() != 1 || shape[0] != spec.in_features)
          throw ShapeMismatch("linear layer expects [" + std::to_string(spec.in_features) +
                              "], got " + shape_str(shape));
        shape = {spec.out_features};
        break;
      case LayerKind::Conv2d: {
        if (shape.size() != 3 || shape[0] != spec.in_channels)
          throw ShapeMismatch("conv layer expects " + std::to_string(spec.in_channels) +
                              " input channels, got " + shape_str(shape));
        if (spec.stride == 0 || spec.kernel == 0) throw InvalidInput("conv stride/kernel must be positive");
        if (shape[1] + 2 * spec.padding < spec.kernel || shape[2] + 2 * spec.padding < spec.kernel)
          throw ShapeMismatch("conv kernel larger than padded input " + shape_str(shape));
        const std::size_t h = (shape[1] + 2 * spec.padding - spec.kernel) / spec.stride + 1;
        const std::size_t w = (shape[2] + 2 * spec.padding - spec.kernel) / spec.stride + 1;
        shape = {spec.out_channels, h, w};
        break;
      }
      case LayerKind::ReLU:
        break;
      case LayerKind::MaxPool:
        if (shape.size() != 3 || shape[1] < spec.window || shape[2] < spec.window || spec.window == 0)
          throw ShapeMismatch("maxpool window does not fit " + shape_str(shape));
        shape = {shape[0], shape[1] / spec.window, shape[2] / spec.window};
        break;
      case LayerKind::Flatten:
        shape = {shape_product(shape)};
        break;
    }
    plan.out_shape = shape;
    plan.offset = offset;
    plan.count = spec.param_count();
    offset += plan.count;
    if (spec.has_params()) ++layout->degree;
    layout->layers.push_back(std::move(plan));
  }
  if (layout->degree == 0) throw InvalidInput("network needs at least one weight layer");
  if (shape.size() != 1 || shape[0] != num_classes)
    throw ShapeMismatch("network output " + shape_str(shape) + " does not match K=" +
                        std::to_string(num_classes));
  layout->param_count = offset;
  theta_.assign(offset, 0.0);
  layout_ = std::move(layout);
}

std::span<const double> HomogeneousNet::layer_params(std::size_t layer) const {
  const LayerPlan& p = layout_->layers.at(layer);
  return std::span<const double>(theta_).subspan(p.offset, p.count);
}

std::size_t HomogeneousNet::first_param_layer() const {
  const auto& ls = layout_->layers;
  for (std::size_t i = 0; i < ls.size(); ++i)
    if (ls[i].spec.has_params()) return i;
  return ls.size();
}

std::size_t HomogeneousNet::last_param_layer() const {
  const auto& ls = layout_->layers;
  for (std::size_t i = ls.size(); i-- > 0;)
    if (ls[i].spec.has_params()) return i;
  return ls.size();
}

HomogeneousNet HomogeneousNet::with_theta(std::vector<double> theta) const {
  if (theta.size() != theta_.size())
    throw ShapeMismatch("parameter vector has length " + std::to_string(theta.size()) +
                        ", expected " + std::to_string(theta_.size()));
  HomogeneousNet out = *this;
  out.theta_ = std::move(theta);
  return out;
}

// ------------------------------------------------------------- build_net

namespace {

std::vector<LayerSpec> mlp(const std::vector<std::size_t>& input_shape,
                           std::initializer_list<std::size_t> hidden, std::size_t k) {
  std::vector<LayerSpec> layers;
  if (input_shape.size() != 1) layers.push_back(LayerSpec::flatten());
  std::size_t width = shape_product(input_shape);
  for (std::size_t h : hidden) {
    layers.push_back(LayerSpec::linear(width, h));
    layers.push_back(LayerSpec::relu());
    width = h;
  }
  layers.push_back(LayerSpec::linear(width, k));
  return layers;
}

void require_image(std::string_view arch, const std::vector<std::size_t>& s) {
  if (s.size() != 3)
    throw InvalidInput(std::string(arch) + " expects a [C,H,W] input shape, got " + shape_str(s));
}

}  // namespace

std::vector<std::string> known_architectures() {
  return {"mlp-300-100", "mlp-small", "lenet5", "cnn-small", "linear"};
}

HomogeneousNet build_net(std::string_view arch, std::vector<std::size_t> input_shape,
                         std::size_t num_classes, std::uint64_t init_seed) {
  if (num_classes < 2) throw InvalidInput("need at least 2 classes");
  std::vector<LayerSpec> layers;
  if (arch == "mlp-300-100") {
    layers = mlp(input_shape, {300, 100}, num_classes);
  } else if (arch == "mlp-small") {
    layers = mlp(input_shape, {32, 16}, num_classes);
  } else if (arch == "linear") {
    layers = mlp(input_shape, {}, num_classes);
  } else if (arch == "lenet5") {
    require_image(arch, input_shape);
    if (input_shape[1] < 16 || input_shape[2] < 16)
      throw InvalidInput("lenet5 needs inputs of at least 16x16");
    const std::size_t c = input_shape[0];
    const std::size_t h1 = (input_shape[1] - 4) / 2, w1 = (input_shape[2] - 4) / 2;
    const std::size_t h2 = (h1 - 4) / 2, w2 = (w1 - 4) / 2;
    layers = {LayerSpec::conv2d(c, 6, 5),     LayerSpec::relu(), LayerSpec::maxpool(2),
              LayerSpec::conv2d(6, 16, 5),    LayerSpec::relu(), LayerSpec::maxpool(2),
              LayerSpec::flatten(),           LayerSpec::linear(16 * h2 * w2, 120),
              LayerSpec::relu(),              LayerSpec::linear(120, 84),
              LayerSpec::relu(),              LayerSpec::linear(84, num_classes)};
  } else if (arch == "cnn-small") {
    require_image(arch, input_shape);
    if (input_shape[1] < 4 || input_shape[2] < 4)
      throw InvalidInput("cnn-small needs inputs of at least 4x4");
    const std::size_t c = input_shape[0];
    const std::size_t h = input_shape[1] / 2 / 2, w = input_shape[2] / 2 / 2;
    layers = {LayerSpec::conv2d(c, 4, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2),
              LayerSpec::conv2d(4, 8, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2),
              LayerSpec::flatten(),             LayerSpec::linear(8 * h * w, 32),
              LayerSpec::relu(),                LayerSpec::linear(32, num_classes)};
  } else {
    throw InvalidInput("unknown architecture '" + std::string(arch) + "'");
  }

  HomogeneousNet net(std::string(arch), std::move(input_shape), std::move(layers), num_classes);
  std::vector<double> theta(net.param_count());
  Rng rng(mix64(init_seed));
  for (const LayerPlan& plan : net.layers()) {
    if (!plan.spec.has_params()) continue;
    const double std = std::sqrt(2.0 / static_cast<double>(plan.spec.fan_in()));
    for (std::size_t i = 0; i < plan.count; ++i) theta[plan.offset + i] = std * rng.normal();
  }
  return net.with_theta(std::move(theta));
}

HomogeneousNet scale_params(const HomogeneousNet& net, double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw InvalidInput("scale factor must be positive, got " + std::to_string(alpha));
  HomogeneousNet out = net;
  for (double& v : out.theta_) v *= alpha;
  out.scale_ = net.scale_ * alpha;
  return out;
}

// --------------------------------------------------------------- forward

Batch::Batch(Tensor x, std::vector<int> labels, std::size_t k)
    : X(std::move(x)), y(std::move(labels)), num_classes(k) {
  if (y.empty()) throw InvalidInput("batch must hold at least one sample");
  if (X.rank() == 0 || X.extent(0) != y.size())
    throw ShapeMismatch("batch has " + std::to_string(y.size()) + " labels but inputs of shape " +
                        shape_str(X.shape()));
  for (int label : y)
    if (label < 0 || static_cast<std::size_t>(label) >= k)
      throw InvalidInput("label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
}

Tensor Batch::sample(std::size_t i) const {
  std::vector<std::size_t> shape = X.shape();
  shape[0] = 1;
  const std::size_t n = sample_size();
  std::vector<double> data(X.data().begin() + static_cast<std::ptrdiff_t>(i * n),
                           X.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
  return Tensor(std::move(shape), std::move(data));
}

namespace {

std::size_t check_input(const HomogeneousNet& net, const Tensor& X) {
  if (X.rank() < 1) throw ShapeMismatch("input tensor has no batch axis");
  const std::size_t batch = X.extent(0);
  std::vector<std::size_t> sample(X.shape().begin() + 1, X.shape().end());
  if (shape_product(sample) != net.input_size() || batch == 0)
    throw ShapeMismatch("input " + shape_str(X.shape()) + " does not match network input " +
                        shape_str(net.input_shape()));
  return batch;
}

}  // namespace

Tensor forward_logits(const HomogeneousNet& net, const Tensor& X) {
  const std::size_t batch = check_input(net, X);
  detail::ForwardCache cache;
  detail::run_forward(net, X.values(), batch, cache);
  return Tensor({batch, net.num_classes()}, std::move(cache.acts.back()));
}

Tensor penultimate_features(const HomogeneousNet& net, const Tensor& X) {
  const std::size_t batch = check_input(net, X);
  const std::size_t last = net.last_param_layer();
  detail::ForwardCache cache;
  detail::run_forward(net, X.values(), batch, cache, last);
  const std::size_t width = net.layers()[last].in_size();
  return Tensor({batch, width}, std::move(cache.acts.back()));
}

// ---------------------------------------------------------------- losses

SoftmaxBatch softmax_batch(const Tensor& logits, double temperature) {
  if (logits.rank() != 2) throw ShapeMismatch("logits must be B x K");
  SoftmaxBatch out{Tensor(logits.shape()), temperature};
  for (std::size_t b = 0; b < logits.extent(0); ++b) {
    const auto p = stable_softmax(logits.row(b), temperature);
    std::copy(p.begin(), p.end(), out.p.row(b).begin());
  }
  return out;
}

CrossEntropy cross_entropy(const Tensor& logits, std::span<const int> labels, double temperature) {
  if (logits.rank() != 2 || logits.extent(0) != labels.size())
    throw ShapeMismatch("cross_entropy: logits and labels disagree on batch size");
  CrossEntropy out{0.0, softmax_batch(logits, temperature)};
  const std::size_t k = logits.extent(1);
  double total = 0.0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const auto z = logits.row(b);
    const auto y = static_cast<std::size_t>(labels[b]);
    if (y >= k) throw InvalidInput("label outside logit range");
    total += (log_sum_exp(z, temperature) - z[y]) / temperature;
  }
  out.loss = total / static_cast<double>(labels.size());
  return out;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

ConfidenceStats confidence_stats(const SoftmaxBatch& probs) {
  const std::size_t b = probs.batch(), k = probs.classes();
  ConfidenceStats s;
  s.qhat.assign(k, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    const auto row = probs.p.row(i);
    s.mean_entropy += entropy(row);
    for (std::size_t c = 0; c < k; ++c) s.qhat[c] += row[c];
  }
  s.mean_entropy /= static_cast<double>(b);
  for (double& q : s.qhat) q /= static_cast<double>(b);
  return s;
}

}  // namespace gz
