#include "goldizone/diffengine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "engine.hpp"
#include "goldizone/errors.hpp"
#include "goldizone/parallel.hpp"

namespace gz {

namespace {

void check_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t))
    throw InvalidInput("temperature must be positive and finite, got " + std::to_string(t));
}

void check_batch(const HomogeneousNet& net, const Batch& batch) {
  if (batch.size() == 0) throw InvalidInput("empty batch");
  if (batch.num_classes != net.num_classes())
    throw ShapeMismatch("batch has " + std::to_string(batch.num_classes) +
                        " classes, network has " + std::to_string(net.num_classes()));
  if (batch.X.size() != batch.size() * net.input_size())
    throw ShapeMismatch("batch inputs do not match the network input shape");
}

void check_direction(const HomogeneousNet& net, std::span<const double> v) {
  if (v.size() != net.param_count())
    throw ShapeMismatch("direction has " + std::to_string(v.size()) + " entries, expected " +
                        std::to_string(net.param_count()));
}

// (diag(p) - p p^T) x for one row.
void apply_softmax_jacobian(std::span<const double> p, std::span<const double> x,
                            std::span<double> out, double scale) {
  const double px = dot(p, x);
  for (std::size_t k = 0; k < p.size(); ++k) out[k] = scale * p[k] * (x[k] - px);
}

// Logit cotangent rows coeff / (T B), coeff = p - onehot(y) or the override.
std::vector<double> logit_cotangent(const SoftmaxBatch& probs, std::span<const int> y,
                                    CoeffOverride coeff, double temperature) {
  const std::size_t b = probs.batch(), k = probs.classes();
  if (!coeff.empty() && coeff.size() != b * k)
    throw ShapeMismatch("coefficient override has " + std::to_string(coeff.size()) +
                        " entries, expected " + std::to_string(b * k));
  std::vector<double> delta(b * k);
  const double s = 1.0 / (temperature * static_cast<double>(b));
  for (std::size_t mu = 0; mu < b; ++mu)
    for (std::size_t c = 0; c < k; ++c) {
      const std::size_t i = mu * k + c;
      const double v = coeff.empty()
                           ? probs.p[i] - (static_cast<int>(c) == y[mu] ? 1.0 : 0.0)
                           : coeff[i];
      delta[i] = s * v;
    }
  return delta;
}

}  // namespace

Projector::Projector(std::size_t ambient, std::vector<std::vector<Entry>> columns)
    : ambient_(ambient), columns_(std::move(columns)) {
  std::vector<char> used(ambient_, 0);
  for (std::size_t j = 0; j < columns_.size(); ++j) {
    const auto& col = columns_[j];
    if (col.empty()) throw InvalidInput("projector column " + std::to_string(j) + " is empty");
    double sq = 0.0;
    for (const auto& e : col) {
      if (e.index >= ambient_) throw InvalidInput("projector index out of range");
      if (used[e.index]) throw InvalidInput("projector columns must have disjoint supports");
      used[e.index] = 1;
      sq += e.value * e.value;
    }
    if (std::abs(sq - 1.0) > 1e-12)
      throw InvalidInput("projector column " + std::to_string(j) + " is not unit norm");
  }
}

std::vector<double> Projector::lift(std::span<const double> latent) const {
  if (latent.size() != dim()) throw ShapeMismatch("latent vector does not match projector dim");
  std::vector<double> out(ambient_, 0.0);
  for (std::size_t j = 0; j < columns_.size(); ++j)
    for (const auto& e : columns_[j]) out[e.index] += e.value * latent[j];
  return out;
}

std::vector<double> Projector::project(std::span<const double> v) const {
  if (v.size() != ambient_) throw ShapeMismatch("vector does not match projector ambient dim");
  std::vector<double> out(columns_.size(), 0.0);
  for (std::size_t j = 0; j < columns_.size(); ++j)
    for (const auto& e : columns_[j]) out[j] += e.value * v[e.index];
  return out;
}

std::vector<double> Projector::dense_column(std::size_t j) const {
  std::vector<double> out(ambient_, 0.0);
  for (const auto& e : columns_.at(j)) out[e.index] = e.value;
  return out;
}

Projector make_projector(std::size_t ambient, std::size_t d, std::uint64_t seed) {
  if (d == 0 || d > ambient)
    throw InvalidInput("projector dim must be in [1, " + std::to_string(ambient) + "], got " +
                       std::to_string(d));
  Rng rng(mix64(seed ^ 0x70726f6aULL));
  std::vector<std::size_t> perm(ambient);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm);

  std::vector<std::vector<Projector::Entry>> cols(d);
  for (std::size_t j = 0; j < d; ++j) {
    const std::size_t lo = j * ambient / d, hi = (j + 1) * ambient / d;
    const double mag = 1.0 / std::sqrt(static_cast<double>(hi - lo));
    std::vector<std::size_t> idx(perm.begin() + lo, perm.begin() + hi);
    std::sort(idx.begin(), idx.end());
    for (std::size_t i : idx)
      cols[j].push_back({i, (rng.next_u64() & 1U) ? mag : -mag});
  }
  return Projector(ambient, std::move(cols));
}

Projector coordinate_projector(std::size_t ambient, std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > ambient) throw InvalidInput("coordinate range out of bounds");
  std::vector<std::vector<Projector::Entry>> cols(count);
  for (std::size_t j = 0; j < count; ++j) cols[j].push_back({begin + j, 1.0});
  return Projector(ambient, std::move(cols));
}

std::vector<double> uniform_output_coefficients(const Batch& batch) {
  const std::size_t k = batch.num_classes;
  std::vector<double> c(batch.size() * k, 1.0 / static_cast<double>(k));
  for (std::size_t mu = 0; mu < batch.size(); ++mu) c[mu * k + batch.y[mu]] -= 1.0;
  return c;
}

LossGradient loss_and_grad(const HomogeneousNet& net, const Batch& batch, double temperature,
                           CoeffOverride coeff_override) {
  check_temperature(temperature);
  check_batch(net, batch);
  detail::ForwardCache cache;
  detail::run_forward(net, batch.X.values(), batch.size(), cache);

  LossGradient out;
  out.logits = Tensor({batch.size(), net.num_classes()}, cache.acts.back());
  auto ce = cross_entropy(out.logits, batch.y, temperature);
  out.loss = ce.loss;
  out.probs = std::move(ce.probs);

  const auto delta = logit_cotangent(out.probs, batch.y, coeff_override, temperature);
  out.grad.assign(net.param_count(), 0.0);
  detail::run_reverse(net, cache, delta, out.grad);
  return out;
}

std::vector<double> loss_grad(const HomogeneousNet& net, const Batch& batch, double temperature,
                              CoeffOverride coeff_override) {
  return loss_and_grad(net, batch, temperature, coeff_override).grad;
}

double loss_value(const HomogeneousNet& net, const Batch& batch, double temperature) {
  check_temperature(temperature);
  check_batch(net, batch);
  return cross_entropy(forward_logits(net, batch.X), batch.y, temperature).loss;
}

Tensor logit_jacobian(const HomogeneousNet& net, const Tensor& x_single) {
  if (x_single.size() != net.input_size())
    throw ShapeMismatch("logit_jacobian expects a single sample");
  const std::size_t k = net.num_classes(), p = net.param_count();
  detail::ForwardCache cache;
  detail::run_forward(net, x_single.values(), 1, cache);
  Tensor jac({k, p});
  std::vector<double> e(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    std::fill(e.begin(), e.end(), 0.0);
    e[c] = 1.0;
    detail::run_reverse(net, cache, e, jac.row(c));
  }
  return jac;
}

Tensor logit_jacobian(const HomogeneousNet& net, const Tensor& x_single, const Projector& r) {
  if (r.ambient_dim() != net.param_count()) throw ShapeMismatch("projector does not match P");
  const Tensor full = logit_jacobian(net, x_single);
  const std::size_t k = net.num_classes();
  Tensor out({k, r.dim()});
  for (std::size_t c = 0; c < k; ++c) {
    const auto row = r.project(full.row(c));
    std::copy(row.begin(), row.end(), out.row(c).begin());
  }
  return out;
}

struct CurvatureProbe::State {
  HomogeneousNet net;
  detail::ForwardCache cache;
  Tensor logits;
  SoftmaxBatch probs;
  std::vector<double> delta;  // (p - y) / (T B)
  double temperature;
  std::size_t batch;
};

CurvatureProbe::CurvatureProbe(const HomogeneousNet& net, const Batch& batch, double temperature) {
  check_temperature(temperature);
  check_batch(net, batch);
  detail::ForwardCache cache;
  detail::run_forward(net, batch.X.values(), batch.size(), cache);
  Tensor logits({batch.size(), net.num_classes()}, cache.acts.back());
  SoftmaxBatch probs = softmax_batch(logits, temperature);
  auto delta = logit_cotangent(probs, batch.y, {}, temperature);
  state_ = std::make_unique<State>(State{net, std::move(cache), std::move(logits),
                                         std::move(probs), std::move(delta), temperature,
                                         batch.size()});
}

CurvatureProbe::~CurvatureProbe() = default;
CurvatureProbe::CurvatureProbe(CurvatureProbe&&) noexcept = default;
CurvatureProbe& CurvatureProbe::operator=(CurvatureProbe&&) noexcept = default;

const HomogeneousNet& CurvatureProbe::net() const noexcept { return state_->net; }
const SoftmaxBatch& CurvatureProbe::probs() const noexcept { return state_->probs; }
const Tensor& CurvatureProbe::logits() const noexcept { return state_->logits; }
double CurvatureProbe::temperature() const noexcept { return state_->temperature; }
std::size_t CurvatureProbe::batch_size() const noexcept { return state_->batch; }

std::vector<double> CurvatureProbe::logit_tangent(std::span<const double> v) const {
  check_direction(state_->net, v);
  std::vector<std::vector<double>> tang;
  detail::run_tangent(state_->net, state_->cache, v, tang);
  return std::move(tang.back());
}

std::vector<double> CurvatureProbe::hvp(std::span<const double> v) const {
  std::vector<double> zdot;
  return hvp(v, zdot);
}

std::vector<double> CurvatureProbe::hvp(std::span<const double> v,
                                        std::vector<double>& logit_tangent) const {
  const State& s = *state_;
  check_direction(s.net, v);
  std::vector<std::vector<double>> tang;
  detail::run_tangent(s.net, s.cache, v, tang);
  const std::vector<double>& zdot = tang.back();

  const std::size_t k = s.net.num_classes();
  const double scale = 1.0 / (s.temperature * s.temperature * static_cast<double>(s.batch));
  std::vector<double> delta_dot(zdot.size());
  for (std::size_t mu = 0; mu < s.batch; ++mu)
    apply_softmax_jacobian(s.probs.p.row(mu), std::span(zdot).subspan(mu * k, k),
                           std::span(delta_dot).subspan(mu * k, k), scale);

  std::vector<double> hv(s.net.param_count(), 0.0);
  const detail::TangentChannel tc{v, &tang, delta_dot, hv};
  detail::run_reverse(s.net, s.cache, s.delta, {}, &tc);
  logit_tangent = zdot;
  return hv;
}

std::vector<double> CurvatureProbe::gnvp(std::span<const double> v) const {
  const State& s = *state_;
  const auto zdot = logit_tangent(v);
  const std::size_t k = s.net.num_classes();
  const double scale = 1.0 / (s.temperature * s.temperature * static_cast<double>(s.batch));
  std::vector<double> delta(zdot.size());
  for (std::size_t mu = 0; mu < s.batch; ++mu)
    apply_softmax_jacobian(s.probs.p.row(mu), std::span(zdot).subspan(mu * k, k),
                           std::span(delta).subspan(mu * k, k), scale);
  std::vector<double> gv(s.net.param_count(), 0.0);
  detail::run_reverse(s.net, s.cache, delta, gv);
  return gv;
}

std::vector<double> hvp(const HomogeneousNet& net, const Batch& batch, double temperature,
                        std::span<const double> v) {
  check_direction(net, v);
  bool nonzero = false;
  for (double x : v) {
    if (!std::isfinite(x)) throw InvalidInput("hvp direction has non-finite entries");
    nonzero = nonzero || x != 0.0;
  }
  if (!nonzero) throw InvalidInput("hvp direction is zero");
  return CurvatureProbe(net, batch, temperature).hvp(v);
}

namespace {

// G_d = (1 / (B T^2)) sum_mu (J^mu R)^T M^mu (J^mu R), with the projected
// Jacobians stored column-wise: jr[j][mu * K + k] = (J^mu R)_{k j}.
SymmetricMatrix gterm_from_columns(const std::vector<std::vector<double>>& jr,
                                   const SoftmaxBatch& probs, std::size_t sample_begin, std::size_t sample_end,
                                   double scale) {
  const std::size_t d = jr.size(), k = probs.classes();
  std::vector<double> g(d * d, 0.0);
  std::vector<double> a(k * d), ma(k * d), col(k), mcol(k);
  for (std::size_t mu = sample_begin; mu < sample_end; ++mu) {
    const auto p = probs.p.row(mu);
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t c = 0; c < k; ++c) col[c] = jr[j][mu * k + c];
      apply_softmax_jacobian(p, col, mcol, 1.0);
      for (std::size_t c = 0; c < k; ++c) {
        a[c * d + j] = col[c];
        ma[c * d + j] = mcol[c];
      }
    }
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < k; ++c) s += a[c * d + i] * ma[c * d + j];
        g[i * d + j] += s;
      }
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      g[i * d + j] *= scale;
      g[j * d + i] = g[i * d + j];
    }
  return SymmetricMatrix(d, std::move(g));
}

}  // namespace

ProjectedDecomposition projected_decomposition(const HomogeneousNet& net, const Batch& batch,
                                               double temperature, const Projector& r,
                                               std::size_t threads) {
  if (r.ambient_dim() != net.param_count()) throw ShapeMismatch("projector does not match P");
  const CurvatureProbe probe(net, batch, temperature);
  const std::size_t d = r.dim();
  std::vector<std::vector<double>> hcols(d), jr(d);
  parallel_for(d, threads, [&](std::size_t j) {
    const auto v = r.dense_column(j);
    hcols[j] = r.project(probe.hvp(v, jr[j]));
  });

  std::vector<double> h(d * d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) h[i * d + j] = hcols[j][i];

  const double b = static_cast<double>(batch.size());
  ProjectedDecomposition out;
  out.H = SymmetricMatrix(d, std::move(h));
  out.G = gterm_from_columns(jr, probe.probs(), 0, batch.size(),
                             1.0 / (b * temperature * temperature));
  out.Hstar = out.H - out.G;
  out.alpha = net.scale();
  out.temperature = temperature;
  return out;
}

std::vector<Tensor> projected_jacobians(const HomogeneousNet& net, const Tensor& X,
                                        const Projector& r) {
  if (r.ambient_dim() != net.param_count()) throw ShapeMismatch("projector does not match P");
  const std::size_t in = net.input_size();
  if (in == 0 || X.size() % in != 0) throw ShapeMismatch("inputs do not match the network");
  const std::size_t b = X.size() / in, k = net.num_classes(), d = r.dim();
  detail::ForwardCache cache;
  detail::run_forward(net, X.values(), b, cache);
  std::vector<Tensor> out(b, Tensor({k, d}));
  std::vector<std::vector<double>> tang;
  for (std::size_t j = 0; j < d; ++j) {
    const auto v = r.dense_column(j);
    detail::run_tangent(net, cache, v, tang);
    const auto& z = tang.back();
    for (std::size_t mu = 0; mu < b; ++mu)
      for (std::size_t c = 0; c < k; ++c) out[mu].at(c, j) = z[mu * k + c];
  }
  return out;
}

std::vector<SymmetricMatrix> per_sample_gterms(const HomogeneousNet& net, const Batch& batch,
                                               double temperature, const Projector& r) {
  if (r.ambient_dim() != net.param_count()) throw ShapeMismatch("projector does not match P");
  const CurvatureProbe probe(net, batch, temperature);
  const std::size_t d = r.dim();
  std::vector<std::vector<double>> jr(d);
  for (std::size_t j = 0; j < d; ++j) jr[j] = probe.logit_tangent(r.dense_column(j));
  std::vector<SymmetricMatrix> out;
  out.reserve(batch.size());
  const double scale = 1.0 / (temperature * temperature);
  for (std::size_t mu = 0; mu < batch.size(); ++mu)
    out.push_back(gterm_from_columns(jr, probe.probs(), mu, mu + 1, scale));
  return out;
}

}  // namespace gz
