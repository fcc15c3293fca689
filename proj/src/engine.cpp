#include "engine.hpp"

#include <algorithm>

#include "goldizone/errors.hpp"

namespace gz::detail {

ConvGeom conv_geom(const LayerPlan& plan) {
  ConvGeom g;
  g.channels = plan.in_shape[0];
  g.height = plan.in_shape[1];
  g.width = plan.in_shape[2];
  g.out_channels = plan.spec.out_channels;
  g.kernel = plan.spec.kernel;
  g.stride = plan.spec.stride;
  g.padding = plan.spec.padding;
  g.out_height = plan.out_shape[1];
  g.out_width = plan.out_shape[2];
  return g;
}

void run_forward(const HomogeneousNet& net, std::span<const double> x, std::size_t batch,
                 ForwardCache& cache, std::size_t stop) {
  const auto& layers = net.layers();
  const std::size_t n = std::min(stop, layers.size());
  if (x.size() != batch * net.input_size())
    throw ShapeMismatch("input holds " + std::to_string(x.size()) + " values, expected " +
                        std::to_string(batch * net.input_size()));
  cache.batch = batch;
  cache.acts.resize(n + 1);
  cache.argmax.resize(n);
  cache.acts[0].assign(x.begin(), x.end());
  const auto theta = net.theta();

  for (std::size_t l = 0; l < n; ++l) {
    const LayerPlan& plan = layers[l];
    const auto& in = cache.acts[l];
    auto& out = cache.acts[l + 1];
    out.resize(batch * plan.out_size());
    const auto w = theta.subspan(plan.offset, plan.count);
    switch (plan.spec.kind) {
      case LayerKind::Linear:
        linear_forward(w, in, out, batch, plan.spec.in_features, plan.spec.out_features, false);
        break;
      case LayerKind::Conv2d:
        conv_forward(w, in, out, batch, conv_geom(plan), false);
        break;
      case LayerKind::ReLU:
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
        break;
      case LayerKind::MaxPool:
        cache.argmax[l].resize(out.size());
        maxpool_forward(in, out, cache.argmax[l], batch, plan.in_shape[0], plan.in_shape[1],
                        plan.in_shape[2], plan.spec.window);
        break;
      case LayerKind::Flatten:
        std::copy(in.begin(), in.end(), out.begin());
        break;
    }
  }
}

void run_tangent(const HomogeneousNet& net, const ForwardCache& cache,
                 std::span<const double> dir, std::vector<std::vector<double>>& tang) {
  const auto& layers = net.layers();
  const std::size_t n = cache.acts.size() - 1;
  const std::size_t batch = cache.batch;
  const auto theta = net.theta();
  tang.resize(n + 1);
  tang[0].assign(cache.acts[0].size(), 0.0);
  bool zero = true;  // the input carries no tangent

  for (std::size_t l = 0; l < n; ++l) {
    const LayerPlan& plan = layers[l];
    const auto& tin = tang[l];
    auto& tout = tang[l + 1];
    tout.assign(batch * plan.out_size(), 0.0);
    switch (plan.spec.kind) {
      case LayerKind::Linear: {
        const auto w = theta.subspan(plan.offset, plan.count);
        const auto v = dir.subspan(plan.offset, plan.count);
        const std::size_t fi = plan.spec.in_features, fo = plan.spec.out_features;
        linear_forward(v, cache.acts[l], tout, batch, fi, fo, false);
        if (!zero) linear_forward(w, tin, tout, batch, fi, fo, true);
        zero = false;
        break;
      }
      case LayerKind::Conv2d: {
        const auto w = theta.subspan(plan.offset, plan.count);
        const auto v = dir.subspan(plan.offset, plan.count);
        const ConvGeom g = conv_geom(plan);
        conv_forward(v, cache.acts[l], tout, batch, g, false);
        if (!zero) conv_forward(w, tin, tout, batch, g, true);
        zero = false;
        break;
      }
      case LayerKind::ReLU: {
        const auto& in = cache.acts[l];
        for (std::size_t i = 0; i < tin.size(); ++i) tout[i] = in[i] > 0.0 ? tin[i] : 0.0;
        break;
      }
      case LayerKind::MaxPool: {
        const auto& am = cache.argmax[l];
        for (std::size_t i = 0; i < tout.size(); ++i) tout[i] = tin[am[i]];
        break;
      }
      case LayerKind::Flatten:
        std::copy(tin.begin(), tin.end(), tout.begin());
        break;
    }
  }
}

void run_reverse(const HomogeneousNet& net, const ForwardCache& cache,
                 std::span<const double> delta_out, std::span<double> grad,
                 const TangentChannel* tc) {
  const auto& layers = net.layers();
  const std::size_t n = cache.acts.size() - 1;
  const std::size_t batch = cache.batch;
  const auto theta = net.theta();

  std::vector<double> delta(delta_out.begin(), delta_out.end());
  std::vector<double> delta_dot;
  if (tc) delta_dot.assign(tc->delta_out_dot.begin(), tc->delta_out_dot.end());
  std::vector<double> next, next_dot;

  // Parameters never feed layers before the first parameterized one, so the
  // cotangent does not need to travel further back than that.
  const std::size_t first = net.first_param_layer();

  for (std::size_t l = n; l-- > first;) {
    const LayerPlan& plan = layers[l];
    const auto& in = cache.acts[l];
    const bool need_input = l > first;
    switch (plan.spec.kind) {
      case LayerKind::Linear: {
        const std::size_t fi = plan.spec.in_features, fo = plan.spec.out_features;
        const auto w = theta.subspan(plan.offset, plan.count);
        if (!grad.empty())
          linear_backward_weight(delta, in, grad.subspan(plan.offset, plan.count), batch, fi, fo);
        if (tc) {
          auto gd = tc->grad_dot.subspan(plan.offset, plan.count);
          linear_backward_weight(delta_dot, in, gd, batch, fi, fo);
          if (l > first) linear_backward_weight(delta, (*tc->tang)[l], gd, batch, fi, fo);
        }
        if (need_input) {
          next.resize(batch * fi);
          linear_backward_input(w, delta, next, batch, fi, fo, false);
          if (tc) {
            next_dot.resize(batch * fi);
            linear_backward_input(w, delta_dot, next_dot, batch, fi, fo, false);
            linear_backward_input(tc->dir.subspan(plan.offset, plan.count), delta, next_dot,
                                  batch, fi, fo, true);
          }
        }
        break;
      }
      case LayerKind::Conv2d: {
        const ConvGeom g = conv_geom(plan);
        const auto w = theta.subspan(plan.offset, plan.count);
        if (!grad.empty())
          conv_backward_weight(delta, in, grad.subspan(plan.offset, plan.count), batch, g);
        if (tc) {
          auto gd = tc->grad_dot.subspan(plan.offset, plan.count);
          conv_backward_weight(delta_dot, in, gd, batch, g);
          if (l > first) conv_backward_weight(delta, (*tc->tang)[l], gd, batch, g);
        }
        if (need_input) {
          next.resize(batch * g.in_size());
          conv_backward_input(w, delta, next, batch, g, false);
          if (tc) {
            next_dot.resize(batch * g.in_size());
            conv_backward_input(w, delta_dot, next_dot, batch, g, false);
            conv_backward_input(tc->dir.subspan(plan.offset, plan.count), delta, next_dot, batch,
                                g, true);
          }
        }
        break;
      }
      case LayerKind::ReLU: {
        next.resize(delta.size());
        for (std::size_t i = 0; i < delta.size(); ++i) next[i] = in[i] > 0.0 ? delta[i] : 0.0;
        if (tc) {
          next_dot.resize(delta.size());
          for (std::size_t i = 0; i < delta.size(); ++i)
            next_dot[i] = in[i] > 0.0 ? delta_dot[i] : 0.0;
        }
        break;
      }
      case LayerKind::MaxPool: {
        const auto& am = cache.argmax[l];
        next.assign(in.size(), 0.0);
        for (std::size_t i = 0; i < delta.size(); ++i) next[am[i]] += delta[i];
        if (tc) {
          next_dot.assign(in.size(), 0.0);
          for (std::size_t i = 0; i < delta.size(); ++i) next_dot[am[i]] += delta_dot[i];
        }
        break;
      }
      case LayerKind::Flatten:
        next = delta;
        if (tc) next_dot = delta_dot;
        break;
    }
    if (need_input) {
      std::swap(delta, next);
      if (tc) std::swap(delta_dot, next_dot);
    }
  }
}

}  // namespace gz::detail
