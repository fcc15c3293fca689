#pragma once

// Batched layer kernels shared by the forward evaluator, the reverse pass,
// and the tangent (forward-over-reverse) passes. All buffers are row-major;
// `accumulate` adds into the destination instead of overwriting it.

#include <cstddef>
#include <cstdint>
#include <span>

namespace gz::detail {

struct ConvGeom {
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t out_channels = 0, kernel = 0, stride = 1, padding = 0;
  std::size_t out_height = 0, out_width = 0;

  std::size_t in_size() const { return channels * height * width; }
  std::size_t out_size() const { return out_channels * out_height * out_width; }
  std::size_t weight_size() const { return out_channels * channels * kernel * kernel; }
};

inline void linear_forward(std::span<const double> w, std::span<const double> in,
                           std::span<double> out, std::size_t batch, std::size_t in_f,
                           std::size_t out_f, bool accumulate) {
  for (std::size_t b = 0; b < batch; ++b) {
    const double* x = in.data() + b * in_f;
    double* y = out.data() + b * out_f;
    for (std::size_t o = 0; o < out_f; ++o) {
      const double* wr = w.data() + o * in_f;
      double s = 0.0;
      for (std::size_t i = 0; i < in_f; ++i) s += wr[i] * x[i];
      y[o] = accumulate ? y[o] + s : s;
    }
  }
}

inline void linear_backward_input(std::span<const double> w, std::span<const double> dout,
                                  std::span<double> din, std::size_t batch, std::size_t in_f,
                                  std::size_t out_f, bool accumulate) {
  for (std::size_t b = 0; b < batch; ++b) {
    double* dx = din.data() + b * in_f;
    if (!accumulate)
      for (std::size_t i = 0; i < in_f; ++i) dx[i] = 0.0;
    const double* dy = dout.data() + b * out_f;
    for (std::size_t o = 0; o < out_f; ++o) {
      const double g = dy[o];
      if (g == 0.0) continue;
      const double* wr = w.data() + o * in_f;
      for (std::size_t i = 0; i < in_f; ++i) dx[i] += g * wr[i];
    }
  }
}

inline void linear_backward_weight(std::span<const double> dout, std::span<const double> in,
                                   std::span<double> gw, std::size_t batch, std::size_t in_f,
                                   std::size_t out_f) {
  for (std::size_t b = 0; b < batch; ++b) {
    const double* x = in.data() + b * in_f;
    const double* dy = dout.data() + b * out_f;
    for (std::size_t o = 0; o < out_f; ++o) {
      const double g = dy[o];
      if (g == 0.0) continue;
      double* gr = gw.data() + o * in_f;
      for (std::size_t i = 0; i < in_f; ++i) gr[i] += g * x[i];
    }
  }
}

inline void conv_forward(std::span<const double> w, std::span<const double> in,
                         std::span<double> out, std::size_t batch, const ConvGeom& g,
                         bool accumulate) {
  const std::size_t k = g.kernel;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* x = in.data() + b * g.in_size();
    double* y = out.data() + b * g.out_size();
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      for (std::size_t oh = 0; oh < g.out_height; ++oh) {
        for (std::size_t ow = 0; ow < g.out_width; ++ow) {
          double s = 0.0;
          for (std::size_t c = 0; c < g.channels; ++c) {
            const double* wk = w.data() + ((o * g.channels + c) * k) * k;
            const double* xc = x + c * g.height * g.width;
            for (std::size_t kh = 0; kh < k; ++kh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) -
                                        static_cast<std::ptrdiff_t>(g.padding);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
              for (std::size_t kw = 0; kw < k; ++kw) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) -
                                          static_cast<std::ptrdiff_t>(g.padding);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width)) continue;
                s += wk[kh * k + kw] * xc[static_cast<std::size_t>(ih) * g.width +
                                          static_cast<std::size_t>(iw)];
              }
            }
          }
          double& dst = y[(o * g.out_height + oh) * g.out_width + ow];
          dst = accumulate ? dst + s : s;
        }
      }
    }
  }
}

inline void conv_backward_input(std::span<const double> w, std::span<const double> dout,
                                std::span<double> din, std::size_t batch, const ConvGeom& g,
                                bool accumulate) {
  const std::size_t k = g.kernel;
  for (std::size_t b = 0; b < batch; ++b) {
    double* dx = din.data() + b * g.in_size();
    if (!accumulate)
      for (std::size_t i = 0; i < g.in_size(); ++i) dx[i] = 0.0;
    const double* dy = dout.data() + b * g.out_size();
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      for (std::size_t oh = 0; oh < g.out_height; ++oh) {
        for (std::size_t ow = 0; ow < g.out_width; ++ow) {
          const double gy = dy[(o * g.out_height + oh) * g.out_width + ow];
          if (gy == 0.0) continue;
          for (std::size_t c = 0; c < g.channels; ++c) {
            const double* wk = w.data() + ((o * g.channels + c) * k) * k;
            double* dxc = dx + c * g.height * g.width;
            for (std::size_t kh = 0; kh < k; ++kh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) -
                                        static_cast<std::ptrdiff_t>(g.padding);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
              for (std::size_t kw = 0; kw < k; ++kw) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) -
                                          static_cast<std::ptrdiff_t>(g.padding);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width)) continue;
                dxc[static_cast<std::size_t>(ih) * g.width + static_cast<std::size_t>(iw)] +=
                    gy * wk[kh * k + kw];
              }
            }
          }
        }
      }
    }
  }
}

inline void conv_backward_weight(std::span<const double> dout, std::span<const double> in,
                                 std::span<double> gw, std::size_t batch, const ConvGeom& g) {
  const std::size_t k = g.kernel;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* x = in.data() + b * g.in_size();
    const double* dy = dout.data() + b * g.out_size();
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      for (std::size_t oh = 0; oh < g.out_height; ++oh) {
        for (std::size_t ow = 0; ow < g.out_width; ++ow) {
          const double gy = dy[(o * g.out_height + oh) * g.out_width + ow];
          if (gy == 0.0) continue;
          for (std::size_t c = 0; c < g.channels; ++c) {
            double* gk = gw.data() + ((o * g.channels + c) * k) * k;
            const double* xc = x + c * g.height * g.width;
            for (std::size_t kh = 0; kh < k; ++kh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) -
                                        static_cast<std::ptrdiff_t>(g.padding);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
              for (std::size_t kw = 0; kw < k; ++kw) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) -
                                          static_cast<std::ptrdiff_t>(g.padding);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width)) continue;
                gk[kh * k + kw] +=
                    gy * xc[static_cast<std::size_t>(ih) * g.width + static_cast<std::size_t>(iw)];
              }
            }
          }
        }
      }
    }
  }
}

// Ties resolve to the first maximal element in scan order. `argmax` holds
// flat indices into the batched input buffer.
inline void maxpool_forward(std::span<const double> in, std::span<double> out,
                            std::span<std::uint32_t> argmax, std::size_t batch,
                            std::size_t channels, std::size_t height, std::size_t width,
                            std::size_t window) {
  const std::size_t oh_n = height / window, ow_n = width / window;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t plane = (b * channels + c) * height * width;
      for (std::size_t oh = 0; oh < oh_n; ++oh) {
        for (std::size_t ow = 0; ow < ow_n; ++ow) {
          std::size_t best = plane + (oh * window) * width + ow * window;
          for (std::size_t dh = 0; dh < window; ++dh) {
            for (std::size_t dw = 0; dw < window; ++dw) {
              const std::size_t idx = plane + (oh * window + dh) * width + ow * window + dw;
              if (in[idx] > in[best]) best = idx;
            }
          }
          const std::size_t o = ((b * channels + c) * oh_n + oh) * ow_n + ow;
          out[o] = in[best];
          argmax[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
}

}  // namespace gz::detail
