/* Copyright 2026 The voxelseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "voxelseg/errors.hpp"
#include "voxelseg/tensor.hpp"

namespace voxelseg {

struct ConvOptions {
  Extent3 stride{1, 1, 1};
  Extent3 padding{0, 0, 0};

  // Zero padding that keeps spatial extents at stride 1. Requires odd kernels.
  static ConvOptions same(const Extent3& kernel) {
    for (std::size_t a = 0; a < 3; ++a) {
      if (kernel[a] % 2 == 0) {
        throw ConfigError("same padding needs an odd kernel, got extent " + std::to_string(kernel[a]) +
                          " on axis " + std::to_string(a));
      }
    }
    return {{1, 1, 1}, {kernel.d / 2, kernel.h / 2, kernel.w / 2}};
  }
  static ConvOptions valid() { return {}; }
};

template <typename T>
struct ConvParams {
  Tensor<T> weight;  // [Cout, Cin, kd, kh, kw]
  Tensor<T> bias;    // [Cout]
  ConvOptions options;
};

template <typename T>
struct ConvGrads {
  Tensor<T> dx;
  Tensor<T> dw;
  Tensor<T> db;
};

template <typename T>
struct ConvCache {
  Tensor<T> x;
  ConvOptions options;
};

namespace detail {

// Geometry of a correlation mapping `in` (cin channels) to `out` (cout channels).
struct ConvDims {
  std::size_t cin = 0, cout = 0;
  Extent3 in, out, kernel, stride, padding;
};

// Output index range [lo, hi) along one axis for which in = o*s + k - p is in [0, n).
struct AxisRange {
  std::size_t lo = 0, hi = 0;
};

inline AxisRange valid_range(std::size_t n, std::size_t out, std::size_t k, std::size_t s, std::size_t p) {
  AxisRange r;
  r.lo = p > k ? (p - k + s - 1) / s : 0;
  if (n - 1 + p < k) return {0, 0};
  r.hi = std::min(out, (n - 1 + p - k) / s + 1);
  if (r.hi < r.lo) r.hi = r.lo;
  return r;
}

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p, std::size_t axis) {
  if (in + 2 * p < k) {
    throw ShapeError("kernel extent " + std::to_string(k) + " exceeds padded input " +
                     std::to_string(in + 2 * p) + " on axis " + std::to_string(axis));
  }
  return (in + 2 * p - k) / s + 1;
}

inline Extent3 kernel_extent(const Shape& wshape) { return {wshape[2], wshape[3], wshape[4]}; }

inline void check_options(const ConvOptions& opt) {
  for (std::size_t a = 0; a < 3; ++a) {
    if (opt.stride[a] == 0) throw ConfigError("convolution stride must be positive");
  }
}

// y[o] += sum_c corr(x[c], w[o,c])
template <typename T>
void conv_forward_accumulate(const T* __restrict x, const T* __restrict w, T* __restrict y, const ConvDims& g) {
  const std::size_t K = g.kernel.numel(), IV = g.in.numel(), OV = g.out.numel();
  const std::size_t H = g.in.h, W = g.in.w, OH = g.out.h, OW = g.out.w;
  const std::size_t kw = g.kernel.w, sw = g.stride.w, pw = g.padding.w;
  std::vector<AxisRange> wr(kw);
  for (std::size_t l = 0; l < kw; ++l) wr[l] = valid_range(W, OW, l, sw, pw);
  const bool fast3 = (kw == 3 && sw == 1 && pw == 1 && OW == W && W >= 2);

  for (std::size_t o = 0; o < g.cout; ++o) {
    T* ybase = y + o * OV;
    for (std::size_t c = 0; c < g.cin; ++c) {
      const T* xbase = x + c * IV;
      const T* wbase = w + (o * g.cin + c) * K;
      for (std::size_t i = 0; i < g.kernel.d; ++i) {
        const AxisRange dr = valid_range(g.in.d, g.out.d, i, g.stride.d, g.padding.d);
        for (std::size_t j = 0; j < g.kernel.h; ++j) {
          const AxisRange hr = valid_range(H, OH, j, g.stride.h, g.padding.h);
          const T* wrow = wbase + (i * g.kernel.h + j) * kw;
          for (std::size_t od = dr.lo; od < dr.hi; ++od) {
            const std::size_t id = od * g.stride.d + i - g.padding.d;
            for (std::size_t oh = hr.lo; oh < hr.hi; ++oh) {
              const std::size_t ih = oh * g.stride.h + j - g.padding.h;
              T* __restrict yrow = ybase + (od * OH + oh) * OW;
              const T* __restrict xrow = xbase + (id * H + ih) * W;
              if (fast3) {
                const T w0 = wrow[0], w1 = wrow[1], w2 = wrow[2];
                yrow[0] += w1 * xrow[0] + w2 * xrow[1];
                for (std::size_t ow = 1; ow + 1 < W; ++ow) {
                  yrow[ow] += w0 * xrow[ow - 1] + w1 * xrow[ow] + w2 * xrow[ow + 1];
                }
                yrow[W - 1] += w0 * xrow[W - 2] + w1 * xrow[W - 1];
                continue;
              }
              for (std::size_t l = 0; l < kw; ++l) {
                const T wt = wrow[l];
                if (sw == 1) {
                  const T* xs = xrow + l - pw;
                  for (std::size_t ow = wr[l].lo; ow < wr[l].hi; ++ow) yrow[ow] += wt * xs[ow];
                } else {
                  for (std::size_t ow = wr[l].lo; ow < wr[l].hi; ++ow) yrow[ow] += wt * xrow[ow * sw + l - pw];
                }
              }
            }
          }
        }
      }
    }
  }
}

// dx[c] += sum_o scatter(dy[o], w[o,c]); the adjoint of conv_forward_accumulate in x.
template <typename T>
void conv_backward_data(const T* __restrict dy, const T* __restrict w, T* __restrict dx, const ConvDims& g) {
  const std::size_t K = g.kernel.numel(), IV = g.in.numel(), OV = g.out.numel();
  const std::size_t H = g.in.h, W = g.in.w, OH = g.out.h, OW = g.out.w;
  const std::size_t kw = g.kernel.w, sw = g.stride.w, pw = g.padding.w;
  std::vector<AxisRange> wr(kw);
  for (std::size_t l = 0; l < kw; ++l) wr[l] = valid_range(W, OW, l, sw, pw);
  const bool fast3 = (kw == 3 && sw == 1 && pw == 1 && OW == W && W >= 2);

  for (std::size_t c = 0; c < g.cin; ++c) {
    T* dxbase = dx + c * IV;
    for (std::size_t o = 0; o < g.cout; ++o) {
      const T* dybase = dy + o * OV;
      const T* wbase = w + (o * g.cin + c) * K;
      for (std::size_t i = 0; i < g.kernel.d; ++i) {
        const AxisRange dr = valid_range(g.in.d, g.out.d, i, g.stride.d, g.padding.d);
        for (std::size_t j = 0; j < g.kernel.h; ++j) {
          const AxisRange hr = valid_range(H, OH, j, g.stride.h, g.padding.h);
          const T* wrow = wbase + (i * g.kernel.h + j) * kw;
          for (std::size_t od = dr.lo; od < dr.hi; ++od) {
            const std::size_t id = od * g.stride.d + i - g.padding.d;
            for (std::size_t oh = hr.lo; oh < hr.hi; ++oh) {
              const std::size_t ih = oh * g.stride.h + j - g.padding.h;
              const T* __restrict dyrow = dybase + (od * OH + oh) * OW;
              T* __restrict dxrow = dxbase + (id * H + ih) * W;
              if (fast3) {
                const T w0 = wrow[0], w1 = wrow[1], w2 = wrow[2];
                dxrow[0] += w1 * dyrow[0] + w0 * dyrow[1];
                for (std::size_t iw = 1; iw + 1 < W; ++iw) {
                  dxrow[iw] += w0 * dyrow[iw + 1] + w1 * dyrow[iw] + w2 * dyrow[iw - 1];
                }
                dxrow[W - 1] += w1 * dyrow[W - 1] + w2 * dyrow[W - 2];
                continue;
              }
              for (std::size_t l = 0; l < kw; ++l) {
                const T wt = wrow[l];
                if (sw == 1) {
                  T* xs = dxrow + l - pw;
                  for (std::size_t ow = wr[l].lo; ow < wr[l].hi; ++ow) xs[ow] += wt * dyrow[ow];
                } else {
                  for (std::size_t ow = wr[l].lo; ow < wr[l].hi; ++ow) dxrow[ow * sw + l - pw] += wt * dyrow[ow];
                }
              }
            }
          }
        }
      }
    }
  }
}

// dw[o,c] += sum over output voxels of dy[o] * x[c] (shifted by the tap offset).
template <typename T>
void conv_backward_weight(const T* __restrict x, const T* __restrict dy, T* __restrict dw, const ConvDims& g) {
  const std::size_t K = g.kernel.numel(), IV = g.in.numel(), OV = g.out.numel();
  const std::size_t H = g.in.h, W = g.in.w, OH = g.out.h, OW = g.out.w;
  const std::size_t kw = g.kernel.w, sw = g.stride.w, pw = g.padding.w;
  std::vector<AxisRange> wr(kw);
  for (std::size_t l = 0; l < kw; ++l) wr[l] = valid_range(W, OW, l, sw, pw);
  std::vector<T> acc(kw * OW);

  for (std::size_t o = 0; o < g.cout; ++o) {
    const T* dybase = dy + o * OV;
    for (std::size_t c = 0; c < g.cin; ++c) {
      const T* xbase = x + c * IV;
      T* wbase = dw + (o * g.cin + c) * K;
      for (std::size_t i = 0; i < g.kernel.d; ++i) {
        const AxisRange dr = valid_range(g.in.d, g.out.d, i, g.stride.d, g.padding.d);
        for (std::size_t j = 0; j < g.kernel.h; ++j) {
          const AxisRange hr = valid_range(H, OH, j, g.stride.h, g.padding.h);
          std::fill(acc.begin(), acc.end(), T(0));
          for (std::size_t od = dr.lo; od < dr.hi; ++od) {
            const std::size_t id = od * g.stride.d + i - g.padding.d;
            for (std::size_t oh = hr.lo; oh < hr.hi; ++oh) {
              const std::size_t ih = oh * g.stride.h + j - g.padding.h;
              const T* __restrict dyrow = dybase + (od * OH + oh) * OW;
              const T* __restrict xrow = xbase + (id * H + ih) * W;
              for (std::size_t l = 0; l < kw; ++l) {
                T* __restrict a = acc.data() + l * OW;
                if (sw == 1) {
                  const T* xs = xrow + l - pw;
                  for (std::size_t ow = wr[l].lo; ow < wr[l].hi; ++ow) a[ow] += dyrow[ow] * xs[ow];
                } else {
                  for (std::size_t ow = wr[l].lo; ow < wr[l].hi; ++ow) a[ow] += dyrow[ow] * xrow[ow * sw + l - pw];
                }
              }
            }
          }
          T* wrow = wbase + (i * g.kernel.h + j) * kw;
          for (std::size_t l = 0; l < kw; ++l) {
            T s = T(0);
            for (std::size_t ow = 0; ow < OW; ++ow) s += acc[l * OW + ow];
            wrow[l] += s;
          }
        }
      }
    }
  }
}

template <typename T>
void add_channel_bias(Tensor<T>& y, const Tensor<T>& bias) {
  const std::size_t per = y.size() / y.channels();
  for (std::size_t o = 0; o < y.channels(); ++o) {
    T* p = y.channel_ptr(o);
    const T b = bias[o];
    for (std::size_t v = 0; v < per; ++v) p[v] += b;
  }
}

template <typename T>
Tensor<T> channel_sums(const Tensor<T>& g) {
  Tensor<T> out({g.channels()});
  const std::size_t per = g.size() / g.channels();
  for (std::size_t o = 0; o < g.channels(); ++o) {
    const T* p = g.channel_ptr(o);
    T s = T(0);
    for (std::size_t v = 0; v < per; ++v) s += p[v];
    out[o] = s;
  }
  return out;
}

template <typename T>
void check_conv_params(const Tensor<T>& weight, const Tensor<T>& bias, std::size_t bias_len, const char* op) {
  if (weight.rank() != 5) throw ShapeError(std::string(op) + ": kernel must be rank 5, got " + shape_str(weight.shape()));
  if (bias.rank() != 1 || bias.size() != bias_len) {
    throw ShapeError(std::string(op) + ": bias must have length " + std::to_string(bias_len) + ", got " +
                     shape_str(bias.shape()));
  }
}

}  // namespace detail

// Cross-correlation with zero padding:
// y[o,d,h,w] = b[o] + sum_{c,i,j,l} w[o,c,i,j,l] * x_pad[c, d*s+i, h*s+j, w*s+l].
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const ConvOptions& opt) {
  detail::check_options(opt);
  detail::check_conv_params(weight, bias, weight.rank() == 5 ? weight.extent(0) : 0, "conv3d");
  if (x.rank() != 4) throw ShapeError("conv3d input must be [C,D,H,W], got " + shape_str(x.shape()));
  if (x.channels() != weight.extent(1)) {
    throw ShapeError("conv3d input has " + std::to_string(x.channels()) + " channels, kernel expects " +
                     std::to_string(weight.extent(1)));
  }
  detail::ConvDims g;
  g.cin = x.channels();
  g.cout = weight.extent(0);
  g.in = x.spatial();
  g.kernel = detail::kernel_extent(weight.shape());
  g.stride = opt.stride;
  g.padding = opt.padding;
  for (std::size_t a = 0; a < 3; ++a) {
    const std::size_t e = detail::conv_out_extent(g.in[a], g.kernel[a], g.stride[a], g.padding[a], a);
    (a == 0 ? g.out.d : a == 1 ? g.out.h : g.out.w) = e;
  }
  Tensor<T> y({g.cout, g.out.d, g.out.h, g.out.w});
  detail::add_channel_bias(y, bias);
  detail::conv_forward_accumulate(x.data().data(), weight.data().data(), y.data().data(), g);
  return y;
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const ConvParams<T>& p) {
  return conv3d(x, p.weight, p.bias, p.options);
}

template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& x, const Tensor<T>& weight, const ConvOptions& opt, const Tensor<T>& dy) {
  detail::ConvDims g;
  g.cin = x.channels();
  g.cout = weight.extent(0);
  g.in = x.spatial();
  g.out = dy.spatial();
  g.kernel = detail::kernel_extent(weight.shape());
  g.stride = opt.stride;
  g.padding = opt.padding;
  if (dy.channels() != g.cout) throw ShapeError("conv3d_backward: upstream gradient channel mismatch");
  ConvGrads<T> grads{zeros_like(x), zeros_like(weight), detail::channel_sums(dy)};
  detail::conv_backward_data(dy.data().data(), weight.data().data(), grads.dx.data().data(), g);
  detail::conv_backward_weight(x.data().data(), dy.data().data(), grads.dw.data().data(), g);
  return grads;
}

template <typename T>
ConvGrads<T> conv3d_backward(const ConvCache<T>& cache, const Tensor<T>& weight, const Tensor<T>& dy) {
  return conv3d_backward(cache.x, weight, cache.options, dy);
}

// Transposed convolution. The kernel is laid out [Cin, Cout, kd, kh, kw], so
// conv_transpose3d(x, w) is exactly the data-gradient of conv3d(., w): the two
// share one tensor and are adjoint to each other.
// Output extent per axis: (n - 1) * stride - 2 * padding + k.
template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           const ConvOptions& opt) {
  detail::check_options(opt);
  detail::check_conv_params(weight, bias, weight.rank() == 5 ? weight.extent(1) : 0, "conv_transpose3d");
  if (x.rank() != 4) throw ShapeError("conv_transpose3d input must be [C,D,H,W], got " + shape_str(x.shape()));
  if (x.channels() != weight.extent(0)) {
    throw ShapeError("conv_transpose3d input has " + std::to_string(x.channels()) + " channels, kernel expects " +
                     std::to_string(weight.extent(0)));
  }
  detail::ConvDims g;
  g.cout = weight.extent(0);
  g.cin = weight.extent(1);
  g.out = x.spatial();
  g.kernel = detail::kernel_extent(weight.shape());
  g.stride = opt.stride;
  g.padding = opt.padding;
  std::size_t ext[3];
  for (std::size_t a = 0; a < 3; ++a) {
    const std::size_t full = (g.out[a] - 1) * g.stride[a] + g.kernel[a];
    if (full <= 2 * g.padding[a]) throw ShapeError("conv_transpose3d padding too large on axis " + std::to_string(a));
    ext[a] = full - 2 * g.padding[a];
  }
  g.in = {ext[0], ext[1], ext[2]};
  Tensor<T> y({g.cin, g.in.d, g.in.h, g.in.w});
  detail::add_channel_bias(y, bias);
  detail::conv_backward_data(x.data().data(), weight.data().data(), y.data().data(), g);
  return y;
}

template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const ConvParams<T>& p) {
  return conv_transpose3d(x, p.weight, p.bias, p.options);
}

template <typename T>
ConvGrads<T> conv_transpose3d_backward(const Tensor<T>& x, const Tensor<T>& weight, const ConvOptions& opt,
                                       const Tensor<T>& dy) {
  detail::ConvDims g;
  g.cout = weight.extent(0);
  g.cin = weight.extent(1);
  g.out = x.spatial();
  g.in = dy.spatial();
  g.kernel = detail::kernel_extent(weight.shape());
  g.stride = opt.stride;
  g.padding = opt.padding;
  if (dy.channels() != g.cin) throw ShapeError("conv_transpose3d_backward: upstream gradient channel mismatch");
  ConvGrads<T> grads{zeros_like(x), zeros_like(weight), detail::channel_sums(dy)};
  detail::conv_forward_accumulate(dy.data().data(), weight.data().data(), grads.dx.data().data(), g);
  detail::conv_backward_weight(dy.data().data(), x.data().data(), grads.dw.data().data(), g);
  return grads;
}

}  // namespace voxelseg
