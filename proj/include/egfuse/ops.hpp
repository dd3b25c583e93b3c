// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "egfuse/tensor.hpp"

// Forward kernels plus the matching adjoint kernels for the few operations
// whose backward pass is not a one-liner. Everything is plain loops over
// contiguous storage; sizes in this project are small enough that clarity
// wins over blocking tricks.

namespace egfuse {

struct ConvSpec {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

template <typename T>
inline void check_conv_args(const TensorT<T>& x, const TensorT<T>& k, const TensorT<T>& bias,
                            const ConvSpec& spec) {
  if (spec.stride < 1) throw ShapeError("conv2d: stride must be positive");
  if (spec.padding < 0) throw ShapeError("conv2d: padding must be non-negative");
  if (spec.groups < 1) throw ShapeError("conv2d: groups must be positive");
  if (k.height() != k.width()) throw ShapeError("conv2d: kernel must be square");
  if (k.height() % 2 == 0) throw ShapeError("conv2d: kernel extent must be odd");
  if (x.channels() % spec.groups != 0 || k.batch() % spec.groups != 0) {
    throw ShapeError("conv2d: channels not divisible by groups");
  }
  if (k.channels() != x.channels() / spec.groups) {
    throw ShapeError("conv2d: kernel input channels " + std::to_string(k.channels()) +
                     " do not match input " + x.shape_str());
  }
  if (x.height() + 2 * spec.padding < k.height() || x.width() + 2 * spec.padding < k.width()) {
    throw ShapeError("conv2d: padded input smaller than kernel");
  }
  if (!bias.empty() && (bias.channels() != k.batch() || bias.size() != k.batch())) {
    throw ShapeError("conv2d: bias length does not match output channels");
  }
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& k, const TensorT<T>& bias,
                  const ConvSpec& spec) {
  check_conv_args(x, k, bias, spec);
  const int ksz = k.height();
  const int c_out = k.batch();
  const int c_in_g = k.channels();
  const int c_out_g = c_out / spec.groups;
  const int h_out = (x.height() + 2 * spec.padding - ksz) / spec.stride + 1;
  const int w_out = (x.width() + 2 * spec.padding - ksz) / spec.stride + 1;

  TensorT<T> out(x.batch(), c_out, h_out, w_out);
  for (int b = 0; b < x.batch(); ++b) {
    for (int co = 0; co < c_out; ++co) {
      const int g = co / c_out_g;
      for (int oh = 0; oh < h_out; ++oh) {
        for (int ow = 0; ow < w_out; ++ow) {
          T acc = bias.empty() ? T{0} : bias.data()[co];
          for (int ci = 0; ci < c_in_g; ++ci) {
            const int xc = g * c_in_g + ci;
            for (int kh = 0; kh < ksz; ++kh) {
              const int ih = oh * spec.stride - spec.padding + kh;
              if (ih < 0 || ih >= x.height()) continue;
              for (int kw = 0; kw < ksz; ++kw) {
                const int iw = ow * spec.stride - spec.padding + kw;
                if (iw < 0 || iw >= x.width()) continue;
                acc += x.at(b, xc, ih, iw) * k.at(co, ci, kh, kw);
              }
            }
          }
          out.at(b, co, oh, ow) = acc;
        }
      }
    }
  }
  out.require_finite("conv2d");
  return out;
}

/// Adjoints of conv2d with respect to input, kernel and bias. Accumulates
/// into the provided gradient tensors (callers pre-zero or chain them).
template <typename T>
void conv2d_backward(const TensorT<T>& x, const TensorT<T>& k, const ConvSpec& spec,
                     const TensorT<T>& dy, TensorT<T>* dx, TensorT<T>* dk, TensorT<T>* db) {
  const int ksz = k.height();
  const int c_out = k.batch();
  const int c_in_g = k.channels();
  const int c_out_g = c_out / spec.groups;
  for (int b = 0; b < dy.batch(); ++b) {
    for (int co = 0; co < c_out; ++co) {
      const int g = co / c_out_g;
      for (int oh = 0; oh < dy.height(); ++oh) {
        for (int ow = 0; ow < dy.width(); ++ow) {
          const T gout = dy.at(b, co, oh, ow);
          if (db) db->data()[co] += gout;
          for (int ci = 0; ci < c_in_g; ++ci) {
            const int xc = g * c_in_g + ci;
            for (int kh = 0; kh < ksz; ++kh) {
              const int ih = oh * spec.stride - spec.padding + kh;
              if (ih < 0 || ih >= x.height()) continue;
              for (int kw = 0; kw < ksz; ++kw) {
                const int iw = ow * spec.stride - spec.padding + kw;
                if (iw < 0 || iw >= x.width()) continue;
                if (dx) dx->at(b, xc, ih, iw) += gout * k.at(co, ci, kh, kw);
                if (dk) dk->at(co, ci, kh, kw) += gout * x.at(b, xc, ih, iw);
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
  if (x.height() * x.width() < 1) throw ShapeError("global_avg_pool: empty spatial plane");
  TensorT<T> out(x.batch(), x.channels(), 1, 1);
  const T inv = T{1} / static_cast<T>(x.height() * x.width());
  for (int b = 0; b < x.batch(); ++b) {
    for (int c = 0; c < x.channels(); ++c) {
      T acc = 0;
      for (int h = 0; h < x.height(); ++h) {
        for (int w = 0; w < x.width(); ++w) acc += x.at(b, c, h, w);
      }
      out.at(b, c, 0, 0) = acc * inv;
    }
  }
  return out;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  TensorT<T> out = TensorT<T>::zeros_like(x);
  for (int64_t i = 0; i < x.size(); ++i) {
    const T v = x.data()[i];
    out.data()[i] = v >= 0 ? T{1} / (T{1} + std::exp(-v))
                           : std::exp(v) / (T{1} + std::exp(v));
  }
  return out;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> out = TensorT<T>::zeros_like(x);
  for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = std::max(T{0}, x.data()[i]);
  return out;
}

template <typename T>
TensorT<T> log_elem(const TensorT<T>& x) {
  TensorT<T> out = TensorT<T>::zeros_like(x);
  for (int64_t i = 0; i < x.size(); ++i) {
    if (!(x.data()[i] > T{0})) throw NumericError("log: non-positive input");
    out.data()[i] = std::log(x.data()[i]);
  }
  return out;
}

/// Softmax along the channel axis, independently at every (b, h, w) site.
template <typename T>
TensorT<T> softmax_channel(const TensorT<T>& x) {
  TensorT<T> out = TensorT<T>::zeros_like(x);
  const int c_n = x.channels();
  for (int b = 0; b < x.batch(); ++b) {
    for (int h = 0; h < x.height(); ++h) {
      for (int w = 0; w < x.width(); ++w) {
        T mx = x.at(b, 0, h, w);
        for (int c = 1; c < c_n; ++c) mx = std::max(mx, x.at(b, c, h, w));
        T sum = 0;
        for (int c = 0; c < c_n; ++c) {
          const T e = std::exp(x.at(b, c, h, w) - mx);
          out.at(b, c, h, w) = e;
          sum += e;
        }
        for (int c = 0; c < c_n; ++c) out.at(b, c, h, w) /= sum;
      }
    }
  }
  return out;
}

inline void check_broadcastable(const std::array<int, 4>& a, const std::array<int, 4>& b) {
  for (int i = 0; i < 4; ++i) {
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1) {
      throw ShapeError("broadcast: incompatible extents on axis " + std::to_string(i));
    }
  }
}

template <typename T, typename F>
TensorT<T> broadcast_binary(const TensorT<T>& a, const TensorT<T>& b, F op) {
  check_broadcastable(a.shape(), b.shape());
  std::array<int, 4> s{};
  for (int i = 0; i < 4; ++i) s[i] = std::max(a.shape()[i], b.shape()[i]);
  TensorT<T> out = TensorT<T>::zeros(s);
  for (int bb = 0; bb < s[0]; ++bb) {
    for (int c = 0; c < s[1]; ++c) {
      for (int h = 0; h < s[2]; ++h) {
        for (int w = 0; w < s[3]; ++w) {
          // extent-1 axes index at 0; the modulo collapses exactly those
          const T va = a.at(bb % a.batch(), c % a.channels(), h % a.height(), w % a.width());
          const T vb = b.at(bb % b.batch(), c % b.channels(), h % b.height(), w % b.width());
          out.at(bb, c, h, w) = op(va, vb);
        }
      }
    }
  }
  return out;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return broadcast_binary(a, b, [](T x, T y) { return x + y; });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  return broadcast_binary(a, b, [](T x, T y) { return x * y; });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T s) {
  TensorT<T> out = TensorT<T>::zeros_like(a);
  for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * s;
  return out;
}

/// Sum `g` down to `target` by reducing every axis that was broadcast up.
template <typename T>
TensorT<T> reduce_to_shape(const TensorT<T>& g, const std::array<int, 4>& target) {
  TensorT<T> out = TensorT<T>::zeros(target);
  for (int b = 0; b < g.batch(); ++b) {
    for (int c = 0; c < g.channels(); ++c) {
      for (int h = 0; h < g.height(); ++h) {
        for (int w = 0; w < g.width(); ++w) {
          out.at(b % target[0], c % target[1], h % target[2], w % target[3]) += g.at(b, c, h, w);
        }
      }
    }
  }
  return out;
}

struct BilinearTap {
  int lo;
  int hi;
  double w_hi;  // weight of the hi sample; lo gets 1 - w_hi
};

/// Source taps for one output coordinate under the half-pixel convention
/// with border clamping.
inline BilinearTap bilinear_tap(int dst, int factor, int src_extent) {
  const double src = (dst + 0.5) / factor - 0.5;
  double lo_f = std::floor(src);
  double frac = src - lo_f;
  int lo = static_cast<int>(lo_f);
  int hi = lo + 1;
  lo = std::clamp(lo, 0, src_extent - 1);
  hi = std::clamp(hi, 0, src_extent - 1);
  return {lo, hi, frac};
}

template <typename T>
TensorT<T> bilinear_upsample(const TensorT<T>& x, int factor) {
  if (factor < 1) throw ShapeError("bilinear_upsample: factor must be >= 1");
  if (factor == 1) return x;
  TensorT<T> out(x.batch(), x.channels(), x.height() * factor, x.width() * factor);
  for (int oh = 0; oh < out.height(); ++oh) {
    const BilinearTap th = bilinear_tap(oh, factor, x.height());
    for (int ow = 0; ow < out.width(); ++ow) {
      const BilinearTap tw = bilinear_tap(ow, factor, x.width());
      for (int b = 0; b < x.batch(); ++b) {
        for (int c = 0; c < x.channels(); ++c) {
          const double v =
              (1 - th.w_hi) * (1 - tw.w_hi) * x.at(b, c, th.lo, tw.lo) +
              (1 - th.w_hi) * tw.w_hi * x.at(b, c, th.lo, tw.hi) +
              th.w_hi * (1 - tw.w_hi) * x.at(b, c, th.hi, tw.lo) +
              th.w_hi * tw.w_hi * x.at(b, c, th.hi, tw.hi);
          out.at(b, c, oh, ow) = static_cast<T>(v);
        }
      }
    }
  }
  return out;
}

template <typename T>
void bilinear_upsample_backward(const TensorT<T>& dy, int factor, TensorT<T>* dx) {
  if (factor == 1) {
    for (int64_t i = 0; i < dy.size(); ++i) dx->data()[i] += dy.data()[i];
    return;
  }
  for (int oh = 0; oh < dy.height(); ++oh) {
    const BilinearTap th = bilinear_tap(oh, factor, dx->height());
    for (int ow = 0; ow < dy.width(); ++ow) {
      const BilinearTap tw = bilinear_tap(ow, factor, dx->width());
      for (int b = 0; b < dy.batch(); ++b) {
        for (int c = 0; c < dy.channels(); ++c) {
          const T g = dy.at(b, c, oh, ow);
          dx->at(b, c, th.lo, tw.lo) += static_cast<T>((1 - th.w_hi) * (1 - tw.w_hi)) * g;
          dx->at(b, c, th.lo, tw.hi) += static_cast<T>((1 - th.w_hi) * tw.w_hi) * g;
          dx->at(b, c, th.hi, tw.lo) += static_cast<T>(th.w_hi * (1 - tw.w_hi)) * g;
          dx->at(b, c, th.hi, tw.hi) += static_cast<T>(th.w_hi * tw.w_hi) * g;
        }
      }
    }
  }
}

/// Mean over the channel axis -> [B, 1, H, W].
template <typename T>
TensorT<T> channel_mean(const TensorT<T>& x) {
  TensorT<T> out(x.batch(), 1, x.height(), x.width());
  const T inv = T{1} / static_cast<T>(x.channels());
  for (int b = 0; b < x.batch(); ++b) {
    for (int c = 0; c < x.channels(); ++c) {
      for (int h = 0; h < x.height(); ++h) {
        for (int w = 0; w < x.width(); ++w) out.at(b, 0, h, w) += x.at(b, c, h, w) * inv;
      }
    }
  }
  return out;
}

/// Max over the channel axis; ties resolve to the lowest channel in backward.
template <typename T>
TensorT<T> channel_max(const TensorT<T>& x) {
  TensorT<T> out(x.batch(), 1, x.height(), x.width());
  for (int b = 0; b < x.batch(); ++b) {
    for (int h = 0; h < x.height(); ++h) {
      for (int w = 0; w < x.width(); ++w) {
        T mx = x.at(b, 0, h, w);
        for (int c = 1; c < x.channels(); ++c) mx = std::max(mx, x.at(b, c, h, w));
        out.at(b, 0, h, w) = mx;
      }
    }
  }
  return out;
}

template <typename T>
TensorT<T> concat_channel(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.batch() != b.batch() || a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("concat_channel: non-channel extents differ");
  }
  TensorT<T> out(a.batch(), a.channels() + b.channels(), a.height(), a.width());
  for (int bb = 0; bb < a.batch(); ++bb) {
    for (int c = 0; c < out.channels(); ++c) {
      const bool first = c < a.channels();
      for (int h = 0; h < a.height(); ++h) {
        for (int w = 0; w < a.width(); ++w) {
          out.at(bb, c, h, w) = first ? a.at(bb, c, h, w) : b.at(bb, c - a.channels(), h, w);
        }
      }
    }
  }
  return out;
}

template <typename T>
T sum_all(const TensorT<T>& x) {
  T acc = 0;
  for (int64_t i = 0; i < x.size(); ++i) acc += x.data()[i];
  return acc;
}

}  // namespace egfuse
