#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "pargan/autograd.hpp"

// Differentiable operations over NCHW tensors. Each op computes its value
// eagerly and records a closure that maps the output gradient back onto the
// inputs that require one.

namespace pargan {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::shape, what);
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
}

inline int conv_out_size(int in, int kernel, int stride, int pad) { return (in + 2 * pad - kernel) / stride + 1; }

// col has shape [channels*k*k, out_h*out_w].
template <typename T>
void im2col(const T* x, int channels, int height, int width, int k, int stride, int pad, int out_h, int out_w,
            T* col) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* dst = col + static_cast<std::size_t>((c * k + ki) * k + kj) * plane;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + ki;
          T* row = dst + oh * out_w;
          if (ih < 0 || ih >= height) {
            std::fill(row, row + out_w, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * height + ih) * width;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - pad + kj;
            row[ow] = (iw >= 0 && iw < width) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int channels, int height, int width, int k, int stride, int pad, int out_h, int out_w,
            T* x) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* src = col + static_cast<std::size_t>((c * k + ki) * k + kj) * plane;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= height) continue;
          T* dst = x + (static_cast<std::size_t>(c) * height + ih) * width;
          const T* row = src + oh * out_w;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < width) dst[iw] += row[ow];
          }
        }
      }
    }
  }
}

inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node<T>& in = self.input(k);
      if (!in.requires_grad) continue;
      auto& g = in.grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const T sign[2] = {T(1), T(-1)};
    for (std::size_t k = 0; k < 2; ++k) {
      Node<T>& in = self.input(k);
      if (!in.requires_grad) continue;
      auto& g = in.grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& a = self.input(0);
    Node<T>& b = self.input(1);
    if (a.requires_grad) {
      auto& g = a.grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b.value[i];
    }
    if (b.requires_grad) {
      auto& g = b.grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  return make_op<T>(std::move(out), {a}, [factor](Node<T>& self) {
    auto& g = self.input(0).grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.input(0).grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (self.value[i] > T(0)) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > T(0) ? v : slope * v;
  return make_op<T>(std::move(out), {a}, [slope](Node<T>& self) {
    Node<T>& in = self.input(0);
    auto& g = in.grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += in.value[i] > T(0) ? self.grad[i] : slope * self.grad[i];
  });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = std::tanh(v);
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.input(0).grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (T(1) - self.value[i] * self.value[i]);
  });
}

/// Zero-padded 2-D convolution. weight: [out, in, k, k], bias: [out] or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  detail::require(xs.size() == 4 && ws.size() == 4 && ws[1] == xs[1] && ws[2] == ws[3],
                  "conv2d: incompatible input " + shape_string(xs) + " and weight " + shape_string(ws));
  const int n = xs[0], cin = xs[1], h = xs[2], w = xs[3];
  const int cout = ws[0], k = ws[2];
  const int oh = detail::conv_out_size(h, k, stride, pad);
  const int ow = detail::conv_out_size(w, k, stride, pad);
  detail::require(oh > 0 && ow > 0, "conv2d: output would be empty for input " + shape_string(xs));
  const int kdim = cin * k * k;
  const int plane = oh * ow;
  const bool has_bias = bias.defined();

  Tensor<T> out({n, cout, oh, ow});
  std::vector<T> col(static_cast<std::size_t>(kdim) * plane);
  detail::ConstMatrixMap<T> wm(weight.value().data(), cout, kdim);
  for (int b = 0; b < n; ++b) {
    detail::im2col(x.value().data() + static_cast<std::size_t>(b) * cin * h * w, cin, h, w, k, stride, pad, oh, ow,
                   col.data());
    detail::MatrixMap<T> om(out.data() + static_cast<std::size_t>(b) * cout * plane, cout, plane);
    om.noalias() = wm * detail::ConstMatrixMap<T>(col.data(), kdim, plane);
    if (has_bias) {
      for (int c = 0; c < cout; ++c) om.row(c).array() += bias.value()[c];
    }
  }

  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op<T>(std::move(out), inputs, [=](Node<T>& self) {
    Node<T>& xin = self.input(0);
    Node<T>& win = self.input(1);
    std::vector<T> col(static_cast<std::size_t>(kdim) * plane);
    detail::ConstMatrixMap<T> wm(win.value.data(), cout, kdim);
    for (int b = 0; b < n; ++b) {
      detail::ConstMatrixMap<T> gm(self.grad.data() + static_cast<std::size_t>(b) * cout * plane, cout, plane);
      if (win.requires_grad) {
        detail::im2col(xin.value.data() + static_cast<std::size_t>(b) * cin * h * w, cin, h, w, k, stride, pad, oh,
                       ow, col.data());
        detail::MatrixMap<T> gw(win.grad_ref().data(), cout, kdim);
        gw.noalias() += gm * detail::ConstMatrixMap<T>(col.data(), kdim, plane).transpose();
      }
      if (xin.requires_grad) {
        detail::MatrixMap<T> cm(col.data(), kdim, plane);
        cm.noalias() = wm.transpose() * gm;
        detail::col2im(col.data(), cin, h, w, k, stride, pad, oh, ow,
                       xin.grad_ref().data() + static_cast<std::size_t>(b) * cin * h * w);
      }
      if (has_bias && self.input(2).requires_grad) {
        auto& gb = self.input(2).grad_ref();
        for (int c = 0; c < cout; ++c) gb[c] += gm.row(c).sum();
      }
    }
  });
}

/// Transposed convolution (the adjoint of a strided conv2d).
/// weight: [in, out, k, k]; output size (in-1)*stride - 2*pad + k + output_pad.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad,
                        int output_pad) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  detail::require(xs.size() == 4 && ws.size() == 4 && ws[0] == xs[1] && ws[2] == ws[3],
                  "conv_transpose2d: incompatible input " + shape_string(xs) + " and weight " + shape_string(ws));
  const int n = xs[0], cin = xs[1], h = xs[2], w = xs[3];
  const int cout = ws[1], k = ws[2];
  const int oh = (h - 1) * stride - 2 * pad + k + output_pad;
  const int ow = (w - 1) * stride - 2 * pad + k + output_pad;
  const int kdim = cout * k * k;
  const int plane = h * w;
  const bool has_bias = bias.defined();

  Tensor<T> out({n, cout, oh, ow});
  std::vector<T> col(static_cast<std::size_t>(kdim) * plane);
  detail::ConstMatrixMap<T> wm(weight.value().data(), cin, kdim);
  for (int b = 0; b < n; ++b) {
    detail::ConstMatrixMap<T> xm(x.value().data() + static_cast<std::size_t>(b) * cin * plane, cin, plane);
    detail::MatrixMap<T> cm(col.data(), kdim, plane);
    cm.noalias() = wm.transpose() * xm;
    T* dst = out.data() + static_cast<std::size_t>(b) * cout * oh * ow;
    detail::col2im(col.data(), cout, oh, ow, k, stride, pad, h, w, dst);
    if (has_bias) {
      for (int c = 0; c < cout; ++c) {
        T* p = dst + static_cast<std::size_t>(c) * oh * ow;
        for (int i = 0; i < oh * ow; ++i) p[i] += bias.value()[c];
      }
    }
  }

  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op<T>(std::move(out), inputs, [=](Node<T>& self) {
    Node<T>& xin = self.input(0);
    Node<T>& win = self.input(1);
    std::vector<T> col(static_cast<std::size_t>(kdim) * plane);
    detail::ConstMatrixMap<T> wm(win.value.data(), cin, kdim);
    for (int b = 0; b < n; ++b) {
      const T* g = self.grad.data() + static_cast<std::size_t>(b) * cout * oh * ow;
      detail::im2col(g, cout, oh, ow, k, stride, pad, h, w, col.data());
      detail::ConstMatrixMap<T> cm(col.data(), kdim, plane);
      if (xin.requires_grad) {
        detail::MatrixMap<T> gx(xin.grad_ref().data() + static_cast<std::size_t>(b) * cin * plane, cin, plane);
        gx.noalias() += wm * cm;
      }
      if (win.requires_grad) {
        detail::ConstMatrixMap<T> xm(xin.value.data() + static_cast<std::size_t>(b) * cin * plane, cin, plane);
        detail::MatrixMap<T> gw(win.grad_ref().data(), cin, kdim);
        gw.noalias() += xm * cm.transpose();
      }
      if (has_bias && self.input(2).requires_grad) {
        auto& gb = self.input(2).grad_ref();
        for (int c = 0; c < cout; ++c) {
          const T* p = g + static_cast<std::size_t>(c) * oh * ow;
          T s = 0;
          for (int i = 0; i < oh * ow; ++i) s += p[i];
          gb[c] += s;
        }
      }
    }
  });
}

/// Reflection padding of the two spatial axes.
template <typename T>
Var<T> reflect_pad(const Var<T>& x, int pad) {
  const auto& xs = x.shape();
  detail::require(xs.size() == 4, "reflect_pad: expects NCHW");
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  detail::require(pad < h && pad < w, "reflect_pad: padding " + std::to_string(pad) + " too large for " +
                                          shape_string(xs));
  const int ph = h + 2 * pad, pw = w + 2 * pad;
  std::vector<int> row_src(ph), col_src(pw);
  for (int i = 0; i < ph; ++i) row_src[i] = detail::reflect_index(i - pad, h);
  for (int j = 0; j < pw; ++j) col_src[j] = detail::reflect_index(j - pad, w);

  Tensor<T> out({n, c, ph, pw});
  for (int p = 0; p < n * c; ++p) {
    const T* src = x.value().data() + static_cast<std::size_t>(p) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(p) * ph * pw;
    for (int i = 0; i < ph; ++i)
      for (int j = 0; j < pw; ++j) dst[i * pw + j] = src[row_src[i] * w + col_src[j]];
  }
  return make_op<T>(std::move(out), {x}, [=](Node<T>& self) {
    auto& g = self.input(0).grad_ref();
    for (int p = 0; p < n * c; ++p) {
      const T* src = self.grad.data() + static_cast<std::size_t>(p) * ph * pw;
      T* dst = g.data() + static_cast<std::size_t>(p) * h * w;
      for (int i = 0; i < ph; ++i)
        for (int j = 0; j < pw; ++j) dst[row_src[i] * w + col_src[j]] += src[i * pw + j];
    }
  });
}

/// Per-sample, per-channel normalization with affine gamma/beta of shape [C].
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const auto& xs = x.shape();
  detail::require(xs.size() == 4 && gamma.value().size() == static_cast<std::size_t>(xs[1]) &&
                      beta.value().size() == static_cast<std::size_t>(xs[1]),
                  "instance_norm: parameter/channel mismatch for " + shape_string(xs));
  const int n = xs[0], c = xs[1];
  const int plane = xs[2] * xs[3];
  Tensor<T> out(xs);
  auto xhat = std::make_shared<std::vector<T>>(x.value().size());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * c);
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
      const T* src = x.value().data() + off;
      T mean = 0;
      for (int i = 0; i < plane; ++i) mean += src[i];
      mean /= plane;
      T var = 0;
      for (int i = 0; i < plane; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= plane;
      const T is = T(1) / std::sqrt(var + eps);
      (*inv_std)[static_cast<std::size_t>(b) * c + ch] = is;
      const T g = gamma.value()[ch], bt = beta.value()[ch];
      for (int i = 0; i < plane; ++i) {
        const T xh = (src[i] - mean) * is;
        (*xhat)[off + i] = xh;
        out[off + i] = g * xh + bt;
      }
    }
  }
  return make_op<T>(std::move(out), {x, gamma, beta}, [=](Node<T>& self) {
    Node<T>& xin = self.input(0);
    Node<T>& gin = self.input(1);
    Node<T>& bin = self.input(2);
    for (int b = 0; b < n; ++b) {
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
        const T* dy = self.grad.data() + off;
        const T* xh = xhat->data() + off;
        T sum_dy = 0, sum_dy_xh = 0;
        for (int i = 0; i < plane; ++i) {
          sum_dy += dy[i];
          sum_dy_xh += dy[i] * xh[i];
        }
        if (gin.requires_grad) gin.grad_ref()[ch] += sum_dy_xh;
        if (bin.requires_grad) bin.grad_ref()[ch] += sum_dy;
        if (xin.requires_grad) {
          const T g = gin.value[ch];
          const T is = (*inv_std)[static_cast<std::size_t>(b) * c + ch];
          const T mean_dy = sum_dy / plane, mean_dy_xh = sum_dy_xh / plane;
          T* dx = xin.grad_ref().data() + off;
          for (int i = 0; i < plane; ++i) dx[i] += g * is * (dy[i] - mean_dy - xh[i] * mean_dy_xh);
        }
      }
    }
  });
}

/// Channel-axis concatenation of NCHW tensors with equal N, H, W.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_channels: no inputs");
  const auto& s0 = parts.front().shape();
  detail::require(s0.size() == 4, "concat_channels: expects NCHW");
  const int n = s0[0], h = s0[2], w = s0[3];
  int total = 0;
  std::vector<int> widths;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    detail::require(s.size() == 4 && s[0] == n && s[2] == h && s[3] == w,
                    "concat_channels: " + shape_string(s) + " incompatible with " + shape_string(s0));
    widths.push_back(s[1]);
    total += s[1];
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor<T> out({n, total, h, w});
  for (int b = 0; b < n; ++b) {
    std::size_t offset = static_cast<std::size_t>(b) * total * plane;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const std::size_t len = widths[k] * plane;
      const T* src = parts[k].value().data() + static_cast<std::size_t>(b) * len;
      std::copy(src, src + len, out.data() + offset);
      offset += len;
    }
  }
  return make_op<T>(std::move(out), parts, [=](Node<T>& self) {
    for (int b = 0; b < n; ++b) {
      std::size_t offset = static_cast<std::size_t>(b) * total * plane;
      for (std::size_t k = 0; k < widths.size(); ++k) {
        const std::size_t len = widths[k] * plane;
        Node<T>& in = self.input(k);
        if (in.requires_grad) {
          T* dst = in.grad_ref().data() + static_cast<std::size_t>(b) * len;
          for (std::size_t i = 0; i < len; ++i) dst[i] += self.grad[offset + i];
        }
        offset += len;
      }
    }
  });
}

/// Replicates a [N, C] vector over an H x W grid, giving [N, C, H, W].
template <typename T>
Var<T> tile_spatial(const Var<T>& v, int h, int w) {
  const auto& vs = v.shape();
  detail::require(vs.size() == 2, "tile_spatial: expects [N, C]");
  const int n = vs[0], c = vs[1];
  const int plane = h * w;
  Tensor<T> out({n, c, h, w});
  for (int i = 0; i < n * c; ++i) std::fill(out.data() + static_cast<std::size_t>(i) * plane,
                                            out.data() + static_cast<std::size_t>(i + 1) * plane, v.value()[i]);
  return make_op<T>(std::move(out), {v}, [=](Node<T>& self) {
    auto& g = self.input(0).grad_ref();
    for (int i = 0; i < n * c; ++i) {
      T s = 0;
      const T* src = self.grad.data() + static_cast<std::size_t>(i) * plane;
      for (int j = 0; j < plane; ++j) s += src[j];
      g[i] += s;
    }
  });
}

/// Fully connected layer: x [N, in], weight [out, in], bias [out].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  detail::require(xs.size() == 2 && ws.size() == 2 && ws[1] == xs[1],
                  "linear: incompatible input " + shape_string(xs) + " and weight " + shape_string(ws));
  const int n = xs[0], in = xs[1], out_dim = ws[0];
  Tensor<T> out({n, out_dim});
  const T* wv = weight.value().data();
  for (int b = 0; b < n; ++b) {
    const T* xv = x.value().data() + static_cast<std::size_t>(b) * in;
    for (int o = 0; o < out_dim; ++o) {
      T s = bias.value()[o];
      for (int i = 0; i < in; ++i) s += wv[o * in + i] * xv[i];
      out[static_cast<std::size_t>(b) * out_dim + o] = s;
    }
  }
  return make_op<T>(std::move(out), {x, weight, bias}, [=](Node<T>& self) {
    Node<T>& xin = self.input(0);
    Node<T>& win = self.input(1);
    Node<T>& bin = self.input(2);
    for (int b = 0; b < n; ++b) {
      const T* g = self.grad.data() + static_cast<std::size_t>(b) * out_dim;
      const T* xv = xin.value.data() + static_cast<std::size_t>(b) * in;
      for (int o = 0; o < out_dim; ++o) {
        if (bin.requires_grad) bin.grad_ref()[o] += g[o];
        if (win.requires_grad) {
          T* gw = win.grad_ref().data() + static_cast<std::size_t>(o) * in;
          for (int i = 0; i < in; ++i) gw[i] += g[o] * xv[i];
        }
        if (xin.requires_grad) {
          T* gx = xin.grad_ref().data() + static_cast<std::size_t>(b) * in;
          for (int i = 0; i < in; ++i) gx[i] += g[o] * win.value[static_cast<std::size_t>(o) * in + i];
        }
      }
    }
  });
}

/// 2x2 average pooling with stride 2; odd trailing rows/columns are dropped.
template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  const auto& xs = x.shape();
  detail::require(xs.size() == 4 && xs[2] >= 2 && xs[3] >= 2, "avg_pool2: input too small");
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const int oh = h / 2, ow = w / 2;
  Tensor<T> out({n, c, oh, ow});
  for (int p = 0; p < n * c; ++p) {
    const T* src = x.value().data() + static_cast<std::size_t>(p) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(p) * oh * ow;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j)
        dst[i * ow + j] = T(0.25) * (src[(2 * i) * w + 2 * j] + src[(2 * i) * w + 2 * j + 1] +
                                     src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1]);
  }
  return make_op<T>(std::move(out), {x}, [=](Node<T>& self) {
    auto& g = self.input(0).grad_ref();
    for (int p = 0; p < n * c; ++p) {
      const T* src = self.grad.data() + static_cast<std::size_t>(p) * oh * ow;
      T* dst = g.data() + static_cast<std::size_t>(p) * h * w;
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          const T v = T(0.25) * src[i * ow + j];
          dst[(2 * i) * w + 2 * j] += v;
          dst[(2 * i) * w + 2 * j + 1] += v;
          dst[(2 * i + 1) * w + 2 * j] += v;
          dst[(2 * i + 1) * w + 2 * j + 1] += v;
        }
    }
  });
}

/// Mean over every axis except the leading one: [N, ...] -> [N].
template <typename T>
Var<T> mean_per_sample(const Var<T>& x) {
  const int n = x.shape().front();
  const std::size_t inner = x.value().size() / static_cast<std::size_t>(n);
  Tensor<T> out({n});
  for (int b = 0; b < n; ++b) {
    T s = 0;
    const T* src = x.value().data() + b * inner;
    for (std::size_t i = 0; i < inner; ++i) s += src[i];
    out[b] = s / static_cast<T>(inner);
  }
  return make_op<T>(std::move(out), {x}, [=](Node<T>& self) {
    auto& g = self.input(0).grad_ref();
    for (int b = 0; b < n; ++b) {
      const T v = self.grad[b] / static_cast<T>(inner);
      T* dst = g.data() + b * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += v;
    }
  });
}

/// mean(0.5 * (x - target)^2) over all elements, as a scalar of shape [1].
template <typename T>
Var<T> half_squared_error(const Var<T>& x, T target) {
  const std::size_t count = x.value().size();
  detail::require(count > 0, "half_squared_error: empty input");
  T s = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const T d = x.value()[i] - target;
    s += T(0.5) * d * d;
  }
  Tensor<T> out({1}, s / static_cast<T>(count));
  return make_op<T>(std::move(out), {x}, [=](Node<T>& self) {
    Node<T>& in = self.input(0);
    auto& g = in.grad_ref();
    const T scale = self.grad[0] / static_cast<T>(count);
    for (std::size_t i = 0; i < count; ++i) g[i] += scale * (in.value[i] - target);
  });
}

/// mean(|a - b|) over all elements, as a scalar of shape [1].
template <typename T>
Var<T> mean_abs_error(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "mean_abs_error");
  const std::size_t count = a.value().size();
  detail::require(count > 0, "mean_abs_error: empty input");
  T s = 0;
  for (std::size_t i = 0; i < count; ++i) s += std::abs(a.value()[i] - b.value()[i]);
  Tensor<T> out({1}, s / static_cast<T>(count));
  return make_op<T>(std::move(out), {a, b}, [=](Node<T>& self) {
    Node<T>& an = self.input(0);
    Node<T>& bn = self.input(1);
    const T scale = self.grad[0] / static_cast<T>(count);
    for (std::size_t i = 0; i < count; ++i) {
      const T d = an.value[i] - bn.value[i];
      const T sg = d > T(0) ? scale : (d < T(0) ? -scale : T(0));
      if (an.requires_grad) an.grad_ref()[i] += sg;
      if (bn.requires_grad) bn.grad_ref()[i] -= sg;
    }
  });
}

}  // namespace pargan
