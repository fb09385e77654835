#pragma once

#include <limits>
#include <vector>

#include "hpun/tensor.hpp"

namespace hpun {

struct ConvSpec {
    int64_t in_channels = 0;
    int64_t out_channels = 0;
    int64_t kernel_h = 3;
    int64_t kernel_w = 3;
    int64_t stride = 1;
    int64_t padding = 0;
    int64_t groups = 1;
    bool has_bias = true;

    void validate() const {
        check_shape(in_channels >= 1 && out_channels >= 1, "conv: channels must be >= 1");
        check_shape(kernel_h >= 1 && kernel_w >= 1 && stride >= 1 && padding >= 0,
                    "conv: bad kernel/stride/padding");
        check_shape(groups >= 1 && in_channels % groups == 0 && out_channels % groups == 0,
                    "conv: in/out channels must be divisible by groups");
    }
    int64_t weight_numel() const {
        return out_channels * (in_channels / groups) * kernel_h * kernel_w;
    }
    // Weight tensor layout: (out_channels, in_channels/groups, k_h, k_w).
    Shape4 weight_shape() const {
        return {out_channels, in_channels / groups, kernel_h, kernel_w};
    }
    Shape4 out_shape(Shape4 in) const {
        const int64_t oh = (in.h + 2 * padding - kernel_h) / stride + 1;
        const int64_t ow = (in.w + 2 * padding - kernel_w) / stride + 1;
        check_shape(oh >= 1 && ow >= 1, "conv: input too small for kernel/padding");
        return {in.n, out_channels, oh, ow};
    }
};

namespace detail {

// col buffer layout per (batch, group): rows = (Cin/g)*kh*kw, cols = oh*ow.
template <class T>
void im2col_group(const T* x, Shape4 xs, const ConvSpec& s, int64_t b, int64_t g, T* col) {
    const int64_t cg = s.in_channels / s.groups;
    const int64_t oh = (xs.h + 2 * s.padding - s.kernel_h) / s.stride + 1;
    const int64_t ow = (xs.w + 2 * s.padding - s.kernel_w) / s.stride + 1;
    int64_t row = 0;
    for (int64_t c = 0; c < cg; ++c) {
        const T* xc = x + ((b * xs.c + g * cg + c) * xs.h) * xs.w;
        for (int64_t kh = 0; kh < s.kernel_h; ++kh)
            for (int64_t kw = 0; kw < s.kernel_w; ++kw, ++row) {
                T* dst = col + row * oh * ow;
                for (int64_t y = 0; y < oh; ++y) {
                    const int64_t iy = y * s.stride + kh - s.padding;
                    if (iy < 0 || iy >= xs.h) {
                        for (int64_t xo = 0; xo < ow; ++xo) dst[y * ow + xo] = T(0);
                        continue;
                    }
                    for (int64_t xo = 0; xo < ow; ++xo) {
                        const int64_t ix = xo * s.stride + kw - s.padding;
                        dst[y * ow + xo] =
                            (ix >= 0 && ix < xs.w) ? xc[iy * xs.w + ix] : T(0);
                    }
                }
            }
    }
}

// Scatter-add of a col buffer back into the input gradient.
template <class T>
void col2im_group(const T* col, Shape4 xs, const ConvSpec& s, int64_t b, int64_t g, T* gx) {
    const int64_t cg = s.in_channels / s.groups;
    const int64_t oh = (xs.h + 2 * s.padding - s.kernel_h) / s.stride + 1;
    const int64_t ow = (xs.w + 2 * s.padding - s.kernel_w) / s.stride + 1;
    int64_t row = 0;
    for (int64_t c = 0; c < cg; ++c) {
        T* xc = gx + ((b * xs.c + g * cg + c) * xs.h) * xs.w;
        for (int64_t kh = 0; kh < s.kernel_h; ++kh)
            for (int64_t kw = 0; kw < s.kernel_w; ++kw, ++row) {
                const T* src = col + row * oh * ow;
                for (int64_t y = 0; y < oh; ++y) {
                    const int64_t iy = y * s.stride + kh - s.padding;
                    if (iy < 0 || iy >= xs.h) continue;
                    for (int64_t xo = 0; xo < ow; ++xo) {
                        const int64_t ix = xo * s.stride + kw - s.padding;
                        if (ix >= 0 && ix < xs.w) xc[iy * xs.w + ix] += src[y * ow + xo];
                    }
                }
            }
    }
}

// C(m,n) += A(m,k) * B(k,n), row-major, ikj order for streaming stores.
template <class T>
void gemm_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        T* ci = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const T aip = a[i * k + p];
            if (aip == T(0)) continue;
            const T* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

// C(m,n) += A^T(m,k stored k×m) * B(k,n)
template <class T>
void gemm_at_b(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t p = 0; p < k; ++p) {
        const T* ap = a + p * m;
        const T* bp = b + p * n;
        for (int64_t i = 0; i < m; ++i) {
            const T api = ap[i];
            if (api == T(0)) continue;
            T* ci = c + i * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += api * bp[j];
        }
    }
}

// C(m,n) += A(m,k) * B^T(n,k stored n×k)
template <class T>
void gemm_a_bt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        T* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const T* bj = b + j * k;
            T acc = 0;
            for (int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

}  // namespace detail

// Grouped 2-D convolution via im2col + GEMM. Weight layout is
// (out_channels, in_channels/groups, k_h, k_w); zero padding.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weight,
                 const Tensor<T>* bias = nullptr) {
    spec.validate();
    check_shape(x.shape.c == spec.in_channels,
                "conv2d: input has " + std::to_string(x.shape.c) + " channels, spec expects " +
                    std::to_string(spec.in_channels));
    check_shape(weight.numel() == spec.weight_numel(), "conv2d: weight buffer length mismatch");
    if (spec.has_bias) {
        check_shape(bias != nullptr && bias->numel() == spec.out_channels,
                    "conv2d: bias buffer length mismatch");
    }

    const Shape4 xs = x.shape;
    const Shape4 os = spec.out_shape(xs);
    Tensor<T> out = zeros<T>(os);

    const int64_t G = spec.groups;
    const int64_t cg = spec.in_channels / G;
    const int64_t og = spec.out_channels / G;
    const int64_t krows = cg * spec.kernel_h * spec.kernel_w;
    const int64_t hw = os.h * os.w;

    std::vector<T> col(krows * hw);
    for (int64_t b = 0; b < xs.n; ++b) {
        for (int64_t g = 0; g < G; ++g) {
            detail::im2col_group(x.ptr(), xs, spec, b, g, col.data());
            const T* wg = weight.ptr() + g * og * krows;
            T* og_ptr = out.ptr() + ((b * os.c + g * og) * os.h) * os.w;
            detail::gemm_acc(wg, col.data(), og_ptr, og, krows, hw);
        }
    }
    if (spec.has_bias) {
        const T* bp = bias->ptr();
        for (int64_t b = 0; b < os.n; ++b)
            for (int64_t c = 0; c < os.c; ++c) {
                T* o = out.ptr() + ((b * os.c + c) * os.h) * os.w;
                const T bv = bp[c];
                for (int64_t i = 0; i < hw; ++i) o[i] += bv;
            }
    }

    std::vector<Tensor<T>> inputs{x, weight};
    if (spec.has_bias) inputs.push_back(*bias);
    detail::attach<T>(out, "conv2d", std::move(inputs),
                      [spec, xs, os](TapeNode<T>& node, const std::vector<T>& g) {
        Tensor<T>& xin = node.inputs[0];
        Tensor<T>& win = node.inputs[1];
        const int64_t G = spec.groups;
        const int64_t cg = spec.in_channels / G;
        const int64_t og = spec.out_channels / G;
        const int64_t krows = cg * spec.kernel_h * spec.kernel_w;
        const int64_t hw = os.h * os.w;

        std::vector<T> col(krows * hw);
        std::vector<T> gcol(krows * hw);
        if (xin.requires_grad) xin.ensure_grad();
        if (win.requires_grad) win.ensure_grad();
        for (int64_t b = 0; b < xs.n; ++b) {
            for (int64_t gi = 0; gi < G; ++gi) {
                const T* go = g.data() + ((b * os.c + gi * og) * os.h) * os.w;
                const T* wg = win.ptr() + gi * og * krows;
                if (xin.requires_grad) {
                    std::fill(gcol.begin(), gcol.end(), T(0));
                    // gcol = W^T * grad_out
                    detail::gemm_at_b(wg, go, gcol.data(), krows, og, hw);
                    detail::col2im_group(gcol.data(), xs, spec, b, gi, xin.grad->data());
                }
                if (win.requires_grad) {
                    detail::im2col_group(xin.ptr(), xs, spec, b, gi, col.data());
                    // gW += grad_out * col^T
                    detail::gemm_a_bt(go, col.data(), win.grad->data() + gi * og * krows,
                                      og, hw, krows);
                }
            }
        }
        if (spec.has_bias && node.inputs.size() > 2 && node.inputs[2].requires_grad) {
            Tensor<T>& bin = node.inputs[2];
            bin.ensure_grad();
            for (int64_t b = 0; b < os.n; ++b)
                for (int64_t c = 0; c < os.c; ++c) {
                    const T* go = g.data() + ((b * os.c + c) * os.h) * os.w;
                    T acc = 0;
                    for (int64_t i = 0; i < hw; ++i) acc += go[i];
                    (*bin.grad)[c] += acc;
                }
        }
    });
    return out;
}

// Depthwise convolution: groups = channels, one kernel per channel.
template <class T>
Tensor<T> depthwise_conv(const Tensor<T>& x, int64_t k, const Tensor<T>& weight,
                         const Tensor<T>* bias = nullptr) {
    ConvSpec s;
    s.in_channels = x.shape.c;
    s.out_channels = x.shape.c;
    s.kernel_h = s.kernel_w = k;
    s.padding = (k - 1) / 2;
    s.groups = x.shape.c;
    s.has_bias = bias != nullptr;
    return conv2d(x, s, weight, bias);
}

// Stride-1 max pooling over odd k x k windows with "same" output size.
// Padded positions hold -inf and never win; ties go to the first index in
// row-major window order, and the backward pass routes the gradient there.
template <class T>
Tensor<T> maxpool_s1(const Tensor<T>& x, int64_t k = 3) {
    check_shape(k >= 1 && k % 2 == 1, "maxpool_s1: kernel must be odd for same-size output");
    const int64_t pad = (k - 1) / 2;
    const Shape4 xs = x.shape;
    Tensor<T> out = zeros<T>(xs);
    auto argmax = std::make_shared<std::vector<int64_t>>(xs.numel());

    const int64_t hw = xs.h * xs.w;
    for (int64_t bc = 0; bc < xs.n * xs.c; ++bc) {
        const T* xp = x.ptr() + bc * hw;
        T* op = out.ptr() + bc * hw;
        int64_t* am = argmax->data() + bc * hw;
        for (int64_t y = 0; y < xs.h; ++y)
            for (int64_t xo = 0; xo < xs.w; ++xo) {
                T best = -std::numeric_limits<T>::infinity();
                int64_t best_idx = -1;
                for (int64_t dy = -pad; dy <= pad; ++dy) {
                    const int64_t iy = y + dy;
                    if (iy < 0 || iy >= xs.h) continue;
                    for (int64_t dx = -pad; dx <= pad; ++dx) {
                        const int64_t ix = xo + dx;
                        if (ix < 0 || ix >= xs.w) continue;
                        const T v = xp[iy * xs.w + ix];
                        if (v > best) {
                            best = v;
                            best_idx = iy * xs.w + ix;
                        }
                    }
                }
                op[y * xs.w + xo] = best;
                am[y * xs.w + xo] = best_idx;
            }
    }

    detail::attach<T>(out, "maxpool_s1", {x},
                      [argmax, hw, xs](TapeNode<T>& node, const std::vector<T>& g) {
                          Tensor<T>& xin = node.inputs[0];
                          if (!xin.requires_grad) return;
                          xin.ensure_grad();
                          T* gx = xin.grad->data();
                          for (int64_t bc = 0; bc < xs.n * xs.c; ++bc)
                              for (int64_t i = 0; i < hw; ++i)
                                  gx[bc * hw + (*argmax)[bc * hw + i]] += g[bc * hw + i];
                      });
    return out;
}

// Stride-1 average pooling, same-size output; padded positions are excluded
// from the mean (count over valid cells only). Used by downsampler ablations.
template <class T>
Tensor<T> avgpool_s1(const Tensor<T>& x, int64_t k = 3) {
    check_shape(k >= 1 && k % 2 == 1, "avgpool_s1: kernel must be odd");
    const int64_t pad = (k - 1) / 2;
    const Shape4 xs = x.shape;
    Tensor<T> out = zeros<T>(xs);
    const int64_t hw = xs.h * xs.w;
    for (int64_t bc = 0; bc < xs.n * xs.c; ++bc) {
        const T* xp = x.ptr() + bc * hw;
        T* op = out.ptr() + bc * hw;
        for (int64_t y = 0; y < xs.h; ++y)
            for (int64_t xo = 0; xo < xs.w; ++xo) {
                T acc = 0;
                int64_t cnt = 0;
                for (int64_t dy = -pad; dy <= pad; ++dy) {
                    const int64_t iy = y + dy;
                    if (iy < 0 || iy >= xs.h) continue;
                    for (int64_t dx = -pad; dx <= pad; ++dx) {
                        const int64_t ix = xo + dx;
                        if (ix < 0 || ix >= xs.w) continue;
                        acc += xp[iy * xs.w + ix];
                        ++cnt;
                    }
                }
                op[y * xs.w + xo] = acc / static_cast<T>(cnt);
            }
    }
    detail::attach<T>(out, "avgpool_s1", {x},
                      [k, pad, xs, hw](TapeNode<T>& node, const std::vector<T>& g) {
                          Tensor<T>& xin = node.inputs[0];
                          if (!xin.requires_grad) return;
                          xin.ensure_grad();
                          T* gx = xin.grad->data();
                          for (int64_t bc = 0; bc < xs.n * xs.c; ++bc)
                              for (int64_t y = 0; y < xs.h; ++y)
                                  for (int64_t xo = 0; xo < xs.w; ++xo) {
                                      int64_t cnt = 0;
                                      for (int64_t dy = -pad; dy <= pad; ++dy)
                                          for (int64_t dx = -pad; dx <= pad; ++dx) {
                                              const int64_t iy = y + dy, ix = xo + dx;
                                              if (iy >= 0 && iy < xs.h && ix >= 0 && ix < xs.w)
                                                  ++cnt;
                                          }
                                      const T gv =
                                          g[bc * hw + y * xs.w + xo] / static_cast<T>(cnt);
                                      for (int64_t dy = -pad; dy <= pad; ++dy)
                                          for (int64_t dx = -pad; dx <= pad; ++dx) {
                                              const int64_t iy = y + dy, ix = xo + dx;
                                              if (iy >= 0 && iy < xs.h && ix >= 0 && ix < xs.w)
                                                  gx[bc * hw + iy * xs.w + ix] += gv;
                                          }
                                  }
                      });
    return out;
}

namespace detail {

// 2x upsample sampling plan for one axis under the half-pixel convention:
// src = (dst + 0.5) / 2 - 0.5, clamped to the edges.
struct LinTap {
    int64_t i0, i1;
    double w0, w1;
};

inline std::vector<LinTap> up2_taps(int64_t n_in) {
    std::vector<LinTap> taps(2 * n_in);
    for (int64_t d = 0; d < 2 * n_in; ++d) {
        const double src = (static_cast<double>(d) + 0.5) / 2.0 - 0.5;
        double f = std::floor(src);
        int64_t i0 = static_cast<int64_t>(f);
        double frac = src - f;
        int64_t i1 = i0 + 1;
        i0 = std::clamp<int64_t>(i0, 0, n_in - 1);
        i1 = std::clamp<int64_t>(i1, 0, n_in - 1);
        taps[d] = {i0, i1, 1.0 - frac, frac};
    }
    return taps;
}

}  // namespace detail

// Bilinear 2x upsampling with half-pixel centers and edge clamping. The
// operator is linear, so backward is its transpose (scatter-add of taps).
template <class T>
Tensor<T> bilinear_up2(const Tensor<T>& x) {
    const Shape4 xs = x.shape;
    const Shape4 os{xs.n, xs.c, 2 * xs.h, 2 * xs.w};
    Tensor<T> out = zeros<T>(os);
    const auto ty = detail::up2_taps(xs.h);
    const auto tx = detail::up2_taps(xs.w);
    for (int64_t bc = 0; bc < xs.n * xs.c; ++bc) {
        const T* xp = x.ptr() + bc * xs.h * xs.w;
        T* op = out.ptr() + bc * os.h * os.w;
        for (int64_t y = 0; y < os.h; ++y) {
            const auto& t0 = ty[y];
            for (int64_t xo = 0; xo < os.w; ++xo) {
                const auto& t1 = tx[xo];
                const double v =
                    t0.w0 * (t1.w0 * xp[t0.i0 * xs.w + t1.i0] + t1.w1 * xp[t0.i0 * xs.w + t1.i1]) +
                    t0.w1 * (t1.w0 * xp[t0.i1 * xs.w + t1.i0] + t1.w1 * xp[t0.i1 * xs.w + t1.i1]);
                op[y * os.w + xo] = static_cast<T>(v);
            }
        }
    }
    detail::attach<T>(out, "bilinear_up2", {x},
                      [xs, os, ty, tx](TapeNode<T>& node, const std::vector<T>& g) {
                          Tensor<T>& xin = node.inputs[0];
                          if (!xin.requires_grad) return;
                          xin.ensure_grad();
                          T* gx = xin.grad->data();
                          for (int64_t bc = 0; bc < xs.n * xs.c; ++bc) {
                              T* gxp = gx + bc * xs.h * xs.w;
                              const T* gop = g.data() + bc * os.h * os.w;
                              for (int64_t y = 0; y < os.h; ++y) {
                                  const auto& t0 = ty[y];
                                  for (int64_t xo = 0; xo < os.w; ++xo) {
                                      const auto& t1 = tx[xo];
                                      const T gv = gop[y * os.w + xo];
                                      gxp[t0.i0 * xs.w + t1.i0] += static_cast<T>(t0.w0 * t1.w0) * gv;
                                      gxp[t0.i0 * xs.w + t1.i1] += static_cast<T>(t0.w0 * t1.w1) * gv;
                                      gxp[t0.i1 * xs.w + t1.i0] += static_cast<T>(t0.w1 * t1.w0) * gv;
                                      gxp[t0.i1 * xs.w + t1.i1] += static_cast<T>(t0.w1 * t1.w1) * gv;
                                  }
                              }
                          }
                      });
    return out;
}

// Nearest-neighbour 2x upsampling (downsampler ablation variant).
template <class T>
Tensor<T> nearest_up2(const Tensor<T>& x) {
    const Shape4 xs = x.shape;
    const Shape4 os{xs.n, xs.c, 2 * xs.h, 2 * xs.w};
    Tensor<T> out = zeros<T>(os);
    for (int64_t bc = 0; bc < xs.n * xs.c; ++bc) {
        const T* xp = x.ptr() + bc * xs.h * xs.w;
        T* op = out.ptr() + bc * os.h * os.w;
        for (int64_t y = 0; y < os.h; ++y)
            for (int64_t xo = 0; xo < os.w; ++xo)
                op[y * os.w + xo] = xp[(y / 2) * xs.w + xo / 2];
    }
    detail::attach<T>(out, "nearest_up2", {x},
                      [xs, os](TapeNode<T>& node, const std::vector<T>& g) {
                          Tensor<T>& xin = node.inputs[0];
                          if (!xin.requires_grad) return;
                          xin.ensure_grad();
                          T* gx = xin.grad->data();
                          for (int64_t bc = 0; bc < xs.n * xs.c; ++bc) {
                              T* gxp = gx + bc * xs.h * xs.w;
                              const T* gop = g.data() + bc * os.h * os.w;
                              for (int64_t y = 0; y < os.h; ++y)
                                  for (int64_t xo = 0; xo < os.w; ++xo)
                                      gxp[(y / 2) * xs.w + xo / 2] += gop[y * os.w + xo];
                          }
                      });
    return out;
}

// Space-to-depth: (B, C, H, W) -> (B, C*r^2, H/r, W/r). Output channel
// c*r^2 + dy*r + dx at (h, w) equals input channel c at (h*r+dy, w*r+dx).
template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int64_t r) {
    check_shape(r >= 1, "pixel_unshuffle: ratio must be >= 1");
    const Shape4 xs = x.shape;
    check_shape(xs.h % r == 0 && xs.w % r == 0,
                "pixel_unshuffle: spatial dims " + xs.str() + " not divisible by " +
                    std::to_string(r));
    const Shape4 os{xs.n, xs.c * r * r, xs.h / r, xs.w / r};
    Tensor<T> out = zeros<T>(os);
    for (int64_t b = 0; b < xs.n; ++b)
        for (int64_t c = 0; c < xs.c; ++c)
            for (int64_t dy = 0; dy < r; ++dy)
                for (int64_t dx = 0; dx < r; ++dx) {
                    const int64_t oc = c * r * r + dy * r + dx;
                    for (int64_t y = 0; y < os.h; ++y)
                        for (int64_t xo = 0; xo < os.w; ++xo)
                            out.at(b, oc, y, xo) = x.at(b, c, y * r + dy, xo * r + dx);
                }
    detail::attach<T>(out, "pixel_unshuffle", {x},
                      [r, xs, os](TapeNode<T>& node, const std::vector<T>& g) {
                          Tensor<T>& xin = node.inputs[0];
                          if (!xin.requires_grad) return;
                          xin.ensure_grad();
                          auto& gx = *xin.grad;
                          for (int64_t b = 0; b < xs.n; ++b)
                              for (int64_t c = 0; c < xs.c; ++c)
                                  for (int64_t dy = 0; dy < r; ++dy)
                                      for (int64_t dx = 0; dx < r; ++dx) {
                                          const int64_t oc = c * r * r + dy * r + dx;
                                          for (int64_t y = 0; y < os.h; ++y)
                                              for (int64_t xo = 0; xo < os.w; ++xo) {
                                                  const int64_t gi =
                                                      ((b * os.c + oc) * os.h + y) * os.w + xo;
                                                  const int64_t xi =
                                                      ((b * xs.c + c) * xs.h + y * r + dy) * xs.w +
                                                      xo * r + dx;
                                                  gx[xi] += g[gi];
                                              }
                                      }
                      });
    return out;
}

// Depth-to-space, the exact inverse of pixel_unshuffle under the same
// channel ordering.
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int64_t r) {
    check_shape(r >= 1, "pixel_shuffle: ratio must be >= 1");
    const Shape4 xs = x.shape;
    check_shape(xs.c % (r * r) == 0,
                "pixel_shuffle: channels " + std::to_string(xs.c) + " not divisible by r^2");
    const Shape4 os{xs.n, xs.c / (r * r), xs.h * r, xs.w * r};
    Tensor<T> out = zeros<T>(os);
    for (int64_t b = 0; b < xs.n; ++b)
        for (int64_t c = 0; c < os.c; ++c)
            for (int64_t dy = 0; dy < r; ++dy)
                for (int64_t dx = 0; dx < r; ++dx) {
                    const int64_t ic = c * r * r + dy * r + dx;
                    for (int64_t y = 0; y < xs.h; ++y)
                        for (int64_t xo = 0; xo < xs.w; ++xo)
                            out.at(b, c, y * r + dy, xo * r + dx) = x.at(b, ic, y, xo);
                }
    detail::attach<T>(out, "pixel_shuffle", {x},
                      [r, xs, os](TapeNode<T>& node, const std::vector<T>& g) {
                          Tensor<T>& xin = node.inputs[0];
                          if (!xin.requires_grad) return;
                          xin.ensure_grad();
                          auto& gx = *xin.grad;
                          for (int64_t b = 0; b < xs.n; ++b)
                              for (int64_t c = 0; c < os.c; ++c)
                                  for (int64_t dy = 0; dy < r; ++dy)
                                      for (int64_t dx = 0; dx < r; ++dx) {
                                          const int64_t ic = c * r * r + dy * r + dx;
                                          for (int64_t y = 0; y < xs.h; ++y)
                                              for (int64_t xo = 0; xo < xs.w; ++xo) {
                                                  const int64_t gi =
                                                      ((b * os.c + c) * os.h + y * r + dy) * os.w +
                                                      xo * r + dx;
                                                  const int64_t xi =
                                                      ((b * xs.c + ic) * xs.h + y) * xs.w + xo;
                                                  gx[xi] += g[gi];
                                              }
                                      }
                      });
    return out;
}

// 2x2 stride-2 max pooling (downsampler ablation variant); requires even
// spatial dims. First-index tie-break, gradient routed to the argmax.
template <class T>
Tensor<T> maxpool2x2(const Tensor<T>& x) {
    const Shape4 xs = x.shape;
    check_shape(xs.h % 2 == 0 && xs.w % 2 == 0, "maxpool2x2: spatial dims must be even");
    const Shape4 os{xs.n, xs.c, xs.h / 2, xs.w / 2};
    Tensor<T> out = zeros<T>(os);
    auto argmax = std::make_shared<std::vector<int64_t>>(os.numel());
    for (int64_t bc = 0; bc < xs.n * xs.c; ++bc) {
        const T* xp = x.ptr() + bc * xs.h * xs.w;
        T* op = out.ptr() + bc * os.h * os.w;
        int64_t* am = argmax->data() + bc * os.h * os.w;
        for (int64_t y = 0; y < os.h; ++y)
            for (int64_t xo = 0; xo < os.w; ++xo) {
                T best = -std::numeric_limits<T>::infinity();
                int64_t bi = -1;
                for (int64_t dy = 0; dy < 2; ++dy)
                    for (int64_t dx = 0; dx < 2; ++dx) {
                        const int64_t idx = (2 * y + dy) * xs.w + 2 * xo + dx;
                        if (xp[idx] > best) {
                            best = xp[idx];
                            bi = idx;
                        }
                    }
                op[y * os.w + xo] = best;
                am[y * os.w + xo] = bi;
            }
    }
    detail::attach<T>(out, "maxpool2x2", {x},
                      [argmax, xs, os](TapeNode<T>& node, const std::vector<T>& g) {
                          Tensor<T>& xin = node.inputs[0];
                          if (!xin.requires_grad) return;
                          xin.ensure_grad();
                          T* gx = xin.grad->data();
                          const int64_t ohw = os.h * os.w;
                          for (int64_t bc = 0; bc < xs.n * xs.c; ++bc)
                              for (int64_t i = 0; i < ohw; ++i)
                                  gx[bc * xs.h * xs.w + (*argmax)[bc * ohw + i]] += g[bc * ohw + i];
                      });
    return out;
}

// 2x2 stride-2 average pooling (downsampler ablation variant).
template <class T>
Tensor<T> avgpool2x2(const Tensor<T>& x) {
    const Shape4 xs = x.shape;
    check_shape(xs.h % 2 == 0 && xs.w % 2 == 0, "avgpool2x2: spatial dims must be even");
    const Shape4 os{xs.n, xs.c, xs.h / 2, xs.w / 2};
    Tensor<T> out = zeros<T>(os);
    for (int64_t bc = 0; bc < xs.n * xs.c; ++bc) {
        const T* xp = x.ptr() + bc * xs.h * xs.w;
        T* op = out.ptr() + bc * os.h * os.w;
        for (int64_t y = 0; y < os.h; ++y)
            for (int64_t xo = 0; xo < os.w; ++xo)
                op[y * os.w + xo] = (xp[(2 * y) * xs.w + 2 * xo] + xp[(2 * y) * xs.w + 2 * xo + 1] +
                                     xp[(2 * y + 1) * xs.w + 2 * xo] +
                                     xp[(2 * y + 1) * xs.w + 2 * xo + 1]) *
                                    T(0.25);
    }
    detail::attach<T>(out, "avgpool2x2", {x},
                      [xs, os](TapeNode<T>& node, const std::vector<T>& g) {
                          Tensor<T>& xin = node.inputs[0];
                          if (!xin.requires_grad) return;
                          xin.ensure_grad();
                          T* gx = xin.grad->data();
                          const int64_t ohw = os.h * os.w;
                          for (int64_t bc = 0; bc < xs.n * xs.c; ++bc)
                              for (int64_t y = 0; y < os.h; ++y)
                                  for (int64_t xo = 0; xo < os.w; ++xo) {
                                      const T gv = g[bc * ohw + y * os.w + xo] * T(0.25);
                                      T* base = gx + bc * xs.h * xs.w;
                                      base[(2 * y) * xs.w + 2 * xo] += gv;
                                      base[(2 * y) * xs.w + 2 * xo + 1] += gv;
                                      base[(2 * y + 1) * xs.w + 2 * xo] += gv;
                                      base[(2 * y + 1) * xs.w + 2 * xo + 1] += gv;
                                  }
                      });
    return out;
}

// max(x, 0); the subgradient at 0 is 0.
template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out = zeros<T>(x.shape);
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) (*out.data)[i] = std::max((*x.data)[i], T(0));
    detail::attach<T>(out, "relu", {x}, [](TapeNode<T>& node, const std::vector<T>& g) {
        Tensor<T>& xin = node.inputs[0];
        if (!xin.requires_grad) return;
        xin.ensure_grad();
        const auto& xv = *xin.data;
        auto& gx = *xin.grad;
        for (size_t i = 0; i < xv.size(); ++i)
            if (xv[i] > T(0)) gx[i] += g[i];
    });
    return out;
}

}  // namespace hpun
