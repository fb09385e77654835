#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "hpun/common.hpp"
#include "hpun/tensor.hpp"

namespace hpun {

enum class Colorspace { RGB, YCbCr, Gray };

// Interleaved HWC raster with doubles normalized to [0,1].
struct ImageBuf {
    int64_t width = 0, height = 0, channels = 0;
    Colorspace colorspace = Colorspace::RGB;
    std::vector<double> pix;  // size = height*width*channels, row-major HWC

    ImageBuf() = default;
    ImageBuf(int64_t w, int64_t h, int64_t c, Colorspace cs = Colorspace::RGB)
        : width(w), height(h), channels(c), colorspace(cs),
          pix(static_cast<size_t>(w * h * c), 0.0) {
        if (w <= 0 || h <= 0 || c <= 0) throw ShapeError("ImageBuf: non-positive dims");
    }

    double& at(int64_t y, int64_t x, int64_t c) {
        return pix[static_cast<size_t>((y * width + x) * channels + c)];
    }
    double at(int64_t y, int64_t x, int64_t c) const {
        return pix[static_cast<size_t>((y * width + x) * channels + c)];
    }

    void clamp01() {
        for (auto& v : pix) v = std::min(1.0, std::max(0.0, v));
    }
    // Round to the nearest 8-bit code, back to [0,1]. Used before metrics so
    // comparisons match what a PNG round trip would yield.
    void quantize8() {
        for (auto& v : pix) {
            double q = std::round(std::min(1.0, std::max(0.0, v)) * 255.0);
            v = q / 255.0;
        }
    }
};

// BT.601 studio-swing luminance (rgb2ycbcr convention) for inputs in [0,1].
inline ImageBuf rgb_to_y(const ImageBuf& img) {
    if (img.channels != 3) throw ShapeError("rgb_to_y: expected 3 channels");
    ImageBuf y(img.width, img.height, 1, Colorspace::YCbCr);
    for (int64_t i = 0; i < img.height; ++i)
        for (int64_t j = 0; j < img.width; ++j) {
            double r = img.at(i, j, 0), g = img.at(i, j, 1), b = img.at(i, j, 2);
            y.at(i, j, 0) = (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0;
        }
    return y;
}

// Image <-> tensor bridges (single-image batch, CHW planes).
template <class T>
Tensor<T> image_to_tensor(const ImageBuf& img) {
    auto t = zeros<T>({1, img.channels, img.height, img.width});
    auto& d = *t.data;
    for (int64_t c = 0; c < img.channels; ++c)
        for (int64_t i = 0; i < img.height; ++i)
            for (int64_t j = 0; j < img.width; ++j)
                d[static_cast<size_t>((c * img.height + i) * img.width + j)] =
                    static_cast<T>(img.at(i, j, c));
    return t;
}

template <class T>
ImageBuf tensor_to_image(const Tensor<T>& t, Colorspace cs = Colorspace::RGB) {
    if (t.shape.n != 1) throw ShapeError("tensor_to_image: batch must be 1");
    ImageBuf img(t.shape.w, t.shape.h, t.shape.c, cs);
    const auto& d = *t.data;
    for (int64_t c = 0; c < t.shape.c; ++c)
        for (int64_t i = 0; i < t.shape.h; ++i)
            for (int64_t j = 0; j < t.shape.w; ++j)
                img.at(i, j, c) = static_cast<double>(
                    d[static_cast<size_t>((c * t.shape.h + i) * t.shape.w + j)]);
    return img;
}

// ---------------------------------------------------------------------------
// Dihedral group D4 on BCHW data. Transform index k in [0,8):
//   k = f*4 + r  ->  horizontal flip if f, then r counter-clockwise
//   90-degree rotations. Pure data ops (no autodiff); used for augmentation
//   and self-ensemble.

// Transformed spatial dims: odd rotations swap H and W.
inline void dihedral_dims(int k, int64_t h, int64_t w, int64_t& oh, int64_t& ow) {
    if (k % 2 == 1) { oh = w; ow = h; } else { oh = h; ow = w; }
}

template <class T>
Tensor<T> dihedral_apply(const Tensor<T>& x, int k) {
    if (k < 0 || k >= 8) throw ShapeError("dihedral_apply: k out of range");
    const int64_t n = x.shape.n, c = x.shape.c, h = x.shape.h, w = x.shape.w;
    int64_t oh, ow;
    dihedral_dims(k, h, w, oh, ow);
    auto out = zeros<T>({n, c, oh, ow});
    const auto& xd = *x.data;
    auto& od = *out.data;
    const bool flip = k >= 4;
    const int r = k % 4;
    for (int64_t b = 0; b < n; ++b)
        for (int64_t ch = 0; ch < c; ++ch) {
            const size_t xoff = static_cast<size_t>((b * c + ch) * h * w);
            const size_t ooff = static_cast<size_t>((b * c + ch) * oh * ow);
            for (int64_t y = 0; y < oh; ++y)
                for (int64_t xx = 0; xx < ow; ++xx) {
                    // Pre-rotation (post-flip) coords (py,px) in an h x w frame.
                    int64_t py, px;
                    switch (r) {
                        case 0: py = y;          px = xx;         break;
                        case 1: py = xx;         px = w - 1 - y;  break;
                        case 2: py = h - 1 - y;  px = w - 1 - xx; break;
                        default: py = h - 1 - xx; px = y;         break;
                    }
                    const int64_t sx = flip ? (w - 1 - px) : px;
                    od[ooff + static_cast<size_t>(y * ow + xx)] =
                        xd[xoff + static_cast<size_t>(py * w + sx)];
                }
        }
    return out;
}

// Inverse transform: dihedral_invert(dihedral_apply(x, k), k) == x.
template <class T>
Tensor<T> dihedral_invert(const Tensor<T>& y, int k) {
    if (k < 0 || k >= 8) throw ShapeError("dihedral_invert: k out of range");
    auto x = dihedral_apply(y, (4 - k % 4) % 4);  // undo rotation
    if (k >= 4) x = dihedral_apply(x, 4);         // undo flip (self-inverse)
    return x;
}

}  // namespace hpun
