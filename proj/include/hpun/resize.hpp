#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "hpun/common.hpp"
#include "hpun/image.hpp"

namespace hpun {

namespace detail {

// Keys cubic convolution kernel with a = -0.5.
inline double cubic(double x) {
    x = std::abs(x);
    if (x <= 1.0) return 1.5 * x * x * x - 2.5 * x * x + 1.0;
    if (x < 2.0) return -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0;
    return 0.0;
}

// Symmetric (reflect-including-edge) index extension onto [0, n).
inline int64_t symm_index(int64_t i, int64_t n) {
    const int64_t period = 2 * n;
    int64_t m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - 1 - m;
}

// Per-output-index taps for 1-D cubic resampling, imresize convention:
// source position u = (x + 0.5)/scale - 0.5; when downscaling with
// antialias the kernel is widened to scale*cubic(scale*x). Out-of-range
// source indices fold back symmetrically; weights are normalized to sum 1.
struct Taps {
    std::vector<std::vector<std::pair<int64_t, double>>> at;  // (src index, weight)
};

inline Taps build_taps(int64_t in_len, int64_t out_len, double scale, bool antialias) {
    const double kscale = (scale < 1.0 && antialias) ? scale : 1.0;
    const double half = 2.0 / kscale;
    const int64_t ntaps = static_cast<int64_t>(std::ceil(2.0 * half)) + 2;
    Taps taps;
    taps.at.resize(static_cast<size_t>(out_len));
    for (int64_t x = 0; x < out_len; ++x) {
        const double u = (static_cast<double>(x) + 0.5) / scale - 0.5;
        const int64_t left = static_cast<int64_t>(std::floor(u - half)) + 1;
        auto& row = taps.at[static_cast<size_t>(x)];
        double wsum = 0.0;
        for (int64_t t = 0; t < ntaps; ++t) {
            const int64_t idx = left + t;
            const double w = kscale * cubic(kscale * (u - static_cast<double>(idx)));
            if (w == 0.0) continue;
            row.emplace_back(symm_index(idx, in_len), w);
            wsum += w;
        }
        for (auto& [i, w] : row) w /= wsum;
    }
    return taps;
}

}  // namespace detail

// Matlab-convention bicubic resize (a = -0.5, antialias kernel widening on
// downscale, symmetric edge padding, normalized weights). Output dims are
// round(dim * scale). Bit-exact Matlab equality is not claimed; the kernel
// summation itself is the documented contract.
inline ImageBuf bicubic_resize(const ImageBuf& img, double scale, bool antialias = true) {
    if (scale <= 0.0) throw ShapeError("bicubic_resize: scale must be positive");
    const int64_t ow = static_cast<int64_t>(std::llround(static_cast<double>(img.width) * scale));
    const int64_t oh = static_cast<int64_t>(std::llround(static_cast<double>(img.height) * scale));
    if (ow <= 0 || oh <= 0) throw ShapeError("bicubic_resize: degenerate output dims");

    // Horizontal pass, then vertical.
    const auto tx = detail::build_taps(img.width, ow, scale, antialias);
    ImageBuf mid(ow, img.height, img.channels, img.colorspace);
    for (int64_t y = 0; y < img.height; ++y)
        for (int64_t x = 0; x < ow; ++x)
            for (int64_t c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (const auto& [i, w] : tx.at[static_cast<size_t>(x)])
                    acc += w * img.at(y, i, c);
                mid.at(y, x, c) = acc;
            }

    const auto ty = detail::build_taps(img.height, oh, scale, antialias);
    ImageBuf out(ow, oh, img.channels, img.colorspace);
    for (int64_t y = 0; y < oh; ++y)
        for (int64_t x = 0; x < ow; ++x)
            for (int64_t c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (const auto& [i, w] : ty.at[static_cast<size_t>(y)])
                    acc += w * mid.at(i, x, c);
                out.at(y, x, c) = acc;
            }
    return out;
}

}  // namespace hpun
