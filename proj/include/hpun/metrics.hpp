#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "hpun/common.hpp"
#include "hpun/image.hpp"
#include "hpun/tensor.hpp"

namespace hpun {

namespace detail {

inline void check_same_dims(const ImageBuf& a, const ImageBuf& b, const char* who) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels)
        throw ShapeError(std::string(who) + ": image dims mismatch");
}

inline void check_crop(const ImageBuf& a, int64_t crop, const char* who) {
    if (crop < 0) throw ShapeError(std::string(who) + ": negative border crop");
    if (a.width - 2 * crop <= 0 || a.height - 2 * crop <= 0)
        throw ShapeError(std::string(who) + ": border crop larger than image");
}

}  // namespace detail

// 10*log10(1 / MSE) for [0,1] data after removing `border_crop` pixels from
// each border. Identical inputs return +infinity.
inline double psnr(const ImageBuf& a, const ImageBuf& b, int64_t border_crop = 0) {
    detail::check_same_dims(a, b, "psnr");
    detail::check_crop(a, border_crop, "psnr");
    double mse = 0.0;
    int64_t count = 0;
    for (int64_t y = border_crop; y < a.height - border_crop; ++y)
        for (int64_t x = border_crop; x < a.width - border_crop; ++x)
            for (int64_t c = 0; c < a.channels; ++c) {
                const double d = a.at(y, x, c) - b.at(y, x, c);
                mse += d * d;
                ++count;
            }
    mse /= static_cast<double>(count);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

// Single-channel SSIM: Gaussian window 11x11 sigma 1.5, K1=0.01, K2=0.03,
// dynamic range 1.0, mean over valid (fully interior) windows.
inline double ssim(const ImageBuf& a, const ImageBuf& b, int64_t border_crop = 0) {
    detail::check_same_dims(a, b, "ssim");
    detail::check_crop(a, border_crop, "ssim");
    if (a.channels != 1) throw ShapeError("ssim: expected single channel");
    constexpr int64_t win = 11;
    constexpr double sigma = 1.5;
    const int64_t h = a.height - 2 * border_crop, w = a.width - 2 * border_crop;
    if (h < win || w < win) throw ShapeError("ssim: image smaller than window");

    double g[win][win];
    double gsum = 0.0;
    for (int64_t i = 0; i < win; ++i)
        for (int64_t j = 0; j < win; ++j) {
            const double dy = static_cast<double>(i - win / 2);
            const double dx = static_cast<double>(j - win / 2);
            g[i][j] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            gsum += g[i][j];
        }
    for (int64_t i = 0; i < win; ++i)
        for (int64_t j = 0; j < win; ++j) g[i][j] /= gsum;

    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    int64_t count = 0;
    for (int64_t y = 0; y + win <= h; ++y)
        for (int64_t x = 0; x + win <= w; ++x) {
            double mua = 0, mub = 0, saa = 0, sbb = 0, sab = 0;
            for (int64_t i = 0; i < win; ++i)
                for (int64_t j = 0; j < win; ++j) {
                    const double va = a.at(border_crop + y + i, border_crop + x + j, 0);
                    const double vb = b.at(border_crop + y + i, border_crop + x + j, 0);
                    mua += g[i][j] * va;
                    mub += g[i][j] * vb;
                    saa += g[i][j] * va * va;
                    sbb += g[i][j] * vb * vb;
                    sab += g[i][j] * va * vb;
                }
            saa -= mua * mua;
            sbb -= mub * mub;
            sab -= mua * mub;
            total += ((2 * mua * mub + c1) * (2 * sab + c2)) /
                     ((mua * mua + mub * mub + c1) * (saa + sbb + c2));
            ++count;
        }
    return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Normalized mean error between shallow (head) and deep (body) features:
// scalar = ||F_S - F_D||_F / N with N the total element count, plus a
// per-spatial-position channel-L2 error map and its binarization.

struct NMEReport {
    double nme_scalar = 0.0;
    int64_t map_h = 0, map_w = 0;
    std::vector<double> error_map;      // map_h * map_w, row-major
    std::vector<uint8_t> binarized;     // 0/1, same layout
    double threshold = 0.0;
};

// threshold < 0 selects the default rule: the error map's mean.
template <class T>
NMEReport nme(const Tensor<T>& shallow, const Tensor<T>& deep, double threshold = -1.0) {
    if (!(shallow.shape == deep.shape)) throw ShapeError("nme: feature dims mismatch");
    const int64_t n = shallow.shape.n, c = shallow.shape.c;
    const int64_t h = shallow.shape.h, w = shallow.shape.w;
    if (n != 1) throw ShapeError("nme: batch must be 1");
    NMEReport rep;
    rep.map_h = h;
    rep.map_w = w;
    rep.error_map.assign(static_cast<size_t>(h * w), 0.0);
    const auto& sd = *shallow.data;
    const auto& dd = *deep.data;
    double fro2 = 0.0;
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                const size_t i = static_cast<size_t>((ch * h + y) * w + x);
                const double d = static_cast<double>(sd[i]) - static_cast<double>(dd[i]);
                fro2 += d * d;
                rep.error_map[static_cast<size_t>(y * w + x)] += d * d;
            }
    for (auto& v : rep.error_map) v = std::sqrt(v);
    rep.nme_scalar = std::sqrt(fro2) / static_cast<double>(shallow.shape.numel());

    if (threshold < 0.0) {
        double mean = 0.0;
        for (double v : rep.error_map) mean += v;
        threshold = mean / static_cast<double>(rep.error_map.size());
    }
    rep.threshold = threshold;
    rep.binarized.resize(rep.error_map.size());
    for (size_t i = 0; i < rep.error_map.size(); ++i)
        rep.binarized[i] = rep.error_map[i] > threshold ? 1 : 0;
    return rep;
}

// ---------------------------------------------------------------------------
// Geometric self-ensemble: run the model on the 8 dihedral transforms of the
// input, invert each output, and average.

template <class T>
Tensor<T> self_ensemble(const std::function<Tensor<T>(const Tensor<T>&)>& forward,
                        const Tensor<T>& lr) {
    Tensor<T> acc;
    for (int k = 0; k < 8; ++k) {
        auto sr = dihedral_invert(forward(dihedral_apply(lr, k)), k);
        if (k == 0) {
            acc = sr;
        } else {
            check_shape(sr.shape == acc.shape, "self_ensemble: inconsistent output dims");
            auto& ad = *acc.data;
            const auto& sd = *sr.data;
            for (size_t i = 0; i < ad.size(); ++i) ad[i] += sd[i];
        }
    }
    auto& ad = *acc.data;
    for (auto& v : ad) v /= static_cast<T>(8);
    return acc;
}

}  // namespace hpun
