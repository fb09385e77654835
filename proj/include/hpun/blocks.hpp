#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hpun/ops.hpp"

namespace hpun {

// Grouping of the 4C -> C convolution inside the pixel-unshuffled
// downsampler. PER_CHANNEL maps the 4 sub-channels of each original channel
// to one output channel (groups = C); FOUR_GROUPS uses 4 groups over 4C -> C.
enum class PudGroupMode { PER_CHANNEL, FOUR_GROUPS };

// Downsampler variants compared in the ablations; PIXEL_UNSHUFFLE is the
// production path.
enum class PudDownsampler { PIXEL_UNSHUFFLE, STRIDED_DW, POOL2 };
enum class PudUpsampler { BILINEAR, NEAREST };
enum class PoolKind { MAX, AVG };

struct BlockParams {
    int64_t channels = 64;
    int64_t dsc_kernel = 3;
    int64_t pud_group_kernel = 3;
    PudGroupMode pud_group_mode = PudGroupMode::PER_CHANNEL;
    int64_t conv_kernel = 3;  // HPUB standard conv
    int64_t pool_kernel = 3;  // stride-1 pool inside PUD
    bool bias = true;
    PudDownsampler pud_down = PudDownsampler::PIXEL_UNSHUFFLE;
    PudUpsampler pud_up = PudUpsampler::BILINEAR;
    PoolKind pool_kind = PoolKind::MAX;

    void validate() const {
        check_shape(channels >= 4, "BlockParams: channels must be >= 4");
        check_shape(dsc_kernel % 2 == 1 && pud_group_kernel % 2 == 1 && conv_kernel % 2 == 1 &&
                        pool_kernel % 2 == 1,
                    "BlockParams: all kernels must be odd");
    }
};

// One named conv layer in the cost report: `spatial_scale` is the factor on
// the block input's (H, W) at which the conv runs (0.5 inside the PUD).
struct ConvEntry {
    std::string name;
    ConvSpec spec;
    double spatial_scale = 1.0;
};

template <class T>
struct ConvLayer {
    ConvSpec spec;
    Tensor<T> w, b;

    // Variance-preserving init: unit-variance output given the variance the
    // layer's input actually has at init time (2 after a residual add).
    void init(Rng& rng, double input_var = 1.0) {
        spec.validate();
        w = randn<T>(spec.weight_shape(), rng);
        const double fan_in =
            static_cast<double>(spec.in_channels / spec.groups) * spec.kernel_h * spec.kernel_w;
        const T std_dev = static_cast<T>(std::sqrt(1.0 / (fan_in * input_var)));
        for (auto& v : *w.data) v *= std_dev;
        set_requires_grad(w);
        if (spec.has_bias) {
            b = zeros<T>({1, 1, 1, spec.out_channels});
            set_requires_grad(b);
        }
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return conv2d(x, spec, w, spec.has_bias ? &b : nullptr);
    }

    void collect(std::vector<Tensor<T>*>& ps) {
        ps.push_back(&w);
        if (spec.has_bias) ps.push_back(&b);
    }
    void collect_named(const std::string& name,
                       std::vector<std::pair<std::string, Tensor<T>*>>& ps) {
        ps.emplace_back(name + ".w", &w);
        if (spec.has_bias) ps.emplace_back(name + ".b", &b);
    }
};

inline ConvSpec make_conv(int64_t cin, int64_t cout, int64_t k, int64_t groups, bool bias,
                          int64_t stride = 1) {
    ConvSpec s;
    s.in_channels = cin;
    s.out_channels = cout;
    s.kernel_h = s.kernel_w = k;
    s.stride = stride;
    s.padding = (k - 1) / 2;
    s.groups = groups;
    s.has_bias = bias;
    return s;
}

// Depthwise separable convolution with the self-residual connection: the
// depthwise input is added to the depthwise output before the pointwise
// layer. forward_plain gives the un-augmented DSC for ablations.
template <class T>
struct SrdscLayer {
    ConvLayer<T> depthwise, pointwise;

    void init(const BlockParams& p, Rng& rng) {
        const int64_t c = p.channels;
        depthwise.spec = make_conv(c, c, p.dsc_kernel, c, p.bias);
        pointwise.spec = make_conv(c, c, 1, 1, p.bias);
        depthwise.init(rng);
        pointwise.init(rng, 2.0);  // fed by D(F) + F, variance ~2 at init
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return pointwise.forward(add(depthwise.forward(x), x));
    }
    Tensor<T> forward_plain(const Tensor<T>& x) const {
        return pointwise.forward(depthwise.forward(x));
    }

    void collect(std::vector<Tensor<T>*>& ps) {
        depthwise.collect(ps);
        pointwise.collect(ps);
    }
    void collect_named(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor<T>*>>& ps) {
        depthwise.collect_named(prefix + ".dw", ps);
        pointwise.collect_named(prefix + ".pw", ps);
    }
    static void entries(const BlockParams& p, const std::string& prefix,
                        std::vector<ConvEntry>& out) {
        const int64_t c = p.channels;
        out.push_back({prefix + ".dw", make_conv(c, c, p.dsc_kernel, c, p.bias), 1.0});
        out.push_back({prefix + ".pw", make_conv(c, c, 1, 1, p.bias), 1.0});
    }
};

// Pixel-unshuffled downsampler: pixel_unshuffle(2) -> stride-1 pool ->
// grouped conv 4C -> C -> 2x upsample, residual with the original input,
// then a pointwise conv. The downsample/upsample stages are configurable
// for the ablation reruns.
template <class T>
struct PudLayer {
    BlockParams params;
    ConvLayer<T> group_conv;  // PIXEL_UNSHUFFLE mode
    ConvLayer<T> strided_dw;  // STRIDED_DW mode
    ConvLayer<T> pointwise;

    void init(const BlockParams& p, Rng& rng) {
        params = p;
        const int64_t c = p.channels;
        if (p.pud_down == PudDownsampler::PIXEL_UNSHUFFLE) {
            group_conv.spec = grouped_spec(p);
            group_conv.init(rng);
        } else if (p.pud_down == PudDownsampler::STRIDED_DW) {
            strided_dw.spec = make_conv(c, c, 3, c, p.bias, 2);
            strided_dw.init(rng);
        }
        pointwise.spec = make_conv(c, c, 1, 1, p.bias);
        pointwise.init(rng, 2.0);  // fed by U(F) + L, variance ~2 at init
    }

    static ConvSpec grouped_spec(const BlockParams& p) {
        const int64_t c = p.channels;
        const int64_t groups = p.pud_group_mode == PudGroupMode::PER_CHANNEL ? c : 4;
        return make_conv(4 * c, c, p.pud_group_kernel, groups, p.bias);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        check_shape(x.shape.h % 2 == 0 && x.shape.w % 2 == 0,
                    "pud: spatial dims must be even, got " + x.shape.str());
        Tensor<T> low;
        switch (params.pud_down) {
            case PudDownsampler::PIXEL_UNSHUFFLE: {
                Tensor<T> sub = pixel_unshuffle(x, 2);
                Tensor<T> pooled = params.pool_kind == PoolKind::MAX
                                       ? maxpool_s1(sub, params.pool_kernel)
                                       : avgpool_s1(sub, params.pool_kernel);
                low = group_conv.forward(pooled);
                break;
            }
            case PudDownsampler::STRIDED_DW:
                low = strided_dw.forward(x);
                break;
            case PudDownsampler::POOL2:
                low = params.pool_kind == PoolKind::MAX ? maxpool2x2(x) : avgpool2x2(x);
                break;
        }
        Tensor<T> up = params.pud_up == PudUpsampler::BILINEAR ? bilinear_up2(low)
                                                               : nearest_up2(low);
        return pointwise.forward(add(up, x));
    }

    void collect(std::vector<Tensor<T>*>& ps) {
        if (params.pud_down == PudDownsampler::PIXEL_UNSHUFFLE) group_conv.collect(ps);
        if (params.pud_down == PudDownsampler::STRIDED_DW) strided_dw.collect(ps);
        pointwise.collect(ps);
    }
    void collect_named(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor<T>*>>& ps) {
        if (params.pud_down == PudDownsampler::PIXEL_UNSHUFFLE)
            group_conv.collect_named(prefix + ".group", ps);
        if (params.pud_down == PudDownsampler::STRIDED_DW)
            strided_dw.collect_named(prefix + ".sdw", ps);
        pointwise.collect_named(prefix + ".pw", ps);
    }
    static void entries(const BlockParams& p, const std::string& prefix,
                        std::vector<ConvEntry>& out) {
        const int64_t c = p.channels;
        if (p.pud_down == PudDownsampler::PIXEL_UNSHUFFLE)
            out.push_back({prefix + ".group", grouped_spec(p), 0.5});
        if (p.pud_down == PudDownsampler::STRIDED_DW)
            out.push_back({prefix + ".sdw", make_conv(c, c, 3, c, p.bias, 2), 0.5});
        out.push_back({prefix + ".pw", make_conv(c, c, 1, 1, p.bias), 1.0});
    }
};

// Pixel-Unshuffled Block: a Self-Residual DSC applied to relu(PUD(x)), with
// the activated PUD output computed once and reused, plus the outer residual.
template <class T>
struct PubLayer {
    PudLayer<T> pud;
    SrdscLayer<T> srdsc;

    void init(const BlockParams& p, Rng& rng) {
        pud.init(p, rng);
        srdsc.init(p, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> a = relu(pud.forward(x));
        return add(srdsc.forward(a), x);
    }

    void collect(std::vector<Tensor<T>*>& ps) {
        pud.collect(ps);
        srdsc.collect(ps);
    }
    void collect_named(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor<T>*>>& ps) {
        pud.collect_named(prefix + ".pud", ps);
        srdsc.collect_named(prefix + ".srdsc", ps);
    }
    static void entries(const BlockParams& p, const std::string& prefix,
                        std::vector<ConvEntry>& out) {
        PudLayer<T>::entries(p, prefix + ".pud", out);
        SrdscLayer<T>::entries(p, prefix + ".srdsc", out);
    }
};

// Hybrid PUB: one standard residual conv unit (conv3x3 -> relu -> conv3x3,
// plus skip) followed by one PUB.
template <class T>
struct HpubLayer {
    ConvLayer<T> conv1, conv2;
    PubLayer<T> pub;

    void init(const BlockParams& p, Rng& rng) {
        const int64_t c = p.channels;
        conv1.spec = make_conv(c, c, p.conv_kernel, 1, p.bias);
        conv2.spec = make_conv(c, c, p.conv_kernel, 1, p.bias);
        conv1.init(rng);
        conv2.init(rng);
        pub.init(p, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> r = add(conv2.forward(relu(conv1.forward(x))), x);
        return pub.forward(r);
    }

    void collect(std::vector<Tensor<T>*>& ps) {
        conv1.collect(ps);
        conv2.collect(ps);
        pub.collect(ps);
    }
    void collect_named(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor<T>*>>& ps) {
        conv1.collect_named(prefix + ".conv1", ps);
        conv2.collect_named(prefix + ".conv2", ps);
        pub.collect_named(prefix + ".pub", ps);
    }
    static void entries(const BlockParams& p, const std::string& prefix,
                        std::vector<ConvEntry>& out) {
        const int64_t c = p.channels;
        out.push_back({prefix + ".conv1", make_conv(c, c, p.conv_kernel, 1, p.bias), 1.0});
        out.push_back({prefix + ".conv2", make_conv(c, c, p.conv_kernel, 1, p.bias), 1.0});
        PubLayer<T>::entries(p, prefix + ".pub", out);
    }
};

}  // namespace hpun
