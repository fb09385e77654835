#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hpun/blocks.hpp"
#include "hpun/serialize.hpp"

namespace hpun {

enum class Variant { S, M, L, Custom };

// Body block family. HPUB is the production network; the others exist for
// the toy ablation reruns.
enum class BodyKind { HPUB, PUB, SRDSC, DSC, PW_ONLY, PUD_ONLY };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::S: return "S";
        case Variant::M: return "M";
        case Variant::L: return "L";
        default: return "custom";
    }
}
inline std::string to_string(BodyKind k) {
    switch (k) {
        case BodyKind::HPUB: return "hpub";
        case BodyKind::PUB: return "pub";
        case BodyKind::SRDSC: return "srdsc";
        case BodyKind::DSC: return "dsc";
        case BodyKind::PW_ONLY: return "pw";
        default: return "pud";
    }
}

struct ModelSpec {
    Variant variant = Variant::Custom;
    int64_t channels = 64;
    int64_t n_hpub = 8;       // count of main body blocks
    int64_t n_pub_extra = 0;  // extra PUBs appended to the body (variant S)
    int64_t scale = 4;
    BlockParams block;
    std::array<double, 3> mean_rgb = {0.4488, 0.4371, 0.4040};  // DIV2K RGB means
    bool mean_shift = true;
    BodyKind body_kind = BodyKind::HPUB;

    void validate() const {
        check_shape(scale == 2 || scale == 3 || scale == 4, "ModelSpec: scale must be 2, 3 or 4");
        check_shape(n_hpub >= 1, "ModelSpec: need at least one body block");
        check_shape(n_pub_extra >= 0, "ModelSpec: negative extra PUB count");
        check_shape(channels == block.channels, "ModelSpec: channels disagree with block params");
        if (variant == Variant::M)
            check_shape(n_hpub == 8 && n_pub_extra == 0, "variant M requires 8 HPUBs");
        if (variant == Variant::L)
            check_shape(n_hpub == 12 && n_pub_extra == 0, "variant L requires 12 HPUBs");
        if (variant == Variant::S)
            check_shape(n_hpub == 7 && n_pub_extra == 2,
                        "variant S requires 7 HPUBs plus 2 PUBs");
        block.validate();
    }

    // Frozen presets; channel widths come from the Table 2 reconciliation
    // sweep (see docs/RECONCILIATION.md).
    static ModelSpec preset(const std::string& name, int64_t scale = 4) {
        ModelSpec s;
        s.scale = scale;
        if (name == "hpun-s") {
            s.variant = Variant::S;
            s.channels = 32;
            s.n_hpub = 7;
            s.n_pub_extra = 2;
            s.block.pud_group_mode = PudGroupMode::FOUR_GROUPS;
        } else if (name == "hpun-m") {
            s.variant = Variant::M;
            s.channels = 48;
            s.n_hpub = 8;
            s.block.pud_group_mode = PudGroupMode::FOUR_GROUPS;
        } else if (name == "hpun-l") {
            s.variant = Variant::L;
            s.channels = 48;
            s.n_hpub = 12;
            s.block.pud_group_mode = PudGroupMode::FOUR_GROUPS;
        } else if (name == "toy") {
            s.variant = Variant::Custom;
            s.channels = 16;
            s.n_hpub = 2;
            if (scale == 4) s.scale = 2;  // toy default is x2
        } else {
            throw DataError("unknown preset: " + name);
        }
        s.block.channels = s.channels;
        s.validate();
        return s;
    }

    std::string canonical_text() const;
    static ModelSpec from_text(const std::string& text);
};

// ---------------------------------------------------------------------------
// Body blocks

template <class T>
struct BodyBlock {
    virtual ~BodyBlock() = default;
    virtual Tensor<T> forward(const Tensor<T>& x) const = 0;
    virtual void collect(std::vector<Tensor<T>*>& ps) = 0;
    virtual void collect_named(const std::string& prefix,
                               std::vector<std::pair<std::string, Tensor<T>*>>& ps) = 0;
};

template <class T>
struct HpubBody : BodyBlock<T> {
    HpubLayer<T> layer;
    Tensor<T> forward(const Tensor<T>& x) const override { return layer.forward(x); }
    void collect(std::vector<Tensor<T>*>& ps) override { layer.collect(ps); }
    void collect_named(const std::string& p,
                       std::vector<std::pair<std::string, Tensor<T>*>>& ps) override {
        layer.collect_named(p, ps);
    }
};

template <class T>
struct PubBody : BodyBlock<T> {
    PubLayer<T> layer;
    Tensor<T> forward(const Tensor<T>& x) const override { return layer.forward(x); }
    void collect(std::vector<Tensor<T>*>& ps) override { layer.collect(ps); }
    void collect_named(const std::string& p,
                       std::vector<std::pair<std::string, Tensor<T>*>>& ps) override {
        layer.collect_named(p, ps);
    }
};

// Plain two-stage stack f2(relu(f1(x))) where f is a pointwise conv, a plain
// DSC, a self-residual DSC, or a PUD, depending on the ablation kind. No
// outer skip: the only identity paths are the ones the variant itself
// provides (SRDSC's self-residual, PUD's pre-downsample residual), so the
// ablation actually measures them; the model-level global residual remains.
template <class T>
struct ResidualBody : BodyBlock<T> {
    BodyKind kind = BodyKind::SRDSC;
    SrdscLayer<T> dsc1, dsc2;    // SRDSC / DSC kinds
    ConvLayer<T> pw1, pw2;       // PW_ONLY
    PudLayer<T> pud1, pud2;      // PUD_ONLY

    void init(BodyKind k, const BlockParams& p, Rng& rng) {
        kind = k;
        const int64_t c = p.channels;
        switch (kind) {
            case BodyKind::SRDSC:
            case BodyKind::DSC:
                dsc1.init(p, rng);
                dsc2.init(p, rng);
                break;
            case BodyKind::PW_ONLY:
                pw1.spec = make_conv(c, c, 1, 1, p.bias);
                pw2.spec = make_conv(c, c, 1, 1, p.bias);
                pw1.init(rng);
                pw2.init(rng);
                break;
            case BodyKind::PUD_ONLY:
                pud1.init(p, rng);
                pud2.init(p, rng);
                break;
            default:
                throw Error("ResidualBody: unsupported kind");
        }
    }

    Tensor<T> forward(const Tensor<T>& x) const override {
        auto f = [&](const Tensor<T>& v, bool first) {
            switch (kind) {
                case BodyKind::SRDSC: return first ? dsc1.forward(v) : dsc2.forward(v);
                case BodyKind::DSC:
                    return first ? dsc1.forward_plain(v) : dsc2.forward_plain(v);
                case BodyKind::PW_ONLY: return first ? pw1.forward(v) : pw2.forward(v);
                default: return first ? pud1.forward(v) : pud2.forward(v);
            }
        };
        return f(relu(f(x, true)), false);
    }

    void collect(std::vector<Tensor<T>*>& ps) override {
        switch (kind) {
            case BodyKind::SRDSC:
            case BodyKind::DSC:
                dsc1.collect(ps);
                dsc2.collect(ps);
                break;
            case BodyKind::PW_ONLY:
                pw1.collect(ps);
                pw2.collect(ps);
                break;
            default:
                pud1.collect(ps);
                pud2.collect(ps);
        }
    }
    void collect_named(const std::string& p,
                       std::vector<std::pair<std::string, Tensor<T>*>>& ps) override {
        switch (kind) {
            case BodyKind::SRDSC:
            case BodyKind::DSC:
                dsc1.collect_named(p + ".f1", ps);
                dsc2.collect_named(p + ".f2", ps);
                break;
            case BodyKind::PW_ONLY:
                pw1.collect_named(p + ".f1", ps);
                pw2.collect_named(p + ".f2", ps);
                break;
            default:
                pud1.collect_named(p + ".f1", ps);
                pud2.collect_named(p + ".f2", ps);
        }
    }
};

// ---------------------------------------------------------------------------
// Model

// Per-channel constant shift (the DIV2K mean); gradient passes through.
template <class T>
Tensor<T> shift_rgb(const Tensor<T>& x, const std::array<double, 3>& mean, T sign) {
    check_shape(x.shape.c == 3, "shift_rgb: expected a 3-channel tensor");
    Tensor<T> m = zeros_like(x);
    const int64_t hw = x.shape.h * x.shape.w;
    for (int64_t b = 0; b < x.shape.n; ++b)
        for (int64_t c = 0; c < 3; ++c)
            std::fill_n(m.data->begin() + (b * 3 + c) * hw, hw,
                        sign * static_cast<T>(mean[static_cast<size_t>(c)]));
    return add(x, m);
}

template <class T>
struct Model {
    ModelSpec spec;
    ConvLayer<T> head;
    std::vector<std::unique_ptr<BodyBlock<T>>> body;
    ConvLayer<T> tail;

    // Output features of the last forward pass, for the NME diagnostic:
    // shallow = head conv output, deep = body output (after the global
    // residual add by default; `deep_pre_residual` holds the alternative).
    mutable Tensor<T> feat_shallow, feat_deep, feat_deep_pre_residual;

    Tensor<T> forward(const Tensor<T>& lr) const {
        check_shape(lr.shape.c == 3, "forward: expected 3-channel input, got " + lr.shape.str());
        check_shape(lr.shape.h % 2 == 0 && lr.shape.w % 2 == 0,
                    "forward: spatial dims must be even (pad the input), got " + lr.shape.str());
        Tensor<T> x = spec.mean_shift ? shift_rgb<T>(lr, spec.mean_rgb, T(-1)) : lr;
        Tensor<T> h0 = head.forward(x);
        Tensor<T> b = h0;
        for (const auto& blk : body) b = blk->forward(b);
        feat_shallow = h0.detached();
        feat_deep_pre_residual = b.detached();
        b = add(b, h0);  // global residual, EDSR convention
        feat_deep = b.detached();
        Tensor<T> t = tail.forward(b);
        Tensor<T> y = pixel_shuffle(t, spec.scale);
        return spec.mean_shift ? shift_rgb<T>(y, spec.mean_rgb, T(1)) : y;
    }

    std::vector<Tensor<T>*> parameters() {
        std::vector<Tensor<T>*> ps;
        head.collect(ps);
        for (auto& blk : body) blk->collect(ps);
        tail.collect(ps);
        return ps;
    }

    std::vector<std::pair<std::string, Tensor<T>*>> named_parameters() {
        std::vector<std::pair<std::string, Tensor<T>*>> ps;
        head.collect_named("head", ps);
        for (size_t i = 0; i < body.size(); ++i)
            body[i]->collect_named("body." + std::to_string(i), ps);
        tail.collect_named("tail", ps);
        return ps;
    }

    int64_t layer_count() const {
        return static_cast<int64_t>(body.size()) + 2;  // head + body blocks + tail
    }
};

template <class T>
Model<T> build(const ModelSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    Model<T> m;
    m.spec = spec;
    m.head.spec = make_conv(3, spec.channels, 3, 1, spec.block.bias);
    m.head.init(rng);
    for (int64_t i = 0; i < spec.n_hpub; ++i) {
        switch (spec.body_kind) {
            case BodyKind::HPUB: {
                auto blk = std::make_unique<HpubBody<T>>();
                blk->layer.init(spec.block, rng);
                m.body.push_back(std::move(blk));
                break;
            }
            case BodyKind::PUB: {
                auto blk = std::make_unique<PubBody<T>>();
                blk->layer.init(spec.block, rng);
                m.body.push_back(std::move(blk));
                break;
            }
            default: {
                auto blk = std::make_unique<ResidualBody<T>>();
                blk->init(spec.body_kind, spec.block, rng);
                m.body.push_back(std::move(blk));
            }
        }
    }
    // Variant S: the extra PUBs take the last body slots.
    for (int64_t i = 0; i < spec.n_pub_extra; ++i) {
        auto blk = std::make_unique<PubBody<T>>();
        blk->layer.init(spec.block, rng);
        m.body.push_back(std::move(blk));
    }
    m.tail.spec = make_conv(spec.channels, 3 * spec.scale * spec.scale, 3, 1, spec.block.bias);
    m.tail.init(rng);
    return m;
}

// ---------------------------------------------------------------------------
// Counting

struct CostRow {
    std::string name;
    int64_t params = 0;          // including bias
    int64_t params_no_bias = 0;
    double multi_adds = 0.0;     // at the reference resolution
};

struct CostReport {
    std::vector<CostRow> rows;
    int64_t total_params = 0;
    int64_t total_params_no_bias = 0;
    double total_multi_adds = 0.0;
    int64_t hr_width = 0, hr_height = 0;
};

// Closed-form enumeration of every conv layer in the network described by
// `spec`, with the spatial scale (relative to the LR input) it runs at.
inline std::vector<ConvEntry> enumerate_entries(const ModelSpec& spec) {
    std::vector<ConvEntry> es;
    es.push_back({"head", make_conv(3, spec.channels, 3, 1, spec.block.bias), 1.0});
    auto add_residual_pair = [&](const std::string& p, const ConvEntry& proto) {
        ConvEntry e1 = proto, e2 = proto;
        e1.name = p + ".f1" + proto.name;
        e2.name = p + ".f2" + proto.name;
        es.push_back(e1);
        es.push_back(e2);
    };
    for (int64_t i = 0; i < spec.n_hpub; ++i) {
        const std::string p = "body." + std::to_string(i);
        switch (spec.body_kind) {
            case BodyKind::HPUB:
                HpubLayer<float>::entries(spec.block, p, es);
                break;
            case BodyKind::PUB:
                PubLayer<float>::entries(spec.block, p, es);
                break;
            case BodyKind::SRDSC:
            case BodyKind::DSC: {
                std::vector<ConvEntry> sub;
                SrdscLayer<float>::entries(spec.block, "", sub);
                for (auto& e : sub) add_residual_pair(p, e);
                break;
            }
            case BodyKind::PW_ONLY: {
                ConvEntry e{"", make_conv(spec.channels, spec.channels, 1, 1, spec.block.bias),
                            1.0};
                add_residual_pair(p, e);
                break;
            }
            case BodyKind::PUD_ONLY: {
                std::vector<ConvEntry> sub;
                PudLayer<float>::entries(spec.block, "", sub);
                for (auto& e : sub) add_residual_pair(p, e);
                break;
            }
        }
    }
    for (int64_t i = 0; i < spec.n_pub_extra; ++i)
        PubLayer<float>::entries(spec.block, "body." + std::to_string(spec.n_hpub + i), es);
    es.push_back(
        {"tail", make_conv(spec.channels, 3 * spec.scale * spec.scale, 3, 1, spec.block.bias),
         1.0});
    return es;
}

inline int64_t conv_params(const ConvSpec& s, bool with_bias) {
    return s.weight_numel() + (with_bias && s.has_bias ? s.out_channels : 0);
}

// Per-layer parameter and multiply-add counts. Multi-adds follow
// k^2 * (C_in/g) * C_out * H_out * W_out with spatial dims propagated from
// the LR input implied by hr_resolution / scale; bias adds are not counted.
inline CostReport count_costs(const ModelSpec& spec, int64_t hr_width = 1280,
                              int64_t hr_height = 720) {
    spec.validate();
    check_shape(hr_width % spec.scale == 0 && hr_height % spec.scale == 0,
                "count_costs: HR resolution not divisible by scale");
    const double lr_w = static_cast<double>(hr_width / spec.scale);
    const double lr_h = static_cast<double>(hr_height / spec.scale);
    CostReport rep;
    rep.hr_width = hr_width;
    rep.hr_height = hr_height;
    for (const auto& e : enumerate_entries(spec)) {
        CostRow row;
        row.name = e.name;
        row.params = conv_params(e.spec, true);
        row.params_no_bias = conv_params(e.spec, false);
        const double out_h = lr_h * e.spatial_scale;
        const double out_w = lr_w * e.spatial_scale;
        row.multi_adds = static_cast<double>(e.spec.kernel_h) * e.spec.kernel_w *
                         (e.spec.in_channels / e.spec.groups) * e.spec.out_channels * out_h *
                         out_w;
        rep.rows.push_back(row);
        rep.total_params += row.params;
        rep.total_params_no_bias += row.params_no_bias;
        rep.total_multi_adds += row.multi_adds;
    }
    return rep;
}

// Brute-force oracle: total learnable scalars of a built model.
template <class T>
int64_t count_params_bruteforce(Model<T>& m) {
    int64_t total = 0;
    for (auto* t : m.parameters()) total += t->numel();
    return total;
}

// ---------------------------------------------------------------------------
// ModelSpec canonical text + checkpoint I/O

inline std::string ModelSpec::canonical_text() const {
    std::ostringstream ss;
    ss << "variant=" << hpun::to_string(variant) << "\n";
    ss << "channels=" << channels << "\n";
    ss << "n_hpub=" << n_hpub << "\n";
    ss << "n_pub_extra=" << n_pub_extra << "\n";
    ss << "scale=" << scale << "\n";
    ss << "body_kind=" << hpun::to_string(body_kind) << "\n";
    ss << "dsc_kernel=" << block.dsc_kernel << "\n";
    ss << "pud_group_kernel=" << block.pud_group_kernel << "\n";
    ss << "pud_group_mode="
       << (block.pud_group_mode == PudGroupMode::PER_CHANNEL ? "per_channel" : "four_groups")
       << "\n";
    ss << "conv_kernel=" << block.conv_kernel << "\n";
    ss << "pool_kernel=" << block.pool_kernel << "\n";
    ss << "bias=" << (block.bias ? 1 : 0) << "\n";
    ss << "pud_down="
       << (block.pud_down == PudDownsampler::PIXEL_UNSHUFFLE
               ? "pixel_unshuffle"
               : (block.pud_down == PudDownsampler::STRIDED_DW ? "strided_dw" : "pool2"))
       << "\n";
    ss << "pud_up=" << (block.pud_up == PudUpsampler::BILINEAR ? "bilinear" : "nearest") << "\n";
    ss << "pool_kind=" << (block.pool_kind == PoolKind::MAX ? "max" : "avg") << "\n";
    ss << "mean_shift=" << (mean_shift ? 1 : 0) << "\n";
    ss << "mean_rgb=" << mean_rgb[0] << "," << mean_rgb[1] << "," << mean_rgb[2] << "\n";
    return ss.str();
}

inline ModelSpec ModelSpec::from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto need = [&](const std::string& k) {
        auto it = kv.find(k);
        if (it == kv.end()) throw DataError("model spec text: missing key " + k);
        return it->second;
    };
    ModelSpec s;
    const std::string v = need("variant");
    s.variant = v == "S" ? Variant::S : v == "M" ? Variant::M : v == "L" ? Variant::L
                                                                         : Variant::Custom;
    s.channels = std::stoll(need("channels"));
    s.n_hpub = std::stoll(need("n_hpub"));
    s.n_pub_extra = std::stoll(need("n_pub_extra"));
    s.scale = std::stoll(need("scale"));
    const std::string bk = need("body_kind");
    s.body_kind = bk == "hpub"    ? BodyKind::HPUB
                  : bk == "pub"   ? BodyKind::PUB
                  : bk == "srdsc" ? BodyKind::SRDSC
                  : bk == "dsc"   ? BodyKind::DSC
                  : bk == "pw"    ? BodyKind::PW_ONLY
                                  : BodyKind::PUD_ONLY;
    s.block.channels = s.channels;
    s.block.dsc_kernel = std::stoll(need("dsc_kernel"));
    s.block.pud_group_kernel = std::stoll(need("pud_group_kernel"));
    s.block.pud_group_mode = need("pud_group_mode") == "per_channel" ? PudGroupMode::PER_CHANNEL
                                                                     : PudGroupMode::FOUR_GROUPS;
    s.block.conv_kernel = std::stoll(need("conv_kernel"));
    s.block.pool_kernel = std::stoll(need("pool_kernel"));
    s.block.bias = need("bias") == "1";
    const std::string pd = need("pud_down");
    s.block.pud_down = pd == "pixel_unshuffle" ? PudDownsampler::PIXEL_UNSHUFFLE
                       : pd == "strided_dw"    ? PudDownsampler::STRIDED_DW
                                               : PudDownsampler::POOL2;
    s.block.pud_up = need("pud_up") == "bilinear" ? PudUpsampler::BILINEAR : PudUpsampler::NEAREST;
    s.block.pool_kind = need("pool_kind") == "max" ? PoolKind::MAX : PoolKind::AVG;
    s.mean_shift = need("mean_shift") == "1";
    {
        std::istringstream ms(need("mean_rgb"));
        std::string tok;
        for (int i = 0; i < 3; ++i) {
            std::getline(ms, tok, ',');
            s.mean_rgb[static_cast<size_t>(i)] = std::stod(tok);
        }
    }
    s.validate();
    return s;
}

// Checkpoint layout (little-endian):
//   magic "HPUNCKP1" (8 bytes)
//   u32 spec_len, spec canonical text
//   u32 tensor count, then per tensor: u32 name_len, name, tensor blob
// documented byte-exactly in docs/FORMATS.md.
template <class T>
void save_model(Model<T>& m, const std::string& path) {
    std::string out = "HPUNCKP1";
    const std::string spec = m.spec.canonical_text();
    detail::put_u32(out, static_cast<uint32_t>(spec.size()));
    out += spec;
    auto named = m.named_parameters();
    detail::put_u32(out, static_cast<uint32_t>(named.size()));
    for (auto& [name, t] : named) {
        detail::put_u32(out, static_cast<uint32_t>(name.size()));
        out += name;
        out += dump_tensor(*t);
    }
    atomic_write_file(path, out);
}

template <class T>
Model<T> load_model(const std::string& path) {
    const std::string buf = read_file(path);
    if (buf.size() < 12 || buf.compare(0, 8, "HPUNCKP1") != 0)
        throw DataError("checkpoint: corrupt header in " + path);
    size_t off = 8;
    const uint32_t spec_len = detail::get_u32(buf.data() + off);
    off += 4;
    if (buf.size() < off + spec_len) throw DataError("checkpoint: truncated spec block");
    ModelSpec spec = ModelSpec::from_text(buf.substr(off, spec_len));
    off += spec_len;
    Model<T> m = build<T>(spec, 0);
    auto named = m.named_parameters();
    if (buf.size() < off + 4) throw DataError("checkpoint: truncated tensor count");
    const uint32_t n = detail::get_u32(buf.data() + off);
    off += 4;
    if (n != named.size())
        throw DataError("checkpoint: tensor count does not match the spec topology");
    for (uint32_t i = 0; i < n; ++i) {
        if (buf.size() < off + 4) throw DataError("checkpoint: truncated tensor name");
        const uint32_t name_len = detail::get_u32(buf.data() + off);
        off += 4;
        if (buf.size() < off + name_len) throw DataError("checkpoint: truncated tensor name");
        const std::string name = buf.substr(off, name_len);
        off += name_len;
        if (name != named[i].first)
            throw DataError("checkpoint: tensor name mismatch: expected " + named[i].first +
                            ", found " + name);
        Tensor<T> t = parse_tensor<T>(buf, off);
        if (!(t.shape == named[i].second->shape))
            throw DataError("checkpoint: shape mismatch for " + name);
        *named[i].second->data = *t.data;
    }
    return m;
}

}  // namespace hpun
