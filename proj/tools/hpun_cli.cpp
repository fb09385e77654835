// hpun: single entrypoint for dataset preparation, training, inference,
// evaluation, cost counting, feature diagnostics, and toy ablations.
//
// Exit codes: 0 ok, 2 usage error, 3 data/shape error, 4 numeric error.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hpun/image.hpp"
#include "hpun/metrics.hpp"
#include "hpun/model.hpp"
#include "hpun/png_io.hpp"
#include "hpun/reconcile.hpp"
#include "hpun/resize.hpp"
#include "hpun/serialize.hpp"
#include "hpun/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hpun;

namespace {

// ---------------------------------------------------------------------------
// Shared helpers

ModelSpec resolve_spec(const std::string& preset, const std::string& spec_file, int64_t scale) {
    if (!preset.empty() && !spec_file.empty())
        throw DataError("give either --preset or --spec, not both");
    if (!spec_file.empty()) return ModelSpec::from_text(read_file(spec_file));
    if (!preset.empty()) return ModelSpec::preset(preset, scale);
    throw DataError("one of --preset or --spec is required");
}

// PUD needs even spatial dims; crop an LR image (and report the HR crop).
ImageBuf crop_even(const ImageBuf& img) {
    const int64_t w = img.width - (img.width % 2), h = img.height - (img.height % 2);
    if (w == img.width && h == img.height) return img;
    ImageBuf out(w, h, img.channels, img.colorspace);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, x, c);
    return out;
}

ImageBuf crop_to(const ImageBuf& img, int64_t w, int64_t h) {
    ImageBuf out(w, h, img.channels, img.colorspace);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, x, c);
    return out;
}

template <class T>
ImageBuf run_model(Model<T>& model, const ImageBuf& lr, bool ensemble) {
    auto in = image_to_tensor<T>(lr);
    Tensor<T> out;
    if (ensemble) {
        std::function<Tensor<T>(const Tensor<T>&)> fwd = [&](const Tensor<T>& t) {
            return model.forward(t).detached();
        };
        out = self_ensemble(fwd, in);
    } else {
        out = model.forward(in).detached();
    }
    auto img = tensor_to_image(out);
    img.clamp01();
    return img;
}

void write_json(const std::string& path, const json& j) {
    atomic_write_file(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Subcommand options

struct CommonModel {
    std::string preset, spec_file, checkpoint;
    int64_t scale = 4;
    bool f64 = false;
};

struct PrepareOpts {
    std::string hr_dir, out_dir;
    int64_t scale = 4;
};

struct TrainOpts {
    CommonModel m;
    std::string data_dir, config_file, ckpt_dir, log_path, out_ckpt = "model.ckpt";
    uint64_t seed = 0;
    int64_t epochs = -1, iters = -1, batch = -1, patch = -1;
    double lr = -1.0;
    bool eval_each_epoch = false;
};

struct InferOpts {
    CommonModel m;
    std::string input, output = "sr.png";
    bool ensemble = false;
};

struct EvalOpts {
    CommonModel m;
    std::string data_dir, json_out;
    bool ensemble = false, bicubic = false, no_quantize = false;
    int64_t border_crop = -1;  // default: scale
};

struct CountOpts {
    CommonModel m;
    std::string json_out;
    int64_t width = 1280, height = 720;
    bool reconcile = false;
};

struct NmeOpts {
    CommonModel m;
    std::string input, out_prefix = "nme";
    double threshold = -1.0;
    bool pre_residual = false;
};

struct AblateOpts {
    std::string data_dir, json_out;
    std::vector<std::string> variants = {"pw", "dsc", "srdsc", "pud", "pub"};
    int64_t seeds = 3, epochs = 2, iters = 100, channels = 16, n_blocks = 2;
    int64_t batch = 4, patch = 8;
    double lr = -1.0;
    bool updown = false;
};

// ---------------------------------------------------------------------------
// Subcommand implementations

int cmd_prepare(const PrepareOpts& o) {
    auto idx = prepare_dataset(o.hr_dir, o.scale, o.out_dir);
    std::cout << "prepared " << idx.entries.size() << " image pairs at scale x" << o.scale
              << " in " << o.out_dir << "\n";
    return 0;
}

template <class T>
int run_train(const TrainOpts& o) {
    TrainConfig cfg;
    if (!o.config_file.empty()) cfg = TrainConfig::load(o.config_file);
    cfg.seed = o.seed;
    cfg.scale = o.m.scale;
    if (o.epochs > 0) cfg.max_epochs = o.epochs;
    if (o.iters > 0) cfg.iters_per_epoch = o.iters;
    if (o.batch > 0) cfg.batch_size = o.batch;
    if (o.patch > 0) cfg.patch_size = o.patch;
    if (o.lr > 0) cfg.lr_init = o.lr;
    cfg.validate();

    auto idx = DatasetIndex::load((fs::path(o.data_dir) / "index.txt").string());
    if (idx.scale != cfg.scale)
        throw DataError("dataset scale x" + std::to_string(idx.scale) +
                        " does not match --scale x" + std::to_string(cfg.scale));
    auto data = LoadedDataset::load(idx);

    Model<T> model = o.m.checkpoint.empty()
                         ? build<T>(resolve_spec(o.m.preset, o.m.spec_file, cfg.scale), cfg.seed)
                         : load_model<T>(o.m.checkpoint);
    if (model.spec.scale != cfg.scale) throw DataError("model scale does not match dataset");

    auto res = train(model, cfg, data, o.log_path, o.ckpt_dir, o.eval_each_epoch);
    save_model(model, o.out_ckpt);
    std::cout << "trained " << cfg.max_epochs << " epochs x " << cfg.iters_per_epoch
              << " iters; final loss=" << (res.log.empty() ? 0.0 : res.log.back().loss)
              << "; saved " << o.out_ckpt << "\n";
    if (!res.val_psnr.empty()) std::cout << "final val_psnr=" << res.val_psnr.back() << "\n";
    return 0;
}

template <class T>
int run_infer(const InferOpts& o) {
    auto model = load_model<T>(o.m.checkpoint);
    auto lr = crop_even(read_png(o.input));
    auto sr = run_model(model, lr, o.ensemble);
    sr.quantize8();
    write_png(o.output, sr);
    std::cout << "wrote " << o.output << " (" << sr.width << "x" << sr.height << ")\n";
    return 0;
}

template <class T>
int run_eval(const EvalOpts& o) {
    auto idx = DatasetIndex::load((fs::path(o.data_dir) / "index.txt").string());
    const int64_t s = idx.scale;
    const int64_t crop = o.border_crop >= 0 ? o.border_crop : s;

    Model<T> model;
    if (!o.bicubic) {
        model = load_model<T>(o.m.checkpoint);
        if (model.spec.scale != s) throw DataError("checkpoint scale does not match dataset");
    }

    json rep;
    rep["command"] = "eval";
    rep["scale"] = s;
    rep["border_crop"] = crop;
    rep["self_ensemble"] = o.ensemble;
    rep["quantize8"] = !o.no_quantize;
    rep["records"] = json::array();
    double psum = 0.0, ssum = 0.0;
    for (const auto& e : idx.entries) {
        auto lr = crop_even(read_png(e.lr_path));
        auto hr = crop_to(read_png(e.hr_path), lr.width * s, lr.height * s);
        ImageBuf sr;
        if (o.bicubic) {
            sr = bicubic_resize(lr, static_cast<double>(s), false);
            sr.clamp01();
        } else {
            sr = run_model(model, lr, o.ensemble);
        }
        if (!o.no_quantize) sr.quantize8();
        auto ys = rgb_to_y(sr), yh = rgb_to_y(hr);
        const double p = psnr(ys, yh, crop);
        const double ss = ssim(ys, yh, crop);
        psum += p;
        ssum += ss;
        json r;
        r["image"] = fs::path(e.hr_path).filename().string();
        r["psnr"] = std::isinf(p) ? json("inf") : json(p);
        r["ssim"] = ss;
        rep["records"].push_back(r);
        std::cout << r["image"].get<std::string>() << "  psnr="
                  << (std::isinf(p) ? std::string("inf") : std::to_string(p)) << "  ssim=" << ss
                  << "\n";
    }
    const double n = static_cast<double>(idx.entries.size());
    rep["mean_psnr"] = psum / n;
    rep["mean_ssim"] = ssum / n;
    std::cout << "mean  psnr=" << psum / n << "  ssim=" << ssum / n << "\n";
    if (!o.json_out.empty()) write_json(o.json_out, rep);
    return 0;
}

int cmd_count(const CountOpts& o) {
    if (o.reconcile) {
        auto results = reconcile_sweep();
        std::cout << reconcile_report_text(results);
        if (!o.json_out.empty()) {
            json rep;
            rep["command"] = "count";
            rep["records"] = json::array();
            for (const auto& r : results) {
                json jr;
                jr["group_mode"] =
                    r.group_mode == PudGroupMode::PER_CHANNEL ? "per_channel" : "four_groups";
                jr["pud_kernel"] = r.pud_kernel;
                jr["bias"] = r.bias;
                jr["within_tolerance"] = r.all_within_tolerance;
                jr["fits"] = json::array();
                for (const auto& f : r.fits)
                    jr["fits"].push_back({{"variant", to_string(f.variant)},
                                          {"channels", f.channels},
                                          {"params", f.params},
                                          {"multi_adds", f.multi_adds},
                                          {"param_dev", f.param_dev},
                                          {"multi_add_dev", f.multi_add_dev}});
                rep["records"].push_back(jr);
            }
            write_json(o.json_out, rep);
        }
        if (results.empty() || !results.front().all_within_tolerance)
            throw NumericError("reconciliation: no configuration within tolerance");
        return 0;
    }

    auto spec = resolve_spec(o.m.preset, o.m.spec_file, o.m.scale);
    auto report = count_costs(spec, o.width, o.height);
    std::cout << "layer                          params    multi-adds\n";
    for (const auto& row : report.rows) {
        std::ostringstream line;
        line.setf(std::ios::left);
        line.width(28);
        line << row.name;
        std::cout << line.str() << "  " << row.params << "  " << row.multi_adds << "\n";
    }
    std::cout << "total params=" << report.total_params
              << " multi_adds=" << report.total_multi_adds << " at " << o.width << "x"
              << o.height << " HR\n";
    if (!o.json_out.empty()) {
        json rep;
        rep["command"] = "count";
        rep["total_params"] = report.total_params;
        rep["total_multi_adds"] = report.total_multi_adds;
        rep["hr_width"] = o.width;
        rep["hr_height"] = o.height;
        rep["records"] = json::array();
        for (const auto& row : report.rows)
            rep["records"].push_back(
                {{"layer", row.name}, {"params", row.params}, {"multi_adds", row.multi_adds}});
        write_json(o.json_out, rep);
    }
    return 0;
}

template <class T>
int run_nme(const NmeOpts& o) {
    auto model = load_model<T>(o.m.checkpoint);
    auto lr = crop_even(read_png(o.input));
    model.forward(image_to_tensor<T>(lr));
    const auto& deep = o.pre_residual ? model.feat_deep_pre_residual : model.feat_deep;
    auto rep = nme(model.feat_shallow, deep, o.threshold);

    ImageBuf map(rep.map_w, rep.map_h, 1, Colorspace::Gray);
    double vmax = 0.0;
    for (double v : rep.error_map) vmax = std::max(vmax, v);
    for (size_t i = 0; i < rep.error_map.size(); ++i)
        map.pix[i] = vmax > 0 ? rep.error_map[i] / vmax : 0.0;
    ImageBuf bin(rep.map_w, rep.map_h, 1, Colorspace::Gray);
    for (size_t i = 0; i < rep.binarized.size(); ++i) bin.pix[i] = rep.binarized[i] ? 1.0 : 0.0;
    write_png(o.out_prefix + "_map.png", map);
    write_png(o.out_prefix + "_bin.png", bin);

    json jr;
    jr["command"] = "nme";
    jr["nme"] = rep.nme_scalar;
    jr["threshold"] = rep.threshold;
    jr["map_h"] = rep.map_h;
    jr["map_w"] = rep.map_w;
    jr["pre_residual"] = o.pre_residual;
    write_json(o.out_prefix + ".json", jr);
    std::cout << "nme=" << rep.nme_scalar << " threshold=" << rep.threshold << " wrote "
              << o.out_prefix << "_map.png / _bin.png / .json\n";
    return 0;
}

BodyKind body_kind_from_name(const std::string& v) {
    if (v == "pw") return BodyKind::PW_ONLY;
    if (v == "dsc") return BodyKind::DSC;
    if (v == "srdsc") return BodyKind::SRDSC;
    if (v == "pud") return BodyKind::PUD_ONLY;
    if (v == "pub") return BodyKind::PUB;
    if (v == "hpub") return BodyKind::HPUB;
    throw DataError("unknown ablation variant: " + v);
}

int cmd_ablate(const AblateOpts& o) {
    auto idx = DatasetIndex::load((fs::path(o.data_dir) / "index.txt").string());
    auto data = LoadedDataset::load(idx);

    struct Row {
        std::string name;
        ModelSpec spec;
    };
    std::vector<Row> rows;
    for (const auto& v : o.variants) {
        ModelSpec s = ModelSpec::preset("toy", idx.scale);
        s.channels = o.channels;
        s.block.channels = o.channels;
        s.n_hpub = o.n_blocks;
        s.body_kind = body_kind_from_name(v);
        s.validate();
        rows.push_back({v, s});
    }
    if (o.updown) {
        const std::pair<PudDownsampler, std::string> downs[] = {
            {PudDownsampler::PIXEL_UNSHUFFLE, "unshuffle"},
            {PudDownsampler::STRIDED_DW, "strided"},
            {PudDownsampler::POOL2, "pool"}};
        const std::pair<PudUpsampler, std::string> ups[] = {
            {PudUpsampler::BILINEAR, "bilinear"}, {PudUpsampler::NEAREST, "nearest"}};
        for (const auto& [d, dn] : downs)
            for (const auto& [u, un] : ups) {
                ModelSpec s = ModelSpec::preset("toy", idx.scale);
                s.channels = o.channels;
                s.block.channels = o.channels;
                s.n_hpub = o.n_blocks;
                s.body_kind = BodyKind::PUB;
                s.block.pud_down = d;
                s.block.pud_up = u;
                s.validate();
                rows.push_back({"pub/" + dn + "+" + un, s});
            }
    }

    json rep;
    rep["command"] = "ablate";
    rep["records"] = json::array();
    std::cout << "variant          median_psnr  (per-seed)\n";
    for (const auto& row : rows) {
        std::vector<double> psnrs;
        for (int64_t seed = 0; seed < o.seeds; ++seed) {
            auto model = build<float>(row.spec, 1000 + static_cast<uint64_t>(seed));
            TrainConfig cfg;
            cfg.batch_size = o.batch;
            cfg.patch_size = o.patch;
            cfg.scale = idx.scale;
            cfg.max_epochs = o.epochs;
            cfg.iters_per_epoch = o.iters;
            if (o.lr > 0) cfg.lr_init = o.lr;
            cfg.seed = static_cast<uint64_t>(seed);
            train(model, cfg, data);
            psnrs.push_back(evaluate_psnr(model, data));
        }
        std::vector<double> sorted = psnrs;
        std::sort(sorted.begin(), sorted.end());
        const double median = sorted[sorted.size() / 2];
        std::ostringstream line;
        line.setf(std::ios::left);
        line.width(16);
        line << row.name;
        std::cout << line.str() << " " << median << "  (";
        for (size_t i = 0; i < psnrs.size(); ++i) std::cout << (i ? " " : "") << psnrs[i];
        std::cout << ")\n";
        rep["records"].push_back(
            {{"variant", row.name}, {"median_psnr", median}, {"psnr", psnrs}});
    }
    if (!o.json_out.empty()) write_json(o.json_out, rep);
    return 0;
}

void add_model_flags(CLI::App* app, CommonModel& m, bool with_checkpoint,
                     bool with_preset = true) {
    if (with_preset) {
        app->add_option("--preset", m.preset, "model preset: toy | hpun-s | hpun-m | hpun-l");
        app->add_option("--spec", m.spec_file, "model spec file (canonical key=value text)");
        app->add_option("--scale", m.scale, "upscaling factor (2, 3 or 4)");
    }
    if (with_checkpoint) app->add_option("--checkpoint", m.checkpoint, "model checkpoint file");
    app->add_flag("--f64", m.f64, "run in double precision");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hybrid pixel-unshuffled super-resolution toolkit"};
    app.require_subcommand(1);

    PrepareOpts po;
    auto* prep = app.add_subcommand("prepare", "crop HR images and synthesize the LR set");
    prep->add_option("--hr-dir", po.hr_dir, "directory of HR PNGs")->required();
    prep->add_option("--scale", po.scale, "downscaling factor");
    prep->add_option("--out", po.out_dir, "output dataset directory")->required();

    TrainOpts to;
    auto* tr = app.add_subcommand("train", "train a model on a prepared dataset");
    add_model_flags(tr, to.m, true);
    tr->add_option("--data", to.data_dir, "prepared dataset directory")->required();
    tr->add_option("--config", to.config_file, "training config file");
    tr->add_option("--ckpt-dir", to.ckpt_dir, "per-epoch checkpoint directory");
    tr->add_option("--log", to.log_path, "append-only training log");
    tr->add_option("--out", to.out_ckpt, "final checkpoint path");
    tr->add_option("--seed", to.seed, "training seed");
    tr->add_option("--epochs", to.epochs, "override max epochs");
    tr->add_option("--iters", to.iters, "override iters per epoch");
    tr->add_option("--batch", to.batch, "override batch size");
    tr->add_option("--patch", to.patch, "override LR patch size");
    tr->add_option("--lr", to.lr, "override initial learning rate");
    tr->add_flag("--eval", to.eval_each_epoch, "evaluate PSNR each epoch");

    InferOpts io;
    auto* inf = app.add_subcommand("infer", "super-resolve one PNG");
    add_model_flags(inf, io.m, false, false);
    inf->add_option("--checkpoint", io.m.checkpoint, "model checkpoint")->required();
    inf->add_option("--input", io.input, "LR input PNG")->required();
    inf->add_option("--output", io.output, "SR output PNG");
    inf->add_flag("--self-ensemble", io.ensemble, "average the 8 dihedral transforms");

    EvalOpts eo;
    auto* ev = app.add_subcommand("eval", "PSNR/SSIM over a prepared dataset");
    add_model_flags(ev, eo.m, false, false);
    ev->add_option("--checkpoint", eo.m.checkpoint, "model checkpoint");
    ev->add_option("--data", eo.data_dir, "prepared dataset directory")->required();
    ev->add_option("--json", eo.json_out, "write a JSON report");
    ev->add_option("--border-crop", eo.border_crop, "border pixels to ignore (default: scale)");
    ev->add_flag("--self-ensemble", eo.ensemble, "average the 8 dihedral transforms");
    ev->add_flag("--bicubic", eo.bicubic, "evaluate the bicubic baseline instead of a model");
    ev->add_flag("--no-quantize", eo.no_quantize, "skip 8-bit quantization before metrics");

    CountOpts co;
    auto* cn = app.add_subcommand("count", "parameter and multi-add accounting");
    add_model_flags(cn, co.m, false);
    cn->add_option("--width", co.width, "reference HR width");
    cn->add_option("--height", co.height, "reference HR height");
    cn->add_option("--json", co.json_out, "write a JSON report");
    cn->add_flag("--reconcile", co.reconcile, "sweep configs against the published totals");

    NmeOpts no;
    auto* nm = app.add_subcommand("nme", "shallow-vs-deep feature error diagnostic");
    add_model_flags(nm, no.m, false, false);
    nm->add_option("--checkpoint", no.m.checkpoint, "model checkpoint")->required();
    nm->add_option("--input", no.input, "LR input PNG")->required();
    nm->add_option("--out-prefix", no.out_prefix, "output file prefix");
    nm->add_option("--threshold", no.threshold, "binarization threshold (default: map mean)");
    nm->add_flag("--pre-residual", no.pre_residual,
                 "use the body output before the global residual add");

    AblateOpts ao;
    auto* ab = app.add_subcommand("ablate", "train block variants under one toy budget");
    ab->add_option("--data", ao.data_dir, "prepared dataset directory")->required();
    ab->add_option("--variants", ao.variants, "body variants: pw dsc srdsc pud pub hpub")
        ->delimiter(',');
    ab->add_option("--seeds", ao.seeds, "number of seeds (median reported)");
    ab->add_option("--epochs", ao.epochs, "epochs per variant");
    ab->add_option("--iters", ao.iters, "iters per epoch");
    ab->add_option("--lr", ao.lr, "initial learning rate");
    ab->add_option("--channels", ao.channels, "toy channel width");
    ab->add_option("--blocks", ao.n_blocks, "toy body block count");
    ab->add_option("--batch", ao.batch, "batch size");
    ab->add_option("--patch", ao.patch, "LR patch size");
    ab->add_option("--json", ao.json_out, "write a JSON report");
    ab->add_flag("--updown", ao.updown, "also sweep PUD down/upsampler combos");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    try {
        if (prep->parsed()) return cmd_prepare(po);
        if (tr->parsed()) return to.m.f64 ? run_train<double>(to) : run_train<float>(to);
        if (inf->parsed()) return io.m.f64 ? run_infer<double>(io) : run_infer<float>(io);
        if (ev->parsed()) return eo.m.f64 ? run_eval<double>(eo) : run_eval<float>(eo);
        if (cn->parsed()) return cmd_count(co);
        if (nm->parsed()) return no.m.f64 ? run_nme<double>(no) : run_nme<float>(no);
        if (ab->parsed()) return cmd_ablate(ao);
    } catch (const NumericError& e) {
        std::cerr << "error code=4 msg=" << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "error code=3 msg=" << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error code=3 msg=" << e.what() << "\n";
        return 3;
    }
    return 2;
}
