#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hpun/common.hpp"
#include "hpun/image.hpp"
#include "hpun/metrics.hpp"
#include "hpun/model.hpp"
#include "hpun/png_io.hpp"
#include "hpun/random.hpp"
#include "hpun/resize.hpp"
#include "hpun/serialize.hpp"
#include "hpun/tensor.hpp"

namespace hpun {

// ---------------------------------------------------------------------------
// Configuration

enum class Schedule { COSINE, STEP };
enum class Loss { L1, L2 };

struct TrainConfig {
    int64_t batch_size = 16;
    int64_t patch_size = 48;  // LR-side patch
    double lr_init = 2e-4;
    Schedule schedule = Schedule::COSINE;
    int64_t cycle_epochs = 250;
    int64_t step_every = 200;   // STEP schedule: halve every N epochs
    double step_gamma = 0.5;
    int64_t iters_per_epoch = 200;
    int64_t max_epochs = 5;
    int64_t log_interval = 10;
    uint64_t seed = 0;
    int64_t scale = 4;
    Loss loss = Loss::L1;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void validate() const {
        if (lr_init <= 0) throw DataError("TrainConfig: lr_init must be > 0");
        if (batch_size < 1 || patch_size < 1 || iters_per_epoch < 1 || max_epochs < 1 ||
            cycle_epochs < 1 || log_interval < 1 || scale < 1)
            throw DataError("TrainConfig: counts must be >= 1");
    }

    std::string to_text() const;
    static TrainConfig from_text(const std::string& text);
    static TrainConfig load(const std::string& path) {
        return from_text(read_file(path));
    }
};

inline std::string TrainConfig::to_text() const {
    std::ostringstream os;
    os << "batch_size=" << batch_size << "\n"
       << "patch_size=" << patch_size << "\n"
       << "lr_init=" << lr_init << "\n"
       << "schedule=" << (schedule == Schedule::COSINE ? "cosine" : "step") << "\n"
       << "cycle_epochs=" << cycle_epochs << "\n"
       << "step_every=" << step_every << "\n"
       << "step_gamma=" << step_gamma << "\n"
       << "iters_per_epoch=" << iters_per_epoch << "\n"
       << "max_epochs=" << max_epochs << "\n"
       << "log_interval=" << log_interval << "\n"
       << "seed=" << seed << "\n"
       << "scale=" << scale << "\n"
       << "loss=" << (loss == Loss::L1 ? "l1" : "l2") << "\n";
    return os.str();
}

inline TrainConfig TrainConfig::from_text(const std::string& text) {
    TrainConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("TrainConfig: bad line: " + line);
        const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
        if (k == "batch_size") c.batch_size = std::stoll(v);
        else if (k == "patch_size") c.patch_size = std::stoll(v);
        else if (k == "lr_init") c.lr_init = std::stod(v);
        else if (k == "schedule") c.schedule = (v == "step") ? Schedule::STEP : Schedule::COSINE;
        else if (k == "cycle_epochs") c.cycle_epochs = std::stoll(v);
        else if (k == "step_every") c.step_every = std::stoll(v);
        else if (k == "step_gamma") c.step_gamma = std::stod(v);
        else if (k == "iters_per_epoch") c.iters_per_epoch = std::stoll(v);
        else if (k == "max_epochs") c.max_epochs = std::stoll(v);
        else if (k == "log_interval") c.log_interval = std::stoll(v);
        else if (k == "seed") c.seed = std::stoull(v);
        else if (k == "scale") c.scale = std::stoll(v);
        else if (k == "loss") c.loss = (v == "l2") ? Loss::L2 : Loss::L1;
        else throw DataError("TrainConfig: unknown key: " + k);
    }
    c.validate();
    return c;
}

// Cosine schedule with warm restarts every cycle_epochs.
inline double cosine_lr(int64_t epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw DataError("cosine_lr: negative epoch");
    const double t = static_cast<double>(epoch % cfg.cycle_epochs) /
                     static_cast<double>(cfg.cycle_epochs);
    return cfg.lr_init * 0.5 * (1.0 + std::cos(M_PI * t));
}

inline double schedule_lr(int64_t epoch, const TrainConfig& cfg) {
    if (cfg.schedule == Schedule::COSINE) return cosine_lr(epoch, cfg);
    return cfg.lr_init * std::pow(cfg.step_gamma, static_cast<double>(epoch / cfg.step_every));
}

// ---------------------------------------------------------------------------
// Dataset

struct DatasetEntry {
    std::string hr_path, lr_path;
    int64_t hr_w = 0, hr_h = 0, lr_w = 0, lr_h = 0;
};

struct DatasetIndex {
    int64_t scale = 0;
    std::vector<DatasetEntry> entries;

    void save(const std::string& path) const {
        std::ostringstream os;
        os << "scale=" << scale << "\n";
        for (const auto& e : entries)
            os << e.hr_path << "\t" << e.lr_path << "\t" << e.hr_w << "\t" << e.hr_h << "\t"
               << e.lr_w << "\t" << e.lr_h << "\n";
        atomic_write_file(path, os.str());
    }

    static DatasetIndex load(const std::string& path) {
        DatasetIndex idx;
        std::istringstream is(read_file(path));
        std::string line;
        if (!std::getline(is, line) || line.rfind("scale=", 0) != 0)
            throw DataError("DatasetIndex: missing scale header in " + path);
        idx.scale = std::stoll(line.substr(6));
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            DatasetEntry e;
            std::istringstream ls(line);
            if (!(std::getline(ls, e.hr_path, '\t') && std::getline(ls, e.lr_path, '\t') &&
                  (ls >> e.hr_w >> e.hr_h >> e.lr_w >> e.lr_h)))
                throw DataError("DatasetIndex: bad line in " + path);
            idx.entries.push_back(std::move(e));
        }
        if (idx.entries.empty()) throw DataError("DatasetIndex: empty index " + path);
        return idx;
    }
};

// Crop each HR image so its dims divide the scale, synthesize the LR pair by
// antialiased bicubic 1/s downscale, write both (8-bit PNG) plus the index.
// Deterministic, so re-running produces identical bytes.
inline DatasetIndex prepare_dataset(const std::string& hr_dir, int64_t scale,
                                    const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (scale < 1) throw DataError("prepare_dataset: scale must be >= 1");
    std::vector<std::string> names;
    for (const auto& ent : fs::directory_iterator(hr_dir)) {
        if (ent.path().extension() == ".png") names.push_back(ent.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) throw DataError("prepare_dataset: no PNGs in " + hr_dir);

    fs::create_directories(fs::path(out_dir) / "hr");
    fs::create_directories(fs::path(out_dir) / "lr");

    DatasetIndex idx;
    idx.scale = scale;
    for (const auto& name : names) {
        auto hr = read_png((fs::path(hr_dir) / name).string());
        const int64_t w = (hr.width / scale) * scale;
        const int64_t h = (hr.height / scale) * scale;
        if (w < scale || h < scale)
            throw DataError("prepare_dataset: image too small: " + name);
        ImageBuf cropped(w, h, hr.channels);
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                for (int64_t c = 0; c < hr.channels; ++c)
                    cropped.at(y, x, c) = hr.at(y, x, c);
        auto lr = bicubic_resize(cropped, 1.0 / static_cast<double>(scale), true);
        lr.quantize8();

        DatasetEntry e;
        e.hr_path = (fs::path(out_dir) / "hr" / name).string();
        e.lr_path = (fs::path(out_dir) / "lr" / name).string();
        e.hr_w = w;
        e.hr_h = h;
        e.lr_w = lr.width;
        e.lr_h = lr.height;
        write_png(e.hr_path, cropped);
        write_png(e.lr_path, lr);
        idx.entries.push_back(std::move(e));
    }
    idx.save((fs::path(out_dir) / "index.txt").string());
    return idx;
}

// In-memory dataset for training (images are small at desk scale).
struct LoadedDataset {
    int64_t scale = 0;
    std::vector<std::pair<ImageBuf, ImageBuf>> pairs;  // (lr, hr)

    static LoadedDataset load(const DatasetIndex& idx) {
        LoadedDataset d;
        d.scale = idx.scale;
        for (const auto& e : idx.entries) {
            auto lr = read_png(e.lr_path);
            auto hr = read_png(e.hr_path);
            if (lr.width * idx.scale != hr.width || lr.height * idx.scale != hr.height)
                throw DataError("LoadedDataset: LR/HR dims inconsistent for " + e.hr_path);
            d.pairs.emplace_back(std::move(lr), std::move(hr));
        }
        return d;
    }
};

// Aligned LR/HR patch pairs; each pair is independently transformed by one of
// the 8 dihedral symmetries. Deterministic given the rng state.
template <class T>
std::pair<Tensor<T>, Tensor<T>> sample_batch(const LoadedDataset& data, const TrainConfig& cfg,
                                             Rng& rng) {
    if (data.pairs.empty()) throw DataError("sample_batch: empty dataset");
    const int64_t s = data.scale, p = cfg.patch_size, b = cfg.batch_size;
    auto lr_batch = zeros<T>({b, 3, p, p});
    auto hr_batch = zeros<T>({b, 3, p * s, p * s});
    for (int64_t i = 0; i < b; ++i) {
        const auto& [lr, hr] = data.pairs[static_cast<size_t>(
            rng.uniform_int(static_cast<int64_t>(data.pairs.size())))];
        if (lr.width < p || lr.height < p)
            throw DataError("sample_batch: patch larger than image");
        const int64_t x0 = rng.uniform_int(lr.width - p + 1);
        const int64_t y0 = rng.uniform_int(lr.height - p + 1);
        const int k = static_cast<int>(rng.uniform_int(8));

        auto lpatch = zeros<T>({1, 3, p, p});
        auto hpatch = zeros<T>({1, 3, p * s, p * s});
        for (int64_t c = 0; c < 3; ++c) {
            for (int64_t y = 0; y < p; ++y)
                for (int64_t x = 0; x < p; ++x)
                    (*lpatch.data)[static_cast<size_t>((c * p + y) * p + x)] =
                        static_cast<T>(lr.at(y0 + y, x0 + x, c));
            for (int64_t y = 0; y < p * s; ++y)
                for (int64_t x = 0; x < p * s; ++x)
                    (*hpatch.data)[static_cast<size_t>((c * p * s + y) * p * s + x)] =
                        static_cast<T>(hr.at(y0 * s + y, x0 * s + x, c));
        }
        lpatch = dihedral_apply(lpatch, k);
        hpatch = dihedral_apply(hpatch, k);
        std::copy(lpatch.data->begin(), lpatch.data->end(),
                  lr_batch.data->begin() + static_cast<int64_t>(i * 3 * p * p));
        std::copy(hpatch.data->begin(), hpatch.data->end(),
                  hr_batch.data->begin() + static_cast<int64_t>(i * 3 * p * s * p * s));
    }
    return {lr_batch, hr_batch};
}

// ---------------------------------------------------------------------------
// Adam

template <class T>
struct AdamState {
    int64_t step = 0;
    std::vector<std::vector<double>> m, v;

    static AdamState init(const std::vector<Tensor<T>*>& params) {
        AdamState st;
        for (auto* p : params) {
            st.m.emplace_back(p->data->size(), 0.0);
            st.v.emplace_back(p->data->size(), 0.0);
        }
        return st;
    }
};

// One optimizer step from already-populated gradients.
template <class T>
void adam_update(std::vector<Tensor<T>*>& params, AdamState<T>& st, double lr,
                 const TrainConfig& cfg) {
    st.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& data = *params[pi]->data;
        auto& grad = *params[pi]->grad;
        auto& m = st.m[pi];
        auto& v = st.v[pi];
        for (size_t i = 0; i < data.size(); ++i) {
            const double g = static_cast<double>(grad[i]);
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[i] / bc1, vhat = v[i] / bc2;
            data[i] = static_cast<T>(static_cast<double>(data[i]) -
                                     lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

// Forward, loss, backward, Adam update, zero gradients. Returns the loss.
template <class T>
double train_step(Model<T>& model, const Tensor<T>& lr_batch, const Tensor<T>& hr_batch,
                  AdamState<T>& st, double lr, const TrainConfig& cfg) {
    auto sr = model.forward(lr_batch);
    auto diff = sub(sr, hr_batch);
    auto loss = (cfg.loss == Loss::L1) ? mean_abs(diff) : mean_sq(diff);
    const double lval = static_cast<double>((*loss.data)[0]);
    if (!std::isfinite(lval))
        throw NumericError("train_step: non-finite loss at step " + std::to_string(st.step + 1));
    backward(loss);
    auto params = model.parameters();
    adam_update(params, st, lr, cfg);
    for (auto* p : params) p->zero_grad();
    return lval;
}

// ---------------------------------------------------------------------------
// Training loop

struct LogRecord {
    int64_t epoch = 0, step = 0;
    double lr = 0.0, loss = 0.0;
};

struct TrainResult {
    std::vector<LogRecord> log;
    std::vector<double> val_psnr;  // one per epoch (training-set mean), if requested
};

// Mean Y-channel PSNR of the model against the dataset's HR images,
// 8-bit-quantized outputs, border crop = scale.
template <class T>
double evaluate_psnr(Model<T>& model, const LoadedDataset& data) {
    double total = 0.0;
    for (const auto& [lr, hr] : data.pairs) {
        auto out = model.forward(image_to_tensor<T>(lr));
        auto sr = tensor_to_image(out.detached());
        sr.quantize8();
        ImageBuf ref = hr;
        double p = psnr(rgb_to_y(sr), rgb_to_y(ref), data.scale);
        total += std::isinf(p) ? 100.0 : p;
    }
    return total / static_cast<double>(data.pairs.size());
}

template <class T>
TrainResult train(Model<T>& model, const TrainConfig& cfg, const LoadedDataset& data,
                  const std::string& log_path = "", const std::string& ckpt_dir = "",
                  bool eval_each_epoch = false) {
    cfg.validate();
    if (cfg.scale != model.spec.scale)
        throw DataError("train: config scale does not match model scale");
    Rng rng(cfg.seed);
    auto params = model.parameters();
    auto st = AdamState<T>::init(params);
    TrainResult res;
    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path, std::ios::app);
        if (!log) throw DataError("train: cannot open log " + log_path);
    }
    for (int64_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = schedule_lr(epoch, cfg);
        for (int64_t it = 1; it <= cfg.iters_per_epoch; ++it) {
            auto [lrb, hrb] = sample_batch<T>(data, cfg, rng);
            const double lval = train_step(model, lrb, hrb, st, lr, cfg);
            if (it % cfg.log_interval == 0) {
                LogRecord rec{epoch, st.step, lr, lval};
                res.log.push_back(rec);
                if (log)
                    log << "epoch=" << rec.epoch << " step=" << rec.step << " lr=" << rec.lr
                        << " loss=" << rec.loss << "\n"
                        << std::flush;
            }
        }
        if (eval_each_epoch) {
            const double p = evaluate_psnr(model, data);
            res.val_psnr.push_back(p);
            if (log) log << "epoch=" << epoch << " val_psnr=" << p << "\n" << std::flush;
        }
        if (!ckpt_dir.empty()) {
            std::filesystem::create_directories(ckpt_dir);
            save_model(model, (std::filesystem::path(ckpt_dir) /
                               ("epoch_" + std::to_string(epoch) + ".ckpt"))
                                  .string());
        }
    }
    return res;
}

}  // namespace hpun
