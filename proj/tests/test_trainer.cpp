#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hpun/metrics.hpp"
#include "hpun/model.hpp"
#include "hpun/png_io.hpp"
#include "hpun/resize.hpp"
#include "hpun/trainer.hpp"

using namespace hpun;

namespace {

// Smooth synthetic "natural-ish" image: gradients plus low-frequency waves.
ImageBuf synth_image(int64_t w, int64_t h, double phase) {
    ImageBuf img(w, h, 3);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const double u = static_cast<double>(x) / w, v = static_cast<double>(y) / h;
            img.at(y, x, 0) = 0.5 + 0.3 * std::sin(6.0 * u + phase) * std::cos(4.0 * v);
            img.at(y, x, 1) = 0.4 + 0.35 * u + 0.2 * std::sin(8.0 * v + phase);
            img.at(y, x, 2) = 0.5 + 0.25 * std::cos(5.0 * (u + v) + phase);
        }
    img.clamp01();
    return img;
}

LoadedDataset synth_dataset(int64_t scale, int n_images, int64_t hr_size) {
    LoadedDataset d;
    d.scale = scale;
    for (int i = 0; i < n_images; ++i) {
        auto hr = synth_image(hr_size, hr_size, 0.7 * i);
        auto lr = bicubic_resize(hr, 1.0 / static_cast<double>(scale), true);
        lr.quantize8();
        hr.quantize8();
        d.pairs.emplace_back(std::move(lr), std::move(hr));
    }
    return d;
}

ModelSpec tiny_spec() {
    ModelSpec s = ModelSpec::preset("toy", 2);
    s.channels = 8;
    s.block.channels = 8;
    s.n_hpub = 1;
    s.validate();
    return s;
}

std::string temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::create_directories(p);
    return p.string();
}

}  // namespace

TEST_CASE("cosine schedule hits the documented anchor points") {
    TrainConfig cfg;
    CHECK(cosine_lr(0, cfg) == doctest::Approx(2e-4).epsilon(1e-15));
    CHECK(cosine_lr(125, cfg) == doctest::Approx(1e-4).epsilon(1e-12));  // cycle/2
    CHECK(cosine_lr(250, cfg) == doctest::Approx(2e-4).epsilon(1e-15));  // restart
    for (int64_t e = 0; e < 600; ++e) {
        const double lr = cosine_lr(e, cfg);
        CHECK(lr > 0.0);
        CHECK(lr <= cfg.lr_init);
        CHECK(cosine_lr(e, cfg) == cosine_lr(e + cfg.cycle_epochs, cfg));
    }
}

TEST_CASE("step schedule halves at the configured interval") {
    TrainConfig cfg;
    cfg.schedule = Schedule::STEP;
    cfg.step_every = 10;
    CHECK(schedule_lr(0, cfg) == doctest::Approx(2e-4));
    CHECK(schedule_lr(9, cfg) == doctest::Approx(2e-4));
    CHECK(schedule_lr(10, cfg) == doctest::Approx(1e-4));
    CHECK(schedule_lr(20, cfg) == doctest::Approx(5e-5));
}

TEST_CASE("train config text round trip") {
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.patch_size = 12;
    cfg.seed = 99;
    cfg.scale = 2;
    cfg.loss = Loss::L2;
    cfg.schedule = Schedule::STEP;
    auto back = TrainConfig::from_text(cfg.to_text());
    CHECK(back.to_text() == cfg.to_text());
    CHECK(back.batch_size == 4);
    CHECK(back.loss == Loss::L2);
    CHECK_THROWS_AS(TrainConfig::from_text("nonsense"), DataError);
    CHECK_THROWS_AS(TrainConfig::from_text("lr_init=0\n"), DataError);
}

TEST_CASE("adam reaches the minimum of a 1-D quadratic") {
    // f(x) = (x - 3)^2, grad = 2(x - 3).
    auto x = zeros<double>({1, 1, 1, 1});
    (*x.data)[0] = -2.0;
    set_requires_grad(x);
    std::vector<Tensor<double>*> params{&x};
    auto st = AdamState<double>::init(params);
    TrainConfig cfg;
    for (int step = 0; step < 1000; ++step) {
        (*x.grad)[0] = 2.0 * ((*x.data)[0] - 3.0);
        adam_update(params, st, 0.05, cfg);
    }
    CHECK(std::abs((*x.data)[0] - 3.0) < 1e-3);
}

TEST_CASE("train_step with lr = 0 leaves weights unchanged") {
    auto model = build<float>(tiny_spec(), 1);
    auto data = synth_dataset(2, 2, 32);
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.patch_size = 8;
    cfg.scale = 2;
    Rng rng(7);
    auto [lrb, hrb] = sample_batch<float>(data, cfg, rng);

    std::vector<std::vector<float>> before;
    for (auto* p : model.parameters()) before.push_back(*p->data);
    auto st = AdamState<float>::init(model.parameters());
    train_step(model, lrb, hrb, st, 0.0, cfg);
    auto params = model.parameters();
    for (size_t i = 0; i < params.size(); ++i) CHECK(*params[i]->data == before[i]);
}

TEST_CASE("overfitting a single fixed batch halves the loss within 200 steps") {
    auto model = build<float>(tiny_spec(), 2);
    auto data = synth_dataset(2, 2, 32);
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.patch_size = 8;
    cfg.scale = 2;
    Rng rng(11);
    auto [lrb, hrb] = sample_batch<float>(data, cfg, rng);

    auto params = model.parameters();
    auto st = AdamState<float>::init(params);
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 200; ++step) {
        last = train_step(model, lrb, hrb, st, 2e-4, cfg);
        if (step == 0) first = last;
    }
    CHECK(last <= 0.5 * first);
}

TEST_CASE("train_step aborts on non-finite loss") {
    auto model = build<float>(tiny_spec(), 3);
    (*model.parameters()[0]->data)[0] = std::numeric_limits<float>::quiet_NaN();
    auto data = synth_dataset(2, 1, 32);
    TrainConfig cfg;
    cfg.batch_size = 1;
    cfg.patch_size = 8;
    cfg.scale = 2;
    Rng rng(1);
    auto [lrb, hrb] = sample_batch<float>(data, cfg, rng);
    auto st = AdamState<float>::init(model.parameters());
    CHECK_THROWS_AS(train_step(model, lrb, hrb, st, 2e-4, cfg), NumericError);
}

TEST_CASE("sample_batch shapes, determinism, and LR/HR alignment") {
    auto data = synth_dataset(2, 3, 48);
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.patch_size = 12;
    cfg.scale = 2;

    Rng r1(42), r2(42);
    auto [lr1, hr1] = sample_batch<double>(data, cfg, r1);
    auto [lr2, hr2] = sample_batch<double>(data, cfg, r2);
    CHECK(lr1.shape == Shape4{4, 3, 12, 12});
    CHECK(hr1.shape == Shape4{4, 3, 24, 24});
    CHECK(*lr1.data == *lr2.data);  // bitwise deterministic
    CHECK(*hr1.data == *hr2.data);

    // Alignment oracle: the bicubic downscale of each HR patch must correlate
    // strongly with its LR patch (same crop, same dihedral transform).
    for (int64_t b = 0; b < 4; ++b) {
        ImageBuf hrp(24, 24, 3);
        ImageBuf lrp(12, 12, 3);
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < 24; ++y)
                for (int64_t x = 0; x < 24; ++x)
                    hrp.at(y, x, c) =
                        (*hr1.data)[static_cast<size_t>(((b * 3 + c) * 24 + y) * 24 + x)];
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < 12; ++y)
                for (int64_t x = 0; x < 12; ++x)
                    lrp.at(y, x, c) =
                        (*lr1.data)[static_cast<size_t>(((b * 3 + c) * 12 + y) * 12 + x)];
        auto down = bicubic_resize(hrp, 0.5, true);
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        const double n = static_cast<double>(down.pix.size());
        for (size_t i = 0; i < down.pix.size(); ++i) {
            sa += down.pix[i];
            sb += lrp.pix[i];
            saa += down.pix[i] * down.pix[i];
            sbb += lrp.pix[i] * lrp.pix[i];
            sab += down.pix[i] * lrp.pix[i];
        }
        const double cov = sab / n - (sa / n) * (sb / n);
        const double var_a = saa / n - (sa / n) * (sa / n);
        const double var_b = sbb / n - (sb / n) * (sb / n);
        CHECK(cov / std::sqrt(var_a * var_b) > 0.9);
    }

    cfg.patch_size = 100;
    Rng r3(1);
    CHECK_THROWS_AS(sample_batch<double>(data, cfg, r3), DataError);
}

TEST_CASE("prepare_dataset crops, downscales, and is idempotent") {
    namespace fs = std::filesystem;
    const auto hr_dir = temp_dir("hpun_tr_hr");
    const auto out_dir = temp_dir("hpun_tr_out");
    for (int i = 0; i < 3; ++i) {
        auto img = synth_image(35 + i, 27, 0.3 * i);  // odd dims force cropping
        img.quantize8();
        write_png((fs::path(hr_dir) / ("img" + std::to_string(i) + ".png")).string(), img);
    }
    auto idx = prepare_dataset(hr_dir, 2, out_dir);
    REQUIRE(idx.entries.size() == 3);
    CHECK(idx.entries[0].hr_w == 34);
    CHECK(idx.entries[0].hr_h == 26);
    CHECK(idx.entries[0].lr_w == 17);
    CHECK(idx.entries[0].lr_h == 13);

    auto read_bytes = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        std::stringstream ss;
        ss << f.rdbuf();
        return ss.str();
    };
    auto lr_before = read_bytes(idx.entries[1].lr_path);
    auto idx2 = prepare_dataset(hr_dir, 2, out_dir);  // rerun
    CHECK(read_bytes(idx2.entries[1].lr_path) == lr_before);

    // Index round trip.
    auto loaded = DatasetIndex::load((fs::path(out_dir) / "index.txt").string());
    CHECK(loaded.scale == 2);
    CHECK(loaded.entries.size() == 3);

    fs::remove_all(hr_dir);
    fs::remove_all(out_dir);
}

TEST_CASE("bicubic upscaling beats nearest-neighbor upscaling on smooth images") {
    auto hr = synth_image(64, 64, 1.3);
    hr.quantize8();
    auto lr = bicubic_resize(hr, 0.5, true);
    auto up_cubic = bicubic_resize(lr, 2.0, false);
    up_cubic.clamp01();
    auto lt = image_to_tensor<double>(lr);
    auto up_nn = tensor_to_image(nearest_up2(lt));
    CHECK(psnr(rgb_to_y(up_cubic), rgb_to_y(hr), 2) > psnr(rgb_to_y(up_nn), rgb_to_y(hr), 2));
}

TEST_CASE("train loop logs the expected number of records and checkpoints") {
    namespace fs = std::filesystem;
    auto model = build<float>(tiny_spec(), 4);
    auto data = synth_dataset(2, 2, 32);
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.patch_size = 8;
    cfg.scale = 2;
    cfg.max_epochs = 2;
    cfg.iters_per_epoch = 20;
    cfg.log_interval = 5;
    cfg.seed = 8;
    const auto ckpt_dir = temp_dir("hpun_tr_ckpt");
    auto res = train(model, cfg, data, "", ckpt_dir);
    CHECK(res.log.size() == 8);  // 2 epochs * (20 / 5)
    CHECK(fs::exists(fs::path(ckpt_dir) / "epoch_0.ckpt"));
    CHECK(fs::exists(fs::path(ckpt_dir) / "epoch_1.ckpt"));

    // Resuming from a checkpoint is deterministic: two resumed runs agree.
    auto m1 = load_model<float>((fs::path(ckpt_dir) / "epoch_1.ckpt").string());
    auto m2 = load_model<float>((fs::path(ckpt_dir) / "epoch_1.ckpt").string());
    cfg.max_epochs = 1;
    auto r1 = train(m1, cfg, data);
    auto r2 = train(m2, cfg, data);
    REQUIRE(r1.log.size() == r2.log.size());
    for (size_t i = 0; i < r1.log.size(); ++i) CHECK(r1.log[i].loss == r2.log[i].loss);

    fs::remove_all(ckpt_dir);
}

TEST_CASE("training reduces loss in trend on the tiny model") {
    auto model = build<float>(tiny_spec(), 5);
    auto data = synth_dataset(2, 3, 32);
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.patch_size = 8;
    cfg.scale = 2;
    cfg.max_epochs = 1;
    cfg.iters_per_epoch = 100;
    cfg.log_interval = 1;
    cfg.seed = 21;
    auto res = train(model, cfg, data);
    REQUIRE(res.log.size() == 100);
    double early = 0, late = 0;
    for (int i = 0; i < 20; ++i) early += res.log[i].loss;
    for (int i = 80; i < 100; ++i) late += res.log[i].loss;
    CHECK(late < early);
}
