#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "gradcheck.hpp"
#include "hpun/model.hpp"
#include "hpun/reconcile.hpp"
#include "oracles.hpp"

using namespace hpun;

namespace {

ModelSpec tiny_spec(int64_t c = 8, int64_t n_blocks = 1, int64_t scale = 2) {
    ModelSpec s;
    s.channels = c;
    s.n_hpub = n_blocks;
    s.scale = scale;
    s.block.channels = c;
    return s;
}

struct TmpDir {
    std::filesystem::path path;
    TmpDir() {
        path = std::filesystem::temp_directory_path() /
               ("hpun_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TmpDir() { std::filesystem::remove_all(path); }
    static inline int counter = 0;
};

}  // namespace

TEST_CASE("build: layer count matches the documented topology") {
    auto m = build<float>(ModelSpec::preset("hpun-m"), 1);
    // head + 8 HPUBs + tail
    CHECK(m.layer_count() == 10);
    auto s = build<float>(ModelSpec::preset("hpun-s"), 1);
    CHECK(s.layer_count() == 11);  // head + 7 HPUB + 2 PUB + tail
    auto l = build<float>(ModelSpec::preset("hpun-l"), 1);
    CHECK(l.layer_count() == 14);
}

TEST_CASE("build: determinism and scale contract") {
    auto spec = tiny_spec(8, 1, 4);
    auto a = build<float>(spec, 99);
    auto b = build<float>(spec, 99);
    auto pa = a.parameters();
    auto pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i]->data == *pb[i]->data);

    auto x = randn<float>({1, 3, 48, 48}, 3);
    auto y = a.forward(x);
    CHECK(y.shape == Shape4{1, 3, 192, 192});
}

TEST_CASE("forward: zero input stays finite; channel mismatch rejected") {
    auto spec = tiny_spec();
    spec.mean_shift = false;
    auto m = build<float>(spec, 7);
    auto x = zeros<float>({1, 3, 8, 8});
    auto y = m.forward(x);
    for (float v : *y.data) CHECK(std::isfinite(v));

    CHECK_THROWS_AS(m.forward(zeros<float>({1, 4, 8, 8})), ShapeError);
    CHECK_THROWS_AS(m.forward(zeros<float>({1, 3, 7, 8})), ShapeError);
}

TEST_CASE("forward: scale-consistent output dims for s in {2,3,4}") {
    for (int64_t s : {2, 3, 4}) {
        auto m = build<float>(tiny_spec(8, 1, s), 5);
        auto x = randn<float>({2, 3, 12, 16}, 6);
        CHECK(m.forward(x).shape == Shape4{2, 3, s * 12, s * 16});
    }
}

TEST_CASE("global residual is live: removing it changes the output") {
    // Same weights, same input; a model whose body output is ignored except
    // through the residual must differ from the full model.
    auto spec = tiny_spec();
    auto m = build<float>(spec, 21);
    auto x = randn<float>({1, 3, 8, 8}, 22);
    auto y_full = m.forward(x);

    // Ablate by zeroing the body blocks' ability to pass anything: forward
    // the head output directly through the tail (residual-only path).
    Tensor<float> xm = shift_rgb<float>(x, spec.mean_rgb, -1.0f);
    auto h0 = m.head.forward(xm);
    auto body = h0;
    for (auto& blk : m.body) body = blk->forward(body);
    auto no_residual = pixel_shuffle(m.tail.forward(body), spec.scale);
    auto with_residual = pixel_shuffle(m.tail.forward(add(body, h0)), spec.scale);
    CHECK(hpun_test::max_abs_diff(
              from_vector<double>(no_residual.shape,
                                  std::vector<double>(no_residual.data->begin(),
                                                      no_residual.data->end())),
              from_vector<double>(with_residual.shape,
                                  std::vector<double>(with_residual.data->begin(),
                                                      with_residual.data->end()))) > 0.0);
}

TEST_CASE("count_params closed forms") {
    // single conv 3->64, k=3, bias
    CHECK(conv_params(make_conv(3, 64, 3, 1, true), true) == 1792);
    // depthwise conv C=64, k=3, bias
    CHECK(conv_params(make_conv(64, 64, 3, 64, true), true) == 640);
}

TEST_CASE("count_params equals brute-force buffer enumeration") {
    for (const char* preset : {"toy", "hpun-s", "hpun-m", "hpun-l"}) {
        auto spec = ModelSpec::preset(preset);
        auto rep = count_costs(spec, 1280 * spec.scale / spec.scale, 720);
        auto m = build<float>(spec, 3);
        CHECK(rep.total_params == count_params_bruteforce(m));
    }
}

TEST_CASE("count ordering and Table-2 proximity of the frozen presets") {
    auto s = count_costs(ModelSpec::preset("hpun-s"));
    auto m = count_costs(ModelSpec::preset("hpun-m"));
    auto l = count_costs(ModelSpec::preset("hpun-l"));
    CHECK(s.total_params < m.total_params);
    CHECK(m.total_params < l.total_params);
    CHECK(s.total_multi_adds < m.total_multi_adds);
    CHECK(m.total_multi_adds < l.total_multi_adds);

    CHECK(std::abs(m.total_params - 511e3) / 511e3 <= 0.15);
    CHECK(std::abs(s.total_params - 246e3) / 246e3 <= 0.15);
    CHECK(std::abs(l.total_params - 734e3) / 734e3 <= 0.15);
    CHECK(std::abs(m.total_multi_adds - 27.7e9) / 27.7e9 <= 0.20);
    CHECK(std::abs(s.total_multi_adds - 12.7e9) / 12.7e9 <= 0.20);
    CHECK(std::abs(l.total_multi_adds - 39.7e9) / 39.7e9 <= 0.20);
}

TEST_CASE("multi-adds formula and linear scaling in output pixels") {
    // pointwise conv 64->64 on a 320x180 map
    ModelSpec ref = tiny_spec(64, 1, 4);
    auto rows = count_costs(ref, 1280, 720).rows;
    // direct formula check on an isolated spec instead:
    ConvEntry e{"pw", make_conv(64, 64, 1, 1, false), 1.0};
    const double madds = 1.0 * 1 * 64 * 64 * 320 * 180;
    CHECK(madds == doctest::Approx(235.9296e6));

    auto base = count_costs(ModelSpec::preset("hpun-m"), 1280, 720);
    auto quad = count_costs(ModelSpec::preset("hpun-m"), 2560, 1440);
    for (size_t i = 0; i < base.rows.size(); ++i)
        CHECK(quad.rows[i].multi_adds == doctest::Approx(4.0 * base.rows[i].multi_adds));
    CHECK(quad.total_multi_adds == doctest::Approx(4.0 * base.total_multi_adds));
}

TEST_CASE("doubling C quadruples pointwise and doubles depthwise counts") {
    for (int64_t c : {8, 16, 32}) {
        CHECK(conv_params(make_conv(2 * c, 2 * c, 1, 1, false), false) ==
              4 * conv_params(make_conv(c, c, 1, 1, false), false));
        CHECK(conv_params(make_conv(2 * c, 2 * c, 3, 2 * c, false), false) ==
              2 * conv_params(make_conv(c, c, 3, c, false), false));
    }
}

TEST_CASE("save/load round trip is bitwise and validates topology") {
    TmpDir tmp;
    const std::string path = (tmp.path / "model.ckpt").string();
    auto spec = tiny_spec();
    auto m = build<float>(spec, 77);
    auto x = randn<float>({1, 3, 8, 8}, 78);
    auto y1 = m.forward(x);
    save_model(m, path);

    auto m2 = load_model<float>(path);
    auto y2 = m2.forward(x);
    CHECK(*y1.data == *y2.data);  // 0 ulps

    // corrupt header
    {
        std::string buf = read_file(path);
        buf[0] = 'X';
        atomic_write_file(path + ".bad", buf);
        CHECK_THROWS_AS(load_model<float>(path + ".bad"), DataError);
    }
    // truncated file
    {
        std::string buf = read_file(path);
        buf.resize(buf.size() / 2);
        atomic_write_file(path + ".trunc", buf);
        CHECK_THROWS_AS(load_model<float>(path + ".trunc"), DataError);
    }
}

TEST_CASE("checkpoint spec mismatch is detected at the caller") {
    TmpDir tmp;
    const std::string path = (tmp.path / "model.ckpt").string();
    auto m = build<float>(tiny_spec(8, 1, 2), 1);
    save_model(m, path);
    auto loaded = load_model<float>(path);
    CHECK(loaded.spec.scale == 2);  // caller compares against the requested scale
}

TEST_CASE("full toy model gradient check in f64") {
    ModelSpec spec = tiny_spec(8, 1, 2);
    spec.mean_shift = false;
    auto m = build<double>(spec, 11);
    auto x = scale(randn<double>({1, 3, 8, 8}, 12), 0.5).detached();
    set_requires_grad(x);
    CHECK(hpun_test::gradcheck(x, [&] { return m.forward(x); }) <= 1e-4);
    CHECK(hpun_test::gradcheck(m.head.w, [&] { return m.forward(x); }) <= 1e-4);
    CHECK(hpun_test::gradcheck(m.tail.b, [&] { return m.forward(x); }) <= 1e-4);
}

TEST_CASE("reconciliation sweep finds an in-tolerance configuration") {
    auto results = reconcile_sweep();
    REQUIRE(!results.empty());
    const auto& best = results.front();
    CHECK(best.all_within_tolerance);
    // The frozen presets must agree with the sweep's best configuration.
    for (const auto& f : best.fits) {
        const std::string name = "hpun-" + [&] {
            std::string v = to_string(f.variant);
            for (auto& ch : v) ch = static_cast<char>(std::tolower(ch));
            return v;
        }();
        CHECK(ModelSpec::preset(name).channels == f.channels);
    }
    CHECK(best.group_mode == ModelSpec::preset("hpun-m").block.pud_group_mode);
    CHECK(best.pud_kernel == ModelSpec::preset("hpun-m").block.pud_group_kernel);
}

TEST_CASE("model spec canonical text round trip") {
    auto spec = ModelSpec::preset("hpun-s");
    auto back = ModelSpec::from_text(spec.canonical_text());
    CHECK(back.canonical_text() == spec.canonical_text());
}
