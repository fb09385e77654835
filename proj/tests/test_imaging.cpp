#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "hpun/image.hpp"
#include "hpun/metrics.hpp"
#include "hpun/ops.hpp"
#include "hpun/png_io.hpp"
#include "hpun/random.hpp"
#include "hpun/resize.hpp"

using namespace hpun;

namespace {

// Independent direct-summation resize oracle: no separable two-pass, no
// precomputed taps — a full 2-D sum of kernel-product weights over the
// symmetric extension, normalized per output pixel.
double cubic_ref(double x) {
    x = std::abs(x);
    if (x <= 1.0) return (1.5 * x - 2.5) * x * x + 1.0;
    if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
    return 0.0;
}

int64_t symm_ref(int64_t i, int64_t n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

ImageBuf resize_oracle(const ImageBuf& img, double scale, bool antialias) {
    const double ks = (scale < 1.0 && antialias) ? scale : 1.0;
    const int64_t ow = std::llround(img.width * scale);
    const int64_t oh = std::llround(img.height * scale);
    const int64_t reach = static_cast<int64_t>(std::ceil(2.0 / ks)) + 2;
    ImageBuf out(ow, oh, img.channels, img.colorspace);
    for (int64_t yo = 0; yo < oh; ++yo)
        for (int64_t xo = 0; xo < ow; ++xo) {
            const double uy = (yo + 0.5) / scale - 0.5;
            const double ux = (xo + 0.5) / scale - 0.5;
            for (int64_t c = 0; c < img.channels; ++c) {
                double acc = 0.0, wsum = 0.0;
                for (int64_t i = static_cast<int64_t>(std::floor(uy)) - reach;
                     i <= static_cast<int64_t>(std::floor(uy)) + reach; ++i)
                    for (int64_t j = static_cast<int64_t>(std::floor(ux)) - reach;
                         j <= static_cast<int64_t>(std::floor(ux)) + reach; ++j) {
                        const double w =
                            ks * cubic_ref(ks * (uy - i)) * ks * cubic_ref(ks * (ux - j));
                        if (w == 0.0) continue;
                        acc += w * img.at(symm_ref(i, img.height), symm_ref(j, img.width), c);
                        wsum += w;
                    }
                out.at(yo, xo, c) = acc / wsum;
            }
        }
    return out;
}

ImageBuf random_image(int64_t w, int64_t h, int64_t c, uint64_t seed) {
    Rng rng(seed);
    ImageBuf img(w, h, c);
    for (auto& v : img.pix) v = rng.uniform();
    return img;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("bicubic resize at scale 1 is the identity") {
    auto img = random_image(13, 9, 3, 42);
    auto out = bicubic_resize(img, 1.0);
    REQUIRE(out.width == img.width);
    REQUIRE(out.height == img.height);
    for (size_t i = 0; i < img.pix.size(); ++i) CHECK(out.pix[i] == doctest::Approx(img.pix[i]).epsilon(1e-15));
}

TEST_CASE("bicubic resize preserves constant images at any scale") {
    for (double s : {0.25, 0.5, 2.0, 3.0, 1.5}) {
        ImageBuf img(12, 8, 1);
        for (auto& v : img.pix) v = 0.3125;
        auto out = bicubic_resize(img, s);
        for (double v : out.pix) CHECK(std::abs(v - 0.3125) < 1e-12);
    }
}

TEST_CASE("bicubic downscale matches the direct-summation oracle") {
    auto img = random_image(16, 12, 3, 7);
    for (double s : {0.5, 0.25}) {
        for (bool aa : {true, false}) {
            auto fast = bicubic_resize(img, s, aa);
            auto ref = resize_oracle(img, s, aa);
            REQUIRE(fast.pix.size() == ref.pix.size());
            double maxdiff = 0.0;
            for (size_t i = 0; i < fast.pix.size(); ++i)
                maxdiff = std::max(maxdiff, std::abs(fast.pix[i] - ref.pix[i]));
            CHECK(maxdiff <= 1e-12);
        }
    }
}

TEST_CASE("bicubic 1-D ramp downscale matches oracle on a ramp image") {
    ImageBuf img(32, 4, 1);
    for (int64_t y = 0; y < 4; ++y)
        for (int64_t x = 0; x < 32; ++x) img.at(y, x, 0) = x / 31.0;
    auto fast = bicubic_resize(img, 0.5, true);
    auto ref = resize_oracle(img, 0.5, true);
    for (size_t i = 0; i < fast.pix.size(); ++i)
        CHECK(std::abs(fast.pix[i] - ref.pix[i]) <= 1e-12);
    // Interior of a downscaled ramp stays a ramp with doubled slope.
    CHECK(std::abs((fast.at(1, 8, 0) - fast.at(1, 7, 0)) - 2.0 / 31.0) < 1e-9);
}

TEST_CASE("bicubic upscale matches the direct-summation oracle") {
    auto img = random_image(9, 7, 1, 11);
    auto fast = bicubic_resize(img, 2.0);
    auto ref = resize_oracle(img, 2.0, true);
    for (size_t i = 0; i < fast.pix.size(); ++i)
        CHECK(std::abs(fast.pix[i] - ref.pix[i]) <= 1e-12);
}

TEST_CASE("rgb_to_y known values") {
    ImageBuf img(2, 1, 3);
    // pixel 0: black, pixel 1: white
    img.at(0, 1, 0) = img.at(0, 1, 1) = img.at(0, 1, 2) = 1.0;
    auto y = rgb_to_y(img);
    CHECK(std::abs(y.at(0, 0, 0) - 16.0 / 255.0) < 1e-12);
    CHECK(std::abs(y.at(0, 1, 0) - 235.0 / 255.0) < 1e-9);

    ImageBuf gray(1, 1, 3);
    gray.at(0, 0, 0) = gray.at(0, 0, 1) = gray.at(0, 0, 2) = 0.5;
    auto yg = rgb_to_y(gray);
    CHECK(std::abs(yg.at(0, 0, 0) - (16.0 + 219.0 * 0.5) / 255.0) < 1e-9);

    ImageBuf bad(2, 2, 1);
    CHECK_THROWS_AS(rgb_to_y(bad), ShapeError);
}

TEST_CASE("psnr basics") {
    auto a = random_image(20, 16, 1, 3);
    CHECK(std::isinf(psnr(a, a)));

    ImageBuf b = a;
    for (auto& v : b.pix) v += 0.1;
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));
    CHECK(psnr(a, b) == psnr(b, a));

    // Strictly decreasing in noise amplitude.
    double prev = psnr(a, b);
    for (double amp : {0.2, 0.3, 0.4}) {
        ImageBuf c = a;
        for (auto& v : c.pix) v += amp;
        double p = psnr(a, c);
        CHECK(p < prev);
        prev = p;
    }

    ImageBuf small(4, 4, 1);
    CHECK_THROWS_AS(psnr(a, small), ShapeError);
    CHECK_THROWS_AS(psnr(a, a, 100), ShapeError);
}

TEST_CASE("psnr with border crop ignores border pixels") {
    auto a = random_image(16, 16, 1, 5);
    ImageBuf b = a;
    b.at(0, 0, 0) = 1.0 - b.at(0, 0, 0) * 0.5 + 0.25;  // corrupt a corner
    CHECK(std::isfinite(psnr(a, b)));
    CHECK(std::isinf(psnr(a, b, 2)));
}

TEST_CASE("ssim basics") {
    auto a = random_image(24, 20, 1, 9);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));

    auto b = random_image(24, 20, 1, 10);
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));

    ImageBuf tiny(8, 8, 1);
    CHECK_THROWS_AS(ssim(tiny, tiny), ShapeError);
}

TEST_CASE("ssim closed form on constant images") {
    // Zero variance: ssim = (2ab+c1)/(a^2+b^2+c1).
    ImageBuf a(16, 16, 1), b(16, 16, 1);
    for (auto& v : a.pix) v = 0.25;
    for (auto& v : b.pix) v = 0.75;
    const double c1 = 0.01 * 0.01;
    const double expect = (2 * 0.25 * 0.75 + c1) / (0.25 * 0.25 + 0.75 * 0.75 + c1);
    CHECK(ssim(a, b) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("ssim of a checkerboard against its inverse is near negative correlation") {
    ImageBuf a(24, 24, 1), b(24, 24, 1);
    for (int64_t y = 0; y < 24; ++y)
        for (int64_t x = 0; x < 24; ++x) {
            a.at(y, x, 0) = static_cast<double>((x + y) % 2);
            b.at(y, x, 0) = 1.0 - a.at(y, x, 0);
        }
    CHECK(ssim(a, b) < 0.1);
}

TEST_CASE("nme closed forms") {
    auto s = randn<double>({1, 4, 6, 5}, 77);
    auto rep0 = nme(s, s);
    CHECK(rep0.nme_scalar == 0.0);
    CHECK(rep0.map_h == 6);
    CHECK(rep0.map_w == 5);

    // Constant offset c: nme = c/sqrt(N).
    const double c = 0.37;
    auto d = zeros_like<double>(s);
    for (size_t i = 0; i < d.data->size(); ++i) (*d.data)[i] = (*s.data)[i] + c;
    auto rep = nme(s, d);
    const double n = static_cast<double>(s.shape.numel());
    CHECK(std::abs(rep.nme_scalar - c / std::sqrt(n)) <= 1e-12);

    // Homogeneity: scaling the difference scales the scalar.
    auto d2 = zeros_like<double>(s);
    for (size_t i = 0; i < d2.data->size(); ++i) (*d2.data)[i] = (*s.data)[i] + 3.0 * c;
    auto rep2 = nme(s, d2);
    CHECK(rep2.nme_scalar == doctest::Approx(3.0 * rep.nme_scalar).epsilon(1e-12));

    // Binarization against explicit thresholds brackets the constant map
    // value c*sqrt(channels).
    auto lo = nme(s, d, 1.0);
    for (uint8_t v : lo.binarized) CHECK(v == 0);
    auto hi = nme(s, d, 0.5);
    for (uint8_t v : hi.binarized) CHECK(v == 1);

    auto bad = zeros<double>({1, 4, 5, 6});
    CHECK_THROWS_AS(nme(s, bad), ShapeError);
}

TEST_CASE("dihedral transforms invert exactly and permute pixels") {
    auto x = randn<double>({2, 3, 5, 7}, 123);
    for (int k = 0; k < 8; ++k) {
        auto y = dihedral_apply(x, k);
        int64_t oh, ow;
        dihedral_dims(k, 5, 7, oh, ow);
        CHECK(y.shape.h == oh);
        CHECK(y.shape.w == ow);
        auto back = dihedral_invert(y, k);
        REQUIRE(back.shape == x.shape);
        for (size_t i = 0; i < x.data->size(); ++i) CHECK((*back.data)[i] == (*x.data)[i]);
    }
}

TEST_CASE("dihedral transforms on a marked 2x2 image match hand derivation") {
    // [a b; c d] with a=1 b=2 c=3 d=4.
    auto x = from_vector<double>({1, 1, 2, 2}, {1, 2, 3, 4});
    auto ccw = dihedral_apply(x, 1);  // 90 CCW: [b d; a c]
    CHECK((*ccw.data) == std::vector<double>{2, 4, 1, 3});
    auto rot2 = dihedral_apply(x, 2);  // 180: [d c; b a]
    CHECK((*rot2.data) == std::vector<double>{4, 3, 2, 1});
    auto flip = dihedral_apply(x, 4);  // horizontal flip: [b a; d c]
    CHECK((*flip.data) == std::vector<double>{2, 1, 4, 3});
}

TEST_CASE("self-ensemble equals single pass for an equivariant model") {
    auto lr = randn<double>({1, 3, 6, 6}, 5);
    std::function<Tensor<double>(const Tensor<double>&)> fwd = [](const Tensor<double>& t) {
        return nearest_up2(t);
    };
    auto single = fwd(lr);
    auto ens = self_ensemble(fwd, lr);
    REQUIRE(ens.shape == single.shape);
    for (size_t i = 0; i < ens.data->size(); ++i)
        CHECK(std::abs((*ens.data)[i] - (*single.data)[i]) < 1e-12);
}

TEST_CASE("png round trip preserves 8-bit data") {
    auto img = random_image(17, 11, 3, 99);
    img.quantize8();
    const auto path = temp_path("hpun_png_rt.png");
    write_png(path, img);
    auto back = read_png(path);
    REQUIRE(back.width == img.width);
    REQUIRE(back.height == img.height);
    REQUIRE(back.channels == 3);
    for (size_t i = 0; i < img.pix.size(); ++i)
        CHECK(std::abs(back.pix[i] - img.pix[i]) < 1e-12);
    std::filesystem::remove(path);
}

TEST_CASE("png reader rejects non-PNG data") {
    const auto path = temp_path("hpun_png_bad.png");
    { std::ofstream(path) << "definitely not a png"; }
    CHECK_THROWS_AS(read_png(path), DataError);
    CHECK_THROWS_AS(read_png(temp_path("hpun_png_missing.png")), DataError);
    std::filesystem::remove(path);
}

TEST_CASE("grayscale png write and read back via rgb expansion") {
    ImageBuf g(9, 6, 1, Colorspace::Gray);
    Rng rng(4);
    for (auto& v : g.pix) v = rng.uniform();
    g.quantize8();
    const auto path = temp_path("hpun_png_gray.png");
    write_png(path, g);
    auto back = read_png(path);  // reader expands to RGB
    REQUIRE(back.channels == 3);
    for (int64_t y = 0; y < g.height; ++y)
        for (int64_t x = 0; x < g.width; ++x)
            for (int64_t c = 0; c < 3; ++c)
                CHECK(std::abs(back.at(y, x, c) - g.at(y, x, 0)) < 1e-12);
    std::filesystem::remove(path);
}
