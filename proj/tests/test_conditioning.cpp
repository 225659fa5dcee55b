#include "fixtures.hpp"

#include "pedsynth/conditioning.hpp"
#include "pedsynth/error.hpp"
#include "pedsynth/kernels.hpp"

#include <doctest.h>

#include <cmath>

using namespace pedsynth;

namespace {

// Direct 2-D convolution with the outer-product kernel and edge replication.
Image dense_blur_oracle(const Image &img, int ksize, double sigma) {
    const int r = ksize / 2;
    std::vector<double> g(static_cast<std::size_t>(ksize));
    double sum = 0;
    for (int k = -r; k <= r; ++k) sum += g[static_cast<std::size_t>(k + r)] = std::exp(-(k * k) / (2 * sigma * sigma));
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        const int xx = std::clamp(x + dx, 0, img.width - 1);
                        const int yy = std::clamp(y + dy, 0, img.height - 1);
                        acc += g[static_cast<std::size_t>(dx + r)] * g[static_cast<std::size_t>(dy + r)] / (sum * sum) *
                               img.at(xx, yy, c);
                    }
                out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(acc));
            }
    return out;
}

int max_channel_diff(const Image &a, const Image &b) {
    int m = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) m = std::max(m, std::abs(int(a.pixels[i]) - int(b.pixels[i])));
    return m;
}

} // namespace

TEST_CASE("blur levels") {
    CHECK(blur_params(BlurLevel::low).kernel == 5);
    CHECK(blur_params(BlurLevel::low).sigma == 5);
    CHECK(blur_params(BlurLevel::medium).kernel == 15);
    CHECK(blur_params(BlurLevel::medium).sigma == 25);
    CHECK(blur_params(BlurLevel::high).kernel == 25);
    CHECK(blur_params(BlurLevel::high).sigma == 50);

    const Image img = procedural_image(17, 23, 4);
    CHECK(apply_blur(img, BlurLevel::none) == img);
    const Image flat(9, 7, 131);
    for (auto level : {BlurLevel::low, BlurLevel::medium, BlurLevel::high}) CHECK(apply_blur(flat, level) == flat);
}

TEST_CASE("blur matches the dense convolution oracle") {
    Image dot(3, 3, 0);
    for (int c = 0; c < 3; ++c) dot.at(1, 1, c) = 255;
    for (auto level : {BlurLevel::low, BlurLevel::medium, BlurLevel::high}) {
        const auto p = blur_params(level);
        for (const Image &img : {dot, procedural_image(6, 5, 1), procedural_image(11, 13, 2)}) {
            CAPTURE(to_string(level));
            const Image got = apply_blur(img, level);
            CHECK(got.width == img.width);
            CHECK(got.height == img.height);
            CHECK(max_channel_diff(got, dense_blur_oracle(img, p.kernel, p.sigma)) <= 1);
        }
    }
}

TEST_CASE("blur deviation grows with level") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Image img = procedural_image(48, 96, 1000 + seed);
        const double low = mean_abs_difference(img, apply_blur(img, BlurLevel::low));
        const double med = mean_abs_difference(img, apply_blur(img, BlurLevel::medium));
        const double high = mean_abs_difference(img, apply_blur(img, BlurLevel::high));
        CAPTURE(seed);
        CHECK(low < med);
        CHECK(med < high);
    }
}

TEST_CASE("context window arithmetic") {
    struct Case {
        int w, h;
        BBox box;
        double f;
        BBox expected;
    };
    // Each expected window is bbox +- floor(f * margin) per side.
    const Case cases[] = {
        {100, 100, {40, 40, 20, 20}, 0.50, {20, 20, 60, 60}},
        {100, 100, {40, 40, 20, 20}, 1.00, {0, 0, 100, 100}},
        {100, 100, {0, 0, 100, 100}, 0.25, {0, 0, 100, 100}},
        {100, 100, {0, 0, 100, 100}, 0.10, {0, 0, 100, 100}},
        {100, 100, {40, 40, 20, 20}, 0.10, {36, 36, 28, 28}},
        {100, 100, {40, 40, 20, 20}, 0.25, {30, 30, 40, 40}},
        {200, 120, {10, 30, 50, 60}, 0.50, {5, 15, 125, 90}},
        {200, 120, {10, 30, 50, 60}, 0.10, {9, 27, 65, 66}},
        {64, 128, {0, 10, 64, 100}, 0.50, {0, 5, 64, 114}},
        {64, 128, {5, 5, 1, 1}, 1.00, {0, 0, 64, 128}},
    };
    for (const auto &c : cases) {
        CAPTURE(c.f);
        CHECK(context_window(c.w, c.h, c.box, c.f) == c.expected);
    }
    CHECK_THROWS_AS(context_window(10, 10, {5, 5, 10, 1}, 0.5), InvalidArgument);
    CHECK_THROWS_AS(context_window(10, 10, {5, 5, 0, 3}, 0.5), InvalidArgument);
    CHECK_THROWS_AS(context_window(10, 10, {1, 1, 2, 2}, 0.0), InvalidArgument);
}

TEST_CASE("crop_context keeps the bbox and shrinks with fraction") {
    const Image img = procedural_image(90, 180, 8);
    const BBox box{30, 50, 25, 70};
    CHECK(crop_context(img, box, 1.0) == img);
    double prev_ratio = 2;
    for (double f : {0.10, 0.25, 0.50, 1.00}) {
        const BBox w = context_window(img.width, img.height, box, f);
        const Image out = crop_context(img, box, f);
        CHECK(out.width == w.w);
        for (int y = 0; y < box.h; ++y)
            for (int x = 0; x < box.w; ++x)
                for (int c = 0; c < 3; ++c) REQUIRE(out.at(box.x - w.x + x, box.y - w.y + y, c) == img.at(box.x + x, box.y + y, c));
        const double ratio = double(box.w) * box.h / (double(w.w) * w.h);
        CHECK(ratio <= prev_ratio);
        prev_ratio = ratio;
    }
}

TEST_CASE("downscale dimensions") {
    const Image a = downscale(procedural_image(160, 576, 1), 0.5, 8);
    CHECK(a.width == 80);
    CHECK(a.height == 288);
    const Image b = downscale(Image(64, 64, 9), 0.25, 8);
    CHECK(Size{b.width, b.height} == Size{16, 16});
    CHECK(b == Image(16, 16, 9));
    CHECK_THROWS_AS(downscale(Image(20, 20), 0.25, 8), InvalidArgument);
    // 159 * 0.5 = 79.5 -> 79 -> 72
    const Image c = downscale(Image(159, 570), 0.5, 8);
    CHECK(Size{c.width, c.height} == Size{72, 280});
}

TEST_CASE("aspect reshaping") {
    CHECK(aspect_size(100, 400, AspectMode::square) == Size{200, 200});
    CHECK(aspect_size(123, 123, AspectMode::square) == Size{123, 123});
    CHECK(aspect_size(200, 100, AspectMode::wide) == Size{200, 100});
    CHECK(aspect_size(100, 200, AspectMode::tall) == Size{100, 200});
    CHECK(aspect_size(100, 400, AspectMode::wide) == Size{288, 144});
    CHECK(aspect_size(100, 400, AspectMode::tall) == Size{144, 288});
    for (int w : {37, 90, 160, 333})
        for (int h : {41, 180, 576}) {
            const Size s = aspect_size(w, h, AspectMode::wide);
            CHECK(s.width >= 2 * s.height - 8);
            CHECK(s.height % 8 == 0);
            const double area = double(w) * h;
            // Snapping the short side moves it by at most g/2.
            const double short_side = std::sqrt(area / 2);
            CHECK(std::abs(s.height - short_side) <= 4.0 + 1e-9 + std::max(0.0, 8 - short_side));
        }
    const Image sq = reshape_aspect(procedural_image(100, 400, 3), AspectMode::square);
    CHECK(Size{sq.width, sq.height} == Size{200, 200});
}

TEST_CASE("conditioning specs") {
    for (const char *s : {"identity", "blur:medium", "context:0.25", "resolution:0.5", "aspect:tall"})
        CHECK(to_string(parse_conditioning(s)) == s);
    CHECK_THROWS_AS(parse_conditioning("blur:extreme"), InvalidArgument);
    CHECK_THROWS_AS(parse_conditioning("context:1.5"), InvalidArgument);
    CHECK_THROWS_AS(parse_conditioning("swirl:1"), InvalidArgument);
    const Image img = procedural_image(64, 64, 2);
    CHECK_THROWS_AS(apply_conditioning(img, parse_conditioning("context:0.5"), std::nullopt), InvalidArgument);
    CHECK(apply_conditioning(img, parse_conditioning("context:0.5"), BBox{16, 16, 32, 32}).width == 48);
}

TEST_CASE("fit_granularity") {
    const Image img = procedural_image(90, 181, 5);
    const Image f = fit_granularity(img, 8);
    CHECK(Size{f.width, f.height} == Size{88, 176});
    CHECK(fit_granularity(f, 8) == f);
    CHECK(Size{fit_granularity(Image(3, 20), 8).width, 0} == Size{8, 0});
}

TEST_CASE("image files round trip") {
    fixtures::TempDir dir("img");
    const Image img = procedural_image(31, 17, 6);
    write_image(img, dir.path() / "a.png");
    CHECK(read_image(dir.path() / "a.png") == img);
    write_image(img, dir.path() / "a.jpg");
    const Image j = read_image(dir.path() / "a.jpg");
    CHECK(j.width == 31);
    CHECK(mean_abs_difference(j, img) < 6);
    CHECK_THROWS_AS(read_image(dir.path() / "missing.png"), IoError);
}

TEST_CASE("serial and parallel kernels agree exactly") {
    const Image img = procedural_image(67, 45, 12);
    for (auto level : {BlurLevel::low, BlurLevel::high}) {
        const auto p = blur_params(level);
        const auto taps = kernels::gaussian_taps(p.kernel, p.sigma);
        std::vector<std::uint8_t> a(img.pixels.size()), b(img.pixels.size());
        kernels::serial::convolve_separable(img.pixels, img.width, img.height, 3, taps, a);
        kernels::parallel::convolve_separable(img.pixels, img.width, img.height, 3, taps, b);
        CHECK(a == b);
    }
    std::vector<std::uint8_t> ra(40 * 90 * 3), rb(ra.size());
    kernels::serial::resize_bilinear(img.pixels, img.width, img.height, 3, ra, 40, 90);
    kernels::parallel::resize_bilinear(img.pixels, img.width, img.height, 3, rb, 40, 90);
    CHECK(ra == rb);

    const kernels::MixParams mp{0.6, 42, 3.0, 7};
    std::vector<std::uint8_t> ma(img.pixels.size()), mb(img.pixels.size());
    kernels::serial::mix_noise(img.pixels, mp, ma);
    kernels::parallel::mix_noise(img.pixels, mp, mb);
    CHECK(ma == mb);

    pedsynth::Rng rng(3);
    Eigen::MatrixXd x(300, 37);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
    Eigen::VectorXd m1, m2;
    Eigen::MatrixXd c1, c2;
    kernels::serial::mean_covariance(x, m1, c1);
    kernels::parallel::mean_covariance(x, m2, c2);
    CHECK(m1 == m2);
    CHECK(c1 == c2);

    Eigen::MatrixXi labels(300, 37);
    for (Eigen::Index i = 0; i < labels.rows(); ++i)
        for (Eigen::Index j = 0; j < labels.cols(); ++j) labels(i, j) = static_cast<int>(rng.below(2));
    Eigen::MatrixXd scores = (x.array() * 0.2 + 0.5).matrix();
    CHECK(kernels::serial::confusion_counts(scores, labels, 0.5) == kernels::parallel::confusion_counts(scores, labels, 0.5));
}
