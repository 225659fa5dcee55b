#include "pedsynth/kernels.hpp"

#include "pedsynth/error.hpp"
#include "pedsynth/rng.hpp"

#include <algorithm>
#include <cmath>

namespace pedsynth::kernels {

std::vector<double> gaussian_taps(int ksize, double sigma) {
    if (ksize < 1 || ksize % 2 == 0) throw InvalidArgument("gaussian kernel size must be odd and positive");
    if (!(sigma > 0)) throw InvalidArgument("gaussian sigma must be positive");
    const int r = ksize / 2;
    std::vector<double> taps(static_cast<std::size_t>(ksize));
    double sum = 0;
    for (int k = -r; k <= r; ++k) {
        taps[static_cast<std::size_t>(k + r)] = std::exp(-(k * k) / (2.0 * sigma * sigma));
        sum += taps[static_cast<std::size_t>(k + r)];
    }
    for (double &t : taps) t /= sum;
    return taps;
}

namespace {

// Per-element bodies shared by both variants so results match bit for bit.

inline std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0)); }

inline double horizontal_tap(std::span<const std::uint8_t> src, int width, int channels, std::span<const double> taps,
                             int x, int y, int c) {
    const int r = static_cast<int>(taps.size() / 2);
    const std::size_t row = static_cast<std::size_t>(y) * width;
    double acc = 0;
    for (int k = -r; k <= r; ++k) {
        const int xx = std::clamp(x + k, 0, width - 1);
        acc += taps[static_cast<std::size_t>(k + r)] * src[(row + xx) * channels + c];
    }
    return acc;
}

inline std::uint8_t vertical_tap(const std::vector<double> &tmp, int width, int height, int channels,
                                 std::span<const double> taps, int x, int y, int c) {
    const int r = static_cast<int>(taps.size() / 2);
    double acc = 0;
    for (int k = -r; k <= r; ++k) {
        const int yy = std::clamp(y + k, 0, height - 1);
        acc += taps[static_cast<std::size_t>(k + r)] * tmp[(static_cast<std::size_t>(yy) * width + x) * channels + c];
    }
    return to_u8(acc);
}

inline void bilinear_pixel(std::span<const std::uint8_t> src, int width, int height, int channels,
                           std::span<std::uint8_t> dst, int out_width, int out_height, int x, int y) {
    const double sx = std::clamp((x + 0.5) * width / out_width - 0.5, 0.0, width - 1.0);
    const double sy = std::clamp((y + 0.5) * height / out_height - 0.5, 0.0, height - 1.0);
    const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
    const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
    const double fx = sx - x0, fy = sy - y0;
    auto px = [&](int xx, int yy, int c) {
        return static_cast<double>(src[(static_cast<std::size_t>(yy) * width + xx) * channels + c]);
    };
    for (int c = 0; c < channels; ++c) {
        const double top = px(x0, y0, c) * (1 - fx) + px(x1, y0, c) * fx;
        const double bottom = px(x0, y1, c) * (1 - fx) + px(x1, y1, c) * fx;
        dst[(static_cast<std::size_t>(y) * out_width + x) * channels + c] = to_u8(top * (1 - fy) + bottom * fy);
    }
}

inline double covariance_entry(const Eigen::MatrixXd &x, const Eigen::VectorXd &mean, Eigen::Index a, Eigen::Index b) {
    double acc = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) acc += (x(i, a) - mean(a)) * (x(i, b) - mean(b));
    return acc / static_cast<double>(x.rows() - 1);
}

inline double column_mean(const Eigen::MatrixXd &x, Eigen::Index j) {
    double acc = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) acc += x(i, j);
    return acc / static_cast<double>(x.rows());
}

inline Confusion column_confusion(const Eigen::MatrixXd &scores, const Eigen::MatrixXi &labels, double threshold,
                                  Eigen::Index j) {
    Confusion c;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const bool pred = scores(i, j) >= threshold;
        if (labels(i, j) != 0)
            (pred ? c.tp : c.fn)++;
        else
            (pred ? c.fp : c.tn)++;
    }
    return c;
}

inline std::uint8_t mix_element(std::uint8_t in, const MixParams &p, std::size_t i) {
    double v = in;
    if (p.perturb_sigma > 0) v += p.perturb_sigma * hashed_normal(p.perturb_key, i);
    const double noise = 255.0 * unit_from_bits(splitmix64(hash_combine(p.noise_key, i)));
    return to_u8((1.0 - p.strength) * v + p.strength * noise);
}

void check_convolve(std::span<const std::uint8_t> src, int width, int height, int channels, std::span<const double> taps,
                    std::span<std::uint8_t> dst) {
    const std::size_t n = static_cast<std::size_t>(width) * height * channels;
    if (width < 1 || height < 1 || channels < 1 || src.size() != n || dst.size() != n)
        throw InvalidArgument("convolve_separable: buffer size mismatch");
    if (taps.empty() || taps.size() % 2 == 0) throw InvalidArgument("convolve_separable: taps must have odd length");
}

void check_resize(std::span<const std::uint8_t> src, int width, int height, int channels, std::span<std::uint8_t> dst,
                  int out_width, int out_height) {
    if (width < 1 || height < 1 || out_width < 1 || out_height < 1 ||
        src.size() != static_cast<std::size_t>(width) * height * channels ||
        dst.size() != static_cast<std::size_t>(out_width) * out_height * channels)
        throw InvalidArgument("resize_bilinear: buffer size mismatch");
}

void check_cov(const Eigen::MatrixXd &x) {
    if (x.rows() < 2) throw InvalidArgument("mean_covariance: need at least two rows");
}

void check_confusion(const Eigen::MatrixXd &scores, const Eigen::MatrixXi &labels) {
    if (scores.rows() != labels.rows() || scores.cols() != labels.cols())
        throw InvalidArgument("confusion_counts: shape mismatch");
}

} // namespace

namespace serial {

void convolve_separable(std::span<const std::uint8_t> src, int width, int height, int channels,
                        std::span<const double> taps, std::span<std::uint8_t> dst) {
    check_convolve(src, width, height, channels, taps, dst);
    std::vector<double> tmp(src.size());
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < channels; ++c)
                tmp[(static_cast<std::size_t>(y) * width + x) * channels + c] = horizontal_tap(src, width, channels, taps, x, y, c);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < channels; ++c)
                dst[(static_cast<std::size_t>(y) * width + x) * channels + c] = vertical_tap(tmp, width, height, channels, taps, x, y, c);
}

void resize_bilinear(std::span<const std::uint8_t> src, int width, int height, int channels, std::span<std::uint8_t> dst,
                     int out_width, int out_height) {
    check_resize(src, width, height, channels, dst, out_width, out_height);
    for (int y = 0; y < out_height; ++y)
        for (int x = 0; x < out_width; ++x) bilinear_pixel(src, width, height, channels, dst, out_width, out_height, x, y);
}

void mean_covariance(const Eigen::MatrixXd &x, Eigen::VectorXd &mean, Eigen::MatrixXd &cov) {
    check_cov(x);
    const Eigen::Index d = x.cols();
    mean.resize(d);
    cov.resize(d, d);
    for (Eigen::Index j = 0; j < d; ++j) mean(j) = column_mean(x, j);
    for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = a; b < d; ++b) cov(a, b) = cov(b, a) = covariance_entry(x, mean, a, b);
}

std::vector<Confusion> confusion_counts(const Eigen::MatrixXd &scores, const Eigen::MatrixXi &labels, double threshold) {
    check_confusion(scores, labels);
    std::vector<Confusion> out(static_cast<std::size_t>(scores.cols()));
    for (Eigen::Index j = 0; j < scores.cols(); ++j) out[static_cast<std::size_t>(j)] = column_confusion(scores, labels, threshold, j);
    return out;
}

void mix_noise(std::span<const std::uint8_t> in, const MixParams &params, std::span<std::uint8_t> out) {
    if (in.size() != out.size()) throw InvalidArgument("mix_noise: buffer size mismatch");
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = mix_element(in[i], params, i);
}

} // namespace serial

namespace parallel {

void convolve_separable(std::span<const std::uint8_t> src, int width, int height, int channels,
                        std::span<const double> taps, std::span<std::uint8_t> dst) {
    check_convolve(src, width, height, channels, taps, dst);
    std::vector<double> tmp(src.size());
#pragma omp parallel
    {
#pragma omp for schedule(static)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                for (int c = 0; c < channels; ++c)
                    tmp[(static_cast<std::size_t>(y) * width + x) * channels + c] =
                        horizontal_tap(src, width, channels, taps, x, y, c);
        // implicit barrier: the vertical pass reads rows written by other threads
#pragma omp for schedule(static)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                for (int c = 0; c < channels; ++c)
                    dst[(static_cast<std::size_t>(y) * width + x) * channels + c] =
                        vertical_tap(tmp, width, height, channels, taps, x, y, c);
    }
}

void resize_bilinear(std::span<const std::uint8_t> src, int width, int height, int channels, std::span<std::uint8_t> dst,
                     int out_width, int out_height) {
    check_resize(src, width, height, channels, dst, out_width, out_height);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < out_height; ++y)
        for (int x = 0; x < out_width; ++x) bilinear_pixel(src, width, height, channels, dst, out_width, out_height, x, y);
}

void mean_covariance(const Eigen::MatrixXd &x, Eigen::VectorXd &mean, Eigen::MatrixXd &cov) {
    check_cov(x);
    const Eigen::Index d = x.cols();
    mean.resize(d);
    cov.resize(d, d);
#pragma omp parallel
    {
#pragma omp for schedule(static)
        for (Eigen::Index j = 0; j < d; ++j) mean(j) = column_mean(x, j);
        // Row a costs d - a entries; dynamic scheduling evens that out.
#pragma omp for schedule(dynamic, 8)
        for (Eigen::Index a = 0; a < d; ++a)
            for (Eigen::Index b = a; b < d; ++b) cov(a, b) = cov(b, a) = covariance_entry(x, mean, a, b);
    }
}

std::vector<Confusion> confusion_counts(const Eigen::MatrixXd &scores, const Eigen::MatrixXi &labels, double threshold) {
    check_confusion(scores, labels);
    std::vector<Confusion> out(static_cast<std::size_t>(scores.cols()));
#pragma omp parallel for schedule(static)
    for (Eigen::Index j = 0; j < scores.cols(); ++j) out[static_cast<std::size_t>(j)] = column_confusion(scores, labels, threshold, j);
    return out;
}

void mix_noise(std::span<const std::uint8_t> in, const MixParams &params, std::span<std::uint8_t> out) {
    if (in.size() != out.size()) throw InvalidArgument("mix_noise: buffer size mismatch");
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(in.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] = mix_element(in[static_cast<std::size_t>(i)], params, static_cast<std::size_t>(i));
}

} // namespace parallel

} // namespace pedsynth::kernels
