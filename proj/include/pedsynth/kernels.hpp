#pragma once

// Data-parallel inner loops. Every kernel has a serial reference and an
// OpenMP version; the parallel versions only partition independent output
// elements, so both produce identical results and the tests compare them
// with exact equality.

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace pedsynth::kernels {

struct Confusion {
    std::int64_t tp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;
    std::int64_t fp = 0;

    bool operator==(const Confusion &) const = default;
};

/// Parameters of the mock backend's per-element mixing.
struct MixParams {
    double strength = 0;
    std::uint64_t noise_key = 0;
    /// Additive N(0, perturb_sigma^2) applied to the input before mixing; 0 disables.
    double perturb_sigma = 0;
    std::uint64_t perturb_key = 0;
};

// Normalized 1-D Gaussian taps of odd length `ksize`.
std::vector<double> gaussian_taps(int ksize, double sigma);

#define PEDSYNTH_KERNEL_DECLS                                                                                          \
    /* Separable convolution of an interleaved image with edge replication. */                                         \
    void convolve_separable(std::span<const std::uint8_t> src, int width, int height, int channels,                   \
                            std::span<const double> taps, std::span<std::uint8_t> dst);                                \
    /* Bilinear resampling with half-pixel centres and clamped borders. */                                             \
    void resize_bilinear(std::span<const std::uint8_t> src, int width, int height, int channels,                      \
                         std::span<std::uint8_t> dst, int out_width, int out_height);                                  \
    /* Column means and unbiased covariance of the rows of x. */                                                       \
    void mean_covariance(const Eigen::MatrixXd &x, Eigen::VectorXd &mean, Eigen::MatrixXd &cov);                       \
    /* Per-column confusion counts of (scores >= threshold) against 0/1 labels. */                                     \
    std::vector<Confusion> confusion_counts(const Eigen::MatrixXd &scores, const Eigen::MatrixXi &labels,              \
                                            double threshold);                                                         \
    /* out = round((1 - s) * (in + perturbation) + s * noise), clamped to [0, 255]. */                                 \
    void mix_noise(std::span<const std::uint8_t> in, const MixParams &params, std::span<std::uint8_t> out);

namespace serial {
PEDSYNTH_KERNEL_DECLS
}
namespace parallel {
PEDSYNTH_KERNEL_DECLS
}

#undef PEDSYNTH_KERNEL_DECLS

} // namespace pedsynth::kernels
