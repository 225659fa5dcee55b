// Serial reference vs OpenMP kernels on representative sizes.

#include "pedsynth/kernels.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace k = pedsynth::kernels;

namespace {

std::vector<std::uint8_t> noise_bytes(std::size_t n) {
    std::mt19937_64 gen(1);
    std::uniform_int_distribution<int> d(0, 255);
    std::vector<std::uint8_t> v(n);
    for (auto &b : v) b = static_cast<std::uint8_t>(d(gen));
    return v;
}

constexpr int kWidth = 256, kHeight = 512, kChannels = 3;

template <auto Fn> void bm_convolve(benchmark::State &state) {
    const auto src = noise_bytes(std::size_t(kWidth) * kHeight * kChannels);
    std::vector<std::uint8_t> dst(src.size());
    const auto taps = k::gaussian_taps(static_cast<int>(state.range(0)), 25);
    for (auto _ : state) {
        Fn(src, kWidth, kHeight, kChannels, taps, dst);
        benchmark::DoNotOptimize(dst.data());
    }
}

template <auto Fn> void bm_resize(benchmark::State &state) {
    const auto src = noise_bytes(std::size_t(kWidth) * kHeight * kChannels);
    std::vector<std::uint8_t> dst(std::size_t(kWidth / 2) * (kHeight / 2) * kChannels);
    for (auto _ : state) {
        Fn(src, kWidth, kHeight, kChannels, dst, kWidth / 2, kHeight / 2);
        benchmark::DoNotOptimize(dst.data());
    }
}

template <auto Fn> void bm_covariance(benchmark::State &state) {
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(state.range(0), 256);
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    for (auto _ : state) {
        Fn(x, mean, cov);
        benchmark::DoNotOptimize(cov.data());
    }
}

template <auto Fn> void bm_confusion(benchmark::State &state) {
    const Eigen::MatrixXd scores = (Eigen::MatrixXd::Random(state.range(0), 51).array() + 1) / 2;
    const Eigen::MatrixXi labels = (Eigen::MatrixXd::Random(state.range(0), 51).array() > 0).cast<int>();
    for (auto _ : state) benchmark::DoNotOptimize(Fn(scores, labels, 0.5));
}

template <auto Fn> void bm_mix(benchmark::State &state) {
    const auto src = noise_bytes(std::size_t(kWidth) * kHeight * kChannels);
    std::vector<std::uint8_t> dst(src.size());
    const k::MixParams params{0.6, 42, 2.0, 7};
    for (auto _ : state) {
        Fn(src, params, dst);
        benchmark::DoNotOptimize(dst.data());
    }
}

} // namespace

BENCHMARK(bm_convolve<k::serial::convolve_separable>)->Name("convolve/serial")->Arg(5)->Arg(25);
BENCHMARK(bm_convolve<k::parallel::convolve_separable>)->Name("convolve/parallel")->Arg(5)->Arg(25);
BENCHMARK(bm_resize<k::serial::resize_bilinear>)->Name("resize/serial");
BENCHMARK(bm_resize<k::parallel::resize_bilinear>)->Name("resize/parallel");
BENCHMARK(bm_covariance<k::serial::mean_covariance>)->Name("covariance/serial")->Arg(2000);
BENCHMARK(bm_covariance<k::parallel::mean_covariance>)->Name("covariance/parallel")->Arg(2000);
BENCHMARK(bm_confusion<k::serial::confusion_counts>)->Name("confusion/serial")->Arg(10000);
BENCHMARK(bm_confusion<k::parallel::confusion_counts>)->Name("confusion/parallel")->Arg(10000);
BENCHMARK(bm_mix<k::serial::mix_noise>)->Name("mix_noise/serial");
BENCHMARK(bm_mix<k::parallel::mix_noise>)->Name("mix_noise/parallel");

BENCHMARK_MAIN();
