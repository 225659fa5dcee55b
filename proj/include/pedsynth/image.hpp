#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace pedsynth {

/// Interleaved 8-bit RGB, row major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h, std::uint8_t fill = 0);

    [[nodiscard]] bool empty() const noexcept { return width == 0 || height == 0; }
    [[nodiscard]] std::size_t index(int x, int y, int c) const noexcept {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3 +
               static_cast<std::size_t>(c);
    }
    std::uint8_t &at(int x, int y, int c) { return pixels[index(x, y, c)]; }
    [[nodiscard]] std::uint8_t at(int x, int y, int c) const { return pixels[index(x, y, c)]; }

    bool operator==(const Image &) const = default;
};

/// PNG or JPEG, detected from the file signature.
Image read_image(const std::filesystem::path &path);
/// Format chosen by extension: .jpg/.jpeg write JPEG (quality 95), anything else PNG.
void write_image(const Image &image, const std::filesystem::path &path);
void write_png(const Image &image, const std::filesystem::path &path);
void write_jpeg(const Image &image, const std::filesystem::path &path, int quality = 95);

/// Deterministic smooth-ish test pattern: a few seeded colour gradients and
/// blobs plus mild pixel noise.
Image procedural_image(int width, int height, std::uint64_t seed);

double mean_abs_difference(const Image &a, const Image &b);

} // namespace pedsynth
