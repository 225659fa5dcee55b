#pragma once

// Transforms applied to conditioning images before generation: blur,
// spatial context, resolution and aspect ratio.

#include "pedsynth/dataset.hpp"
#include "pedsynth/image.hpp"

#include <optional>
#include <string>
#include <string_view>

namespace pedsynth {

enum class BlurLevel { none, low, medium, high };

std::string_view to_string(BlurLevel level) noexcept;
BlurLevel parse_blur_level(std::string_view s);

struct BlurParams {
    int kernel = 1;
    double sigma = 0;
};

/// low 5x5 sigma 5, medium 15x15 sigma 25, high 25x25 sigma 50.
BlurParams blur_params(BlurLevel level);

Image apply_blur(const Image &image, BlurLevel level);
/// Gaussian blur with explicit parameters, edge replication at borders.
Image gaussian_blur(const Image &image, int kernel, double sigma);

/// Crop window: the bbox grown on each side by `fraction` of the margin
/// between the bbox and the image border on that side. fraction in (0, 1].
BBox context_window(int width, int height, const BBox &bbox, double fraction);
Image crop(const Image &image, const BBox &window);
Image crop_context(const Image &image, const BBox &bbox, double fraction);

Image resize(const Image &image, int width, int height);

/// Dimensions are floor(W * factor), floor(H * factor), then rounded down to
/// a multiple of `granularity`.
Image downscale(const Image &image, double factor, int granularity = 8);

enum class AspectMode { square, wide, tall };

std::string_view to_string(AspectMode mode) noexcept;
AspectMode parse_aspect_mode(std::string_view s);

struct Size {
    int width = 0;
    int height = 0;

    bool operator==(const Size &) const = default;
};

/// Target size at (approximately) constant pixel count: square 1:1, wide
/// 2:1, tall 1:2. The short side is snapped to the nearest multiple of
/// `granularity`. An image already at the target ratio keeps its size.
Size aspect_size(int width, int height, AspectMode mode, int granularity = 8);
Image reshape_aspect(const Image &image, AspectMode mode, int granularity = 8);

/// Round both dimensions down to multiples of `granularity` (at least one
/// multiple) and resize if needed. Used to satisfy backend constraints.
Image fit_granularity(const Image &image, int granularity);

struct ConditioningSpec {
    enum class Kind { identity, blur, context, resolution, aspect };
    Kind kind = Kind::identity;
    BlurLevel blur = BlurLevel::none;
    double fraction = 1.0; ///< context
    double factor = 1.0;   ///< resolution
    AspectMode aspect = AspectMode::square;

    bool operator==(const ConditioningSpec &) const = default;
};

/// "identity", "blur:medium", "context:0.25", "resolution:0.5", "aspect:square".
ConditioningSpec parse_conditioning(std::string_view text);
std::string to_string(const ConditioningSpec &spec);

/// Context specs require `bbox`.
Image apply_conditioning(const Image &image, const ConditioningSpec &spec, const std::optional<BBox> &bbox,
                         int granularity = 8);

} // namespace pedsynth
