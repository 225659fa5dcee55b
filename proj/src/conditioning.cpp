#include "pedsynth/conditioning.hpp"

#include "pedsynth/error.hpp"
#include "pedsynth/kernels.hpp"

#include <charconv>
#include <cmath>

namespace pedsynth {

std::string_view to_string(BlurLevel level) noexcept {
    switch (level) {
    case BlurLevel::none: return "none";
    case BlurLevel::low: return "low";
    case BlurLevel::medium: return "medium";
    case BlurLevel::high: return "high";
    }
    return "none";
}

BlurLevel parse_blur_level(std::string_view s) {
    if (s == "none") return BlurLevel::none;
    if (s == "low") return BlurLevel::low;
    if (s == "medium") return BlurLevel::medium;
    if (s == "high") return BlurLevel::high;
    throw InvalidArgument("unknown blur level '" + std::string(s) + "'");
}

BlurParams blur_params(BlurLevel level) {
    switch (level) {
    case BlurLevel::none: return {1, 0};
    case BlurLevel::low: return {5, 5};
    case BlurLevel::medium: return {15, 25};
    case BlurLevel::high: return {25, 50};
    }
    return {1, 0};
}

Image gaussian_blur(const Image &image, int kernel, double sigma) {
    const auto taps = kernels::gaussian_taps(kernel, sigma);
    Image out = image;
    kernels::parallel::convolve_separable(image.pixels, image.width, image.height, 3, taps, out.pixels);
    return out;
}

Image apply_blur(const Image &image, BlurLevel level) {
    if (level == BlurLevel::none) return image;
    const auto p = blur_params(level);
    return gaussian_blur(image, p.kernel, p.sigma);
}

BBox context_window(int width, int height, const BBox &b, double fraction) {
    if (b.w <= 0 || b.h <= 0) throw InvalidArgument("crop_context: degenerate bbox");
    if (b.x < 0 || b.y < 0 || b.x + b.w > width || b.y + b.h > height)
        throw InvalidArgument("crop_context: bbox outside image");
    if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("crop_context: fraction must be in (0, 1]");
    // The epsilon keeps exact products such as 40 * 0.1 from flooring to 3.
    auto grow = [fraction](int margin) { return static_cast<int>(std::floor(fraction * margin + 1e-9)); };
    const int left = grow(b.x), top = grow(b.y);
    const int right = grow(width - b.x - b.w), bottom = grow(height - b.y - b.h);
    return {b.x - left, b.y - top, b.w + left + right, b.h + top + bottom};
}

Image crop(const Image &image, const BBox &w) {
    if (w.w <= 0 || w.h <= 0 || w.x < 0 || w.y < 0 || w.x + w.w > image.width || w.y + w.h > image.height)
        throw InvalidArgument("crop: window outside image");
    Image out(w.w, w.h);
    for (int y = 0; y < w.h; ++y) {
        const auto *src = image.pixels.data() + image.index(w.x, w.y + y, 0);
        std::copy(src, src + static_cast<std::size_t>(w.w) * 3, out.pixels.data() + out.index(0, y, 0));
    }
    return out;
}

Image crop_context(const Image &image, const BBox &bbox, double fraction) {
    return crop(image, context_window(image.width, image.height, bbox, fraction));
}

Image resize(const Image &image, int width, int height) {
    if (width == image.width && height == image.height) return image;
    Image out(width, height);
    kernels::parallel::resize_bilinear(image.pixels, image.width, image.height, 3, out.pixels, width, height);
    return out;
}

Image downscale(const Image &image, double factor, int granularity) {
    if (!(factor > 0.0 && factor <= 1.0)) throw InvalidArgument("downscale: factor must be in (0, 1]");
    if (granularity < 1) throw InvalidArgument("downscale: granularity must be positive");
    const int w = static_cast<int>(std::floor(image.width * factor + 1e-9)) / granularity * granularity;
    const int h = static_cast<int>(std::floor(image.height * factor + 1e-9)) / granularity * granularity;
    if (w < granularity || h < granularity)
        throw InvalidArgument("downscale: " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                              " by " + std::to_string(factor) + " falls below granularity " + std::to_string(granularity));
    return resize(image, w, h);
}

std::string_view to_string(AspectMode mode) noexcept {
    switch (mode) {
    case AspectMode::square: return "square";
    case AspectMode::wide: return "wide";
    case AspectMode::tall: return "tall";
    }
    return "square";
}

AspectMode parse_aspect_mode(std::string_view s) {
    if (s == "square") return AspectMode::square;
    if (s == "wide") return AspectMode::wide;
    if (s == "tall") return AspectMode::tall;
    throw InvalidArgument("unknown aspect mode '" + std::string(s) + "'");
}

Size aspect_size(int width, int height, AspectMode mode, int granularity) {
    if (width < 1 || height < 1 || granularity < 1) throw InvalidArgument("aspect_size: dimensions must be positive");
    const int ratio_w = mode == AspectMode::wide ? 2 : 1;
    const int ratio_h = mode == AspectMode::tall ? 2 : 1;
    if (static_cast<long>(width) * ratio_h == static_cast<long>(height) * ratio_w) return {width, height};
    const double area = static_cast<double>(width) * height;
    const double short_side = std::sqrt(area / (ratio_w * ratio_h));
    const int snapped = std::max(granularity, static_cast<int>(std::lround(short_side / granularity)) * granularity);
    return {snapped * ratio_w, snapped * ratio_h};
}

Image reshape_aspect(const Image &image, AspectMode mode, int granularity) {
    const Size s = aspect_size(image.width, image.height, mode, granularity);
    return resize(image, s.width, s.height);
}

Image fit_granularity(const Image &image, int granularity) {
    if (granularity < 1) throw InvalidArgument("granularity must be positive");
    const int w = std::max(granularity, image.width / granularity * granularity);
    const int h = std::max(granularity, image.height / granularity * granularity);
    return resize(image, w, h);
}

namespace {

double parse_number(std::string_view s, std::string_view what) {
    double v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw InvalidArgument("conditioning: bad " + std::string(what) + " '" + std::string(s) + "'");
    return v;
}

std::string format_number(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

} // namespace

ConditioningSpec parse_conditioning(std::string_view text) {
    ConditioningSpec spec;
    if (text == "identity" || text == "none") return spec;
    const auto colon = text.find(':');
    if (colon == std::string_view::npos) throw InvalidArgument("conditioning: expected kind:param, got '" + std::string(text) + "'");
    const auto kind = text.substr(0, colon);
    const auto arg = text.substr(colon + 1);
    if (kind == "blur") {
        spec.kind = ConditioningSpec::Kind::blur;
        spec.blur = parse_blur_level(arg);
    } else if (kind == "context") {
        spec.kind = ConditioningSpec::Kind::context;
        spec.fraction = parse_number(arg, "context fraction");
        if (!(spec.fraction > 0 && spec.fraction <= 1)) throw InvalidArgument("conditioning: context fraction must be in (0, 1]");
    } else if (kind == "resolution") {
        spec.kind = ConditioningSpec::Kind::resolution;
        spec.factor = parse_number(arg, "resolution factor");
        if (!(spec.factor > 0 && spec.factor <= 1)) throw InvalidArgument("conditioning: resolution factor must be in (0, 1]");
    } else if (kind == "aspect") {
        spec.kind = ConditioningSpec::Kind::aspect;
        spec.aspect = parse_aspect_mode(arg);
    } else {
        throw InvalidArgument("conditioning: unknown kind '" + std::string(kind) + "'");
    }
    return spec;
}

std::string to_string(const ConditioningSpec &spec) {
    switch (spec.kind) {
    case ConditioningSpec::Kind::identity: return "identity";
    case ConditioningSpec::Kind::blur: return "blur:" + std::string(to_string(spec.blur));
    case ConditioningSpec::Kind::context: return "context:" + format_number(spec.fraction);
    case ConditioningSpec::Kind::resolution: return "resolution:" + format_number(spec.factor);
    case ConditioningSpec::Kind::aspect: return "aspect:" + std::string(to_string(spec.aspect));
    }
    return "identity";
}

Image apply_conditioning(const Image &image, const ConditioningSpec &spec, const std::optional<BBox> &bbox,
                         int granularity) {
    switch (spec.kind) {
    case ConditioningSpec::Kind::identity: return image;
    case ConditioningSpec::Kind::blur: return apply_blur(image, spec.blur);
    case ConditioningSpec::Kind::context:
        if (!bbox) throw InvalidArgument("context conditioning needs a bounding box");
        return crop_context(image, *bbox, spec.fraction);
    case ConditioningSpec::Kind::resolution: return downscale(image, spec.factor, granularity);
    case ConditioningSpec::Kind::aspect: return reshape_aspect(image, spec.aspect, granularity);
    }
    return image;
}

} // namespace pedsynth
