#include "pedsynth/image.hpp"

#include "pedsynth/error.hpp"
#include "pedsynth/rng.hpp"

#include <png.h>

#include <algorithm>
#include <csetjmp>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

namespace pedsynth {

Image::Image(int w, int h, std::uint8_t fill) : width(w), height(h) {
    if (w < 1 || h < 1) throw InvalidArgument("image dimensions must be positive");
    pixels.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill);
}

namespace {

bool has_png_signature(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    unsigned char sig[8] = {};
    in.read(reinterpret_cast<char *>(sig), 8);
    return in.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

Image read_png(const std::filesystem::path &path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw IoError("cannot read PNG " + path.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    Image out(static_cast<int>(img.width), static_cast<int>(img.height));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw IoError("cannot decode PNG " + path.string() + ": " + msg);
    }
    return out;
}

struct JpegErrorManager {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto *err = reinterpret_cast<JpegErrorManager *>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

struct FileCloser {
    void operator()(std::FILE *f) const { std::fclose(f); }
};

Image read_jpeg(const std::filesystem::path &path) {
    std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
    if (!file) throw IoError("cannot open " + path.string());
    jpeg_decompress_struct cinfo;
    JpegErrorManager jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    Image out;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError("cannot decode JPEG " + path.string() + ": " + jerr.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, file.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    out.width = static_cast<int>(cinfo.output_width);
    out.height = static_cast<int>(cinfo.output_height);
    out.pixels.resize(static_cast<std::size_t>(out.width) * static_cast<std::size_t>(out.height) * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return out;
}

void ensure_parent(const std::filesystem::path &path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
}

} // namespace

Image read_image(const std::filesystem::path &path) {
    return has_png_signature(path) ? read_png(path) : read_jpeg(path);
}

void write_png(const Image &image, const std::filesystem::path &path) {
    if (image.empty()) throw InvalidArgument("cannot write an empty image");
    ensure_parent(path);
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr))
        throw IoError("cannot write PNG " + path.string() + ": " + img.message);
}

void write_jpeg(const Image &image, const std::filesystem::path &path, int quality) {
    if (image.empty()) throw InvalidArgument("cannot write an empty image");
    ensure_parent(path);
    std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
    if (!file) throw IoError("cannot open " + path.string() + " for writing");
    jpeg_compress_struct cinfo;
    JpegErrorManager jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_compress(&cinfo);
        throw IoError("cannot encode JPEG " + path.string() + ": " + jerr.message);
    }
    jpeg_create_compress(&cinfo);
    jpeg_stdio_dest(&cinfo, file.get());
    cinfo.image_width = static_cast<JDIMENSION>(image.width);
    cinfo.image_height = static_cast<JDIMENSION>(image.height);
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
        auto *row = const_cast<JSAMPROW>(image.pixels.data() + static_cast<std::size_t>(cinfo.next_scanline) * image.width * 3);
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
}

void write_image(const Image &image, const std::filesystem::path &path) {
    const auto ext = path.extension().string();
    if (ext == ".jpg" || ext == ".jpeg" || ext == ".JPG" || ext == ".JPEG")
        write_jpeg(image, path);
    else
        write_png(image, path);
}

Image procedural_image(int width, int height, std::uint64_t seed) {
    Image img(width, height);
    Rng rng(hash_combine(seed, 0x1AA6E));
    double base[3], gx[3], gy[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = 40 + 170 * rng.uniform();
        gx[c] = (rng.uniform() - 0.5) * 120;
        gy[c] = (rng.uniform() - 0.5) * 120;
    }
    struct Blob {
        double cx, cy, r, amp[3];
    };
    Blob blobs[4];
    for (auto &b : blobs) {
        b.cx = rng.uniform() * width;
        b.cy = rng.uniform() * height;
        b.r = (0.1 + 0.3 * rng.uniform()) * std::max(width, height);
        for (double &a : b.amp) a = (rng.uniform() - 0.5) * 160;
    }
    const std::uint64_t noise_key = rng.next();
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double u = width > 1 ? static_cast<double>(x) / (width - 1) - 0.5 : 0.0;
            const double v = height > 1 ? static_cast<double>(y) / (height - 1) - 0.5 : 0.0;
            for (int c = 0; c < 3; ++c) {
                double val = base[c] + gx[c] * u + gy[c] * v;
                for (const auto &b : blobs) {
                    const double dx = x - b.cx, dy = y - b.cy;
                    val += b.amp[c] * std::exp(-(dx * dx + dy * dy) / (2 * b.r * b.r));
                }
                val += 12 * (unit_from_bits(splitmix64(hash_combine(noise_key, img.index(x, y, c)))) - 0.5);
                img.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(val), 0L, 255L));
            }
        }
    return img;
}

double mean_abs_difference(const Image &a, const Image &b) {
    if (a.width != b.width || a.height != b.height) throw InvalidArgument("mean_abs_difference: size mismatch");
    double sum = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) sum += std::abs(int(a.pixels[i]) - int(b.pixels[i]));
    return a.pixels.empty() ? 0.0 : sum / static_cast<double>(a.pixels.size());
}

} // namespace pedsynth
