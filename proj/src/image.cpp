#include "irspot/image.hpp"

#include "irspot/error.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <fstream>
#include <iterator>

namespace irspot {

Image::Image(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width), data_(height * width * kChannels, fill) {}

Image::Image(std::size_t height, std::size_t width, std::vector<double> data)
    : height_(height), width_(width), data_(std::move(data)) {
    if (data_.size() != height_ * width_ * kChannels) {
        throw ImageError("image data length does not match " + std::to_string(height_) + "x" +
                         std::to_string(width_) + "x3");
    }
}

std::uint8_t quantize(double v) noexcept {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

Image clamp01(const Image& img) {
    Image out = img;
    for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
    return out;
}

PixelDelta diff(const Image& on, const Image& off) {
    if (!on.same_shape(off)) throw ImageError("diff: dimension mismatch");
    PixelDelta out(on.height(), on.width());
    auto dst = out.data();
    auto a = on.data();
    auto b = off.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a[i] - b[i];
    return out;
}

Image apply(const Image& base, const PixelDelta& delta) {
    if (base.height() != delta.height() || base.width() != delta.width()) {
        throw ImageError("apply: dimension mismatch");
    }
    Image out = base;
    auto dst = out.data();
    auto d = delta.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += d[i];
    return out;
}

Image resize_bilinear(const Image& img, std::size_t height, std::size_t width) {
    if (height == 0 || width == 0) throw ImageError("resize: zero target size");
    if (img.empty()) throw ImageError("resize: empty source image");
    if (height == img.height() && width == img.width()) return img;

    Image out(height, width);
    const double sy = static_cast<double>(img.height()) / static_cast<double>(height);
    const double sx = static_cast<double>(img.width()) / static_cast<double>(width);
    const double ymax = static_cast<double>(img.height() - 1);
    const double xmax = static_cast<double>(img.width() - 1);
    for (std::size_t y = 0; y < height; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, ymax);
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, img.height() - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < width; ++x) {
            const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, xmax);
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, img.width() - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < Image::kChannels; ++c) {
                const double top = img.at(y0, x0, c) * (1 - wx) + img.at(y0, x1, c) * wx;
                const double bot = img.at(y1, x0, c) * (1 - wx) + img.at(y1, x1, c) * wx;
                out.at(y, x, c) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string lower_ext(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    return ext;
}

// --- PPM ------------------------------------------------------------------

Image decode_ppm(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 2;
    auto next_token = [&]() -> long {
        for (;;) {
            while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        long v = 0;
        bool any = false;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 1'000'000'000) throw ImageError("PPM: header value out of range");
            ++pos;
            any = true;
        }
        if (!any) throw ImageError("PPM: malformed header");
        return v;
    };
    const long width = next_token();
    const long height = next_token();
    const long maxval = next_token();
    if (width <= 0 || height <= 0) throw ImageError("PPM: zero-dimension image");
    if (maxval <= 0 || maxval > 65535) throw ImageError("PPM: unsupported maxval");
    ++pos;  // single whitespace after maxval

    const std::size_t bps = maxval > 255 ? 2 : 1;
    const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3;
    if (bytes.size() < pos + count * bps) throw ImageError("PPM: truncated pixel data");

    std::vector<double> data(count);
    const double scale = 1.0 / static_cast<double>(maxval);
    for (std::size_t i = 0; i < count; ++i) {
        unsigned v = bytes[pos + i * bps];
        if (bps == 2) v = (v << 8) | bytes[pos + i * bps + 1];
        data[i] = static_cast<double>(v) * scale;
    }
    return Image(static_cast<std::size_t>(height), static_cast<std::size_t>(width), std::move(data));
}

std::vector<std::uint8_t> encode_ppm(const Image& img) {
    const std::string header =
        "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + img.size());
    for (double v : img.data()) out.push_back(quantize(v));
    return out;
}

// --- PNG ------------------------------------------------------------------

struct MemoryReader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;
};

void png_read_memory(png_structp png, png_bytep out, png_size_t len) {
    auto* reader = static_cast<MemoryReader*>(png_get_io_ptr(png));
    if (reader->pos + len > reader->bytes.size()) png_error(png, "truncated PNG stream");
    std::copy_n(reader->bytes.data() + reader->pos, len, out);
    reader->pos += len;
}

void png_write_memory(png_structp png, png_bytep in, png_size_t len) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), in, in + len);
}

void png_flush_noop(png_structp) {}

void png_error_throw(png_structp png, png_const_charp msg) {
    auto* what = static_cast<std::string*>(png_get_error_ptr(png));
    *what = msg;
    png_longjmp(png, 1);
}

void png_warning_ignore(png_structp, png_const_charp) {}

Image decode_png(std::span<const std::uint8_t> bytes) {
    std::string error;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_error_throw,
                                             png_warning_ignore);
    if (png == nullptr) throw ImageError("PNG: cannot allocate decoder");
    png_infop info = png_create_info_struct(png);
    MemoryReader reader{bytes, 0};
    std::vector<std::uint8_t> pixels;
    std::vector<png_bytep> rows;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageError("PNG: " + error);
    }
    png_set_read_fn(png, &reader, png_read_memory);
    png_read_info(png, info);

    const png_uint_32 width = png_get_image_width(png, info);
    const png_uint_32 height = png_get_image_height(png, info);
    const int color_type = png_get_color_type(png, info);
    const int bit_depth = png_get_bit_depth(png, info);

    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(png);
    }
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const std::size_t rowbytes = png_get_rowbytes(png, info);
    const int out_depth = png_get_bit_depth(png, info);
    pixels.resize(rowbytes * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (width == 0 || height == 0) throw ImageError("PNG: zero-dimension image");
    const std::size_t count = static_cast<std::size_t>(width) * height * 3;
    std::vector<double> data(count);
    if (out_depth == 16) {
        for (std::size_t i = 0; i < count; ++i) {
            const unsigned v = (static_cast<unsigned>(pixels[2 * i]) << 8) | pixels[2 * i + 1];
            data[i] = static_cast<double>(v) / 65535.0;
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) data[i] = static_cast<double>(pixels[i]) / 255.0;
    }
    return Image(height, width, std::move(data));
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& img) {
    if (img.empty()) throw ImageError("PNG: cannot encode empty image");
    std::string error;
    std::vector<std::uint8_t> out;
    std::vector<std::uint8_t> pixels(img.size());
    std::transform(img.data().begin(), img.data().end(), pixels.begin(), quantize);
    std::vector<png_bytep> rows(img.height());
    for (std::size_t y = 0; y < img.height(); ++y) rows[y] = pixels.data() + y * img.width() * 3;

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_error_throw,
                                              png_warning_ignore);
    if (png == nullptr) throw ImageError("PNG: cannot allocate encoder");
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageError("PNG: " + error);
    }
    png_set_write_fn(png, &out, png_write_memory, png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()),
                 static_cast<png_uint_32>(img.height()), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

Image decode_image(std::span<const std::uint8_t> bytes) {
    static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() >= 8 && std::equal(kPngSig, kPngSig + 8, bytes.begin())) {
        return decode_png(bytes);
    }
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
    throw ImageError("unsupported image format (expected PNG or binary PPM)");
}

Image load_image(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return decode_image(bytes);
    } catch (const ImageError& e) {
        throw ImageError(path.string() + ": " + e.what());
    }
}

void save_image(const Image& img, const std::filesystem::path& path) {
    const std::string ext = lower_ext(path);
    std::vector<std::uint8_t> bytes;
    if (ext == ".png") {
        bytes = encode_png(img);
    } else if (ext == ".ppm" || ext == ".pnm") {
        bytes = encode_ppm(img);
    } else {
        throw ImageError("save_image: unsupported extension '" + ext + "'");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ImageError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ImageError("write failed for " + path.string());
}

}  // namespace irspot
