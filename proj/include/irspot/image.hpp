#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace irspot {

/// H x W x 3 raster of linear intensities, row-major, top-left origin, RGB
/// interleaved. Values are nominally in [0,1] but arithmetic never clamps;
/// clamping happens only at export or at an oracle boundary.
class Image {
public:
    static constexpr std::size_t kChannels = 3;

    Image() = default;
    Image(std::size_t height, std::size_t width, double fill = 0.0);
    Image(std::size_t height, std::size_t width, std::vector<double> data);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& at(std::size_t y, std::size_t x, std::size_t c) {
        return data_[(y * width_ + x) * kChannels + c];
    }
    double at(std::size_t y, std::size_t x, std::size_t c) const {
        return data_[(y * width_ + x) * kChannels + c];
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    bool same_shape(const Image& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_;
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> data_;
};

/// Signed per-pixel difference between two images of the same shape.
/// Shares Image's layout; the distinct type marks that values are unbounded.
class PixelDelta {
public:
    PixelDelta() = default;
    PixelDelta(std::size_t height, std::size_t width, double fill = 0.0)
        : values_(height, width, fill) {}
    explicit PixelDelta(Image values) : values_(std::move(values)) {}

    std::size_t height() const noexcept { return values_.height(); }
    std::size_t width() const noexcept { return values_.width(); }
    double& at(std::size_t y, std::size_t x, std::size_t c) { return values_.at(y, x, c); }
    double at(std::size_t y, std::size_t x, std::size_t c) const { return values_.at(y, x, c); }
    std::span<double> data() noexcept { return values_.data(); }
    std::span<const double> data() const noexcept { return values_.data(); }
    const Image& raw() const noexcept { return values_; }

    friend bool operator==(const PixelDelta&, const PixelDelta&) = default;

private:
    Image values_;
};

Image load_image(const std::filesystem::path& path);

/// Writes PNG for ".png", binary PPM (P6) for ".ppm"/".pnm". Always 8-bit.
void save_image(const Image& img, const std::filesystem::path& path);

/// 8-bit PNG file contents, for embedding images in JSON payloads.
std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_image(std::span<const std::uint8_t> bytes);

/// Clamp to [0,1] then round(v*255) with halves rounded up.
std::uint8_t quantize(double v) noexcept;

Image clamp01(const Image& img);

/// on - off, elementwise, no clamping.
PixelDelta diff(const Image& on, const Image& off);

/// base + delta (inverse of diff).
Image apply(const Image& base, const PixelDelta& delta);

Image resize_bilinear(const Image& img, std::size_t height, std::size_t width);

}  // namespace irspot
