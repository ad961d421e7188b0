#pragma once

#include "irspot/image.hpp"

#include <json.hpp>

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace irspot {

using ColorRatio = std::array<double, 3>;

/// Per-channel camera response to the 850 nm LED light, R:G:B.
inline constexpr ColorRatio kDefaultColorRatio{0.0852, 0.0533, 0.1521};

/// One light spot. Coordinates are continuous pixels with (0,0) at the
/// centre of the top-left pixel.
struct SpotParams {
    double px = 0.0;
    double py = 0.0;
    double sigma = 1.0;
    double s = 1.0;

    friend bool operator==(const SpotParams&, const SpotParams&) = default;
};

/// Radial attenuation profile of a spot, evaluated on the squared distance.
enum class KernelKind {
    /// exp(-d^2 / (2 sigma^2)); centre value 1, so a spot peaks at exactly s.
    Gaussian,
    /// Normal pdf with deviation sigma evaluated at the squared distance,
    /// exp(-(d^2)^2 / (2 sigma^2)) / (sigma sqrt(2 pi)).
    NormalPdfOfSquaredDistance,
};

struct PerturbationConfig {
    double amp = 0.0;
    std::vector<SpotParams> spots;
    ColorRatio color_ratio = kDefaultColorRatio;
    KernelKind kernel = KernelKind::Gaussian;

    /// Flat layout shared with the optimizer: [amp, (sigma, px, py, s) per spot].
    std::size_t parameter_count() const noexcept { return 1 + 4 * spots.size(); }
    std::vector<double> to_vector() const;
    void assign_vector(std::span<const double> theta);

    friend bool operator==(const PerturbationConfig&, const PerturbationConfig&) = default;
};

/// Offsets of a spot's parameters within the flat vector, after the leading amp.
enum SpotParam : std::size_t { kSigma = 0, kPx = 1, kPy = 2, kS = 3 };

inline std::size_t param_index(std::size_t spot, SpotParam which) noexcept {
    return 1 + 4 * spot + which;
}

/// Throws ValidationError naming the offending field.
void validate(const PerturbationConfig& config);

/// Also checks that every centre lies within the canvas grown by 3 sigma.
void validate(const PerturbationConfig& config, std::size_t height, std::size_t width);

/// Accumulated grayscale spot brightness, one value per pixel.
struct SpotField {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;

    double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
    double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
};

double kernel_profile(KernelKind kind, double d2, double sigma) noexcept;

/// Brightness contribution of one spot at pixel (x, y).
double spot_brightness(const SpotParams& spot, double x, double y,
                       KernelKind kind = KernelKind::Gaussian) noexcept;

/// Radius at which a Gaussian spot falls to half its centre value.
double half_brightness_radius(double sigma) noexcept;

SpotField render_field(const PerturbationConfig& config, std::size_t height, std::size_t width);

/// Field of a single spot (helper for calibration templates and tests).
SpotField render_spot(const SpotParams& spot, std::size_t height, std::size_t width,
                      KernelKind kind = KernelKind::Gaussian);

PixelDelta colorize(const SpotField& field, const ColorRatio& ratio);

/// base + amp * colorize(field); never clamps.
Image synthesize(const Image& base, const PerturbationConfig& config);

/// Partial derivatives of the synthesized image w.r.t. every parameter,
/// in the flat-vector order of PerturbationConfig::to_vector.
struct SpotJacobian {
    std::vector<PixelDelta> partials;
};

SpotJacobian spot_jacobian(const Image& base, const PerturbationConfig& config);

/// Contracts a cotangent dJ/dI with the synthesis Jacobian without
/// materialising it: returns dJ/dtheta in flat-vector order.
std::vector<double> pullback(const PerturbationConfig& config, const PixelDelta& cotangent);

nlohmann::json to_json(const PerturbationConfig& config);

/// Parses the shared perturbation file format and validates it.
PerturbationConfig config_from_json(const nlohmann::json& j);

}  // namespace irspot
