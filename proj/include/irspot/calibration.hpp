#pragma once

#include "irspot/embedding.hpp"
#include "irspot/image.hpp"
#include "irspot/spot_model.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace irspot {

struct CalibrationSettings {
    double search_radius = 20.0;
    /// Relative tolerance on the brightness ratio.
    double brightness_tolerance = 0.15;
    /// Relative tolerance on the half-brightness radius.
    double size_tolerance = 0.20;
    /// A peak below this multiple of the off-peak mean |correlation| is low confidence.
    double confidence_factor = 5.0;
};

/// Luminance weights matched to the spot colour: ratio / sum(ratio).
std::array<double, 3> spot_luminance_weights(const ColorRatio& ratio);

/// Per-pixel luminance plane of a delta, row-major.
std::vector<double> luminance_plane(const PixelDelta& delta, const std::array<double, 3>& weights);

struct SpotLocation {
    bool found = false;
    int x = 0;
    int y = 0;
    double peak = 0.0;
    double noise_floor = 0.0;
    bool low_confidence = false;
    bool window_clipped = false;
};

/// Cross-correlates the spot template (truncated at 3 sigma) with the
/// luminance of `diff` over a square window around the theoretical centre
/// and returns the arg-max. Ties go to the candidate nearest the theoretical
/// centre, then to row-major order.
SpotLocation locate_spot(const PixelDelta& diff, const SpotParams& spot, const ColorRatio& ratio,
                         double search_radius = 20.0, double confidence_factor = 5.0);

enum class BrightnessVerdict { TooBright, TooDim, Ok };
enum class SizeVerdict { TooLarge, TooSmall, Ok, NotMeasurable };

const char* to_string(BrightnessVerdict v) noexcept;
const char* to_string(SizeVerdict v) noexcept;

/// Mean spot luminance of `diff` inside a disc, divided by the mean luminance
/// of `on`.
double spot_brightness_ratio(const PixelDelta& diff, const Image& on, double cx, double cy,
                             double radius, const ColorRatio& ratio);

struct BrightnessCheck {
    double measured_ratio = 0.0;
    double expected_ratio = 0.0;
    BrightnessVerdict verdict = BrightnessVerdict::Ok;
};

BrightnessCheck brightness_check(const PixelDelta& diff, const Image& on, int x, int y,
                                 double radius, double expected_ratio, const ColorRatio& ratio,
                                 double tolerance = 0.15);

struct SizeCheck {
    double half_radius = 0.0;
    double expected_half_radius = 0.0;
    SizeVerdict verdict = SizeVerdict::NotMeasurable;
};

/// Median over 8 rays of the radius where luminance first falls below half
/// of the value at (x, y). Throws Error when the centre is ~0 or no ray
/// crosses half brightness inside the canvas.
SizeCheck size_check(const PixelDelta& diff, const SpotParams& spot, int x, int y,
                     const ColorRatio& ratio, double tolerance = 0.20);

struct SpotReport {
    std::size_t spot_index = 0;
    bool found = false;
    double detected_x = 0.0;
    double detected_y = 0.0;
    double theoretical_x = 0.0;
    double theoretical_y = 0.0;
    /// theoretical - detected
    double offset_x = 0.0;
    double offset_y = 0.0;
    bool low_confidence = false;
    bool window_clipped = false;
    BrightnessCheck brightness;
    SizeCheck size;
};

struct CalibrationReport {
    std::vector<SpotReport> spots;
    std::optional<double> current_loss;
    std::string loss_error;
    std::string timestamp;
    std::vector<std::string> warnings;
};

nlohmann::json to_json(const CalibrationReport& report);

/// One pass of the measure-and-compare loop for a photographed pair of
/// frames with the LEDs on and off.
CalibrationReport calibrate_once(const Image& on, const Image& off, const PerturbationConfig& target,
                                 const EmbeddingVector& victim_emb, EmbeddingOracle& oracle,
                                 const CalibrationSettings& settings = {},
                                 std::string timestamp = {});

}  // namespace irspot
