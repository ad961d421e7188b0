#include "irspot/calibration.hpp"

#include "irspot/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace irspot {

std::array<double, 3> spot_luminance_weights(const ColorRatio& ratio) {
    const double sum = ratio[0] + ratio[1] + ratio[2];
    return {ratio[0] / sum, ratio[1] / sum, ratio[2] / sum};
}

std::vector<double> luminance_plane(const PixelDelta& delta, const std::array<double, 3>& weights) {
    std::vector<double> out(delta.height() * delta.width());
    for (std::size_t y = 0; y < delta.height(); ++y) {
        for (std::size_t x = 0; x < delta.width(); ++x) {
            out[y * delta.width() + x] = weights[0] * delta.at(y, x, 0) +
                                         weights[1] * delta.at(y, x, 1) +
                                         weights[2] * delta.at(y, x, 2);
        }
    }
    return out;
}

SpotLocation locate_spot(const PixelDelta& diff, const SpotParams& spot, const ColorRatio& ratio,
                         double search_radius, double confidence_factor) {
    const int h = static_cast<int>(diff.height());
    const int w = static_cast<int>(diff.width());
    const std::vector<double> lum = luminance_plane(diff, spot_luminance_weights(ratio));

    const double cutoff = 3.0 * spot.sigma;
    const int reach = static_cast<int>(std::ceil(cutoff));
    const int tsize = 2 * reach + 1;
    std::vector<double> tmpl(static_cast<std::size_t>(tsize * tsize), 0.0);
    for (int v = -reach; v <= reach; ++v) {
        for (int u = -reach; u <= reach; ++u) {
            const double d2 = static_cast<double>(u * u + v * v);
            if (d2 <= cutoff * cutoff) {
                tmpl[static_cast<std::size_t>((v + reach) * tsize + (u + reach))] =
                    std::exp(-d2 / (2.0 * spot.sigma * spot.sigma));
            }
        }
    }

    const int r = static_cast<int>(std::floor(search_radius));
    const int cx = static_cast<int>(std::lround(spot.px));
    const int cy = static_cast<int>(std::lround(spot.py));
    SpotLocation loc;
    const int x0 = std::max(cx - r, 0);
    const int x1 = std::min(cx + r, w - 1);
    const int y0 = std::max(cy - r, 0);
    const int y1 = std::min(cy + r, h - 1);
    loc.window_clipped = x0 != cx - r || x1 != cx + r || y0 != cy - r || y1 != cy + r;
    if (x0 > x1 || y0 > y1) return loc;

    // Anything non-zero under the template footprint of the window?
    bool any = false;
    for (int y = std::max(y0 - reach, 0); y <= std::min(y1 + reach, h - 1) && !any; ++y) {
        for (int x = std::max(x0 - reach, 0); x <= std::min(x1 + reach, w - 1); ++x) {
            if (lum[static_cast<std::size_t>(y * w + x)] != 0.0) {
                any = true;
                break;
            }
        }
    }
    if (!any) return loc;

    const int ww = x1 - x0 + 1;
    std::vector<double> corr(static_cast<std::size_t>(ww * (y1 - y0 + 1)), 0.0);
    double best = -std::numeric_limits<double>::infinity();
    double best_d2 = std::numeric_limits<double>::infinity();
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            double acc = 0.0;
            for (int v = -reach; v <= reach; ++v) {
                const int yy = y + v;
                if (yy < 0 || yy >= h) continue;
                for (int u = -reach; u <= reach; ++u) {
                    const int xx = x + u;
                    if (xx < 0 || xx >= w) continue;
                    acc += tmpl[static_cast<std::size_t>((v + reach) * tsize + (u + reach))] *
                           lum[static_cast<std::size_t>(yy * w + xx)];
                }
            }
            corr[static_cast<std::size_t>((y - y0) * ww + (x - x0))] = acc;
            const double dx = static_cast<double>(x) - spot.px;
            const double dy = static_cast<double>(y) - spot.py;
            const double d2 = dx * dx + dy * dy;
            if (acc > best || (acc == best && d2 < best_d2)) {
                best = acc;
                best_d2 = d2;
                loc.x = x;
                loc.y = y;
            }
        }
    }
    loc.found = true;
    loc.peak = best;

    double sum = 0.0;
    std::size_t count = 0;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - loc.x;
            const double dy = y - loc.y;
            if (dx * dx + dy * dy <= cutoff * cutoff) continue;
            sum += std::abs(corr[static_cast<std::size_t>((y - y0) * ww + (x - x0))]);
            ++count;
        }
    }
    loc.noise_floor = count > 0 ? sum / static_cast<double>(count) : 0.0;
    loc.low_confidence = best <= 0.0 || best < confidence_factor * loc.noise_floor;
    return loc;
}

const char* to_string(BrightnessVerdict v) noexcept {
    switch (v) {
        case BrightnessVerdict::TooBright: return "too_bright";
        case BrightnessVerdict::TooDim: return "too_dim";
        case BrightnessVerdict::Ok: return "ok";
    }
    return "ok";
}

const char* to_string(SizeVerdict v) noexcept {
    switch (v) {
        case SizeVerdict::TooLarge: return "too_large";
        case SizeVerdict::TooSmall: return "too_small";
        case SizeVerdict::Ok: return "ok";
        case SizeVerdict::NotMeasurable: return "not_measurable";
    }
    return "not_measurable";
}

double spot_brightness_ratio(const PixelDelta& diff, const Image& on, double cx, double cy,
                             double radius, const ColorRatio& ratio) {
    if (diff.height() != on.height() || diff.width() != on.width()) {
        throw ImageError("brightness: diff and on-frame sizes differ");
    }
    const auto weights = spot_luminance_weights(ratio);
    double spot_sum = 0.0;
    std::size_t spot_count = 0;
    double on_sum = 0.0;
    for (std::size_t y = 0; y < on.height(); ++y) {
        for (std::size_t x = 0; x < on.width(); ++x) {
            on_sum += weights[0] * on.at(y, x, 0) + weights[1] * on.at(y, x, 1) +
                      weights[2] * on.at(y, x, 2);
            const double dx = static_cast<double>(x) - cx;
            const double dy = static_cast<double>(y) - cy;
            if (dx * dx + dy * dy <= radius * radius) {
                spot_sum += weights[0] * diff.at(y, x, 0) + weights[1] * diff.at(y, x, 1) +
                            weights[2] * diff.at(y, x, 2);
                ++spot_count;
            }
        }
    }
    if (spot_count == 0) throw Error("brightness: spot region is empty");
    const double on_mean = on_sum / static_cast<double>(on.height() * on.width());
    if (on_mean <= 0.0) throw Error("brightness: on-frame has no luminance");
    return spot_sum / static_cast<double>(spot_count) / on_mean;
}

BrightnessCheck brightness_check(const PixelDelta& diff, const Image& on, int x, int y,
                                 double radius, double expected_ratio, const ColorRatio& ratio,
                                 double tolerance) {
    BrightnessCheck out;
    out.measured_ratio = spot_brightness_ratio(diff, on, x, y, radius, ratio);
    out.expected_ratio = expected_ratio;
    const double rel = out.measured_ratio / expected_ratio - 1.0;
    if (rel > tolerance) {
        out.verdict = BrightnessVerdict::TooBright;
    } else if (rel < -tolerance) {
        out.verdict = BrightnessVerdict::TooDim;
    } else {
        out.verdict = BrightnessVerdict::Ok;
    }
    return out;
}

SizeCheck size_check(const PixelDelta& diff, const SpotParams& spot, int x, int y,
                     const ColorRatio& ratio, double tolerance) {
    const std::size_t h = diff.height();
    const std::size_t w = diff.width();
    const std::vector<double> lum = luminance_plane(diff, spot_luminance_weights(ratio));
    if (x < 0 || y < 0 || static_cast<std::size_t>(x) >= w || static_cast<std::size_t>(y) >= h) {
        throw Error("size: centre outside the canvas");
    }
    const double centre = lum[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
    if (centre <= 1e-9) throw Error("size: centre luminance is ~0, spot not measurable");
    const double half = centre / 2.0;

    auto sample = [&](double fx, double fy) {
        const auto ix = static_cast<std::size_t>(std::floor(fx));
        const auto iy = static_cast<std::size_t>(std::floor(fy));
        const std::size_t ix1 = std::min(ix + 1, w - 1);
        const std::size_t iy1 = std::min(iy + 1, h - 1);
        const double ax = fx - static_cast<double>(ix);
        const double ay = fy - static_cast<double>(iy);
        const double top = lum[iy * w + ix] * (1 - ax) + lum[iy * w + ix1] * ax;
        const double bot = lum[iy1 * w + ix] * (1 - ax) + lum[iy1 * w + ix1] * ax;
        return top * (1 - ay) + bot * ay;
    };

    constexpr double kStep = 0.05;
    std::vector<double> radii;
    for (int k = 0; k < 8; ++k) {
        const double angle = k * std::numbers::pi / 4.0;
        const double dx = std::cos(angle);
        const double dy = std::sin(angle);
        double prev_t = 0.0;
        double prev_v = centre;
        for (double t = kStep;; t += kStep) {
            const double fx = x + t * dx;
            const double fy = y + t * dy;
            if (fx < 0.0 || fy < 0.0 || fx > static_cast<double>(w - 1) ||
                fy > static_cast<double>(h - 1)) {
                break;
            }
            const double v = sample(fx, fy);
            if (v < half) {
                radii.push_back(prev_t + (prev_v - half) / (prev_v - v) * (t - prev_t));
                break;
            }
            prev_t = t;
            prev_v = v;
        }
    }
    if (radii.empty()) throw Error("size: no ray reaches half brightness inside the canvas");
    std::sort(radii.begin(), radii.end());
    const std::size_t n = radii.size();
    SizeCheck out;
    out.half_radius = n % 2 == 1 ? radii[n / 2] : 0.5 * (radii[n / 2 - 1] + radii[n / 2]);
    out.expected_half_radius = half_brightness_radius(spot.sigma);
    const double rel = out.half_radius / out.expected_half_radius - 1.0;
    if (rel > tolerance) {
        out.verdict = SizeVerdict::TooLarge;
    } else if (rel < -tolerance) {
        out.verdict = SizeVerdict::TooSmall;
    } else {
        out.verdict = SizeVerdict::Ok;
    }
    return out;
}

nlohmann::json to_json(const CalibrationReport& report) {
    nlohmann::json spots = nlohmann::json::array();
    for (const SpotReport& s : report.spots) {
        nlohmann::json j = {{"spot_index", s.spot_index},
                            {"found", s.found},
                            {"theoretical_center", {s.theoretical_x, s.theoretical_y}}};
        if (s.found) {
            j["detected_center"] = {s.detected_x, s.detected_y};
            j["offset_vector"] = {s.offset_x, s.offset_y};
            j["low_confidence"] = s.low_confidence;
            j["brightness_ratio_measured"] = s.brightness.measured_ratio;
            j["brightness_ratio_expected"] = s.brightness.expected_ratio;
            j["brightness_verdict"] = to_string(s.brightness.verdict);
            j["half_radius_measured"] = s.size.half_radius;
            j["half_radius_expected"] = s.size.expected_half_radius;
            j["size_verdict"] = to_string(s.size.verdict);
        }
        j["window_clipped"] = s.window_clipped;
        spots.push_back(std::move(j));
    }
    nlohmann::json out = {{"spots", std::move(spots)},
                          {"timestamp", report.timestamp},
                          {"warnings", report.warnings}};
    out["current_loss"] = report.current_loss ? nlohmann::json(*report.current_loss) : nlohmann::json();
    if (!report.loss_error.empty()) out["loss_error"] = report.loss_error;
    return out;
}

CalibrationReport calibrate_once(const Image& on, const Image& off, const PerturbationConfig& target,
                                 const EmbeddingVector& victim_emb, EmbeddingOracle& oracle,
                                 const CalibrationSettings& settings, std::string timestamp) {
    if (!on.same_shape(off)) throw ImageError("calibrate: on/off frame sizes differ");
    validate(target);
    const ColorRatio& ratio = target.color_ratio;
    const PixelDelta measured = diff(on, off);
    const Image on_theory = clamp01(synthesize(off, target));
    const PixelDelta expected = diff(on_theory, off);

    CalibrationReport report;
    report.timestamp = std::move(timestamp);
    for (std::size_t i = 0; i < target.spots.size(); ++i) {
        const SpotParams& spot = target.spots[i];
        SpotReport entry;
        entry.spot_index = i;
        entry.theoretical_x = spot.px;
        entry.theoretical_y = spot.py;
        const SpotLocation loc =
            locate_spot(measured, spot, ratio, settings.search_radius, settings.confidence_factor);
        entry.window_clipped = loc.window_clipped;
        if (loc.window_clipped) {
            report.warnings.push_back("spot " + std::to_string(i) + ": search window clipped to canvas");
        }
        if (!loc.found) {
            report.warnings.push_back("spot " + std::to_string(i) + ": not found");
            report.spots.push_back(entry);
            continue;
        }
        entry.found = true;
        entry.detected_x = loc.x;
        entry.detected_y = loc.y;
        entry.offset_x = spot.px - loc.x;
        entry.offset_y = spot.py - loc.y;
        entry.low_confidence = loc.low_confidence;
        if (loc.low_confidence) {
            report.warnings.push_back("spot " + std::to_string(i) + ": low-confidence detection");
        }

        const double r_half = half_brightness_radius(spot.sigma);
        double radius = r_half;
        try {
            entry.size = size_check(measured, spot, loc.x, loc.y, ratio, settings.size_tolerance);
            radius = entry.size.half_radius;
        } catch (const Error& e) {
            entry.size.expected_half_radius = r_half;
            entry.size.verdict = SizeVerdict::NotMeasurable;
            report.warnings.push_back("spot " + std::to_string(i) + ": " + e.what());
        }
        const double expected_ratio =
            spot_brightness_ratio(expected, on_theory, spot.px, spot.py, r_half, ratio);
        entry.brightness = brightness_check(measured, on, loc.x, loc.y, radius, expected_ratio,
                                            ratio, settings.brightness_tolerance);
        report.spots.push_back(entry);
    }

    try {
        report.current_loss = distance(oracle.embed(on), victim_emb);
    } catch (const Error& e) {
        report.loss_error = e.what();
    }
    return report;
}

}  // namespace irspot
