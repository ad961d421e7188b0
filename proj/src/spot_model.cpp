#include "irspot/spot_model.hpp"

#include "irspot/error.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace irspot {

namespace {

// d(profile)/d(d2)
double kernel_d_d2(KernelKind kind, double d2, double sigma) noexcept {
    const double var = sigma * sigma;
    switch (kind) {
        case KernelKind::Gaussian:
            return -std::exp(-d2 / (2.0 * var)) / (2.0 * var);
        case KernelKind::NormalPdfOfSquaredDistance:
            return -d2 / var * kernel_profile(kind, d2, sigma);
    }
    return 0.0;
}

// d(profile)/d(sigma)
double kernel_d_sigma(KernelKind kind, double d2, double sigma) noexcept {
    const double f = kernel_profile(kind, d2, sigma);
    switch (kind) {
        case KernelKind::Gaussian:
            return f * d2 / (sigma * sigma * sigma);
        case KernelKind::NormalPdfOfSquaredDistance:
            return f * (d2 * d2 / (sigma * sigma * sigma) - 1.0 / sigma);
    }
    return 0.0;
}

std::string spot_field_name(std::size_t i, const char* member) {
    return "spots[" + std::to_string(i) + "]." + member;
}

void require_finite(double v, const std::string& field) {
    if (!std::isfinite(v)) throw ValidationError(field, field + " must be finite");
}

}  // namespace

std::vector<double> PerturbationConfig::to_vector() const {
    std::vector<double> theta;
    theta.reserve(parameter_count());
    theta.push_back(amp);
    for (const SpotParams& sp : spots) {
        theta.push_back(sp.sigma);
        theta.push_back(sp.px);
        theta.push_back(sp.py);
        theta.push_back(sp.s);
    }
    return theta;
}

void PerturbationConfig::assign_vector(std::span<const double> theta) {
    if (theta.size() != parameter_count()) {
        throw ValidationError("theta", "parameter vector has " + std::to_string(theta.size()) +
                                           " entries, expected " + std::to_string(parameter_count()));
    }
    amp = theta[0];
    for (std::size_t i = 0; i < spots.size(); ++i) {
        spots[i].sigma = theta[param_index(i, kSigma)];
        spots[i].px = theta[param_index(i, kPx)];
        spots[i].py = theta[param_index(i, kPy)];
        spots[i].s = theta[param_index(i, kS)];
    }
}

void validate(const PerturbationConfig& config) {
    require_finite(config.amp, "amp");
    if (config.amp < 0.0) throw ValidationError("amp", "amp must be >= 0");
    if (config.spots.empty()) throw ValidationError("spots", "at least one spot is required");
    for (std::size_t c = 0; c < 3; ++c) {
        const std::string field = "color_ratio[" + std::to_string(c) + "]";
        require_finite(config.color_ratio[c], field);
        if (config.color_ratio[c] <= 0.0) throw ValidationError(field, field + " must be > 0");
    }
    for (std::size_t i = 0; i < config.spots.size(); ++i) {
        const SpotParams& sp = config.spots[i];
        require_finite(sp.px, spot_field_name(i, "px"));
        require_finite(sp.py, spot_field_name(i, "py"));
        require_finite(sp.sigma, spot_field_name(i, "sigma"));
        require_finite(sp.s, spot_field_name(i, "s"));
        if (sp.sigma <= 0.0) {
            throw ValidationError(spot_field_name(i, "sigma"), "sigma must be > 0");
        }
        if (sp.s < 0.0) throw ValidationError(spot_field_name(i, "s"), "s must be >= 0");
    }
}

void validate(const PerturbationConfig& config, std::size_t height, std::size_t width) {
    validate(config);
    for (std::size_t i = 0; i < config.spots.size(); ++i) {
        const SpotParams& sp = config.spots[i];
        const double margin = 3.0 * sp.sigma;
        if (sp.px < -margin || sp.px > static_cast<double>(width) - 1.0 + margin) {
            throw ValidationError(spot_field_name(i, "px"), "spot centre outside canvas + 3 sigma");
        }
        if (sp.py < -margin || sp.py > static_cast<double>(height) - 1.0 + margin) {
            throw ValidationError(spot_field_name(i, "py"), "spot centre outside canvas + 3 sigma");
        }
    }
}

double kernel_profile(KernelKind kind, double d2, double sigma) noexcept {
    const double var = sigma * sigma;
    switch (kind) {
        case KernelKind::Gaussian:
            return std::exp(-d2 / (2.0 * var));
        case KernelKind::NormalPdfOfSquaredDistance:
            return std::exp(-d2 * d2 / (2.0 * var)) / (sigma * std::sqrt(2.0 * std::numbers::pi));
    }
    return 0.0;
}

double spot_brightness(const SpotParams& spot, double x, double y, KernelKind kind) noexcept {
    const double dx = spot.px - x;
    const double dy = spot.py - y;
    return spot.s * kernel_profile(kind, dx * dx + dy * dy, spot.sigma);
}

double half_brightness_radius(double sigma) noexcept {
    return sigma * std::sqrt(2.0 * std::numbers::ln2);
}

SpotField render_spot(const SpotParams& spot, std::size_t height, std::size_t width,
                      KernelKind kind) {
    SpotField field{height, width, std::vector<double>(height * width, 0.0)};
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            field.at(y, x) =
                spot_brightness(spot, static_cast<double>(x), static_cast<double>(y), kind);
        }
    }
    return field;
}

SpotField render_field(const PerturbationConfig& config, std::size_t height, std::size_t width) {
    SpotField field{height, width, std::vector<double>(height * width, 0.0)};
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            double sum = 0.0;
            for (const SpotParams& sp : config.spots) {
                sum += spot_brightness(sp, static_cast<double>(x), static_cast<double>(y),
                                       config.kernel);
            }
            field.at(y, x) = sum;
        }
    }
    return field;
}

PixelDelta colorize(const SpotField& field, const ColorRatio& ratio) {
    PixelDelta out(field.height, field.width);
    for (std::size_t y = 0; y < field.height; ++y) {
        for (std::size_t x = 0; x < field.width; ++x) {
            const double v = field.at(y, x);
            for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = ratio[c] * v;
        }
    }
    return out;
}

Image synthesize(const Image& base, const PerturbationConfig& config) {
    const SpotField field = render_field(config, base.height(), base.width());
    Image out = base;
    for (std::size_t y = 0; y < base.height(); ++y) {
        for (std::size_t x = 0; x < base.width(); ++x) {
            const double v = config.amp * field.at(y, x);
            for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) += config.color_ratio[c] * v;
        }
    }
    return out;
}

SpotJacobian spot_jacobian(const Image& base, const PerturbationConfig& config) {
    const std::size_t h = base.height();
    const std::size_t w = base.width();
    const auto& ratio = config.color_ratio;
    SpotJacobian jac;
    jac.partials.assign(config.parameter_count(), PixelDelta(h, w));

    jac.partials[0] = colorize(render_field(config, h, w), ratio);
    for (std::size_t i = 0; i < config.spots.size(); ++i) {
        const SpotParams& sp = config.spots[i];
        PixelDelta& d_sigma = jac.partials[param_index(i, kSigma)];
        PixelDelta& d_px = jac.partials[param_index(i, kPx)];
        PixelDelta& d_py = jac.partials[param_index(i, kPy)];
        PixelDelta& d_s = jac.partials[param_index(i, kS)];
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double dx = sp.px - static_cast<double>(x);
                const double dy = sp.py - static_cast<double>(y);
                const double d2 = dx * dx + dy * dy;
                const double k = kernel_profile(config.kernel, d2, sp.sigma);
                const double kd = kernel_d_d2(config.kernel, d2, sp.sigma);
                const double ks = kernel_d_sigma(config.kernel, d2, sp.sigma);
                const double gs = config.amp * k;
                const double gpx = config.amp * sp.s * kd * 2.0 * dx;
                const double gpy = config.amp * sp.s * kd * 2.0 * dy;
                const double gsig = config.amp * sp.s * ks;
                for (std::size_t c = 0; c < 3; ++c) {
                    d_s.at(y, x, c) = ratio[c] * gs;
                    d_px.at(y, x, c) = ratio[c] * gpx;
                    d_py.at(y, x, c) = ratio[c] * gpy;
                    d_sigma.at(y, x, c) = ratio[c] * gsig;
                }
            }
        }
    }
    return jac;
}

std::vector<double> pullback(const PerturbationConfig& config, const PixelDelta& cotangent) {
    const std::size_t h = cotangent.height();
    const std::size_t w = cotangent.width();
    const auto& ratio = config.color_ratio;
    std::vector<double> grad(config.parameter_count(), 0.0);

    // Every channel of the perturbation is ratio_c times the same field, so
    // the cotangent collapses to one weighted plane.
    std::vector<double> plane(h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            plane[y * w + x] = ratio[0] * cotangent.at(y, x, 0) + ratio[1] * cotangent.at(y, x, 1) +
                               ratio[2] * cotangent.at(y, x, 2);
        }
    }

    for (std::size_t i = 0; i < config.spots.size(); ++i) {
        const SpotParams& sp = config.spots[i];
        double acc_k = 0.0, acc_px = 0.0, acc_py = 0.0, acc_sigma = 0.0;
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double g = plane[y * w + x];
                if (g == 0.0) continue;
                const double dx = sp.px - static_cast<double>(x);
                const double dy = sp.py - static_cast<double>(y);
                const double d2 = dx * dx + dy * dy;
                const double k = kernel_profile(config.kernel, d2, sp.sigma);
                const double kd = kernel_d_d2(config.kernel, d2, sp.sigma);
                acc_k += g * k;
                acc_px += g * kd * 2.0 * dx;
                acc_py += g * kd * 2.0 * dy;
                acc_sigma += g * kernel_d_sigma(config.kernel, d2, sp.sigma);
            }
        }
        grad[0] += sp.s * acc_k;
        grad[param_index(i, kS)] = config.amp * acc_k;
        grad[param_index(i, kPx)] = config.amp * sp.s * acc_px;
        grad[param_index(i, kPy)] = config.amp * sp.s * acc_py;
        grad[param_index(i, kSigma)] = config.amp * sp.s * acc_sigma;
    }
    return grad;
}

nlohmann::json to_json(const PerturbationConfig& config) {
    nlohmann::json spots = nlohmann::json::array();
    for (const SpotParams& sp : config.spots) {
        spots.push_back({{"px", sp.px}, {"py", sp.py}, {"sigma", sp.sigma}, {"s", sp.s}});
    }
    nlohmann::json j = {{"amp", config.amp},
                        {"color_ratio", config.color_ratio},
                        {"spots", std::move(spots)}};
    if (config.kernel == KernelKind::NormalPdfOfSquaredDistance) j["kernel"] = "normal_pdf_sq";
    return j;
}

PerturbationConfig config_from_json(const nlohmann::json& j) {
    auto number = [](const nlohmann::json& obj, const char* key, const std::string& field) {
        if (!obj.is_object() || !obj.contains(key)) {
            throw ValidationError(field, "missing field " + field);
        }
        const auto& v = obj.at(key);
        if (!v.is_number()) throw ValidationError(field, field + " must be a number");
        return v.get<double>();
    };

    PerturbationConfig config;
    if (!j.is_object()) throw ValidationError("", "perturbation config must be a JSON object");
    config.amp = number(j, "amp", "amp");
    if (j.contains("color_ratio")) {
        const auto& r = j.at("color_ratio");
        if (!r.is_array() || r.size() != 3) {
            throw ValidationError("color_ratio", "color_ratio must be an array of 3 numbers");
        }
        for (std::size_t c = 0; c < 3; ++c) {
            if (!r[c].is_number()) {
                throw ValidationError("color_ratio[" + std::to_string(c) + "]", "must be a number");
            }
            config.color_ratio[c] = r[c].get<double>();
        }
    }
    if (j.contains("kernel")) {
        const auto& k = j.at("kernel");
        if (k == "gaussian") {
            config.kernel = KernelKind::Gaussian;
        } else if (k == "normal_pdf_sq") {
            config.kernel = KernelKind::NormalPdfOfSquaredDistance;
        } else {
            throw ValidationError("kernel", "unknown kernel");
        }
    }
    if (!j.contains("spots") || !j.at("spots").is_array()) {
        throw ValidationError("spots", "spots must be an array");
    }
    const auto& spots = j.at("spots");
    for (std::size_t i = 0; i < spots.size(); ++i) {
        SpotParams sp;
        sp.px = number(spots[i], "px", spot_field_name(i, "px"));
        sp.py = number(spots[i], "py", spot_field_name(i, "py"));
        sp.sigma = number(spots[i], "sigma", spot_field_name(i, "sigma"));
        sp.s = number(spots[i], "s", spot_field_name(i, "s"));
        config.spots.push_back(sp);
    }
    validate(config);
    return config;
}

}  // namespace irspot
