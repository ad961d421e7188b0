#include "irspot/dodging.hpp"

#include "irspot/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace irspot {

double ReferenceLandmarkStub::mean_luma(const Image& img) {
    if (img.empty()) throw ImageError("landmarks: empty image");
    double sum = 0.0;
    for (std::size_t y = 0; y < img.height(); ++y) {
        for (std::size_t x = 0; x < img.width(); ++x) {
            double luma = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                luma += ReferenceEmbedding::kLuma[c] * std::clamp(img.at(y, x, c), 0.0, 1.0);
            }
            sum += luma;
        }
    }
    return sum / static_cast<double>(img.height() * img.width());
}

LandmarkResult ReferenceLandmarkStub::landmarks(const Image& img) {
    LandmarkResult out;
    if (mean_luma(img) > washout_) return out;
    out.status = LandmarkResult::Status::Detected;
    // 68 points on an ellipse inscribed in the central face region.
    const double cx = 0.5 * static_cast<double>(img.width() - 1);
    const double cy = 0.55 * static_cast<double>(img.height() - 1);
    for (int i = 0; i < 68; ++i) {
        const double a = 2.0 * std::numbers::pi * i / 68.0;
        out.points.emplace_back(cx + 0.3 * img.width() * std::cos(a),
                                cy + 0.35 * img.height() * std::sin(a));
    }
    return out;
}

ExternalLandmarkOracle::ExternalLandmarkOracle(std::unique_ptr<OracleTransport> transport)
    : transport_(std::move(transport)) {}

LandmarkResult ExternalLandmarkOracle::landmarks(const Image& img) {
    return parse_landmark_response(
        transport_->exchange("landmarks", image_request("landmarks", clamp01(img)).dump()));
}

LandmarkResult parse_landmark_response(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
        throw OracleError("malformed landmark response: not JSON");
    }
    if (!j.is_object()) throw OracleError("malformed landmark response: not an object");
    if (j.contains("error")) throw OracleError("oracle error: " + j["error"].dump());
    if (!j.contains("status") || !j["status"].is_string()) {
        throw OracleError("malformed landmark response: missing status");
    }
    LandmarkResult out;
    const auto status = j["status"].get<std::string>();
    if (status == "none") {
        if (j.contains("points") && !j["points"].empty()) {
            throw OracleError("malformed landmark response: status none with points");
        }
        return out;
    }
    if (status != "detected") throw OracleError("malformed landmark response: unknown status");
    out.status = LandmarkResult::Status::Detected;
    if (!j.contains("points") || !j["points"].is_array()) {
        throw OracleError("malformed landmark response: missing points");
    }
    for (const auto& p : j["points"]) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
            throw OracleError("malformed landmark response: bad point");
        }
        out.points.emplace_back(p[0].get<double>(), p[1].get<double>());
    }
    return out;
}

nlohmann::json to_json(const LandmarkResult& result) {
    if (result.status == LandmarkResult::Status::None) return {{"status", "none"}};
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& [x, y] : result.points) pts.push_back({x, y});
    return {{"status", "detected"}, {"points", std::move(pts)}};
}

Image flood_illuminate(const Image& base, double strength, const ColorRatio& ratio) {
    if (!(strength >= 0.0)) throw ValidationError("strength", "flood strength must be >= 0");
    Image out = base;
    for (std::size_t y = 0; y < out.height(); ++y) {
        for (std::size_t x = 0; x < out.width(); ++x) {
            for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) += strength * ratio[c];
        }
    }
    return out;
}

bool check_dodge_landmark(const Image& img, LandmarkOracle& oracle) {
    return oracle.landmarks(img).status == LandmarkResult::Status::None;
}

bool check_dodge_embedding(const Image& base, const Image& perturbed, EmbeddingOracle& oracle,
                           double threshold) {
    if (!base.same_shape(perturbed)) throw ImageError("dodge check: canvas sizes differ");
    return distance(oracle.embed(base), oracle.embed(perturbed)) > threshold;
}

}  // namespace irspot
