#pragma once

#include "irspot/embedding.hpp"
#include "irspot/image.hpp"
#include "irspot/oracle_client.hpp"
#include "irspot/spot_model.hpp"

#include <memory>
#include <utility>
#include <vector>

namespace irspot {

struct LandmarkResult {
    enum class Status { Detected, None };

    Status status = Status::None;
    std::vector<std::pair<double, double>> points;
};

/// Facial landmark predictor used by the alignment stage in front of the
/// embedding model.
class LandmarkOracle {
public:
    virtual ~LandmarkOracle() = default;
    virtual LandmarkResult landmarks(const Image& img) = 0;
};

/// Test stand-in: reports no landmarks once the clamped image is washed out
/// (mean Rec.601 luma above `washout`), otherwise 68 fixed points.
class ReferenceLandmarkStub final : public LandmarkOracle {
public:
    explicit ReferenceLandmarkStub(double washout = 0.85) : washout_(washout) {}
    LandmarkResult landmarks(const Image& img) override;

    static double mean_luma(const Image& img);

private:
    double washout_;
};

/// Landmark oracle behind the wire protocol, op "landmarks".
class ExternalLandmarkOracle final : public LandmarkOracle {
public:
    explicit ExternalLandmarkOracle(std::unique_ptr<OracleTransport> transport);
    LandmarkResult landmarks(const Image& img) override;

private:
    std::unique_ptr<OracleTransport> transport_;
};

LandmarkResult parse_landmark_response(const std::string& line);
nlohmann::json to_json(const LandmarkResult& result);

/// base + strength * ratio on every pixel, unclamped.
Image flood_illuminate(const Image& base, double strength, const ColorRatio& ratio = kDefaultColorRatio);

/// True iff the landmark predictor finds nothing.
bool check_dodge_landmark(const Image& img, LandmarkOracle& oracle);

/// True iff distance(f(base), f(perturbed)) > threshold.
bool check_dodge_embedding(const Image& base, const Image& perturbed, EmbeddingOracle& oracle,
                           double threshold);

}  // namespace irspot
