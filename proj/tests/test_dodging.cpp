#include "irspot/dodging.hpp"
#include "irspot/error.hpp"
#include "irspot/optimizer.hpp"
#include "irspot/synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace irspot;

namespace {

class FixedLandmarks final : public LandmarkOracle {
public:
    explicit FixedLandmarks(bool detect) : detect_(detect) {}
    LandmarkResult landmarks(const Image&) override {
        LandmarkResult r;
        if (detect_) {
            r.status = LandmarkResult::Status::Detected;
            r.points.assign(68, {1.0, 2.0});
        }
        return r;
    }

private:
    bool detect_;
};

}  // namespace

TEST(Flood, ZeroStrengthIsIdentity) {
    const Image face = synthetic_face(1, 32);
    EXPECT_EQ(flood_illuminate(face, 0.0), face);
}

TEST(Flood, BlackImageBecomesConstantRatio) {
    const Image out = flood_illuminate(Image(4, 5), 2.0);
    for (std::size_t y = 0; y < 4; ++y) {
        for (std::size_t x = 0; x < 5; ++x) {
            for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(out.at(y, x, c), 2.0 * kDefaultColorRatio[c]);
        }
    }
}

TEST(Flood, MatchesHugeSigmaSpot) {
    const Image face = synthetic_face(2, 48);
    const double strength = 1.7;
    PerturbationConfig wide;
    wide.amp = strength;
    wide.spots = {{23.5, 23.5, 1e6, 1.0}};
    const Image a = flood_illuminate(face, strength);
    const Image b = synthesize(face, wide);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_LE(std::abs(a.data()[i] - b.data()[i]), 1e-6 * std::abs(a.data()[i]));
    }
}

TEST(Flood, LinearInStrengthBeforeClamping) {
    const Image face = synthetic_face(3, 16);
    const PixelDelta d1 = diff(flood_illuminate(face, 1.5), face);
    const PixelDelta d2 = diff(flood_illuminate(face, 3.0), face);
    for (std::size_t i = 0; i < face.size(); ++i) EXPECT_NEAR(d2.data()[i], 2.0 * d1.data()[i], 1e-15);
    EXPECT_GT(flood_illuminate(Image(2, 2, 0.9), 10.0).at(0, 0, 2), 1.0);
}

TEST(LandmarkCheck, FixedStubs) {
    const Image face = synthetic_face(1, 32);
    FixedLandmarks none(false), some(true);
    EXPECT_TRUE(check_dodge_landmark(face, none));
    EXPECT_FALSE(check_dodge_landmark(face, some));
}

TEST(LandmarkCheck, ReferenceStubWashesOutAtComputedStrength) {
    const Image base(32, 32, 0.8);
    ReferenceLandmarkStub stub;
    const double luma_per_unit =
        0.299 * kDefaultColorRatio[0] + 0.587 * kDefaultColorRatio[1] + 0.114 * kDefaultColorRatio[2];
    const double needed = (0.85 - 0.8) / luma_per_unit;  // about 0.675
    EXPECT_GT(needed, 0.6);
    EXPECT_LT(needed, 0.7);
    EXPECT_FALSE(check_dodge_landmark(base, stub));
    EXPECT_FALSE(check_dodge_landmark(flood_illuminate(base, 0.6), stub));
    EXPECT_TRUE(check_dodge_landmark(flood_illuminate(base, 0.7), stub));
}

TEST(LandmarkCheck, StubUsesClampedLuma) {
    Image img(4, 4, 0.5);
    img.at(0, 0, 0) = 100.0;  // would dominate an unclamped mean
    EXPECT_NEAR(ReferenceLandmarkStub::mean_luma(img), 0.5 + 0.299 * 0.5 / 16, 1e-12);
}

TEST(LandmarkCheck, DetectedStubReturns68Points) {
    ReferenceLandmarkStub stub;
    const auto r = stub.landmarks(synthetic_face(1, 32));
    EXPECT_EQ(r.status, LandmarkResult::Status::Detected);
    EXPECT_EQ(r.points.size(), 68u);
    const auto none = stub.landmarks(Image(8, 8, 1.0));
    EXPECT_EQ(none.status, LandmarkResult::Status::None);
    EXPECT_TRUE(none.points.empty());
}

TEST(LandmarkWire, ParseResponses) {
    const auto none = parse_landmark_response(R"({"status":"none"})");
    EXPECT_EQ(none.status, LandmarkResult::Status::None);
    const auto det = parse_landmark_response(R"({"status":"detected","points":[[1,2],[3.5,4]]})");
    EXPECT_EQ(det.status, LandmarkResult::Status::Detected);
    ASSERT_EQ(det.points.size(), 2u);
    EXPECT_EQ(det.points[1].first, 3.5);
    EXPECT_THROW(parse_landmark_response(R"({"status":"maybe"})"), OracleError);
    EXPECT_THROW(parse_landmark_response(R"({"status":"none","points":[[1,2]]})"), OracleError);
    EXPECT_THROW(parse_landmark_response(R"({"error":"down"})"), OracleError);
    EXPECT_THROW(parse_landmark_response("{"), OracleError);
    EXPECT_EQ(parse_landmark_response(to_json(det).dump()).points, det.points);
}

TEST(EmbeddingCheck, Basics) {
    ReferenceEmbedding oracle;
    const Image face = synthetic_face(4, 32);
    EXPECT_FALSE(check_dodge_embedding(face, face, oracle, kDefaultThreshold));
    EXPECT_TRUE(check_dodge_embedding(face, face, oracle, -1.0));
    EXPECT_THROW(check_dodge_embedding(face, synthetic_face(4, 48), oracle, 1.0), Error);
}

TEST(EmbeddingCheck, ReplayOfOptimizedDodge) {
    ReferenceEmbedding oracle;
    const Image face = synthetic_face(6, 48);
    AttackConfig cfg;
    cfg.max_iters = 150;
    const AttackResult r = run_dodge(face, cfg, oracle);
    ASSERT_TRUE(r.success) << r.best_distance;
    const Image perturbed = synthesize(face, r.best_config);
    EXPECT_TRUE(check_dodge_embedding(face, perturbed, oracle, kDefaultThreshold));
}
