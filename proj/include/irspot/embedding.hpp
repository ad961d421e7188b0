#pragma once

#include "irspot/image.hpp"

#include <array>
#include <chrono>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace irspot {

/// Squared-L2 decision threshold for FaceNet-style embeddings on LFW.
inline constexpr double kDefaultThreshold = 1.242;

struct EmbeddingVector {
    std::vector<double> values;
    bool unit_norm = false;

    std::size_t size() const noexcept { return values.size(); }
    friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

struct OracleConfig {
    enum class Kind { Reference, External };

    Kind kind = Kind::Reference;
    /// "http://host:port" for HTTP, anything else is run as a shell command.
    std::string endpoint;
    double threshold = kDefaultThreshold;
    /// Canvas edge length the oracle expects; 0 accepts any size.
    std::size_t input_size = 0;
    std::chrono::milliseconds timeout{10'000};
};

/// Black-box face embedding f(.). Inputs are clamped to [0,1] here, at the
/// oracle boundary, before the model sees them.
class EmbeddingOracle {
public:
    virtual ~EmbeddingOracle() = default;

    EmbeddingVector embed(const Image& img);

    virtual bool has_image_gradient() const noexcept { return false; }

    /// Gradient of <cotangent, f(clamp(img))> with respect to img. Pixels the
    /// clamp saturates (outside [0,1]) receive zero.
    PixelDelta embed_vjp(const Image& img, std::span<const double> cotangent);

protected:
    virtual EmbeddingVector do_embed(const Image& clamped) = 0;
    virtual PixelDelta do_embed_vjp(const Image& clamped, std::span<const double> cotangent);
};

/// Built-in stand-in model: luma -> 16x16 area average -> orthonormal 2-D
/// DCT-II -> first 64 zig-zag AC coefficients -> L2 normalisation. A flat
/// image has no AC energy and maps to the zero vector with unit_norm unset.
class ReferenceEmbedding final : public EmbeddingOracle {
public:
    static constexpr std::size_t kGrid = 16;
    static constexpr std::size_t kDims = 64;
    static constexpr std::array<double, 3> kLuma{0.299, 0.587, 0.114};

    bool has_image_gradient() const noexcept override { return true; }

    /// Zig-zag scan of a kGrid x kGrid block as (row, col) pairs.
    static const std::vector<std::pair<std::size_t, std::size_t>>& zigzag();

protected:
    EmbeddingVector do_embed(const Image& clamped) override;
    PixelDelta do_embed_vjp(const Image& clamped, std::span<const double> cotangent) override;
};

/// Sum of squared differences.
double distance(const EmbeddingVector& a, const EmbeddingVector& b);

/// Strict: distance(a, b) < threshold.
bool same_person(const EmbeddingVector& a, const EmbeddingVector& b, const OracleConfig& cfg);

std::unique_ptr<EmbeddingOracle> make_oracle(const OracleConfig& cfg);

}  // namespace irspot
