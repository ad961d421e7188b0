#pragma once

#include "irspot/image.hpp"

#include <cstddef>
#include <cstdint>

namespace irspot {

/// Procedural aligned "face" (skin ellipse, eyes, brows, nose, mouth, hair
/// and mild texture) used as asset-free test and demo input. Deterministic
/// in the seed.
Image synthetic_face(std::uint64_t seed, std::size_t size = 64);

}  // namespace irspot
