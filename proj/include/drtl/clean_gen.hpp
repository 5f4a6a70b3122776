#pragma once

#include <cstdint>

#include "drtl/image.hpp"

namespace drtl::synth {

// Procedural RGB stand-in for a natural photo corpus: smooth shading, a few
// soft blobs, hard geometric edges, and fine texture, with correlated color
// channels. Deterministic in the seed.
Image generate_clean_image(int height, int width, uint64_t seed);

}  // namespace drtl::synth
