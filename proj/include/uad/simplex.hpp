#pragma once

#include <cstdint>

#include "uad/image.hpp"

namespace uad {

// Structured gradient-noise configuration. base_frequency is in cycles per
// pixel (default 1/64, i.e. base features ~64 px wide); each octave doubles
// the frequency and decays the amplitude by `persistence`.
struct SimplexNoiseConfig {
    int octaves = 6;
    double base_frequency = 1.0 / 64.0;
    double persistence = 0.8;
    uint64_t seed = 0;
};

// Zero-centered multi-octave 2D simplex noise field, standardized to unit
// variance. Deterministic for fixed (height, width, cfg).
ImageTensor simplex_noise(int height, int width, const SimplexNoiseConfig& cfg);

}  // namespace uad
