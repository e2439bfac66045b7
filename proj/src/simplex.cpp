#include "uad/simplex.hpp"

#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "uad/rng.hpp"

namespace uad {

namespace {

// 2D simplex gradient noise (Gustavson's formulation) over a seeded
// permutation table. Raw output lies roughly in [-1, 1].
class Simplex2D {
public:
    explicit Simplex2D(uint64_t seed) {
        std::array<uint8_t, 256> base{};
        std::iota(base.begin(), base.end(), 0);
        Rng rng(seed);
        for (size_t i = base.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(rng.randint(static_cast<int64_t>(i)));
            std::swap(base[i - 1], base[j]);
        }
        for (size_t i = 0; i < 512; ++i) perm_[i] = base[i & 255];
    }

    double sample(double xin, double yin) const {
        static constexpr double F2 = 0.36602540378443864676;  // (sqrt(3)-1)/2
        static constexpr double G2 = 0.21132486540518711775;  // (3-sqrt(3))/6

        const double s = (xin + yin) * F2;
        const int i = fast_floor(xin + s);
        const int j = fast_floor(yin + s);
        const double t = (i + j) * G2;
        const double x0 = xin - (i - t);
        const double y0 = yin - (j - t);

        const int i1 = x0 > y0 ? 1 : 0;
        const int j1 = 1 - i1;
        const double x1 = x0 - i1 + G2;
        const double y1 = y0 - j1 + G2;
        const double x2 = x0 - 1.0 + 2.0 * G2;
        const double y2 = y0 - 1.0 + 2.0 * G2;

        const int ii = i & 255;
        const int jj = j & 255;
        const int g0 = perm_[ii + perm_[jj]] % 8;
        const int g1 = perm_[ii + i1 + perm_[jj + j1]] % 8;
        const int g2 = perm_[ii + 1 + perm_[jj + 1]] % 8;

        return 70.0 * (corner(g0, x0, y0) + corner(g1, x1, y1) + corner(g2, x2, y2));
    }

private:
    static int fast_floor(double v) {
        int i = static_cast<int>(v);
        return v < i ? i - 1 : i;
    }

    static double corner(int g, double x, double y) {
        double t = 0.5 - x * x - y * y;
        if (t <= 0.0) return 0.0;
        t *= t;
        static constexpr double gx[8] = {1, -1, 1, -1, 1, -1, 0, 0};
        static constexpr double gy[8] = {1, 1, -1, -1, 0, 0, 1, -1};
        return t * t * (gx[g] * x + gy[g] * y);
    }

    std::array<int, 512> perm_{};
};

}  // namespace

ImageTensor simplex_noise(int height, int width, const SimplexNoiseConfig& cfg) {
    if (height <= 0 || width <= 0)
        throw std::invalid_argument("simplex_noise: dimensions must be positive");
    if (cfg.octaves < 1) throw std::invalid_argument("simplex_noise: octaves must be >= 1");
    if (!(cfg.base_frequency > 0.0))
        throw std::invalid_argument("simplex_noise: base_frequency must be positive");
    if (!(cfg.persistence > 0.0 && cfg.persistence <= 1.0))
        throw std::invalid_argument("simplex_noise: persistence must lie in (0,1]");

    // One lattice per octave, plus a per-octave coordinate offset so octaves
    // are mutually decorrelated.
    Rng offs_rng(Rng::mix(cfg.seed, 0x5eedu));
    ImageTensor out(height, width, 1, ValueRange::unbounded());

    double amp = 1.0;
    for (int o = 0; o < cfg.octaves; ++o) {
        const Simplex2D lattice(Rng::mix(cfg.seed, static_cast<uint64_t>(o)));
        const double freq = cfg.base_frequency * std::pow(2.0, o);
        const double ox = offs_rng.uniform(0.0, 1024.0);
        const double oy = offs_rng.uniform(0.0, 1024.0);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                out.at(y, x) += amp * lattice.sample(x * freq + ox, y * freq + oy);
        amp *= cfg.persistence;
    }

    // Standardize: exactly zero mean, unit variance (degenerate fields stay 0).
    const double n = static_cast<double>(out.size());
    double mean = 0.0;
    for (double v : out.values) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : out.values) var += (v - mean) * (v - mean);
    var /= n;
    const double inv_sd = var > 1e-30 ? 1.0 / std::sqrt(var) : 0.0;
    for (double& v : out.values) v = (v - mean) * inv_sd;
    return out;
}

}  // namespace uad
