#pragma once

#include <cmath>
#include <vector>

#include "uad/image.hpp"
#include "uad/rng.hpp"

namespace testutil {

inline uad::ImageTensor random_image(int h, int w, uad::Rng& rng, double lo = 0.0,
                                     double hi = 1.0) {
    uad::ImageTensor img(h, w, 1, uad::ValueRange{lo, hi, true});
    for (auto& v : img.values) v = rng.uniform(lo, hi);
    return img;
}

inline uad::ImageTensor gaussian_image(int h, int w, uad::Rng& rng) {
    uad::ImageTensor img(h, w, 1, uad::ValueRange::unbounded());
    for (auto& v : img.values) v = rng.normal();
    return img;
}

inline double max_abs_diff(const uad::ImageTensor& a, const uad::ImageTensor& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values[i] - b.values[i]));
    return m;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

// Horizontal lag-1 spatial autocorrelation of a single-channel field.
inline double lag1_autocorr(const uad::ImageTensor& img) {
    std::vector<double> a, b;
    a.reserve(img.size());
    b.reserve(img.size());
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x + 1 < img.width; ++x) {
            a.push_back(img.at(y, x));
            b.push_back(img.at(y, x + 1));
        }
    return pearson(a, b);
}

}  // namespace testutil
