#include "uad/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace uad {

Augmenter::Augmenter(const AugmentationPolicy& policy) : policy_(policy), rng_(policy.seed) {
    if (policy.crop_min_scale <= 0.0 || policy.crop_min_scale > 1.0)
        throw std::invalid_argument("augment: crop_min_scale must be in (0, 1]");
    if (policy.cutout_area_lo <= 0.0 || policy.cutout_area_hi > 1.0 ||
        policy.cutout_area_lo > policy.cutout_area_hi)
        throw std::invalid_argument("augment: bad cutout area range");
    if (policy.noise_sigma_lo < 0.0 || policy.noise_sigma_lo > policy.noise_sigma_hi)
        throw std::invalid_argument("augment: bad noise sigma range");
}

ImageTensor Augmenter::flip_h(const ImageTensor& x) {
    ImageTensor out = x;
    for (int c = 0; c < x.channels; ++c)
        for (int y = 0; y < x.height; ++y)
            for (int xx = 0; xx < x.width; ++xx)
                out.at(y, xx, c) = x.at(y, x.width - 1 - xx, c);
    return out;
}

ImageTensor Augmenter::crop_resize(const ImageTensor& x, double scale, double off_y,
                                   double off_x) {
    if (scale <= 0.0 || scale > 1.0) throw std::invalid_argument("crop: scale in (0,1]");
    const int ch = std::max(1, static_cast<int>(std::lround(scale * x.height)));
    const int cw = std::max(1, static_cast<int>(std::lround(scale * x.width)));
    const int y0 = static_cast<int>(std::lround(off_y * (x.height - ch)));
    const int x0 = static_cast<int>(std::lround(off_x * (x.width - cw)));

    ImageTensor win(ch, cw, x.channels, x.range);
    for (int c = 0; c < x.channels; ++c)
        for (int y = 0; y < ch; ++y)
            for (int xx = 0; xx < cw; ++xx) win.at(y, xx, c) = x.at(y0 + y, x0 + xx, c);
    return bilinear_resize(win, x.height, x.width);
}

ImageTensor Augmenter::intensity_jitter(const ImageTensor& x, double brightness,
                                        double contrast) {
    ImageTensor out = x;
    const double mid = x.range.bounded ? 0.5 * (x.range.lo + x.range.hi) : 0.0;
    const double shift = brightness * (x.range.bounded ? x.range.width() : 1.0);
    for (auto& v : out.values) v = (v - mid) * contrast + mid + shift;
    out.clip_to_range();
    return out;
}

ImageTensor Augmenter::cutout(const ImageTensor& x, int y0, int x0, int h, int w) {
    ImageTensor out = x;
    const double fill = x.range.bounded ? x.range.lo : 0.0;
    for (int c = 0; c < x.channels; ++c)
        for (int y = y0; y < y0 + h; ++y)
            for (int xx = x0; xx < x0 + w; ++xx) out.at(y, xx, c) = fill;
    return out;
}

ImageTensor Augmenter::add_gauss_noise(const ImageTensor& x, double sigma, Rng& rng) {
    ImageTensor out = x;
    const double s = sigma * (x.range.bounded ? x.range.width() : 1.0);
    for (auto& v : out.values) v += s * rng.normal();
    out.clip_to_range();
    return out;
}

ImageTensor Augmenter::random_erase(const ImageTensor& x, int y0, int x0, int h, int w,
                                    Rng& rng) {
    ImageTensor out = x;
    const double lo = x.range.bounded ? x.range.lo : -1.0;
    const double hi = x.range.bounded ? x.range.hi : 1.0;
    for (int c = 0; c < x.channels; ++c)
        for (int y = y0; y < y0 + h; ++y)
            for (int xx = x0; xx < x0 + w; ++xx) out.at(y, xx, c) = rng.uniform(lo, hi);
    return out;
}

void Augmenter::rand_rect(const ImageTensor& x, int& y0, int& x0, int& h, int& w) {
    const double area = rng_.uniform(policy_.cutout_area_lo, policy_.cutout_area_hi) *
                        x.height * x.width;
    const double aspect = std::exp(rng_.uniform(std::log(0.5), std::log(2.0)));
    h = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, x.height);
    w = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 1, x.width);
    y0 = rng_.randint(x.height - h + 1);
    x0 = rng_.randint(x.width - w + 1);
}

ImageTensor Augmenter::make_positive(const ImageTensor& x, AugMode mode) {
    if (x.height <= 0 || x.width <= 0) throw std::invalid_argument("augment: empty image");
    ImageTensor out = x;

    if (rng_.uniform() < policy_.flip_prob) out = flip_h(out);
    if (rng_.uniform() < policy_.crop_prob) {
        const double scale = rng_.uniform(policy_.crop_min_scale, 1.0);
        out = crop_resize(out, scale, rng_.uniform(), rng_.uniform());
    }
    if (rng_.uniform() < policy_.jitter_prob) {
        const double b = rng_.uniform(-policy_.brightness_delta, policy_.brightness_delta);
        const double c = rng_.uniform(policy_.contrast_lo, policy_.contrast_hi);
        out = intensity_jitter(out, b, c);
    }

    if (mode == AugMode::class_invariant) {
        std::vector<int> enabled;
        if (policy_.enable_cutout) enabled.push_back(0);
        if (policy_.enable_gauss_noise) enabled.push_back(1);
        if (policy_.enable_erasing) enabled.push_back(2);
        if (enabled.empty())
            throw std::invalid_argument("augment: class_invariant mode with no anomaly transforms enabled");
        switch (enabled[rng_.randint(static_cast<int>(enabled.size()))]) {
            case 0: {
                int y0, x0, h, w;
                rand_rect(out, y0, x0, h, w);
                out = cutout(out, y0, x0, h, w);
                break;
            }
            case 1:
                out = add_gauss_noise(
                    out, rng_.uniform(policy_.noise_sigma_lo, policy_.noise_sigma_hi), rng_);
                break;
            default: {
                int y0, x0, h, w;
                rand_rect(out, y0, x0, h, w);
                out = random_erase(out, y0, x0, h, w, rng_);
                break;
            }
        }
    }
    return out;
}

}  // namespace uad
