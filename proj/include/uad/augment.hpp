#pragma once

#include <cstdint>

#include "uad/image.hpp"
#include "uad/rng.hpp"

namespace uad {

// Two transform families: a benign "standard" family for instance-level views
// and an anomaly-simulating family (cutout / additive Gaussian noise / random
// erasing) whose views are still pulled toward the healthy anchor, making the
// learned code ignore anomaly content. Every transform preserves shape and
// the declared value range (clipping where needed).
struct AugmentationPolicy {
    // standard family; probabilities of applying each step
    double flip_prob = 0.5;
    double crop_prob = 0.5;
    double crop_min_scale = 0.8;  // crop side as a fraction of the image side
    double jitter_prob = 0.5;
    double brightness_delta = 0.1;  // additive, fraction of the value range
    double contrast_lo = 0.9;
    double contrast_hi = 1.1;

    // anomaly-simulating family; one enabled transform is applied per view
    bool enable_cutout = true;
    bool enable_gauss_noise = true;
    bool enable_erasing = true;
    double cutout_area_lo = 0.02;  // rectangle area, fraction of image area
    double cutout_area_hi = 0.15;
    double noise_sigma_lo = 0.05;  // stddev, fraction of the value range
    double noise_sigma_hi = 0.2;

    uint64_t seed = 0;
};

enum class AugMode { instance, class_invariant };

// Seeded view generator. instance mode samples the standard family only;
// class_invariant mode additionally applies one anomaly-simulating transform.
class Augmenter {
  public:
    explicit Augmenter(const AugmentationPolicy& policy);

    ImageTensor make_positive(const ImageTensor& x, AugMode mode);

    // Individual transforms, deterministic given explicit parameters.
    static ImageTensor flip_h(const ImageTensor& x);
    static ImageTensor crop_resize(const ImageTensor& x, double scale, double off_y,
                                   double off_x);
    static ImageTensor intensity_jitter(const ImageTensor& x, double brightness,
                                        double contrast);
    static ImageTensor cutout(const ImageTensor& x, int y0, int x0, int h, int w);
    static ImageTensor add_gauss_noise(const ImageTensor& x, double sigma, Rng& rng);
    static ImageTensor random_erase(const ImageTensor& x, int y0, int x0, int h, int w,
                                    Rng& rng);

  private:
    AugmentationPolicy policy_;
    Rng rng_;

    void rand_rect(const ImageTensor& x, int& y0, int& x0, int& h, int& w);
};

}  // namespace uad
