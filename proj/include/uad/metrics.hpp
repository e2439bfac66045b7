#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "uad/image.hpp"

namespace uad {

// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5) and the
// standard stabilizers C1=(0.01 L)^2, C2=(0.03 L)^2 on the declared dynamic
// range L. Averaged over the valid region (full windows only) and channels.
double ssim(const ImageTensor& x, const ImageTensor& y);

// Mean squared / absolute elementwise difference, optionally restricted to a
// nonempty mask.
double mse(const ImageTensor& x, const ImageTensor& y,
           const BinaryMask* mask = nullptr);
double l1(const ImageTensor& x, const ImageTensor& y, const BinaryMask* mask = nullptr);

// 2 |pred ∩ gt| / (|pred| + |gt|); both empty counts as a perfect 1.0.
double dice(const BinaryMask& pred, const BinaryMask& gt);

// Sweeps quantile-spaced thresholds over the pooled residuals (binarizing
// with strict >) and returns the best dataset-level Dice and its threshold.
std::pair<double, double> best_dice(const std::vector<ImageTensor>& maps,
                                    const std::vector<BinaryMask>& gts,
                                    int num_thresholds = 100);

// Area under the precision-recall curve: trapezoidal integration over the
// points where recall increases, anchored at (recall 0, precision 1).
double auprc(const std::vector<double>& scores, const std::vector<uint8_t>& labels);

// Probability that a random positive outscores a random negative (rank
// statistic, ties count one half).
double roc_auc(const std::vector<double>& scores, const std::vector<uint8_t>& labels);

// --- report ----------------------------------------------------------------

struct ImageMetricRecord {
    std::string id;
    double ssim = 0.0;
    double mse = 0.0;
    double l1 = 0.0;
    double score = 0.0;  // image-level anomaly score
    int label = 0;       // 0 background, 1 target
};

// Per-image records plus dataset aggregates; aggregates are recomputable from
// the records (and the pixel-level inputs for the mask metrics).
struct MetricsReport {
    static constexpr int schema_version = 1;

    std::vector<ImageMetricRecord> records;
    double ssim_mean = 0.0, ssim_std = 0.0;
    double mse_mean = 0.0, mse_std = 0.0;
    double l1_mean = 0.0, l1_std = 0.0;
    double score_mean = 0.0, score_std = 0.0;
    std::optional<double> dice_best;
    std::optional<double> dice_best_threshold;
    std::optional<double> pixel_auprc;
    std::optional<double> image_roc_auc;

    void compute_aggregates();
    std::string to_csv() const;           // byte-deterministic
    std::string to_summary_json() const;  // byte-deterministic
};

// Fixed-format float for deterministic tables.
std::string format_double(double v);

}  // namespace uad
