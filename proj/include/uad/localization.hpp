#pragma once

#include <string>
#include <utility>
#include <vector>

#include "uad/image.hpp"

namespace uad {

// Axis-aligned box, min corner inclusive, max corner exclusive (a 3x3 block
// whose top-left pixel sits at (4,4) yields x_min=4, y_min=4, x_max=7, y_max=7).
struct BBox {
    int x_min = 0;
    int y_min = 0;
    int x_max = 0;
    int y_max = 0;
    double score = 0.0;

    int64_t area() const {
        return static_cast<int64_t>(x_max - x_min) * static_cast<int64_t>(y_max - y_min);
    }
    bool valid() const { return x_min < x_max && y_min < y_max; }
};

// Intersection over union of the two pixel sets; degenerate boxes rejected.
double iou(const BBox& a, const BBox& b);

// Binarizes the residual map with a strict > threshold, labels 8-connected
// components, draws one tight box per component with the summed residual of
// its pixels as score, and keeps the top_n by box area (largest first; ties
// resolve by y_min, then x_min).
std::vector<BBox> extract_bboxes(const ImageTensor& residual, double threshold, int top_n);

// Greedy matching in descending prediction-score order: each prediction takes
// the unmatched ground-truth box of highest IoU at or above the threshold.
struct MatchResult {
    int tp = 0;
    int fp = 0;
    std::vector<std::pair<int, int>> pairs;  // (prediction index, gt index)
};
MatchResult match_detections(const std::vector<BBox>& preds, const std::vector<BBox>& gts,
                             double iou_threshold);

// One image's predictions and ground truth.
struct DetectionSet {
    std::vector<BBox> preds;
    std::vector<BBox> gts;
};

// Average precision at one IoU threshold over the pooled dataset: the usual
// all-point interpolated precision-recall staircase.
double average_precision(const std::vector<DetectionSet>& dataset, double iou_threshold);

// Mean AP over IoU thresholds 0.50, 0.55, ..., 0.95.
double map_range(const std::vector<DetectionSet>& dataset);

// Fraction of ground-truth boxes recovered at IoU >= 0.5.
double acc50(const std::vector<DetectionSet>& dataset);

// Dataset totals of matched / spurious predictions at one IoU threshold.
std::pair<int, int> count_tp_fp(const std::vector<DetectionSet>& dataset, double iou_threshold);

// Line-delimited box records: "image_id x_min y_min x_max y_max score".
std::string boxes_to_records(const std::vector<std::pair<std::string, BBox>>& rows);
std::vector<std::pair<std::string, BBox>> boxes_from_records(const std::string& text);
void write_box_records(const std::string& path,
                       const std::vector<std::pair<std::string, BBox>>& rows);
std::vector<std::pair<std::string, BBox>> read_box_records(const std::string& path);

}  // namespace uad
