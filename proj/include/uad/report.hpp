#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uad/image.hpp"
#include "uad/localization.hpp"

namespace uad {

// Tiles same-shaped single-channel images into a grid (row-major fill) with
// one-pixel white separators. Values are expected in the unit range.
ImageTensor tile_grid(const std::vector<const ImageTensor*>& tiles, int cols);

// Grayscale base with one-pixel box outlines: predictions red, ground truth
// green. Box edges follow the min-inclusive/max-exclusive convention, so the
// drawn outline covers rows/columns [min, max).
RgbImage box_overlay(const ImageTensor& base, const std::vector<BBox>& predictions,
                     const std::vector<BBox>& ground_truth);

// Self-contained SVG plots; byte-deterministic for fixed inputs. `labels`
// uses 1 for target and 0 for background, as in the metric routines.
std::string roc_svg(const std::vector<double>& scores,
                    const std::vector<uint8_t>& labels);
std::string pr_svg(const std::vector<double>& scores,
                   const std::vector<uint8_t>& labels);
std::string score_histogram_svg(const std::vector<double>& scores,
                                const std::vector<uint8_t>& labels, int bins = 20);

}  // namespace uad
