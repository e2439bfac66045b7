#include <string>
#include <vector>

#include "doctest.h"
#include "uad/metrics.hpp"
#include "uad/report.hpp"

using namespace uad;

namespace {

ImageTensor const_tile(int h, int w, double v) {
    ImageTensor t(h, w, 1, ValueRange::unit());
    for (double& x : t.values) x = v;
    return t;
}

bool contains(const std::string& hay, const std::string& needle) {
    return hay.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("tile_grid lays out tiles row-major with white separators") {
    // [DERIVED] 3 tiles of 4x3 in 2 columns: 2 rows, grid is
    // (2*4+1) x (2*3+1) = 9x7 with separator row y=4 and column x=3.
    const ImageTensor a = const_tile(4, 3, 0.25);
    const ImageTensor b = const_tile(4, 3, 0.5);
    const ImageTensor c = const_tile(4, 3, 0.75);
    const ImageTensor grid = tile_grid({&a, &b, &c}, 2);

    CHECK(grid.height == 9);
    CHECK(grid.width == 7);
    CHECK(grid.channels == 1);
    CHECK(grid.at(0, 0, 0) == 0.25);   // tile 0 at (row 0, col 0)
    CHECK(grid.at(3, 2, 0) == 0.25);
    CHECK(grid.at(0, 4, 0) == 0.5);    // tile 1 at (row 0, col 1)
    CHECK(grid.at(5, 0, 0) == 0.75);   // tile 2 wraps to (row 1, col 0)
    for (int x = 0; x < grid.width; ++x) CHECK(grid.at(4, x, 0) == 1.0);
    for (int y = 0; y < grid.height; ++y) CHECK(grid.at(y, 3, 0) == 1.0);
    // the unfilled cell (row 1, col 1) stays black
    CHECK(grid.at(5, 4, 0) == 0.0);
    CHECK(grid.at(8, 6, 0) == 0.0);
}

TEST_CASE("tile_grid clamps out-of-range tile values") {
    // [TRIVIAL] values outside [0, 1] are clamped, not wrapped
    ImageTensor t(2, 2, 1, ValueRange::unbounded());
    t.values = {1.7, -0.3, 0.5, 1.0};
    const ImageTensor grid = tile_grid({&t}, 1);
    CHECK(grid.at(0, 0, 0) == 1.0);
    CHECK(grid.at(0, 1, 0) == 0.0);
    CHECK(grid.at(1, 0, 0) == 0.5);
}

TEST_CASE("tile_grid rejects bad inputs") {
    const ImageTensor a = const_tile(4, 3, 0.5);
    const ImageTensor small = const_tile(2, 3, 0.5);
    const ImageTensor rgbish(4, 3, 2, ValueRange::unit());
    CHECK_THROWS_AS(tile_grid({}, 2), std::invalid_argument);
    CHECK_THROWS_AS(tile_grid({&a}, 0), std::invalid_argument);
    CHECK_THROWS_AS(tile_grid({&a, &small}, 2), std::invalid_argument);
    CHECK_THROWS_AS(tile_grid({&rgbish}, 1), std::invalid_argument);
}

TEST_CASE("box_overlay draws outlines in the layer colors") {
    // [DERIVED] constant 0.5 base maps to gray 128 (round half up)
    const ImageTensor base = const_tile(8, 8, 0.5);
    const BBox pred{1, 1, 4, 4, 0.9};
    const BBox gt{4, 4, 8, 8, 0.0};
    const RgbImage img = box_overlay(base, {pred}, {gt});

    CHECK(img.at(0, 0, 0) == 128);  // untouched background stays gray
    CHECK(img.at(0, 0, 1) == 128);
    CHECK(img.at(0, 0, 2) == 128);

    // prediction outline is red; max edges are at x_max-1 / y_max-1
    for (int x = 1; x < 4; ++x) {
        CHECK(img.at(1, x, 0) == 220);
        CHECK(img.at(1, x, 1) == 50);
        CHECK(img.at(1, x, 2) == 40);
        CHECK(img.at(3, x, 0) == 220);
    }
    CHECK(img.at(2, 1, 0) == 220);
    CHECK(img.at(2, 3, 0) == 220);
    CHECK(img.at(2, 2, 0) == 128);  // interior untouched

    // ground-truth outline is green
    CHECK(img.at(4, 5, 0) == 60);
    CHECK(img.at(4, 5, 1) == 180);
    CHECK(img.at(4, 5, 2) == 75);
    CHECK(img.at(7, 7, 1) == 180);
}

TEST_CASE("box_overlay draws predictions over ground truth") {
    // [TRIVIAL] where both outlines land on the same pixel the prediction wins
    const ImageTensor base = const_tile(6, 6, 0.0);
    const BBox shared{1, 1, 5, 5, 1.0};
    const RgbImage img = box_overlay(base, {shared}, {shared});
    CHECK(img.at(1, 1, 0) == 220);
    CHECK(img.at(1, 1, 1) == 50);
}

TEST_CASE("box_overlay rejects out-of-image and degenerate boxes") {
    const ImageTensor base = const_tile(8, 8, 0.5);
    CHECK_THROWS_WITH(box_overlay(base, {BBox{2, 2, 9, 4, 0.0}}, {}),
                      "box_overlay: box outside the image");
    CHECK_THROWS_AS(box_overlay(base, {}, {BBox{-1, 0, 4, 4, 0.0}}),
                    std::invalid_argument);
    CHECK_THROWS_AS(box_overlay(base, {BBox{3, 3, 3, 5, 0.0}}, {}),
                    std::invalid_argument);  // x_min == x_max
    const ImageTensor rgbish(4, 4, 3, ValueRange::unit());
    CHECK_THROWS_AS(box_overlay(rgbish, {}, {}), std::invalid_argument);
}

TEST_CASE("roc_svg labels the curve with the measured AUC") {
    // [DERIVED] ranking pos, neg, pos, neg: AUC = 3/4 (one of four
    // positive/negative pairs is misordered)
    const std::vector<double> scores{0.9, 0.8, 0.7, 0.6};
    const std::vector<uint8_t> labels{1, 0, 1, 0};
    const std::string svg = roc_svg(scores, labels);

    CHECK(contains(svg, "AUC = 0.75"));
    CHECK(contains(svg, "<svg xmlns"));
    CHECK(contains(svg, "</svg>"));
    // the curve starts at (0,0) and ends at (1,1) in plot coordinates
    CHECK(contains(svg, "52,312"));
    CHECK(contains(svg, "464,24"));
    CHECK(contains(svg, "false positive rate"));

    // [TRIVIAL] byte-deterministic
    CHECK(svg == roc_svg(scores, labels));
}

TEST_CASE("pr_svg labels the curve with the measured AUPRC") {
    const std::vector<double> scores{0.9, 0.8, 0.7, 0.6};
    const std::vector<uint8_t> labels{1, 0, 1, 0};
    const std::string svg = pr_svg(scores, labels);
    // label matches the metric routine bit-for-bit
    CHECK(contains(svg, "AUPRC = " + format_double(auprc(scores, labels))));
    CHECK(contains(svg, "recall"));
    CHECK(contains(svg, "precision"));
    CHECK(svg == pr_svg(scores, labels));
}

TEST_CASE("curve plots degrade gracefully with one class") {
    const std::vector<double> scores{0.2, 0.4};
    const std::vector<uint8_t> all_bg{0, 0};
    CHECK(contains(roc_svg(scores, all_bg), "curve undefined: only one class present"));
    CHECK(contains(pr_svg(scores, all_bg), "curve undefined: only one class present"));
}

TEST_CASE("curve plots reject malformed inputs") {
    CHECK_THROWS_AS(roc_svg({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(roc_svg({0.5}, {1, 0}), std::invalid_argument);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(pr_svg({nan, 0.5}, {1, 0}), std::invalid_argument);
}

TEST_CASE("score_histogram_svg bins counts per class") {
    // [DERIVED] scores {0,1,1,1}, 2 bins over [0,1]: background count 1 in
    // bin 0, target count 3 in bin 1; peak 3. Bar heights are
    // 288 * count/peak: 96 for the background bar, 288 for the target bar.
    const std::vector<double> scores{0.0, 1.0, 1.0, 1.0};
    const std::vector<uint8_t> labels{0, 1, 1, 1};
    const std::string svg = score_histogram_svg(scores, labels, 2);

    CHECK(contains(svg, "height=\"96\""));
    CHECK(contains(svg, "height=\"288\""));
    CHECK(contains(svg, "background"));
    CHECK(contains(svg, "target"));
    CHECK(contains(svg, "mean residual score"));
    CHECK(svg == score_histogram_svg(scores, labels, 2));
}

TEST_CASE("score_histogram_svg handles identical scores") {
    // [TRIVIAL] degenerate span: everything lands in bin 0, no crash
    const std::vector<double> scores{0.3, 0.3, 0.3};
    const std::vector<uint8_t> labels{0, 1, 0};
    const std::string svg = score_histogram_svg(scores, labels, 10);
    CHECK(contains(svg, "</svg>"));
    CHECK_THROWS_AS(score_histogram_svg(scores, labels, 0), std::invalid_argument);
}
