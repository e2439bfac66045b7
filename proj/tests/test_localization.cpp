#include "uad/localization.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "uad/rng.hpp"

using namespace uad;

namespace {

ImageTensor zeros(int h, int w) { return ImageTensor(h, w, 1, ValueRange::unbounded()); }

void fill_block(ImageTensor& img, int y0, int x0, int h, int w, double v) {
    for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) img.at(y, x, 0) = v;
}

// Total box area of all components above threshold (no top-n cut).
int64_t boxed_area(const ImageTensor& residual, double thr) {
    int64_t total = 0;
    for (const auto& b : extract_bboxes(residual, thr, 1 << 20)) total += b.area();
    return total;
}

}  // namespace

TEST_CASE("iou fixtures") {
    // [DERIVED] two 2x2 boxes sharing a 1x2 strip: 2 / (4 + 4 - 2) = 1/3
    CHECK(iou({0, 0, 2, 2, 0.0}, {1, 0, 3, 2, 0.0}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(iou({0, 0, 4, 4, 0.0}, {0, 0, 4, 4, 0.0}) == 1.0);  // [TRIVIAL]
    CHECK(iou({0, 0, 2, 2, 0.0}, {5, 5, 7, 7, 0.0}) == 0.0);  // disjoint
    CHECK(iou({0, 0, 2, 2, 0.0}, {2, 0, 4, 2, 0.0}) == 0.0);  // touching edges only
    // [DERIVED] box inside a larger one: 60 / 100
    CHECK(iou({0, 0, 6, 10, 0.0}, {0, 0, 10, 10, 0.0}) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK_THROWS_AS(iou({0, 0, 0, 2, 0.0}, {0, 0, 2, 2, 0.0}), std::invalid_argument);
}

TEST_CASE("extract_bboxes: single block yields the documented tight box") {
    auto img = zeros(12, 12);
    fill_block(img, 4, 4, 3, 3, 1.0);
    const auto boxes = extract_bboxes(img, 0.5, 5);
    REQUIRE(boxes.size() == 1);
    // [TRIVIAL] min corner inclusive, max corner exclusive
    CHECK(boxes[0].x_min == 4);
    CHECK(boxes[0].y_min == 4);
    CHECK(boxes[0].x_max == 7);
    CHECK(boxes[0].y_max == 7);
    CHECK(boxes[0].area() == 9);
    CHECK(boxes[0].score == doctest::Approx(9.0));  // summed residual of the component
}

TEST_CASE("extract_bboxes: components order by area and top_n truncates") {
    auto img = zeros(16, 16);
    fill_block(img, 1, 1, 3, 3, 0.6);    // area 9
    fill_block(img, 10, 10, 2, 2, 0.9);  // area 4
    fill_block(img, 6, 12, 1, 1, 0.7);   // area 1

    auto boxes = extract_bboxes(img, 0.5, 5);
    REQUIRE(boxes.size() == 3);
    CHECK(boxes[0].area() == 9);
    CHECK(boxes[1].area() == 4);
    CHECK(boxes[2].area() == 1);

    boxes = extract_bboxes(img, 0.5, 2);  // keep the two largest
    REQUIRE(boxes.size() == 2);
    CHECK(boxes[0].area() == 9);
    CHECK(boxes[1].area() == 4);

    CHECK(extract_bboxes(img, 0.5, 0).empty());
    CHECK(extract_bboxes(img, 2.0, 5).empty());  // threshold above every value
}

TEST_CASE("extract_bboxes: diagonal pixels merge (8-connectivity)") {
    auto img = zeros(8, 8);
    img.at(2, 2, 0) = 1.0;
    img.at(3, 3, 0) = 1.0;  // touches only diagonally
    img.at(4, 4, 0) = 1.0;
    const auto boxes = extract_bboxes(img, 0.5, 5);
    REQUIRE(boxes.size() == 1);  // one staircase component
    CHECK(boxes[0].x_min == 2);
    CHECK(boxes[0].y_min == 2);
    CHECK(boxes[0].x_max == 5);
    CHECK(boxes[0].y_max == 5);
    CHECK(boxes[0].score == doctest::Approx(3.0));
}

TEST_CASE("extract_bboxes: binarization is strictly greater-than") {
    auto img = zeros(6, 6);
    img.at(1, 1, 0) = 0.5;
    CHECK(extract_bboxes(img, 0.5, 5).empty());     // equal is off
    CHECK(extract_bboxes(img, 0.49, 5).size() == 1);
}

TEST_CASE("extract_bboxes: raising the threshold refines boxes") {
    // Blob-shaped residual map (sum of Gaussian bumps), the structure the
    // extractor is meant for.
    auto img = zeros(32, 32);
    const double cy[3] = {8, 22, 10}, cx[3] = {8, 12, 24}, amp[3] = {1.0, 0.8, 0.6};
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            double v = 0.0;
            for (int i = 0; i < 3; ++i)
                v += amp[i] * std::exp(-((y - cy[i]) * (y - cy[i]) + (x - cx[i]) * (x - cx[i])) /
                                       (2.0 * 9.0));
            img.at(y, x, 0) = v;
        }

    // Every box at a higher threshold sits inside some box from a lower one
    // (components only shrink or split), and on blob maps the total boxed
    // area is non-increasing.
    const double thrs[] = {0.05, 0.15, 0.3, 0.5, 0.7, 2.0};
    auto prev_boxes = extract_bboxes(img, thrs[0], 1 << 20);
    int64_t prev_area = boxed_area(img, thrs[0]);
    CHECK(prev_area > 0);
    for (size_t k = 1; k < std::size(thrs); ++k) {
        const auto cur = extract_bboxes(img, thrs[k], 1 << 20);
        for (const auto& c : cur) {
            bool contained = false;
            for (const auto& p : prev_boxes)
                contained = contained || (p.x_min <= c.x_min && p.y_min <= c.y_min &&
                                          p.x_max >= c.x_max && p.y_max >= c.y_max);
            CHECK(contained);
        }
        const int64_t cur_area = boxed_area(img, thrs[k]);
        CHECK(cur_area <= prev_area);
        prev_boxes = cur;
        prev_area = cur_area;
    }
    CHECK(boxed_area(img, 2.0) == 0);  // above every value
}

TEST_CASE("extract_bboxes input validation") {
    ImageTensor rgb(8, 8, 3);
    CHECK_THROWS_AS(extract_bboxes(rgb, 0.5, 5), std::invalid_argument);
    auto img = zeros(8, 8);
    CHECK_THROWS_AS(extract_bboxes(img, 0.5, -1), std::invalid_argument);
    CHECK_THROWS_AS(extract_bboxes(img, std::nan(""), 5), std::invalid_argument);
}

TEST_CASE("match_detections: greedy order and counts") {
    const std::vector<BBox> gts{{0, 0, 4, 4, 0.0}, {10, 10, 14, 14, 0.0}};
    std::vector<BBox> preds{
        {0, 0, 4, 4, 0.9},      // exact hit on gt 0
        {1, 1, 5, 5, 0.95},     // overlaps gt 0 better score, takes it first
        {10, 10, 14, 14, 0.5},  // exact hit on gt 1
    };
    const auto m = match_detections(preds, gts, 0.3);
    CHECK(m.tp + m.fp == static_cast<int>(preds.size()));
    CHECK(m.tp <= static_cast<int>(gts.size()));
    // 0.95 claims gt 0 first (greedy by score), the exact 0.9 box finds gt 0
    // taken and has no other overlap, so it lands as a false positive.
    CHECK(m.tp == 2);
    CHECK(m.fp == 1);
    REQUIRE(m.pairs.size() == 2);
    CHECK(m.pairs[0].first == 1);   // the 0.95 prediction
    CHECK(m.pairs[0].second == 0);
    CHECK(m.pairs[1].first == 2);
    CHECK(m.pairs[1].second == 1);

    CHECK_THROWS_AS(match_detections(preds, gts, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(match_detections(preds, gts, 1.5), std::invalid_argument);
}

TEST_CASE("match_detections: tp bounded by gts on random boxes") {
    Rng rng(422);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<BBox> preds, gts;
        const int np = 1 + static_cast<int>(rng.randint(6));
        const int ng = 1 + static_cast<int>(rng.randint(4));
        auto rand_box = [&](double score) {
            const int x0 = static_cast<int>(rng.randint(20));
            const int y0 = static_cast<int>(rng.randint(20));
            return BBox{x0, y0, x0 + 2 + static_cast<int>(rng.randint(6)),
                        y0 + 2 + static_cast<int>(rng.randint(6)), score};
        };
        for (int i = 0; i < np; ++i) preds.push_back(rand_box(rng.uniform()));
        for (int i = 0; i < ng; ++i) gts.push_back(rand_box(0.0));
        const auto m = match_detections(preds, gts, 0.5);
        CHECK(m.tp + m.fp == np);
        CHECK(m.tp <= std::min(np, ng));
        CHECK(m.pairs.size() == static_cast<size_t>(m.tp));
    }
}

TEST_CASE("average_precision fixture: one spurious box between two hits") {
    // [DERIVED] two ground-truth boxes, predictions: exact match at score 0.9,
    // spurious at 0.8, exact match at 0.7. Pooled staircase: precision envelope
    // 1 at recall 0.5, 2/3 at recall 1.0, so AP = 0.5*1 + 0.5*(2/3) = 5/6.
    DetectionSet img;
    img.gts = {{0, 0, 4, 4, 0.0}, {10, 10, 14, 14, 0.0}};
    img.preds = {{0, 0, 4, 4, 0.9}, {20, 20, 24, 24, 0.8}, {10, 10, 14, 14, 0.7}};
    CHECK(average_precision({img}, 0.5) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("average_precision: perfect predictions and empty predictions") {
    DetectionSet img;
    img.gts = {{0, 0, 4, 4, 0.0}, {8, 8, 12, 12, 0.0}};
    img.preds = {{0, 0, 4, 4, 0.9}, {8, 8, 12, 12, 0.8}};
    CHECK(average_precision({img}, 0.5) == 1.0);  // [TRIVIAL]

    DetectionSet none;
    none.gts = {{0, 0, 4, 4, 0.0}};
    CHECK(average_precision({none}, 0.5) == 0.0);  // no predictions scores zero

    DetectionSet no_gt;
    no_gt.preds = {{0, 0, 4, 4, 0.9}};
    CHECK_THROWS_AS(average_precision({no_gt}, 0.5), std::invalid_argument);
}

TEST_CASE("average_precision is invariant under monotone score rescaling") {
    Rng rng(423);
    DetectionSet img;
    img.gts = {{0, 0, 6, 6, 0.0}, {10, 2, 16, 8, 0.0}, {2, 12, 8, 18, 0.0}};
    for (int i = 0; i < 8; ++i) {
        const int x0 = static_cast<int>(rng.randint(14));
        const int y0 = static_cast<int>(rng.randint(14));
        img.preds.push_back(
            {x0, y0, x0 + 3 + static_cast<int>(rng.randint(4)),
             y0 + 3 + static_cast<int>(rng.randint(4)), rng.uniform()});
    }
    const double base = average_precision({img}, 0.3);
    auto scaled = img;
    for (auto& p : scaled.preds) p.score = std::exp(3.0 * p.score) + 7.0;
    CHECK(average_precision({scaled}, 0.3) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("map_range: boxes at exactly 0.6 IoU pass three of ten thresholds") {
    // [DERIVED] a 60-pixel prediction inside its 100-pixel ground-truth box has
    // IoU 0.6: it counts at thresholds 0.50/0.55/0.60 and fails the rest, so the
    // threshold-averaged AP is 3/10.
    DetectionSet img;
    img.gts = {{0, 0, 10, 10, 0.0}};
    img.preds = {{0, 0, 6, 10, 0.9}};
    CHECK(map_range({img}) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("acc50 and pooled tp/fp counts") {
    DetectionSet a;  // both gts found, one spurious
    a.gts = {{0, 0, 4, 4, 0.0}, {10, 10, 14, 14, 0.0}};
    a.preds = {{0, 0, 4, 4, 0.9}, {10, 10, 14, 14, 0.8}, {20, 20, 22, 22, 0.7}};
    DetectionSet b;  // gt missed entirely
    b.gts = {{5, 5, 9, 9, 0.0}};
    b.preds = {{20, 20, 24, 24, 0.6}};

    const std::vector<DetectionSet> data{a, b};
    CHECK(acc50(data) == doctest::Approx(2.0 / 3.0));  // [DERIVED] 2 of 3 gts recovered
    const auto [tp, fp] = count_tp_fp(data, 0.3);
    CHECK(tp == 2);
    CHECK(fp == 2);
    CHECK_THROWS_AS(acc50({DetectionSet{}}), std::invalid_argument);
}

TEST_CASE("box records round trip and reject malformed lines") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "uad_loc_test";
    fs::create_directories(dir);
    const fs::path path = dir / "boxes.txt";

    std::vector<std::pair<std::string, BBox>> rows{
        {"img_000", {4, 4, 7, 7, 12.5}},
        {"img_000", {10, 2, 12, 6, 3.25}},
        {"img_001", {0, 0, 3, 3, 0.125}},
    };
    write_box_records(path.string(), rows);
    const auto back = read_box_records(path.string());
    REQUIRE(back.size() == rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].first == rows[i].first);
        CHECK(back[i].second.x_min == rows[i].second.x_min);
        CHECK(back[i].second.y_min == rows[i].second.y_min);
        CHECK(back[i].second.x_max == rows[i].second.x_max);
        CHECK(back[i].second.y_max == rows[i].second.y_max);
        CHECK(back[i].second.score == doctest::Approx(rows[i].second.score).epsilon(1e-12));
    }

    // writing twice produces identical bytes
    write_box_records((dir / "again.txt").string(), rows);
    std::ifstream f1(path), f2(dir / "again.txt");
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);

    CHECK_THROWS_AS(boxes_from_records("img_0 1 2 3\n"), std::runtime_error);        // short line
    CHECK_THROWS_AS(boxes_from_records("img_0 1 2 3 4 0.5 9\n"), std::runtime_error);  // extra field
    CHECK_THROWS_AS(boxes_from_records("img_0 5 5 5 9 0.5\n"), std::runtime_error);  // degenerate
    CHECK_THROWS_AS(boxes_from_records("img_0 a b c d e\n"), std::runtime_error);
    CHECK_THROWS_AS(read_box_records((dir / "missing.txt").string()), std::runtime_error);
    CHECK_THROWS_AS(write_box_records(path.string(), {{"bad id", {0, 0, 1, 1, 0.0}}}),
                    std::invalid_argument);

    fs::remove_all(dir);
}
