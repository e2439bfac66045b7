#include "uad/datagen.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "uad/rng.hpp"

using namespace uad;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const char* name) {
        path = fs::temp_directory_path() / name;
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

SynthConfig small_cfg(uint64_t seed) {
    SynthConfig cfg;
    cfg.image_size = 48;
    cfg.blob_radius_max = 6.0;  // keep blobs well inside the smaller anatomy
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("synthetic image: deterministic per (seed, index)") {
    const auto cfg = small_cfg(7);
    const auto a = generate_synthetic_image(cfg, 3, true);
    const auto b = generate_synthetic_image(cfg, 3, true);
    CHECK(a.image.values == b.image.values);  // [TRIVIAL] bitwise repeat
    CHECK(a.mask.values == b.mask.values);
    REQUIRE(a.boxes.size() == b.boxes.size());
    for (size_t i = 0; i < a.boxes.size(); ++i) {
        CHECK(a.boxes[i].x_min == b.boxes[i].x_min);
        CHECK(a.boxes[i].y_max == b.boxes[i].y_max);
    }
    const auto c = generate_synthetic_image(cfg, 4, true);
    CHECK(a.image.values != c.image.values);  // index keys the content stream
}

TEST_CASE("synthetic image: healthy images carry empty ground truth") {
    const auto cfg = small_cfg(8);
    const auto img = generate_synthetic_image(cfg, 0, false);
    CHECK_FALSE(img.is_anomalous);
    CHECK(img.mask.count() == 0);
    CHECK(img.boxes.empty());
    CHECK(img.image.all_finite());
    // anatomy occupies a plausible ellipse-sized share of the frame
    const auto fg = foreground_mask(img.image);
    const double frac = static_cast<double>(fg.count()) / (48.0 * 48.0);
    CHECK(frac > 0.2);
    CHECK(frac < 0.75);
    // values stay in the declared unit range
    for (double v : img.image.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("synthetic image: single r=3 blob rasterizes to ~pi r^2 pixels") {
    auto cfg = small_cfg(9);
    cfg.blob_count_min = cfg.blob_count_max = 1;
    cfg.blob_radius_min = cfg.blob_radius_max = 3.0;
    const double target = 3.14159265358979323846 * 9.0;
    for (int idx = 0; idx < 20; ++idx) {
        const auto img = generate_synthetic_image(cfg, idx, true);
        // [DERIVED] disk rasterization count within +-15% of pi r^2
        CHECK(static_cast<double>(img.mask.count()) > target * 0.85);
        CHECK(static_cast<double>(img.mask.count()) < target * 1.15);
        REQUIRE(img.boxes.size() == 1);
        // a radius-3 disk spans 6-7 pixels across
        CHECK(img.boxes[0].x_max - img.boxes[0].x_min >= 5);
        CHECK(img.boxes[0].x_max - img.boxes[0].x_min <= 7);
    }
}

TEST_CASE("synthetic ground-truth boxes equal extract_bboxes run on the mask") {
    SynthConfig cfg;  // default 64px, up to 3 blobs that may merge
    cfg.seed = 10;
    for (int idx = 0; idx < 12; ++idx) {
        const auto img = generate_synthetic_image(cfg, idx, true);
        // [DERIVED] dual route: datagen labels components with its own
        // union-find; the localization extractor must produce the same boxes.
        ImageTensor residual(img.mask.height, img.mask.width, 1, ValueRange::unbounded());
        for (int y = 0; y < img.mask.height; ++y)
            for (int x = 0; x < img.mask.width; ++x)
                residual.at(y, x, 0) = img.mask.at(y, x) ? 1.0 : 0.0;
        auto extracted = extract_bboxes(residual, 0.5, 1 << 20);
        auto expected = img.boxes;
        auto key = [](const BBox& b) {
            return std::array<int, 4>{b.y_min, b.x_min, b.y_max, b.x_max};
        };
        std::sort(extracted.begin(), extracted.end(),
                  [&](const BBox& a, const BBox& b) { return key(a) < key(b); });
        std::sort(expected.begin(), expected.end(),
                  [&](const BBox& a, const BBox& b) { return key(a) < key(b); });
        REQUIRE(extracted.size() == expected.size());
        for (size_t i = 0; i < expected.size(); ++i) CHECK(key(extracted[i]) == key(expected[i]));
    }
}

TEST_CASE("generate_synthetic: exact anomaly count, files on disk, byte-identical reruns") {
    TempDir tmpa("uad_datagen_a"), tmpb("uad_datagen_b");
    auto cfg = small_cfg(11);
    cfg.anomaly_rate = 0.5;

    const auto ma = generate_synthetic(tmpa.path, Split::test, 10, cfg);
    REQUIRE(ma.records.size() == 10);
    int n_target = 0;
    for (const auto& r : ma.records) {
        n_target += (r.label == ClassLabel::target);
        CHECK(fs::exists(r.image_path));
        REQUIRE(r.mask_path.has_value());
        CHECK(fs::exists(*r.mask_path));
        REQUIRE(r.boxes_path.has_value());
        CHECK(fs::exists(*r.boxes_path));
        const auto mask = read_mask_pgm(*r.mask_path);
        if (r.label == ClassLabel::background) {
            CHECK(mask.count() == 0);  // [TRIVIAL] healthy: empty mask
            CHECK(r.boxes.empty());
        } else {
            CHECK(mask.count() > 0);
            CHECK_FALSE(r.boxes.empty());
        }
    }
    CHECK(n_target == 5);  // exact 50/50 allocation

    const auto mb = generate_synthetic(tmpb.path, Split::test, 10, cfg);
    for (size_t i = 0; i < ma.records.size(); ++i) {
        // [TRIVIAL] fixed seed: byte-identical dataset across runs
        CHECK(slurp(ma.records[i].image_path) == slurp(mb.records[i].image_path));
        CHECK(slurp(*ma.records[i].mask_path) == slurp(*mb.records[i].mask_path));
        CHECK(slurp(*ma.records[i].boxes_path) == slurp(*mb.records[i].boxes_path));
    }
}

TEST_CASE("generate_synthetic: anomaly_rate 0 gives all-empty masks; train split guarded") {
    TempDir tmp("uad_datagen_h");
    auto cfg = small_cfg(12);
    cfg.anomaly_rate = 0.0;
    const auto m = generate_synthetic(tmp.path, Split::train, 6, cfg);
    for (const auto& r : m.records) {
        CHECK(r.label == ClassLabel::background);
        CHECK(read_mask_pgm(*r.mask_path).count() == 0);  // [TRIVIAL]
    }
    auto bad = cfg;
    bad.anomaly_rate = 0.5;
    CHECK_THROWS_AS(generate_synthetic(tmp.path, Split::train, 6, bad), std::invalid_argument);
}

TEST_CASE("synth config validation rejects degenerate shapes") {
    SynthConfig cfg;
    cfg.image_size = 8;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SynthConfig{};
    cfg.ellipse_min_axis = 0.9;
    cfg.ellipse_max_axis = 0.6;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SynthConfig{};
    cfg.blob_radius_min = 10.0;
    cfg.blob_radius_max = 3.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SynthConfig{};
    cfg.image_size = 32;  // default max radius 8 cannot fit inside 0.55 * 16
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SynthConfig{};
    cfg.blob_count_min = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SynthConfig{};
    cfg.anomaly_rate = 1.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SynthConfig{};
    cfg.blob_delta_min = 0.6;
    cfg.blob_delta_max = 0.4;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("load_directory: empty, partial masks, and shape mismatch") {
    TempDir tmp("uad_datagen_load");
    fs::create_directories(tmp.path / "images");
    CHECK(load_directory(tmp.path, "*.pgm", Split::test).records.empty());  // [TRIVIAL]
    CHECK_THROWS_AS(load_directory(tmp.path / "nowhere", "*.pgm", Split::test),
                    std::runtime_error);

    // three images, one with a mask, one with boxes
    ImageTensor img(16, 16, 1, ValueRange::unit());
    for (int i = 0; i < 3; ++i) {
        for (auto& v : img.values) v = 0.25 + 0.1 * i;
        write_pgm16(tmp.path / "images" / ("img_" + std::to_string(i) + ".pgm"), img);
    }
    fs::create_directories(tmp.path / "masks");
    BinaryMask mask(16, 16);
    mask.at(4, 4) = 1;
    write_mask_pgm(tmp.path / "masks" / "img_1.pgm", mask);
    fs::create_directories(tmp.path / "boxes");
    write_box_records((tmp.path / "boxes" / "img_2.txt").string(),
                      {{"img_2", {1, 1, 4, 4, 2.0}}});

    const auto m = load_directory(tmp.path, "*.pgm", Split::test);
    REQUIRE(m.records.size() == 3);
    CHECK(m.records[0].id == "img_0");  // lexicographic order
    CHECK(m.records[1].id == "img_1");
    CHECK(m.records[2].id == "img_2");
    CHECK(m.records[0].label == ClassLabel::background);
    CHECK_FALSE(m.records[0].mask_path.has_value());
    CHECK(m.records[1].label == ClassLabel::target);  // nonempty mask
    CHECK(m.records[1].mask_path.has_value());
    CHECK(m.records[2].label == ClassLabel::target);  // nonempty box list
    REQUIRE(m.records[2].boxes.size() == 1);
    CHECK(m.records[2].boxes[0].x_max == 4);

    // pattern filtering
    CHECK(load_directory(tmp.path, "img_1*", Split::test).records.size() == 1);

    // mismatched mask shape is rejected with the path in the message
    BinaryMask wrong(8, 8);
    write_mask_pgm(tmp.path / "masks" / "img_0.pgm", wrong);
    CHECK_THROWS_WITH_AS(load_directory(tmp.path, "*.pgm", Split::test),
                         doctest::Contains("mask shape mismatch"), std::runtime_error);
}

TEST_CASE("manifest round trips through its text index") {
    TempDir tmp("uad_datagen_manifest");
    auto cfg = small_cfg(13);
    cfg.anomaly_rate = 0.4;
    auto m = generate_synthetic(tmp.path, Split::test, 5, cfg);
    auto healthy = generate_synthetic(tmp.path, Split::train, 4, [&] {
        auto c = small_cfg(14);
        c.anomaly_rate = 0.0;
        return c;
    }());
    for (auto& r : healthy.records) m.records.push_back(r);

    const fs::path mpath = tmp.path / "manifest.txt";
    write_manifest(mpath, m);
    const auto back = read_manifest(mpath);
    REQUIRE(back.records.size() == m.records.size());
    for (size_t i = 0; i < m.records.size(); ++i) {
        CHECK(back.records[i].id == m.records[i].id);
        CHECK(back.records[i].split == m.records[i].split);
        CHECK(back.records[i].label == m.records[i].label);
        CHECK(fs::equivalent(back.records[i].image_path, m.records[i].image_path));
        CHECK(back.records[i].boxes.size() == m.records[i].boxes.size());
    }

    // byte-identical rewrite
    write_manifest(tmp.path / "manifest2.txt", m);
    CHECK(slurp(mpath) == slurp(tmp.path / "manifest2.txt"));

    CHECK_THROWS_AS(read_manifest(tmp.path / "absent.txt"), std::runtime_error);
    std::ofstream(tmp.path / "bad.txt") << "not a manifest\n";
    CHECK_THROWS_AS(read_manifest(tmp.path / "bad.txt"), std::runtime_error);
}

TEST_CASE("manifest validation: leakage and subject straddling") {
    DatasetManifest m;
    DatasetRecord r;
    r.id = "a";
    r.subject_id = "s1";
    r.split = Split::train;
    r.label = ClassLabel::target;
    m.records.push_back(r);
    CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("target-class"),
                         std::invalid_argument);

    m.records.clear();
    r.label = ClassLabel::background;
    m.records.push_back(r);
    DatasetRecord r2 = r;
    r2.id = "b";
    r2.split = Split::test;  // same subject, different split
    m.records.push_back(r2);
    CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("straddles"), std::invalid_argument);
}

TEST_CASE("preprocess: constant image passes through; shape follows the target") {
    ImageTensor flat(20, 30, 1, ValueRange::unit());
    for (auto& v : flat.values) v = 0.5;
    const auto out = preprocess(flat, 16);
    CHECK(out.height == 16);
    CHECK(out.width == 16);
    for (double v : out.values) CHECK(v == 0.5);  // [TRIVIAL] nothing to normalize

    ImageTensor same(16, 16, 1, ValueRange::unit());
    for (auto& v : same.values) v = 0.25;
    const auto kept = preprocess(same, 16);
    CHECK(kept.values == same.values);
}

TEST_CASE("preprocess: extreme outliers clip to 1.0 and output spans [0,1]") {
    Rng rng(430);
    ImageTensor img(50, 50, 1, ValueRange::unbounded());
    for (auto& v : img.values) v = rng.uniform(0.0, 0.5);
    // 1% wild outliers
    for (int i = 0; i < 25; ++i)
        img.values[static_cast<size_t>(rng.randint(static_cast<int64_t>(img.values.size())))] =
            1000.0;
    const auto out = preprocess(img, 50);
    double mx = 0.0, mn = 1.0;
    for (double v : out.values) {
        mx = std::max(mx, v);
        mn = std::min(mn, v);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(mx == 1.0);  // [DERIVED] everything above p99 saturates
    CHECK(mn == 0.0);  // and below p1
    for (size_t i = 0; i < img.values.size(); ++i)
        if (img.values[i] == 1000.0) CHECK(out.values[i] == 1.0);

    ImageTensor nan_img(16, 16, 1, ValueRange::unbounded());
    nan_img.values[3] = std::nan("");
    CHECK_THROWS_AS(preprocess(nan_img, 16), std::invalid_argument);
    CHECK_THROWS_AS(preprocess(img, 0), std::invalid_argument);
}

TEST_CASE("foreground mask and nearest mask resize") {
    ImageTensor img(4, 4, 1, ValueRange::unit());
    img.at(1, 2, 0) = 0.3;
    img.at(3, 0, 0) = 1.0;
    const auto fg = foreground_mask(img);
    CHECK(fg.count() == 2);
    CHECK(fg.at(1, 2));
    CHECK(fg.at(3, 0));

    BinaryMask m(2, 2);
    m.at(0, 1) = 1;
    const auto up = resize_mask_nearest(m, 4, 4);
    CHECK(up.count() == 4);  // the on-quadrant doubles in each direction
    CHECK(up.at(0, 2));
    CHECK(up.at(1, 3));
    CHECK_FALSE(up.at(0, 0));
    const auto same = resize_mask_nearest(m, 2, 2);
    CHECK(same.values == m.values);
    CHECK_THROWS_AS(resize_mask_nearest(m, 0, 4), std::invalid_argument);
}
