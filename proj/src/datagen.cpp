#include "uad/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>

#include "uad/rng.hpp"
#include "uad/simplex.hpp"

namespace uad {

namespace fs = std::filesystem;

std::string to_string(ClassLabel label) {
    return label == ClassLabel::background ? "background" : "target";
}

std::string to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        default: return "test";
    }
}

ClassLabel class_label_from_string(const std::string& s) {
    if (s == "background") return ClassLabel::background;
    if (s == "target") return ClassLabel::target;
    throw std::invalid_argument("unknown class label '" + s + "'");
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw std::invalid_argument("unknown split '" + s + "'");
}

std::vector<const DatasetRecord*> DatasetManifest::split_records(Split s) const {
    std::vector<const DatasetRecord*> out;
    for (const auto& r : records)
        if (r.split == s) out.push_back(&r);
    return out;
}

void DatasetManifest::validate() const {
    std::map<std::string, Split> subject_split;
    for (const auto& r : records) {
        if (r.split == Split::train && r.label == ClassLabel::target)
            throw std::invalid_argument("manifest: train split contains target-class record '" +
                                        r.id + "'");
        const auto it = subject_split.find(r.subject_id);
        if (it == subject_split.end()) subject_split.emplace(r.subject_id, r.split);
        else if (it->second != r.split)
            throw std::invalid_argument("manifest: subject '" + r.subject_id +
                                        "' straddles splits");
    }
}

// --- manifest text index -------------------------------------------------------

namespace {

constexpr const char* kManifestHeader = "# uad-manifest v1";

std::string rel_or_raw(const fs::path& p, const fs::path& base) {
    const auto rel = p.lexically_relative(base);
    if (rel.empty() || rel.native().starts_with("..")) return p.generic_string();
    return rel.generic_string();
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

}  // namespace

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
    manifest.validate();
    const fs::path base = path.parent_path();
    std::string out = std::string(kManifestHeader) + "\n";
    for (const auto& r : manifest.records) {
        out += r.id;
        out += '\t';
        out += to_string(r.split);
        out += '\t';
        out += to_string(r.label);
        out += '\t';
        out += r.subject_id;
        out += '\t';
        out += rel_or_raw(r.image_path, base);
        out += '\t';
        out += r.mask_path ? rel_or_raw(*r.mask_path, base) : std::string("-");
        out += '\t';
        out += r.boxes_path ? rel_or_raw(*r.boxes_path, base) : std::string("-");
        out += '\n';
    }
    atomic_write_bytes(path, out);
}

DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path.string());
    const fs::path base = path.parent_path();
    std::string line;
    if (!std::getline(in, line) || line != kManifestHeader)
        throw std::runtime_error("manifest: missing header line in " + path.string());
    DatasetManifest m;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_tabs(line);
        if (f.size() != 7)
            throw std::runtime_error("manifest: malformed line " + std::to_string(lineno));
        DatasetRecord r;
        r.id = f[0];
        r.split = split_from_string(f[1]);
        r.label = class_label_from_string(f[2]);
        r.subject_id = f[3];
        r.image_path = base / f[4];
        if (f[5] != "-") r.mask_path = base / f[5];
        if (f[6] != "-") {
            r.boxes_path = base / f[6];
            for (auto& [id, box] : read_box_records(r.boxes_path->string())) {
                (void)id;
                r.boxes.push_back(box);
            }
        }
        m.records.push_back(std::move(r));
    }
    m.validate();
    return m;
}

// --- synthetic generator -------------------------------------------------------

void SynthConfig::validate() const {
    if (image_size < 16) throw std::invalid_argument("synth: image_size must be >= 16");
    if (!(ellipse_min_axis > 0.0 && ellipse_min_axis <= ellipse_max_axis &&
          ellipse_max_axis <= 0.95))
        throw std::invalid_argument("synth: degenerate shape parameters (ellipse axes)");
    if (texture_amplitude < 0.0)
        throw std::invalid_argument("synth: texture_amplitude must be >= 0");
    if (blob_count_min < 1 || blob_count_min > blob_count_max)
        throw std::invalid_argument("synth: degenerate shape parameters (blob count)");
    if (!(blob_radius_min > 0.0 && blob_radius_min <= blob_radius_max))
        throw std::invalid_argument("synth: degenerate shape parameters (blob radius)");
    // the largest blob must fit inside the smallest anatomy
    if (blob_radius_max + 2.0 > ellipse_min_axis * image_size / 2.0)
        throw std::invalid_argument(
            "synth: degenerate shape parameters (blobs cannot fit inside the anatomy)");
    if (blob_delta_min < 0.0 || blob_delta_min > blob_delta_max || blob_delta_max > 1.0)
        throw std::invalid_argument("synth: degenerate shape parameters (blob delta)");
    if (anomaly_rate < 0.0 || anomaly_rate > 1.0)
        throw std::invalid_argument("synth: anomaly_rate must be in [0, 1]");
}

namespace {

struct EllipseShape {
    double cy, cx, ay, ax, cos_t, sin_t;

    // quadratic form; <= 1 is inside
    double q(double y, double x) const {
        const double dy = y - cy, dx = x - cx;
        const double u = (dx * cos_t + dy * sin_t) / ax;
        const double v = (-dx * sin_t + dy * cos_t) / ay;
        return u * u + v * v;
    }
};

// Independent connected-component pass (two-scan union-find, 8-connectivity)
// so the ground-truth boxes do not share code with the localization module
// they are checked against.
std::vector<BBox> mask_component_boxes(const BinaryMask& mask) {
    const int h = mask.height, w = mask.width;
    std::vector<int> label(static_cast<size_t>(h) * w, -1);
    std::vector<int> parent;
    auto find = [&](int a) {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        return a;
    };
    auto unite = [&](int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    };

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!mask.at(y, x)) continue;
            const size_t i = static_cast<size_t>(y) * w + x;
            // neighbors already scanned: W, NW, N, NE
            int best = -1;
            const int ny[4] = {y, y - 1, y - 1, y - 1};
            const int nx[4] = {x - 1, x - 1, x, x + 1};
            for (int k = 0; k < 4; ++k) {
                if (ny[k] < 0 || nx[k] < 0 || nx[k] >= w) continue;
                const int nl = label[static_cast<size_t>(ny[k]) * w + nx[k]];
                if (nl >= 0) best = best < 0 ? nl : best;
            }
            if (best < 0) {
                best = static_cast<int>(parent.size());
                parent.push_back(best);
            }
            label[i] = best;
            for (int k = 0; k < 4; ++k) {
                if (ny[k] < 0 || nx[k] < 0 || nx[k] >= w) continue;
                const int nl = label[static_cast<size_t>(ny[k]) * w + nx[k]];
                if (nl >= 0) unite(nl, best);
            }
        }

    std::map<int, BBox> by_root;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int l = label[static_cast<size_t>(y) * w + x];
            if (l < 0) continue;
            const int root = find(l);
            auto it = by_root.find(root);
            if (it == by_root.end()) {
                by_root.emplace(root, BBox{x, y, x + 1, y + 1, 0.0});
            } else {
                it->second.x_min = std::min(it->second.x_min, x);
                it->second.y_min = std::min(it->second.y_min, y);
                it->second.x_max = std::max(it->second.x_max, x + 1);
                it->second.y_max = std::max(it->second.y_max, y + 1);
            }
        }
    std::vector<BBox> boxes;
    for (auto& [root, box] : by_root) boxes.push_back(box);
    std::sort(boxes.begin(), boxes.end(), [](const BBox& a, const BBox& b) {
        if (a.y_min != b.y_min) return a.y_min < b.y_min;
        return a.x_min < b.x_min;
    });
    return boxes;
}

std::string zero_pad(int v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

}  // namespace

SynthImage generate_synthetic_image(const SynthConfig& cfg, int index, bool force_anomalous) {
    cfg.validate();
    if (index < 0) throw std::invalid_argument("synth: negative image index");
    const int n = cfg.image_size;
    Rng rng(Rng::mix(cfg.seed, static_cast<uint64_t>(index)));

    // anatomy: rotated textured ellipse near the center
    EllipseShape e;
    e.cy = n / 2.0 + rng.uniform(-0.05, 0.05) * n;
    e.cx = n / 2.0 + rng.uniform(-0.05, 0.05) * n;
    e.ay = rng.uniform(cfg.ellipse_min_axis, cfg.ellipse_max_axis) * n / 2.0;
    e.ax = rng.uniform(cfg.ellipse_min_axis, cfg.ellipse_max_axis) * n / 2.0;
    const double theta = rng.uniform(0.0, 3.14159265358979323846);
    e.cos_t = std::cos(theta);
    e.sin_t = std::sin(theta);
    const double base = rng.uniform(0.45, 0.7);

    SimplexNoiseConfig tex;
    tex.octaves = 3;
    tex.base_frequency = 1.0 / 16.0;
    tex.persistence = 0.6;
    tex.seed = Rng::mix(cfg.seed, Rng::mix(0x7e87u, static_cast<uint64_t>(index)));
    const ImageTensor field = simplex_noise(n, n, tex);

    SynthImage out;
    out.image = ImageTensor(n, n, 1, ValueRange::unit());
    out.mask = BinaryMask(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            if (e.q(y + 0.5, x + 0.5) > 1.0) continue;  // pixel centers
            const double v = base + cfg.texture_amplitude * field.at(y, x, 0);
            out.image.at(y, x, 0) = std::clamp(v, 0.05, 1.0);
        }

    out.is_anomalous = force_anomalous;
    if (force_anomalous) {
        const int count =
            cfg.blob_count_min +
            static_cast<int>(rng.randint(cfg.blob_count_max - cfg.blob_count_min + 1));
        for (int b = 0; b < count; ++b) {
            const double r = rng.uniform(cfg.blob_radius_min, cfg.blob_radius_max);
            // place the whole disk inside the anatomy (compass-point check)
            double by = 0, bx = 0;
            bool placed = false;
            for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
                by = rng.uniform(r + 1.0, n - r - 1.0);
                bx = rng.uniform(r + 1.0, n - r - 1.0);
                placed = true;
                for (int k = 0; k < 8; ++k) {
                    const double ang = k * 3.14159265358979323846 / 4.0;
                    placed = placed && e.q(by + (r + 1.0) * std::sin(ang),
                                           bx + (r + 1.0) * std::cos(ang)) <= 0.95;
                }
            }
            if (!placed)
                throw std::runtime_error("synth: could not place a blob inside the anatomy");
            const double delta = rng.uniform(cfg.blob_delta_min, cfg.blob_delta_max) *
                                 (rng.uniform() < 0.5 ? 1.0 : -1.0);
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) {
                    const double dy = y + 0.5 - by, dx = x + 0.5 - bx;
                    if (dy * dy + dx * dx > r * r) continue;
                    out.image.at(y, x, 0) =
                        std::clamp(out.image.at(y, x, 0) + delta, 0.02, 1.0);
                    out.mask.at(y, x) = 1;
                }
        }
        out.boxes = mask_component_boxes(out.mask);
    }
    return out;
}

DatasetManifest generate_synthetic(const fs::path& root, Split split, int n,
                                   const SynthConfig& cfg) {
    cfg.validate();
    if (n < 1) throw std::invalid_argument("synth: n must be >= 1");
    if (split == Split::train && cfg.anomaly_rate != 0.0)
        throw std::invalid_argument("synth: train split must be generated with anomaly_rate 0");

    const fs::path dir = root / to_string(split);
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    fs::create_directories(dir / "boxes");

    // exact anomaly count, membership by seeded shuffle
    const int n_anom = static_cast<int>(std::llround(n * cfg.anomaly_rate));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng member_rng(Rng::mix(cfg.seed, 0xA110C));
    member_rng.shuffle(order);
    std::vector<uint8_t> anomalous(n, 0);
    for (int i = 0; i < n_anom; ++i) anomalous[order[i]] = 1;

    DatasetManifest m;
    for (int i = 0; i < n; ++i) {
        const SynthImage img = generate_synthetic_image(cfg, i, anomalous[i] != 0);
        DatasetRecord r;
        r.id = to_string(split) + "_" + zero_pad(i, 5);
        r.subject_id = r.id;
        r.split = split;
        r.label = img.is_anomalous ? ClassLabel::target : ClassLabel::background;
        r.image_path = dir / "images" / (r.id + ".pgm");
        r.mask_path = dir / "masks" / (r.id + ".pgm");
        r.boxes_path = dir / "boxes" / (r.id + ".txt");
        r.boxes = img.boxes;
        write_pgm16(r.image_path, img.image);
        write_mask_pgm(*r.mask_path, img.mask);
        std::vector<std::pair<std::string, BBox>> rows;
        for (const auto& b : img.boxes) rows.emplace_back(r.id, b);
        write_box_records(r.boxes_path->string(), rows);
        m.records.push_back(std::move(r));
    }
    m.validate();
    return m;
}

// --- directory loader ------------------------------------------------------------

namespace {

// shell-style pattern with * and ? only
bool glob_match(const std::string& pattern, const std::string& name) {
    std::string re;
    for (char c : pattern) {
        if (c == '*') re += ".*";
        else if (c == '?') re += '.';
        else if (std::string("\\^$.|+()[]{}").find(c) != std::string::npos) {
            re += '\\';
            re += c;
        } else re += c;
    }
    return std::regex_match(name, std::regex(re));
}

}  // namespace

DatasetManifest load_directory(const fs::path& root, const std::string& pattern, Split split) {
    const fs::path images = root / "images";
    if (!fs::is_directory(images))
        throw std::runtime_error("load_directory: missing images directory: " +
                                 images.string());

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(images)) {
        if (!entry.is_regular_file()) continue;
        if (glob_match(pattern, entry.path().filename().string()))
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    DatasetManifest m;
    for (const auto& f : files) {
        DatasetRecord r;
        r.id = f.stem().string();
        r.subject_id = r.id;
        r.split = split;
        r.image_path = f;

        const fs::path mask = root / "masks" / f.filename();
        bool target = false;
        if (fs::exists(mask)) {
            ImageTensor img;
            BinaryMask mk;
            try {
                img = read_pgm(f);
                mk = read_mask_pgm(mask);
            } catch (const std::exception& e) {
                throw std::runtime_error("load_directory: unreadable pair for '" + r.id +
                                         "': " + e.what());
            }
            if (mk.height != img.height || mk.width != img.width)
                throw std::runtime_error("load_directory: mask shape mismatch for " +
                                         mask.string());
            r.mask_path = mask;
            target = target || mk.count() > 0;
        }

        const fs::path boxes = root / "boxes" / (r.id + ".txt");
        if (fs::exists(boxes)) {
            r.boxes_path = boxes;
            for (auto& [id, box] : read_box_records(boxes.string())) {
                (void)id;
                r.boxes.push_back(box);
            }
            target = target || !r.boxes.empty();
        }
        r.label = target ? ClassLabel::target : ClassLabel::background;
        m.records.push_back(std::move(r));
    }
    return m;
}

// --- preprocessing ------------------------------------------------------------

ImageTensor preprocess(const ImageTensor& raw, int target_size) {
    if (target_size < 1) throw std::invalid_argument("preprocess: target size must be >= 1");
    if (!raw.all_finite()) throw std::invalid_argument("preprocess: non-finite input values");
    ImageTensor img = (raw.height == target_size && raw.width == target_size)
                          ? raw
                          : bilinear_resize(raw, target_size, target_size);

    std::vector<double> sorted(img.values);
    std::sort(sorted.begin(), sorted.end());
    const auto percentile = [&](double q) {
        const double pos = q * static_cast<double>(sorted.size() - 1);
        const size_t lo = static_cast<size_t>(pos);
        const size_t hi = std::min(lo + 1, sorted.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
    };
    const double p1 = percentile(0.01), p99 = percentile(0.99);
    if (p99 <= p1) {  // constant (or near-constant) image: nothing to normalize
        img.range = ValueRange::unit();
        return img;
    }
    for (auto& v : img.values) v = std::clamp((v - p1) / (p99 - p1), 0.0, 1.0);
    img.range = ValueRange::unit();
    return img;
}

BinaryMask foreground_mask(const ImageTensor& img) {
    BinaryMask m(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            bool on = false;
            for (int c = 0; c < img.channels; ++c) on = on || img.at(y, x, c) > 0.0;
            m.at(y, x) = on;
        }
    return m;
}

BinaryMask resize_mask_nearest(const BinaryMask& mask, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1)
        throw std::invalid_argument("resize_mask_nearest: bad output size");
    BinaryMask out(out_h, out_w);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            const int sy = std::min(
                mask.height - 1,
                static_cast<int>((y + 0.5) * mask.height / static_cast<double>(out_h)));
            const int sx = std::min(
                mask.width - 1,
                static_cast<int>((x + 0.5) * mask.width / static_cast<double>(out_w)));
            out.at(y, x) = mask.at(sy, sx);
        }
    return out;
}

}  // namespace uad
