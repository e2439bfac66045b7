#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "uad/image.hpp"
#include "uad/localization.hpp"

namespace uad {

enum class ClassLabel { background, target };
enum class Split { train, val, test };

std::string to_string(ClassLabel label);
std::string to_string(Split split);
ClassLabel class_label_from_string(const std::string& s);
Split split_from_string(const std::string& s);

struct DatasetRecord {
    std::string id;
    std::filesystem::path image_path;
    std::optional<std::filesystem::path> mask_path;
    std::optional<std::filesystem::path> boxes_path;
    std::vector<BBox> boxes;  // loaded from boxes_path when present
    ClassLabel label = ClassLabel::background;
    std::string subject_id;
    Split split = Split::test;
};

struct DatasetManifest {
    std::vector<DatasetRecord> records;

    std::vector<const DatasetRecord*> split_records(Split s) const;
    // Enforces: train records are background-only; a subject id never
    // straddles splits.
    void validate() const;
};

// Structured text index ("# uad-manifest v1", one tab-separated row per
// record); paths are stored relative to the manifest file.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

// --- synthetic surrogate -----------------------------------------------------

struct SynthConfig {
    int image_size = 64;
    // background anatomy: a rotated ellipse carrying multi-octave texture
    double ellipse_min_axis = 0.55;  // fraction of the half-size
    double ellipse_max_axis = 0.85;
    double texture_amplitude = 0.2;
    // anomalies: hard disks of shifted intensity
    int blob_count_min = 1;
    int blob_count_max = 3;
    double blob_radius_min = 3.0;
    double blob_radius_max = 8.0;
    double blob_delta_min = 0.25;
    double blob_delta_max = 0.5;
    double anomaly_rate = 0.5;
    uint64_t seed = 0;

    void validate() const;
};

// One generated image with its exact ground truth. Boxes are the tight boxes
// of the mask's 8-connected components in reading order.
struct SynthImage {
    ImageTensor image;  // unit range
    BinaryMask mask;
    std::vector<BBox> boxes;
    bool is_anomalous = false;
};

// Deterministic per (cfg.seed, index, force_anomalous) — the dataset writer
// decides membership, the content stream is index-keyed.
SynthImage generate_synthetic_image(const SynthConfig& cfg, int index, bool force_anomalous);

// Writes <root>/<split>/{images,masks,boxes}/ plus ground truth and returns
// the manifest (not yet written to disk). Exactly round(n * anomaly_rate)
// images are anomalous, chosen by a seeded shuffle.
DatasetManifest generate_synthetic(const std::filesystem::path& root, Split split, int n,
                                   const SynthConfig& cfg);

// Scans <root>/images/ for files matching pattern (shell-style * and ?),
// lexicographically sorted, attaching sibling masks/ and boxes/ entries with
// matching basenames. Labels: target iff the mask or box list is nonempty.
DatasetManifest load_directory(const std::filesystem::path& root, const std::string& pattern,
                               Split split);

// --- preprocessing -----------------------------------------------------------

// Bilinear resize to target x target, clip to the [p1, p99] percentiles,
// rescale to [0,1]. Constant images pass through unchanged (no spread to
// normalize by).
ImageTensor preprocess(const ImageTensor& raw, int target_size);

// Pixels strictly above zero after normalization.
BinaryMask foreground_mask(const ImageTensor& img);

// Nearest-neighbor mask resize (for pairing masks with resized images).
BinaryMask resize_mask_nearest(const BinaryMask& mask, int out_h, int out_w);

}  // namespace uad
