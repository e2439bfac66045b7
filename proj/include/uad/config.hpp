#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "uad/augment.hpp"
#include "uad/datagen.hpp"
#include "uad/denoiser.hpp"
#include "uad/encoder.hpp"
#include "uad/pipeline.hpp"

namespace uad {

// Dataset generation block: split sizes plus the generator parameters. The
// anomaly rate applies to the test split only; train and val are healthy.
struct SynthRunConfig {
    int train_count = 400;
    int val_count = 100;
    int test_count = 100;
    SynthConfig generator;

    void validate() const;
};

// Image-level classification settings.
struct EvalConfig {
    std::string threshold_mode = "percentile";  // "percentile" | "fixed"
    double threshold = 0.0;                     // fixed mode
    double percentile = 0.95;                   // percentile mode, over val scores

    void validate() const;
};

// Bounding-box extraction settings. The binarization threshold is either set
// explicitly or derived as a quantile of pooled healthy-validation residuals.
struct LocalizeConfig {
    int top_n = 5;
    double pixel_percentile = 0.995;
    std::optional<double> map_threshold;

    void validate() const;
};

// Full resolved configuration: one block per module plus the global seed.
// Module-level seeds (generator, augmentation, training) are derived from the
// global seed and are not part of the file format.
struct RunConfig {
    uint64_t seed = 0;
    int workers = 1;
    std::string device = "cpu";
    SynthRunConfig synth;
    EncoderConfig encoder;
    AugmentationPolicy augment;
    DenoiserConfig denoiser;
    TrainRunConfig run;
    PostprocessConfig postprocess;
    EvalConfig evaluate;
    LocalizeConfig localize;

    void validate() const;  // every block, with field-path prefixes

    // Deterministic per-purpose seeds derived from the global one.
    uint64_t synth_seed() const;
    uint64_t augment_seed() const;
    uint64_t encoder_train_seed() const;
    uint64_t diffusion_train_seed() const;
    uint64_t inference_seed() const;
};

// Strict JSON (de)serialization: unknown fields are rejected with their path;
// absent fields keep defaults. to_json emits every field, so the echoed file
// documents the exact resolved configuration.
RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& cfg);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace uad
