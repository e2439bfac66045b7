#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "uad/config.hpp"
#include "uad/metrics.hpp"

namespace uad {

// Workflow stages behind the CLI subcommands. Each stage validates its
// inputs, writes its artifacts into `out_dir` (atomically, temp file +
// rename) along with resolved_config.json — the exact configuration it ran
// under — and a machine-readable summary. All throw on error; the CLI turns
// that into a nonzero exit. Re-running any stage with the same config and
// seed reproduces every metric table byte for byte.
//
// Stages communicate through the filesystem: cmd_synth emits a dataset
// directory (manifest.tsv + per-split image trees), the training stages emit
// checkpoints, cmd_reconstruct emits per-image reconstructions, residual
// maps, and a scores table, and the analysis stages join those artifacts
// against the manifest by image id.

struct SynthStageResult {
    int train = 0;
    int val = 0;
    int test = 0;
    int test_anomalous = 0;
};
SynthStageResult cmd_synth(const RunConfig& cfg, const std::filesystem::path& out_dir);

struct EncoderStageResult {
    std::filesystem::path checkpoint;
    std::vector<double> epoch_losses;
    int64_t steps = 0;
};
EncoderStageResult cmd_train_encoder(const RunConfig& cfg,
                                     const std::filesystem::path& data_dir,
                                     const std::filesystem::path& out_dir);

struct DiffusionStageResult {
    std::filesystem::path checkpoint;
    std::vector<double> epoch_losses;
    std::vector<double> val_losses;
    int64_t steps = 0;
};
DiffusionStageResult cmd_train_diffusion(const RunConfig& cfg,
                                         const std::filesystem::path& data_dir,
                                         const std::filesystem::path& encoder_ckpt,
                                         const std::filesystem::path& out_dir);

struct ReconstructStageResult {
    int images = 0;
    std::filesystem::path scores_path;
};
ReconstructStageResult cmd_reconstruct(const RunConfig& cfg,
                                       const std::filesystem::path& data_dir,
                                       const std::filesystem::path& checkpoint,
                                       Split split, const std::filesystem::path& out_dir);

struct EvaluateStageResult {
    MetricsReport report;
    double threshold = 0.0;
    int tp = 0, fp = 0, tn = 0, fn = 0;
    double pixel_prevalence = 0.0;
};
// `val_recon_dir` supplies healthy-validation scores for the percentile
// threshold mode; fixed mode ignores it.
EvaluateStageResult cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& data_dir,
                                 const std::filesystem::path& recon_dir,
                                 const std::optional<std::filesystem::path>& val_recon_dir,
                                 const std::filesystem::path& out_dir);

struct LocalizeStageResult {
    double threshold = 0.0;
    double ap30 = 0.0;
    double ap50 = 0.0;
    double map_50_95 = 0.0;
    double acc50 = 0.0;
    int tp30 = 0, fp30 = 0;
    int images = 0;
    int gt_boxes = 0;
};
// The binarization threshold is localize.map_threshold when set; otherwise
// it is the configured percentile of the pooled healthy-validation residual
// pixels, which requires `val_recon_dir`.
LocalizeStageResult cmd_localize(const RunConfig& cfg, const std::filesystem::path& data_dir,
                                 const std::filesystem::path& recon_dir,
                                 const std::optional<std::filesystem::path>& val_recon_dir,
                                 const std::filesystem::path& out_dir);

struct ReportStageResult {
    std::vector<std::string> files;  // artifact names relative to out_dir
};
// Figure artifacts: a reconstruction grid, per-image box overlays (predicted
// boxes when a localization stage output is supplied, ground truth always),
// ROC/PR curves, and the score histogram.
ReportStageResult cmd_report(const RunConfig& cfg, const std::filesystem::path& data_dir,
                             const std::filesystem::path& recon_dir,
                             const std::optional<std::filesystem::path>& localize_dir,
                             const std::filesystem::path& out_dir);

// FNV-1a: stable across platforms (std::hash is not), used to derive
// per-image inference seeds from record ids.
uint64_t fnv1a64(std::string_view s);

}  // namespace uad
