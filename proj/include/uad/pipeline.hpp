#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "uad/augment.hpp"
#include "uad/checkpoint.hpp"
#include "uad/datagen.hpp"
#include "uad/denoiser.hpp"
#include "uad/encoder.hpp"
#include "uad/image.hpp"
#include "uad/schedule.hpp"
#include "uad/tensor.hpp"

namespace uad {

// |x0 - x_hat| plus the scalar summary used for image-level classification.
// `score` is the arithmetic mean of the residuals over `foreground` when a
// restriction is active, otherwise over the whole map.
struct AnomalyMap {
    ImageTensor residuals;  // non-negative, single-channel
    double score = 0.0;
    std::optional<BinaryMask> foreground;
};

// Residual post-processing. These are the evaluation defaults; unit tests of
// the raw residual pass an all-off config instead.
struct PostprocessConfig {
    bool median_filter = true;
    int median_k = 5;
    bool restrict_foreground = true;
};

// Optimization/run settings shared by the training entry points. The noise
// schedule always spans `schedule.steps` timesteps; training draws t from
// [t_train_min, t_train_max] and inference corrupts at the fixed t_infer.
struct TrainRunConfig {
    double learning_rate = 1e-4;
    int batch_size = 32;
    int max_epochs = 30;
    int t_train_min = 1;
    int t_train_max = 1000;
    int t_infer = 500;
    uint64_t seed = 0;
    ScheduleSpec schedule;

    void validate() const;
};

// One decoded dataset entry, ready for batching.
struct LabeledImage {
    std::string id;
    ImageTensor image;
    ClassLabel label = ClassLabel::background;
};

// Reads every record of `split`, decodes the image, and preprocesses it to
// `target_size` (percentile normalization + resize). Order follows the
// manifest.
std::vector<LabeledImage> load_split(const DatasetManifest& manifest, Split split,
                                     int target_size);

// Stacks same-shaped images into an [N, C, H, W] float batch and back.
Tensor<float> batch_to_tensor(const std::vector<const ImageTensor*>& images);
ImageTensor tensor_to_image(const Tensor<float>& batch, int n, ValueRange range);

struct EncoderTrainResult {
    std::vector<double> epoch_losses;  // mean contrastive loss per epoch
    int64_t steps = 0;                 // optimizer steps taken
};

// Contrastive pretraining on a healthy-only dataset. Each minibatch sample
// contributes two views (a benign one and, half the time, a pseudo-anomalous
// one — benign only when the policy disables the whole anomaly family); every
// other in-batch view acts as a negative. Rejects empty datasets and any
// target-labeled record. Writes an encoder checkpoint to `checkpoint_out` and
// returns the per-epoch loss trace.
EncoderTrainResult train_encoder(const std::vector<LabeledImage>& healthy,
                                 const EncoderConfig& config,
                                 const AugmentationPolicy& policy, uint64_t seed,
                                 const std::filesystem::path& checkpoint_out);

struct DiffusionTrainResult {
    std::vector<double> epoch_losses;  // mean noise-prediction MSE per epoch
    std::vector<double> val_losses;    // frozen-batch MSE; [0] is pre-training
    int64_t steps = 0;
};

// Conditional denoiser training: per sample draw t uniformly from the train
// range, corrupt with a fresh simplex field, condition on the encoder code of
// the clean image, and minimize noise-prediction MSE. The encoder is loaded
// from `encoder_ckpt` and fine-tuned jointly through the conditioning path.
// Writes a joint checkpoint to `checkpoint_out`.
DiffusionTrainResult train_diffusion(const std::vector<LabeledImage>& healthy,
                                     const std::filesystem::path& encoder_ckpt,
                                     const DenoiserConfig& config,
                                     const TrainRunConfig& run,
                                     const std::filesystem::path& checkpoint_out);

// Single-shot healthy reconstruction: corrupt x0 to t_infer with a seeded
// simplex field, predict the noise once under the encoder's conditioning
// code, and invert the corruption in closed form. No iterative chain. The
// estimate is clipped to the input's declared range. `zero_condition`
// replaces the conditioning code with zeros (ablation support).
ImageTensor reconstruct(const ImageTensor& x0, JointCheckpoint& ckpt, int t_infer,
                        uint64_t seed, bool zero_condition = false);

// Residual map |x0 - x_hat| (channel-averaged for multi-channel inputs) with
// optional post-processing, plus its mean score.
AnomalyMap anomaly_map(const ImageTensor& x0, const ImageTensor& x_hat,
                       const PostprocessConfig& post = {});

// target iff score > threshold.
ClassLabel classify_image(double score, double threshold);

// Linear-interpolated percentile of a score sample; the classification
// threshold is the 0.95 percentile of healthy-validation scores.
double score_percentile_threshold(std::vector<double> scores, double percentile = 0.95);

}  // namespace uad
