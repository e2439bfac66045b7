#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "uad/denoiser.hpp"
#include "uad/encoder.hpp"
#include "uad/schedule.hpp"

namespace uad {

// Versioned checkpoint archive: magic, format version, a JSON header (kind,
// configs, trained-step count, tensor index) and raw float32 parameter blobs.
// Loading validates the header against the rebuilt architecture, so a file
// saved under a different config is rejected with a named mismatch.

inline constexpr int kCheckpointVersion = 1;

struct EncoderCheckpoint {
    EncoderConfig config;
    int64_t trained_steps = 0;
    std::unique_ptr<Encoder<float>> encoder;
};

struct JointCheckpoint {
    EncoderConfig encoder_config;
    DenoiserConfig denoiser_config;
    ScheduleSpec schedule;
    int64_t trained_steps = 0;
    std::unique_ptr<Encoder<float>> encoder;
    std::unique_ptr<UNet<float>> unet;
};

void save_encoder_checkpoint(const std::filesystem::path& path, Encoder<float>& encoder,
                             const EncoderConfig& config, int64_t trained_steps);
EncoderCheckpoint load_encoder_checkpoint(const std::filesystem::path& path);

void save_joint_checkpoint(const std::filesystem::path& path, Encoder<float>& encoder,
                           const EncoderConfig& encoder_config, UNet<float>& unet,
                           const DenoiserConfig& denoiser_config, const ScheduleSpec& schedule,
                           int64_t trained_steps);
JointCheckpoint load_joint_checkpoint(const std::filesystem::path& path);

// Peek at the archive kind ("encoder" or "joint") without loading tensors.
std::string checkpoint_kind(const std::filesystem::path& path);

// Config <-> JSON text, shared by checkpoints and the CLI config loader.
// Parsers reject unknown keys and report offending fields by name.
std::string encoder_config_to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const std::string& text);
std::string denoiser_config_to_json(const DenoiserConfig& cfg);
DenoiserConfig denoiser_config_from_json(const std::string& text);

}  // namespace uad
