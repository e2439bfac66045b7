#include "uad/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <type_traits>

#include "json.hpp"
#include "uad/checkpoint.hpp"
#include "uad/image.hpp"
#include "uad/rng.hpp"

namespace uad {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const char* who) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok)
            throw std::invalid_argument(std::string(who) + ": unknown field '" + key + "'");
    }
}

template <typename T>
void get_field(const json& j, const char* key, T& out, const char* who) {
    if (!j.contains(key)) return;  // absent fields keep their defaults
    const json& v = j.at(key);
    // reject numeric coercion (1.5 into an int field, true into a number)
    bool kind_ok = true;
    if constexpr (std::is_same_v<T, bool>)
        kind_ok = v.is_boolean();
    else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>)
        kind_ok = v.is_number_unsigned() ||
                  (v.is_number_integer() && v.template get<int64_t>() >= 0);
    else if constexpr (std::is_integral_v<T>)
        kind_ok = v.is_number_integer();
    else if constexpr (std::is_floating_point_v<T>)
        kind_ok = v.is_number();
    if (!kind_ok)
        throw std::invalid_argument(std::string(who) + ": field '" + key +
                                    "' has the wrong type");
    try {
        out = v.get<T>();
    } catch (const json::exception&) {
        throw std::invalid_argument(std::string(who) + ": field '" + key +
                                    "' has the wrong type");
    }
}

ordered_json synth_json(const SynthRunConfig& c) {
    ordered_json j;
    j["train_count"] = c.train_count;
    j["val_count"] = c.val_count;
    j["test_count"] = c.test_count;
    ordered_json g;
    g["image_size"] = c.generator.image_size;
    g["ellipse_min_axis"] = c.generator.ellipse_min_axis;
    g["ellipse_max_axis"] = c.generator.ellipse_max_axis;
    g["texture_amplitude"] = c.generator.texture_amplitude;
    g["blob_count_min"] = c.generator.blob_count_min;
    g["blob_count_max"] = c.generator.blob_count_max;
    g["blob_radius_min"] = c.generator.blob_radius_min;
    g["blob_radius_max"] = c.generator.blob_radius_max;
    g["blob_delta_min"] = c.generator.blob_delta_min;
    g["blob_delta_max"] = c.generator.blob_delta_max;
    g["anomaly_rate"] = c.generator.anomaly_rate;
    j["generator"] = std::move(g);
    return j;
}

SynthRunConfig synth_parse(const json& j) {
    check_keys(j, {"train_count", "val_count", "test_count", "generator"}, "config.synth");
    SynthRunConfig c;
    get_field(j, "train_count", c.train_count, "config.synth");
    get_field(j, "val_count", c.val_count, "config.synth");
    get_field(j, "test_count", c.test_count, "config.synth");
    if (j.contains("generator")) {
        const json& g = j.at("generator");
        check_keys(g,
                   {"image_size", "ellipse_min_axis", "ellipse_max_axis",
                    "texture_amplitude", "blob_count_min", "blob_count_max",
                    "blob_radius_min", "blob_radius_max", "blob_delta_min",
                    "blob_delta_max", "anomaly_rate"},
                   "config.synth.generator");
        const char* who = "config.synth.generator";
        get_field(g, "image_size", c.generator.image_size, who);
        get_field(g, "ellipse_min_axis", c.generator.ellipse_min_axis, who);
        get_field(g, "ellipse_max_axis", c.generator.ellipse_max_axis, who);
        get_field(g, "texture_amplitude", c.generator.texture_amplitude, who);
        get_field(g, "blob_count_min", c.generator.blob_count_min, who);
        get_field(g, "blob_count_max", c.generator.blob_count_max, who);
        get_field(g, "blob_radius_min", c.generator.blob_radius_min, who);
        get_field(g, "blob_radius_max", c.generator.blob_radius_max, who);
        get_field(g, "blob_delta_min", c.generator.blob_delta_min, who);
        get_field(g, "blob_delta_max", c.generator.blob_delta_max, who);
        get_field(g, "anomaly_rate", c.generator.anomaly_rate, who);
    }
    return c;
}

ordered_json augment_json(const AugmentationPolicy& p) {
    ordered_json j;
    j["flip_prob"] = p.flip_prob;
    j["crop_prob"] = p.crop_prob;
    j["crop_min_scale"] = p.crop_min_scale;
    j["jitter_prob"] = p.jitter_prob;
    j["brightness_delta"] = p.brightness_delta;
    j["contrast_lo"] = p.contrast_lo;
    j["contrast_hi"] = p.contrast_hi;
    j["enable_cutout"] = p.enable_cutout;
    j["enable_gauss_noise"] = p.enable_gauss_noise;
    j["enable_erasing"] = p.enable_erasing;
    j["cutout_area_lo"] = p.cutout_area_lo;
    j["cutout_area_hi"] = p.cutout_area_hi;
    j["noise_sigma_lo"] = p.noise_sigma_lo;
    j["noise_sigma_hi"] = p.noise_sigma_hi;
    return j;
}

AugmentationPolicy augment_parse(const json& j) {
    check_keys(j,
               {"flip_prob", "crop_prob", "crop_min_scale", "jitter_prob",
                "brightness_delta", "contrast_lo", "contrast_hi", "enable_cutout",
                "enable_gauss_noise", "enable_erasing", "cutout_area_lo", "cutout_area_hi",
                "noise_sigma_lo", "noise_sigma_hi"},
               "config.augment");
    AugmentationPolicy p;
    const char* who = "config.augment";
    get_field(j, "flip_prob", p.flip_prob, who);
    get_field(j, "crop_prob", p.crop_prob, who);
    get_field(j, "crop_min_scale", p.crop_min_scale, who);
    get_field(j, "jitter_prob", p.jitter_prob, who);
    get_field(j, "brightness_delta", p.brightness_delta, who);
    get_field(j, "contrast_lo", p.contrast_lo, who);
    get_field(j, "contrast_hi", p.contrast_hi, who);
    get_field(j, "enable_cutout", p.enable_cutout, who);
    get_field(j, "enable_gauss_noise", p.enable_gauss_noise, who);
    get_field(j, "enable_erasing", p.enable_erasing, who);
    get_field(j, "cutout_area_lo", p.cutout_area_lo, who);
    get_field(j, "cutout_area_hi", p.cutout_area_hi, who);
    get_field(j, "noise_sigma_lo", p.noise_sigma_lo, who);
    get_field(j, "noise_sigma_hi", p.noise_sigma_hi, who);
    return p;
}

ordered_json run_json(const TrainRunConfig& r) {
    ordered_json j;
    j["learning_rate"] = r.learning_rate;
    j["batch_size"] = r.batch_size;
    j["max_epochs"] = r.max_epochs;
    j["t_train_min"] = r.t_train_min;
    j["t_train_max"] = r.t_train_max;
    j["t_infer"] = r.t_infer;
    ordered_json s;
    s["steps"] = r.schedule.steps;
    s["beta_start"] = r.schedule.beta_start;
    s["beta_end"] = r.schedule.beta_end;
    j["schedule"] = std::move(s);
    return j;
}

TrainRunConfig run_parse(const json& j) {
    check_keys(j,
               {"learning_rate", "batch_size", "max_epochs", "t_train_min", "t_train_max",
                "t_infer", "schedule"},
               "config.run");
    TrainRunConfig r;
    const char* who = "config.run";
    get_field(j, "learning_rate", r.learning_rate, who);
    get_field(j, "batch_size", r.batch_size, who);
    get_field(j, "max_epochs", r.max_epochs, who);
    get_field(j, "t_train_min", r.t_train_min, who);
    get_field(j, "t_train_max", r.t_train_max, who);
    get_field(j, "t_infer", r.t_infer, who);
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        check_keys(s, {"steps", "beta_start", "beta_end"}, "config.run.schedule");
        get_field(s, "steps", r.schedule.steps, "config.run.schedule");
        get_field(s, "beta_start", r.schedule.beta_start, "config.run.schedule");
        get_field(s, "beta_end", r.schedule.beta_end, "config.run.schedule");
    }
    return r;
}

}  // namespace

void SynthRunConfig::validate() const {
    if (train_count < 0 || val_count < 0 || test_count < 0)
        throw std::invalid_argument("config.synth: split counts must be >= 0");
    generator.validate();
}

void EvalConfig::validate() const {
    if (threshold_mode != "percentile" && threshold_mode != "fixed")
        throw std::invalid_argument(
            "config.evaluate: threshold_mode must be 'percentile' or 'fixed'");
    if (!std::isfinite(threshold))
        throw std::invalid_argument("config.evaluate: threshold must be finite");
    if (!(percentile > 0.0 && percentile <= 1.0))
        throw std::invalid_argument("config.evaluate: percentile must lie in (0, 1]");
}

void LocalizeConfig::validate() const {
    if (top_n < 0) throw std::invalid_argument("config.localize: top_n must be >= 0");
    if (!(pixel_percentile > 0.0 && pixel_percentile <= 1.0))
        throw std::invalid_argument("config.localize: pixel_percentile must lie in (0, 1]");
    if (map_threshold && !std::isfinite(*map_threshold))
        throw std::invalid_argument("config.localize: map_threshold must be finite");
}

void RunConfig::validate() const {
    if (workers < 1) throw std::invalid_argument("config.workers: must be >= 1");
    if (device != "cpu")
        throw std::invalid_argument("config.device: only 'cpu' is supported");
    synth.validate();
    encoder.validate();
    denoiser.validate();
    run.validate();
    evaluate.validate();
    localize.validate();

    // augmentation field sanity (the policy struct itself carries no validator)
    for (double p : {augment.flip_prob, augment.crop_prob, augment.jitter_prob})
        if (!(p >= 0.0 && p <= 1.0))
            throw std::invalid_argument(
                "config.augment: probabilities must lie in [0, 1]");
    if (!(augment.crop_min_scale > 0.0 && augment.crop_min_scale <= 1.0))
        throw std::invalid_argument("config.augment: crop_min_scale must lie in (0, 1]");
    if (augment.cutout_area_lo > augment.cutout_area_hi ||
        augment.noise_sigma_lo > augment.noise_sigma_hi ||
        augment.contrast_lo > augment.contrast_hi)
        throw std::invalid_argument("config.augment: lo/hi bounds are inverted");

    if (postprocess.median_filter &&
        (postprocess.median_k < 1 || postprocess.median_k % 2 == 0))
        throw std::invalid_argument("config.postprocess: median_k must be odd and >= 1");

    // cross-block coherence: the encoder conditions the denoiser
    if (encoder.input_size != denoiser.input_size ||
        encoder.in_channels != denoiser.in_channels)
        throw std::invalid_argument(
            "config: encoder and denoiser input geometry must match");
    if (encoder.output_dim != denoiser.cond_dim)
        throw std::invalid_argument(
            "config: denoiser.cond_dim must equal encoder.output_dim");
}

uint64_t RunConfig::synth_seed() const { return Rng::mix(seed, 101); }
uint64_t RunConfig::augment_seed() const { return Rng::mix(seed, 102); }
uint64_t RunConfig::encoder_train_seed() const { return Rng::mix(seed, 103); }
uint64_t RunConfig::diffusion_train_seed() const { return Rng::mix(seed, 104); }
uint64_t RunConfig::inference_seed() const { return Rng::mix(seed, 105); }

RunConfig run_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
    }
    check_keys(j,
               {"seed", "workers", "device", "synth", "encoder", "augment", "denoiser",
                "run", "postprocess", "evaluate", "localize"},
               "config");
    RunConfig cfg;
    get_field(j, "seed", cfg.seed, "config");
    get_field(j, "workers", cfg.workers, "config");
    get_field(j, "device", cfg.device, "config");
    if (j.contains("synth")) cfg.synth = synth_parse(j.at("synth"));
    if (j.contains("encoder")) cfg.encoder = encoder_config_from_json(j.at("encoder").dump());
    if (j.contains("augment")) cfg.augment = augment_parse(j.at("augment"));
    if (j.contains("denoiser"))
        cfg.denoiser = denoiser_config_from_json(j.at("denoiser").dump());
    if (j.contains("run")) cfg.run = run_parse(j.at("run"));
    if (j.contains("postprocess")) {
        const json& p = j.at("postprocess");
        check_keys(p, {"median_filter", "median_k", "restrict_foreground"},
                   "config.postprocess");
        get_field(p, "median_filter", cfg.postprocess.median_filter, "config.postprocess");
        get_field(p, "median_k", cfg.postprocess.median_k, "config.postprocess");
        get_field(p, "restrict_foreground", cfg.postprocess.restrict_foreground,
                  "config.postprocess");
    }
    if (j.contains("evaluate")) {
        const json& e = j.at("evaluate");
        check_keys(e, {"threshold_mode", "threshold", "percentile"}, "config.evaluate");
        get_field(e, "threshold_mode", cfg.evaluate.threshold_mode, "config.evaluate");
        get_field(e, "threshold", cfg.evaluate.threshold, "config.evaluate");
        get_field(e, "percentile", cfg.evaluate.percentile, "config.evaluate");
    }
    if (j.contains("localize")) {
        const json& l = j.at("localize");
        check_keys(l, {"top_n", "pixel_percentile", "map_threshold"}, "config.localize");
        get_field(l, "top_n", cfg.localize.top_n, "config.localize");
        get_field(l, "pixel_percentile", cfg.localize.pixel_percentile, "config.localize");
        if (l.contains("map_threshold") && !l.at("map_threshold").is_null()) {
            double v = 0.0;
            get_field(l, "map_threshold", v, "config.localize");
            cfg.localize.map_threshold = v;
        }
    }
    cfg.validate();
    return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
    ordered_json j;
    j["seed"] = cfg.seed;
    j["workers"] = cfg.workers;
    j["device"] = cfg.device;
    j["synth"] = synth_json(cfg.synth);
    j["encoder"] = ordered_json::parse(encoder_config_to_json(cfg.encoder));
    j["augment"] = augment_json(cfg.augment);
    j["denoiser"] = ordered_json::parse(denoiser_config_to_json(cfg.denoiser));
    j["run"] = run_json(cfg.run);
    ordered_json p;
    p["median_filter"] = cfg.postprocess.median_filter;
    p["median_k"] = cfg.postprocess.median_k;
    p["restrict_foreground"] = cfg.postprocess.restrict_foreground;
    j["postprocess"] = std::move(p);
    ordered_json e;
    e["threshold_mode"] = cfg.evaluate.threshold_mode;
    e["threshold"] = cfg.evaluate.threshold;
    e["percentile"] = cfg.evaluate.percentile;
    j["evaluate"] = std::move(e);
    ordered_json l;
    l["top_n"] = cfg.localize.top_n;
    l["pixel_percentile"] = cfg.localize.pixel_percentile;
    if (cfg.localize.map_threshold)
        l["map_threshold"] = *cfg.localize.map_threshold;
    else
        l["map_threshold"] = nullptr;
    j["localize"] = std::move(l);
    return j.dump(2) + "\n";
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open config: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return run_config_from_json(ss.str());
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
    atomic_write_bytes(path, run_config_to_json(cfg));
}

}  // namespace uad
