// Command-line entry point: a thin flag-parsing shell over the stage
// functions in uad/commands.hpp. Stages exchange artifacts on disk, so any
// stage can be re-run in isolation given its inputs.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "uad/commands.hpp"
#include "uad/datagen.hpp"
#include "uad/metrics.hpp"

namespace fs = std::filesystem;

namespace {

// Flags shared by every subcommand. Overrides apply only when the flag was
// actually given, so the config file (or the built-in defaults) wins
// otherwise. The resolved result is echoed into each stage's output
// directory as resolved_config.json.
struct GlobalFlags {
    std::string config_path;
    uint64_t seed = 0;
    int workers = 1;
    std::string device;
    int t_infer = 500;
    double epsilon = 0.5;
    int top_n = 5;
    std::string threshold_mode;
    double threshold = 0.0;

    CLI::Option* seed_opt = nullptr;
    CLI::Option* workers_opt = nullptr;
    CLI::Option* device_opt = nullptr;
    CLI::Option* t_infer_opt = nullptr;
    CLI::Option* epsilon_opt = nullptr;
    CLI::Option* top_n_opt = nullptr;
    CLI::Option* threshold_mode_opt = nullptr;
    CLI::Option* threshold_opt = nullptr;

    void attach(CLI::App& app) {
        app.add_option("--config", config_path,
                       "run configuration file (JSON; defaults apply when omitted)");
        seed_opt = app.add_option("--seed", seed, "global seed override");
        workers_opt = app.add_option("--workers", workers, "worker thread count");
        device_opt = app.add_option("--device", device, "compute device (only 'cpu')");
        t_infer_opt =
            app.add_option("--t-infer", t_infer, "inference corruption timestep");
        epsilon_opt = app.add_option("--epsilon", epsilon, "contrastive margin");
        top_n_opt = app.add_option("--top-n", top_n, "boxes kept per image");
        threshold_mode_opt = app.add_option("--threshold-mode", threshold_mode,
                                            "image threshold mode: fixed | percentile");
        threshold_opt =
            app.add_option("--threshold", threshold, "fixed-mode score threshold");
    }

    uad::RunConfig resolve() const {
        uad::RunConfig cfg;
        if (!config_path.empty()) cfg = uad::load_run_config(config_path);
        if (*seed_opt) cfg.seed = seed;
        if (*workers_opt) cfg.workers = workers;
        if (*device_opt) cfg.device = device;
        if (*t_infer_opt) cfg.run.t_infer = t_infer;
        if (*epsilon_opt) cfg.encoder.epsilon_margin = epsilon;
        if (*top_n_opt) cfg.localize.top_n = top_n;
        if (*threshold_mode_opt) cfg.evaluate.threshold_mode = threshold_mode;
        if (*threshold_opt) cfg.evaluate.threshold = threshold;
        cfg.validate();
        return cfg;
    }
};

std::optional<fs::path> opt_path(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return fs::path(s);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"healthy-reconstruction anomaly detection workflow"};
    app.require_subcommand(1);

    GlobalFlags flags;
    flags.attach(app);

    std::string data_dir, out_dir, checkpoint, encoder_ckpt, recon_dir, val_recon_dir,
        localize_dir, split_name = "test";

    const auto stage = [&](const char* name, const char* desc) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->fallthrough();  // global flags may follow the subcommand name
        return sub;
    };

    CLI::App* synth = stage("synth", "generate the synthetic dataset");
    synth->add_option("--out", out_dir, "dataset output directory")->required();

    CLI::App* train_enc = stage("train-encoder", "contrastive encoder pretraining");
    train_enc->add_option("--data", data_dir, "dataset directory")->required();
    train_enc->add_option("--out", out_dir, "stage output directory")->required();

    CLI::App* train_diff = stage("train-diffusion", "conditional denoiser training");
    train_diff->add_option("--data", data_dir, "dataset directory")->required();
    train_diff->add_option("--encoder", encoder_ckpt, "encoder checkpoint")->required();
    train_diff->add_option("--out", out_dir, "stage output directory")->required();

    CLI::App* recon = stage("reconstruct", "healthy reconstructions + residual maps");
    recon->add_option("--data", data_dir, "dataset directory")->required();
    recon->add_option("--checkpoint", checkpoint, "joint checkpoint")->required();
    recon->add_option("--split", split_name, "dataset split (train | val | test)");
    recon->add_option("--out", out_dir, "stage output directory")->required();

    CLI::App* evaluate = stage("evaluate", "image metrics and classification");
    evaluate->add_option("--data", data_dir, "dataset directory")->required();
    evaluate->add_option("--recon", recon_dir, "reconstruction stage directory")->required();
    evaluate->add_option("--val-recon", val_recon_dir,
                         "healthy-validation reconstruction directory (percentile mode)");
    evaluate->add_option("--out", out_dir, "stage output directory")->required();

    CLI::App* localize = stage("localize", "bounding-box extraction and detection metrics");
    localize->add_option("--data", data_dir, "dataset directory")->required();
    localize->add_option("--recon", recon_dir, "reconstruction stage directory")->required();
    localize->add_option("--val-recon", val_recon_dir,
                         "healthy-validation reconstruction directory (threshold source)");
    localize->add_option("--out", out_dir, "stage output directory")->required();

    CLI::App* report = stage("report", "figure artifacts: grids, overlays, plots");
    report->add_option("--data", data_dir, "dataset directory")->required();
    report->add_option("--recon", recon_dir, "reconstruction stage directory")->required();
    report->add_option("--localize", localize_dir, "localization stage directory");
    report->add_option("--out", out_dir, "stage output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const uad::RunConfig cfg = flags.resolve();
        if (synth->parsed()) {
            const auto r = uad::cmd_synth(cfg, out_dir);
            std::printf("synth: %d train / %d val / %d test (%d anomalous) -> %s\n",
                        r.train, r.val, r.test, r.test_anomalous, out_dir.c_str());
        } else if (train_enc->parsed()) {
            const auto r = uad::cmd_train_encoder(cfg, data_dir, out_dir);
            std::printf("train-encoder: %lld steps, loss %s -> %s\n",
                        static_cast<long long>(r.steps),
                        uad::format_double(r.epoch_losses.back()).c_str(),
                        r.checkpoint.string().c_str());
        } else if (train_diff->parsed()) {
            const auto r = uad::cmd_train_diffusion(cfg, data_dir, encoder_ckpt, out_dir);
            std::printf("train-diffusion: %lld steps, val loss %s -> %s -> %s\n",
                        static_cast<long long>(r.steps),
                        uad::format_double(r.val_losses.front()).c_str(),
                        uad::format_double(r.val_losses.back()).c_str(),
                        r.checkpoint.string().c_str());
        } else if (recon->parsed()) {
            const auto r = uad::cmd_reconstruct(cfg, data_dir, checkpoint,
                                                uad::split_from_string(split_name), out_dir);
            std::printf("reconstruct: %d images from split '%s' -> %s\n", r.images,
                        split_name.c_str(), out_dir.c_str());
        } else if (evaluate->parsed()) {
            const auto r = uad::cmd_evaluate(cfg, data_dir, recon_dir,
                                             opt_path(val_recon_dir), out_dir);
            std::printf("evaluate: ssim %s, l1 %s, threshold %s (%s) -> %s\n",
                        uad::format_double(r.report.ssim_mean).c_str(),
                        uad::format_double(r.report.l1_mean).c_str(),
                        uad::format_double(r.threshold).c_str(),
                        cfg.evaluate.threshold_mode.c_str(), out_dir.c_str());
        } else if (localize->parsed()) {
            const auto r = uad::cmd_localize(cfg, data_dir, recon_dir,
                                             opt_path(val_recon_dir), out_dir);
            std::printf("localize: ap30 %s, acc50 %s, tp30 %d, fp30 %d -> %s\n",
                        uad::format_double(r.ap30).c_str(),
                        uad::format_double(r.acc50).c_str(), r.tp30, r.fp30,
                        out_dir.c_str());
        } else if (report->parsed()) {
            const auto r = uad::cmd_report(cfg, data_dir, recon_dir,
                                           opt_path(localize_dir), out_dir);
            std::printf("report: %zu files -> %s\n", r.files.size(), out_dir.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "uad: %s\n", e.what());
        return 1;
    }
    return 0;
}
