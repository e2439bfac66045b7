#include "uad/commands.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <utility>

#include "json.hpp"
#include "uad/localization.hpp"
#include "uad/pipeline.hpp"
#include "uad/report.hpp"
#include "uad/rng.hpp"

namespace uad {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void write_json(const fs::path& path, const ordered_json& j) {
    atomic_write_bytes(path, j.dump(2) + "\n");
}

void echo_config(const RunConfig& cfg, const fs::path& out_dir) {
    save_run_config(out_dir / "resolved_config.json", cfg);
}

DatasetManifest open_dataset(const fs::path& data_dir) {
    const fs::path manifest = data_dir / "manifest.tsv";
    if (!fs::exists(manifest))
        throw std::runtime_error("no dataset manifest at " + manifest.string() +
                                 " (run the synth stage or point --data at a dataset)");
    return read_manifest(manifest);
}

std::map<std::string, const DatasetRecord*> index_records(const DatasetManifest& m) {
    std::map<std::string, const DatasetRecord*> idx;
    for (const auto& r : m.records) idx.emplace(r.id, &r);
    return idx;
}

const DatasetRecord& record_for(const std::map<std::string, const DatasetRecord*>& idx,
                                const std::string& id) {
    const auto it = idx.find(id);
    if (it == idx.end())
        throw std::runtime_error("id '" + id + "' is not in the dataset manifest");
    return *it->second;
}

// scores.tsv: one "id<TAB>score" row per reconstructed image, manifest order
void write_scores(const fs::path& path,
                  const std::vector<std::pair<std::string, double>>& rows) {
    std::string out = "# id\tscore\n";
    for (const auto& [id, score] : rows) {
        out += id;
        out += '\t';
        out += format_double(score);
        out += '\n';
    }
    atomic_write_bytes(path, out);
}

std::vector<std::pair<std::string, double>> read_scores(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("no reconstruction scores at " + path.string() +
                                 " (run the reconstruct stage first)");
    std::vector<std::pair<std::string, double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error("malformed scores row in " + path.string() + ": " + line);
        rows.emplace_back(line.substr(0, tab), std::stod(line.substr(tab + 1)));
    }
    if (rows.empty()) throw std::runtime_error("empty scores table: " + path.string());
    return rows;
}

fs::path recon_image_path(const fs::path& recon_dir, const std::string& id) {
    return recon_dir / "recon" / (id + ".pgm");
}
fs::path map_image_path(const fs::path& recon_dir, const std::string& id) {
    return recon_dir / "map" / (id + ".pgm");
}

ImageTensor read_artifact(const fs::path& path) {
    if (!fs::exists(path))
        throw std::runtime_error("missing reconstruction artifact: " + path.string());
    return read_pgm(path);
}

// Ground-truth mask in the residual-map frame; absent masks mean healthy.
BinaryMask mask_at(const DatasetRecord& rec, int h, int w) {
    if (!rec.mask_path || !fs::exists(*rec.mask_path)) return BinaryMask(h, w);
    BinaryMask m = read_mask_pgm(*rec.mask_path);
    if (m.height != h || m.width != w) m = resize_mask_nearest(m, h, w);
    return m;
}

// Rescales a box between image frames, keeping coverage: mins floor, maxes
// ceil (identity when the frames match).
BBox scale_box(const BBox& b, int in_h, int in_w, int out_h, int out_w) {
    if (in_h == out_h && in_w == out_w) return b;
    BBox s = b;
    s.x_min = (b.x_min * out_w) / in_w;
    s.y_min = (b.y_min * out_h) / in_h;
    s.x_max = (b.x_max * out_w + in_w - 1) / in_w;
    s.y_max = (b.y_max * out_h + in_h - 1) / in_h;
    return s;
}

// Collapses multi-channel tensors to one channel for display tiles/overlays.
ImageTensor display_gray(const ImageTensor& t) {
    if (t.channels == 1) return t;
    ImageTensor g(t.height, t.width, 1, t.range);
    for (int y = 0; y < t.height; ++y)
        for (int x = 0; x < t.width; ++x) {
            double acc = 0.0;
            for (int c = 0; c < t.channels; ++c) acc += t.at(y, x, c);
            g.at(y, x, 0) = acc / t.channels;
        }
    return g;
}

}  // namespace

uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 14695981039346656037ull;
    for (const unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

SynthStageResult cmd_synth(const RunConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    const fs::path root = fs::absolute(out_dir);
    fs::create_directories(root);

    DatasetManifest merged;
    const auto make = [&](Split split, int n, double rate, uint64_t tag) {
        if (n == 0) return;  // a split may be skipped outright
        SynthConfig g = cfg.synth.generator;
        g.anomaly_rate = rate;
        // distinct content stream per split — the generator keys images by
        // (seed, index), so reusing one seed would duplicate images across splits
        g.seed = Rng::mix(cfg.synth_seed(), tag);
        DatasetManifest part = generate_synthetic(root, split, n, g);
        for (auto& r : part.records) merged.records.push_back(std::move(r));
    };
    make(Split::train, cfg.synth.train_count, 0.0, 1);
    make(Split::val, cfg.synth.val_count, 0.0, 2);
    make(Split::test, cfg.synth.test_count, cfg.synth.generator.anomaly_rate, 3);
    merged.validate();
    write_manifest(root / "manifest.tsv", merged);

    SynthStageResult res;
    res.train = cfg.synth.train_count;
    res.val = cfg.synth.val_count;
    res.test = cfg.synth.test_count;
    for (const auto& r : merged.records)
        if (r.split == Split::test && r.label == ClassLabel::target) ++res.test_anomalous;

    ordered_json s;
    s["stage"] = "synth";
    s["train"] = res.train;
    s["val"] = res.val;
    s["test"] = res.test;
    s["test_anomalous"] = res.test_anomalous;
    write_json(root / "summary.json", s);
    echo_config(cfg, root);
    return res;
}

EncoderStageResult cmd_train_encoder(const RunConfig& cfg, const fs::path& data_dir,
                                     const fs::path& out_dir) {
    cfg.validate();
    const DatasetManifest manifest = open_dataset(data_dir);
    const auto healthy = load_split(manifest, Split::train, cfg.encoder.input_size);

    AugmentationPolicy policy = cfg.augment;
    policy.seed = cfg.augment_seed();

    fs::create_directories(out_dir);
    EncoderStageResult res;
    res.checkpoint = out_dir / "encoder.ckpt";
    const EncoderTrainResult r =
        train_encoder(healthy, cfg.encoder, policy, cfg.encoder_train_seed(), res.checkpoint);
    res.epoch_losses = r.epoch_losses;
    res.steps = r.steps;

    ordered_json log;
    log["stage"] = "train_encoder";
    log["images"] = healthy.size();
    log["steps"] = r.steps;
    log["epoch_losses"] = r.epoch_losses;
    write_json(out_dir / "train_log.json", log);
    echo_config(cfg, out_dir);
    return res;
}

DiffusionStageResult cmd_train_diffusion(const RunConfig& cfg, const fs::path& data_dir,
                                         const fs::path& encoder_ckpt,
                                         const fs::path& out_dir) {
    cfg.validate();
    if (!fs::exists(encoder_ckpt))
        throw std::runtime_error("no encoder checkpoint at " + encoder_ckpt.string() +
                                 " (run the train-encoder stage first)");
    const DatasetManifest manifest = open_dataset(data_dir);
    const auto healthy = load_split(manifest, Split::train, cfg.denoiser.input_size);

    TrainRunConfig run = cfg.run;
    run.seed = cfg.diffusion_train_seed();

    fs::create_directories(out_dir);
    DiffusionStageResult res;
    res.checkpoint = out_dir / "joint.ckpt";
    const DiffusionTrainResult r =
        train_diffusion(healthy, encoder_ckpt, cfg.denoiser, run, res.checkpoint);
    res.epoch_losses = r.epoch_losses;
    res.val_losses = r.val_losses;
    res.steps = r.steps;

    ordered_json log;
    log["stage"] = "train_diffusion";
    log["images"] = healthy.size();
    log["steps"] = r.steps;
    log["epoch_losses"] = r.epoch_losses;
    log["val_losses"] = r.val_losses;
    write_json(out_dir / "train_log.json", log);
    echo_config(cfg, out_dir);
    return res;
}

ReconstructStageResult cmd_reconstruct(const RunConfig& cfg, const fs::path& data_dir,
                                       const fs::path& checkpoint, Split split,
                                       const fs::path& out_dir) {
    cfg.validate();
    if (!fs::exists(checkpoint))
        throw std::runtime_error("no checkpoint at " + checkpoint.string() +
                                 " (run the train-diffusion stage first)");
    {
        // fail before any heavy work if the archive disagrees with the config
        const JointCheckpoint probe = load_joint_checkpoint(checkpoint);
        if (probe.denoiser_config.input_size != cfg.denoiser.input_size ||
            probe.denoiser_config.in_channels != cfg.denoiser.in_channels)
            throw std::runtime_error(
                "checkpoint input geometry differs from the configured denoiser block");
    }
    const DatasetManifest manifest = open_dataset(data_dir);
    const auto images = load_split(manifest, split, cfg.denoiser.input_size);
    if (images.empty())
        throw std::runtime_error("dataset has no images in split '" + to_string(split) + "'");

    const int workers =
        std::max(1, std::min(cfg.workers, static_cast<int>(images.size())));
    std::vector<ImageTensor> recons(images.size());
    std::vector<AnomalyMap> maps(images.size());
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));

    // strided partition; each worker drives its own network instance (layer
    // caches are mutated by the forward pass, so instances must not be shared)
    const auto work = [&](int w) {
        try {
            JointCheckpoint ckpt = load_joint_checkpoint(checkpoint);
            for (size_t i = static_cast<size_t>(w); i < images.size();
                 i += static_cast<size_t>(workers)) {
                const uint64_t s = Rng::mix(cfg.inference_seed(), fnv1a64(images[i].id));
                recons[i] = reconstruct(images[i].image, ckpt, cfg.run.t_infer, s);
                maps[i] = anomaly_map(images[i].image, recons[i], cfg.postprocess);
            }
        } catch (...) {
            errors[static_cast<size_t>(w)] = std::current_exception();
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(workers));
        for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    // write in manifest order regardless of worker interleaving
    std::vector<std::pair<std::string, double>> rows;
    rows.reserve(images.size());
    for (size_t i = 0; i < images.size(); ++i) {
        write_pgm16(recon_image_path(out_dir, images[i].id), recons[i]);
        write_pgm16(map_image_path(out_dir, images[i].id), maps[i].residuals);
        rows.emplace_back(images[i].id, maps[i].score);
    }
    ReconstructStageResult res;
    res.images = static_cast<int>(images.size());
    res.scores_path = out_dir / "scores.tsv";
    write_scores(res.scores_path, rows);

    ordered_json s;
    s["stage"] = "reconstruct";
    s["split"] = to_string(split);
    s["images"] = res.images;
    s["t_infer"] = cfg.run.t_infer;
    write_json(out_dir / "summary.json", s);
    echo_config(cfg, out_dir);
    return res;
}

EvaluateStageResult cmd_evaluate(const RunConfig& cfg, const fs::path& data_dir,
                                 const fs::path& recon_dir,
                                 const std::optional<fs::path>& val_recon_dir,
                                 const fs::path& out_dir) {
    cfg.validate();
    const DatasetManifest manifest = open_dataset(data_dir);
    const auto idx = index_records(manifest);
    const auto rows = read_scores(recon_dir / "scores.tsv");

    EvaluateStageResult res;
    if (cfg.evaluate.threshold_mode == "fixed") {
        res.threshold = cfg.evaluate.threshold;
    } else {
        if (!val_recon_dir)
            throw std::runtime_error(
                "percentile threshold mode needs healthy-validation scores (--val-recon)");
        std::vector<double> val_scores;
        for (const auto& [id, score] : read_scores(*val_recon_dir / "scores.tsv"))
            val_scores.push_back(score);
        res.threshold = score_percentile_threshold(val_scores, cfg.evaluate.percentile);
    }

    std::vector<ImageTensor> maps;
    std::vector<BinaryMask> gts;
    maps.reserve(rows.size());
    gts.reserve(rows.size());
    int64_t anom_px = 0, total_px = 0;
    for (const auto& [id, score] : rows) {
        const DatasetRecord& rec = record_for(idx, id);
        const ImageTensor orig =
            preprocess(read_pgm(rec.image_path), cfg.denoiser.input_size);
        const ImageTensor recon = read_artifact(recon_image_path(recon_dir, id));
        const ImageTensor map = read_artifact(map_image_path(recon_dir, id));

        ImageMetricRecord r;
        r.id = id;
        r.ssim = ssim(orig, recon);
        r.mse = mse(orig, recon);
        r.l1 = l1(orig, recon);
        r.score = score;
        r.label = rec.label == ClassLabel::target ? 1 : 0;
        res.report.records.push_back(std::move(r));

        BinaryMask gt = mask_at(rec, map.height, map.width);
        anom_px += static_cast<int64_t>(gt.count());
        total_px += static_cast<int64_t>(map.height) * map.width;
        maps.push_back(map);
        gts.push_back(std::move(gt));

        const bool is_target = rec.label == ClassLabel::target;
        const bool flagged = classify_image(score, res.threshold) == ClassLabel::target;
        if (is_target)
            flagged ? ++res.tp : ++res.fn;
        else
            flagged ? ++res.fp : ++res.tn;
    }
    res.report.compute_aggregates();
    res.pixel_prevalence =
        total_px > 0 ? static_cast<double>(anom_px) / static_cast<double>(total_px) : 0.0;

    // pixel-level metrics are meaningful only when ground truth marks any pixel
    if (anom_px > 0) {
        std::vector<double> px;
        std::vector<uint8_t> lb;
        px.reserve(static_cast<size_t>(total_px));
        lb.reserve(static_cast<size_t>(total_px));
        for (size_t i = 0; i < maps.size(); ++i) {
            const ImageTensor& m = maps[i];
            const BinaryMask& g = gts[i];
            for (int y = 0; y < m.height; ++y)
                for (int x = 0; x < m.width; ++x) {
                    px.push_back(m.at(y, x, 0));
                    lb.push_back(g.at(y, x));
                }
        }
        res.report.pixel_auprc = auprc(px, lb);
        const auto [best, thr] = best_dice(maps, gts);
        res.report.dice_best = best;
        res.report.dice_best_threshold = thr;
    }

    atomic_write_bytes(out_dir / "metrics.csv", res.report.to_csv());
    atomic_write_bytes(out_dir / "summary.json", res.report.to_summary_json());

    const int n = res.tp + res.fp + res.tn + res.fn;
    ordered_json c;
    c["threshold_mode"] = cfg.evaluate.threshold_mode;
    c["threshold"] = res.threshold;
    c["tp"] = res.tp;
    c["fp"] = res.fp;
    c["tn"] = res.tn;
    c["fn"] = res.fn;
    c["accuracy"] = n > 0 ? static_cast<double>(res.tp + res.tn) / n : 0.0;
    c["pixel_prevalence"] = res.pixel_prevalence;
    if (res.report.pixel_auprc && res.pixel_prevalence > 0.0)
        c["pixel_auprc_over_prevalence"] = *res.report.pixel_auprc / res.pixel_prevalence;
    else
        c["pixel_auprc_over_prevalence"] = nullptr;
    write_json(out_dir / "classification.json", c);
    echo_config(cfg, out_dir);
    return res;
}

LocalizeStageResult cmd_localize(const RunConfig& cfg, const fs::path& data_dir,
                                 const fs::path& recon_dir,
                                 const std::optional<fs::path>& val_recon_dir,
                                 const fs::path& out_dir) {
    cfg.validate();
    const DatasetManifest manifest = open_dataset(data_dir);
    const auto idx = index_records(manifest);
    const auto rows = read_scores(recon_dir / "scores.tsv");

    LocalizeStageResult res;
    if (cfg.localize.map_threshold) {
        res.threshold = *cfg.localize.map_threshold;
    } else {
        // quantile of the pooled healthy-validation residual pixels
        if (!val_recon_dir)
            throw std::runtime_error(
                "localization threshold needs healthy-validation maps (--val-recon) "
                "or an explicit localize.map_threshold");
        std::vector<double> pixels;
        for (const auto& [id, score] : read_scores(*val_recon_dir / "scores.tsv")) {
            const ImageTensor m = read_artifact(map_image_path(*val_recon_dir, id));
            pixels.insert(pixels.end(), m.values.begin(), m.values.end());
        }
        res.threshold = score_percentile_threshold(pixels, cfg.localize.pixel_percentile);
    }

    std::vector<DetectionSet> dataset;
    std::vector<std::pair<std::string, BBox>> pred_rows;
    dataset.reserve(rows.size());
    for (const auto& [id, score] : rows) {
        const DatasetRecord& rec = record_for(idx, id);
        const ImageTensor map = read_artifact(map_image_path(recon_dir, id));

        DetectionSet set;
        set.preds = extract_bboxes(map, res.threshold, cfg.localize.top_n);
        if (!rec.boxes.empty()) {
            // manifest boxes live in the original image frame
            const ImageTensor raw = read_pgm(rec.image_path);
            for (const BBox& b : rec.boxes)
                set.gts.push_back(scale_box(b, raw.height, raw.width, map.height, map.width));
        }
        for (const BBox& b : set.preds) pred_rows.emplace_back(id, b);
        res.gt_boxes += static_cast<int>(set.gts.size());
        dataset.push_back(std::move(set));
    }
    res.images = static_cast<int>(dataset.size());
    res.ap30 = average_precision(dataset, 0.30);
    res.ap50 = average_precision(dataset, 0.50);
    res.map_50_95 = map_range(dataset);
    res.acc50 = uad::acc50(dataset);
    std::tie(res.tp30, res.fp30) = count_tp_fp(dataset, 0.30);

    fs::create_directories(out_dir);
    write_box_records((out_dir / "pred_boxes.txt").string(), pred_rows);

    ordered_json l;
    l["stage"] = "localize";
    l["threshold"] = res.threshold;
    l["top_n"] = cfg.localize.top_n;
    l["images"] = res.images;
    l["gt_boxes"] = res.gt_boxes;
    l["ap30"] = res.ap30;
    l["ap50"] = res.ap50;
    l["map_50_95"] = res.map_50_95;
    l["acc50"] = res.acc50;
    l["tp30"] = res.tp30;
    l["fp30"] = res.fp30;
    write_json(out_dir / "localization.json", l);
    echo_config(cfg, out_dir);
    return res;
}

ReportStageResult cmd_report(const RunConfig& cfg, const fs::path& data_dir,
                             const fs::path& recon_dir,
                             const std::optional<fs::path>& localize_dir,
                             const fs::path& out_dir) {
    cfg.validate();
    const DatasetManifest manifest = open_dataset(data_dir);
    const auto idx = index_records(manifest);
    const auto rows = read_scores(recon_dir / "scores.tsv");

    std::map<std::string, std::vector<BBox>> preds_by_id;
    if (localize_dir) {
        const fs::path boxes = *localize_dir / "pred_boxes.txt";
        if (!fs::exists(boxes))
            throw std::runtime_error("no predicted boxes at " + boxes.string() +
                                     " (run the localize stage first)");
        for (auto& [id, box] : read_box_records(boxes.string()))
            preds_by_id[id].push_back(box);
    }

    ReportStageResult res;

    // grid of (input, reconstruction, residual map) rows for the first few ids
    const size_t grid_rows = std::min<size_t>(rows.size(), 8);
    std::vector<ImageTensor> tiles;
    tiles.reserve(grid_rows * 3);
    for (size_t i = 0; i < grid_rows; ++i) {
        const auto& [id, score] = rows[i];
        const DatasetRecord& rec = record_for(idx, id);
        tiles.push_back(display_gray(
            preprocess(read_pgm(rec.image_path), cfg.denoiser.input_size)));
        tiles.push_back(display_gray(read_artifact(recon_image_path(recon_dir, id))));
        tiles.push_back(read_artifact(map_image_path(recon_dir, id)));
    }
    std::vector<const ImageTensor*> tile_ptrs;
    tile_ptrs.reserve(tiles.size());
    for (const auto& t : tiles) tile_ptrs.push_back(&t);
    write_pgm16(out_dir / "recon_grid.pgm", tile_grid(tile_ptrs, 3));
    res.files.push_back("recon_grid.pgm");

    // per-image overlays: predictions (when available) in red, truth in green
    for (const auto& [id, score] : rows) {
        const DatasetRecord& rec = record_for(idx, id);
        const ImageTensor raw = read_pgm(rec.image_path);
        const ImageTensor base =
            display_gray(preprocess(raw, cfg.denoiser.input_size));
        std::vector<BBox> gts;
        for (const BBox& b : rec.boxes)
            gts.push_back(scale_box(b, raw.height, raw.width, base.height, base.width));
        const auto pit = preds_by_id.find(id);
        const std::vector<BBox> preds =
            pit == preds_by_id.end() ? std::vector<BBox>{} : pit->second;
        write_ppm(out_dir / "overlays" / (id + ".ppm"), box_overlay(base, preds, gts));
        res.files.push_back("overlays/" + id + ".ppm");
    }

    // image-level score plots
    std::vector<double> scores;
    std::vector<uint8_t> labels;
    for (const auto& [id, score] : rows) {
        scores.push_back(score);
        labels.push_back(record_for(idx, id).label == ClassLabel::target ? 1 : 0);
    }
    atomic_write_bytes(out_dir / "roc.svg", roc_svg(scores, labels));
    atomic_write_bytes(out_dir / "pr.svg", pr_svg(scores, labels));
    atomic_write_bytes(out_dir / "hist.svg", score_histogram_svg(scores, labels));
    res.files.push_back("roc.svg");
    res.files.push_back("pr.svg");
    res.files.push_back("hist.svg");

    ordered_json s;
    s["stage"] = "report";
    s["files"] = res.files;
    write_json(out_dir / "report_summary.json", s);
    echo_config(cfg, out_dir);
    return res;
}

}  // namespace uad
