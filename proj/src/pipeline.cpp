#include "uad/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "uad/contrastive.hpp"
#include "uad/diffusion.hpp"
#include "uad/rng.hpp"
#include "uad/simplex.hpp"

namespace uad {

namespace {

// Child-stream tags so every random purpose gets an independent seed.
constexpr uint64_t kInitStream = 1;
constexpr uint64_t kOrderStream = 2;
constexpr uint64_t kModeStream = 3;
constexpr uint64_t kTimestepStream = 4;
constexpr uint64_t kNoiseStream = 5;
constexpr uint64_t kValNoiseStream = 6;

void check_training_set(const std::vector<LabeledImage>& data, const char* op) {
    if (data.empty()) throw std::invalid_argument(std::string(op) + ": empty dataset");
    for (const auto& s : data) {
        if (s.label == ClassLabel::target)
            throw std::invalid_argument(std::string(op) +
                                        ": dataset contains target-class records (" +
                                        s.id + ")");
    }
}

void check_geometry(const std::vector<LabeledImage>& data, int size, int channels,
                    const char* op) {
    for (const auto& s : data) {
        if (s.image.height != size || s.image.width != size || s.image.channels != channels)
            throw std::invalid_argument(std::string(op) + ": image '" + s.id +
                                        "' does not match the configured geometry");
    }
}

// Per-channel multi-octave simplex field packed into an image-shaped tensor.
ImageTensor simplex_field(int h, int w, int c, uint64_t seed) {
    ImageTensor out(h, w, c, ValueRange::unbounded());
    for (int ch = 0; ch < c; ++ch) {
        SimplexNoiseConfig cfg;
        cfg.seed = Rng::mix(seed, static_cast<uint64_t>(ch));
        const ImageTensor plane = simplex_noise(h, w, cfg);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(y, x, ch) = plane.at(y, x, 0);
    }
    return out;
}

std::vector<nn::Param<float>*> collect(Encoder<float>* enc, UNet<float>* unet) {
    std::vector<nn::NamedParam<float>> named;
    if (enc) enc->params(named);
    if (unet) unet->params(named);
    return nn::unnamed(named);
}

void zero_grads(const std::vector<nn::Param<float>*>& params) {
    for (auto* p : params) p->zero_grad();
}

double mse_and_grad(const Tensor<float>& pred, const Tensor<float>& target,
                    Tensor<float>& grad) {
    grad = Tensor<float>(pred.shape);
    const double inv_n = 1.0 / static_cast<double>(pred.numel());
    double loss = 0.0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const double d = static_cast<double>(pred.data[i]) - target.data[i];
        loss += d * d;
        grad.data[i] = static_cast<float>(2.0 * d * inv_n);
    }
    return loss * inv_n;
}

}  // namespace

void TrainRunConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw std::invalid_argument("train run: learning_rate must be positive");
    if (batch_size < 1) throw std::invalid_argument("train run: batch_size must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("train run: max_epochs must be >= 1");
    if (t_train_min < 1 || t_train_max < t_train_min)
        throw std::invalid_argument("train run: t_train_range must satisfy 1 <= min <= max");
    if (t_train_max > schedule.steps)
        throw std::invalid_argument("train run: t_train_range exceeds the schedule length");
    if (t_infer < t_train_min || t_infer > t_train_max)
        throw std::invalid_argument("train run: t_infer must lie within t_train_range");
    schedule.build();  // validates the schedule parameters themselves
}

std::vector<LabeledImage> load_split(const DatasetManifest& manifest, Split split,
                                     int target_size) {
    std::vector<LabeledImage> out;
    for (const auto& rec : manifest.split_records(split)) {
        LabeledImage item;
        item.id = rec->id;
        item.label = rec->label;
        item.image = preprocess(read_pgm(rec->image_path), target_size);
        out.push_back(std::move(item));
    }
    return out;
}

Tensor<float> batch_to_tensor(const std::vector<const ImageTensor*>& images) {
    if (images.empty()) throw std::invalid_argument("batch_to_tensor: empty batch");
    const ImageTensor& first = *images.front();
    for (const ImageTensor* img : images) {
        if (!img->same_shape(first))
            throw std::invalid_argument("batch_to_tensor: mixed shapes in batch");
        if (!img->all_finite())
            throw std::invalid_argument("batch_to_tensor: non-finite image values");
    }
    Tensor<float> out({static_cast<int>(images.size()), first.channels, first.height,
                           first.width});
    for (size_t n = 0; n < images.size(); ++n)
        for (int c = 0; c < first.channels; ++c)
            for (int y = 0; y < first.height; ++y)
                for (int x = 0; x < first.width; ++x)
                    out.at(static_cast<int>(n), c, y, x) =
                        static_cast<float>(images[n]->at(y, x, c));
    return out;
}

ImageTensor tensor_to_image(const Tensor<float>& batch, int n, ValueRange range) {
    if (batch.shape.size() != 4)
        throw std::invalid_argument("tensor_to_image: batch must be 4-D");
    if (n < 0 || n >= batch.n())
        throw std::invalid_argument("tensor_to_image: sample index out of range");
    ImageTensor out(batch.h(), batch.w(), batch.c(), range);
    for (int c = 0; c < batch.c(); ++c)
        for (int y = 0; y < batch.h(); ++y)
            for (int x = 0; x < batch.w(); ++x)
                out.at(y, x, c) = static_cast<double>(batch.at(n, c, y, x));
    return out;
}

EncoderTrainResult train_encoder(const std::vector<LabeledImage>& healthy,
                                 const EncoderConfig& config,
                                 const AugmentationPolicy& policy, uint64_t seed,
                                 const std::filesystem::path& checkpoint_out) {
    config.validate();
    check_training_set(healthy, "train_encoder");
    if (healthy.size() < 2)
        throw std::invalid_argument(
            "train_encoder: needs at least two images to form in-batch negatives");
    check_geometry(healthy, config.input_size, config.in_channels, "train_encoder");

    Encoder<float> enc(config);
    {
        Rng init_rng(Rng::mix(seed, kInitStream));
        enc.init(init_rng);
    }
    Augmenter aug(policy);
    Rng order_rng(Rng::mix(seed, kOrderStream));
    Rng mode_rng(Rng::mix(seed, kModeStream));
    // A policy with the whole anomaly family switched off trains on benign
    // views only (the class-invariance ablation) instead of rejecting the run.
    const bool has_anomaly_family =
        policy.enable_cutout || policy.enable_gauss_noise || policy.enable_erasing;

    const auto params = collect(&enc, nullptr);
    nn::Adam<float> opt;
    opt.lr = config.learning_rate;

    const int n = static_cast<int>(healthy.size());
    const int dim = config.output_dim;
    std::vector<int> order(healthy.size());
    for (int i = 0; i < n; ++i) order[i] = i;

    EncoderTrainResult result;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        order_rng.shuffle(order);
        double epoch_loss = 0.0;
        int64_t epoch_anchors = 0;
        for (int start = 0; start < n; start += config.batch_size) {
            const int b = std::min(config.batch_size, n - start);
            if (b < 2) continue;  // a singleton batch has no in-batch negatives
            const int rows = 2 * b;

            // Two views per sample: rows [0, b) benign, rows [b, 2b) the
            // paired view, pseudo-anomalous half the time so the code learns
            // to ignore anomaly content.
            std::vector<ImageTensor> views;
            views.reserve(static_cast<size_t>(rows));
            for (int i = 0; i < b; ++i)
                views.push_back(aug.make_positive(healthy[order[start + i]].image,
                                                  AugMode::instance));
            for (int i = 0; i < b; ++i) {
                const AugMode mode = (has_anomaly_family && mode_rng.uniform() < 0.5)
                                         ? AugMode::class_invariant
                                         : AugMode::instance;
                views.push_back(aug.make_positive(healthy[order[start + i]].image, mode));
            }
            std::vector<const ImageTensor*> ptrs;
            ptrs.reserve(views.size());
            for (const auto& v : views) ptrs.push_back(&v);

            const Tensor<float> z_raw = enc.forward(batch_to_tensor(ptrs));
            Tensor<double> zd({rows, dim});
            for (size_t i = 0; i < z_raw.data.size(); ++i) zd.data[i] = z_raw.data[i];
            const Tensor<double> zn = l2_normalize_rows(zd);

            std::vector<Code> codes(static_cast<size_t>(rows), Code(dim));
            for (int r = 0; r < rows; ++r)
                for (int d = 0; d < dim; ++d) codes[r][d] = zn.at(r, d);

            // Every view is the anchor once; its counterpart is the positive
            // and all other in-batch views are negatives. Gradients are taken
            // in the normalized-code space and pulled back afterwards.
            Tensor<double> g_norm({rows, dim});
            double batch_loss = 0.0;
            std::vector<Code> negatives;
            std::vector<int> neg_rows;
            Code g_anchor, g_positive;
            std::vector<Code> g_negatives;
            for (int a = 0; a < rows; ++a) {
                const int p = (a + b) % rows;
                negatives.clear();
                neg_rows.clear();
                for (int r = 0; r < rows; ++r) {
                    if (r == a || r == p) continue;
                    negatives.push_back(codes[r]);
                    neg_rows.push_back(r);
                }
                batch_loss += epsilon_infonce_grad(codes[a], codes[p], negatives,
                                                   config.epsilon_margin, 1.0, &g_anchor,
                                                   &g_positive, &g_negatives);
                for (int d = 0; d < dim; ++d) {
                    g_norm.at(a, d) += g_anchor[d];
                    g_norm.at(p, d) += g_positive[d];
                }
                for (size_t j = 0; j < neg_rows.size(); ++j)
                    for (int d = 0; d < dim; ++d)
                        g_norm.at(neg_rows[j], d) += g_negatives[j][d];
            }
            const double inv_rows = 1.0 / static_cast<double>(rows);
            for (auto& v : g_norm.data) v *= inv_rows;

            const Tensor<double> gz_d = l2_normalize_rows_backward(zd, g_norm);
            Tensor<float> gz({rows, dim});
            for (size_t i = 0; i < gz_d.data.size(); ++i)
                gz.data[i] = static_cast<float>(gz_d.data[i]);

            zero_grads(params);
            enc.backward(gz);
            opt.step(params);
            ++result.steps;
            epoch_loss += batch_loss;
            epoch_anchors += rows;
        }
        if (epoch_anchors == 0)
            throw std::invalid_argument(
                "train_encoder: batch_size/dataset combination yields no usable batches");
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(epoch_anchors));
    }

    save_encoder_checkpoint(checkpoint_out, enc, config, result.steps);
    return result;
}

DiffusionTrainResult train_diffusion(const std::vector<LabeledImage>& healthy,
                                     const std::filesystem::path& encoder_ckpt,
                                     const DenoiserConfig& config,
                                     const TrainRunConfig& run,
                                     const std::filesystem::path& checkpoint_out) {
    config.validate();
    run.validate();
    check_training_set(healthy, "train_diffusion");

    EncoderCheckpoint enc_ckpt = load_encoder_checkpoint(encoder_ckpt);
    Encoder<float>& enc = *enc_ckpt.encoder;
    if (enc_ckpt.config.input_size != config.input_size ||
        enc_ckpt.config.in_channels != config.in_channels)
        throw std::invalid_argument(
            "train_diffusion: encoder and denoiser resolutions do not match");
    if (enc_ckpt.config.output_dim != config.cond_dim)
        throw std::invalid_argument(
            "train_diffusion: denoiser cond_dim does not match the encoder code width");
    check_geometry(healthy, config.input_size, config.in_channels, "train_diffusion");

    UNet<float> unet(config);
    {
        Rng init_rng(Rng::mix(run.seed, kInitStream));
        unet.init(init_rng);
    }

    const auto params = collect(&enc, &unet);
    nn::Adam<float> opt;
    opt.lr = run.learning_rate;

    const NoiseSchedule sched = run.schedule.build();
    const int n = static_cast<int>(healthy.size());
    const int size = config.input_size;
    const int chans = config.in_channels;

    // Frozen validation batch: the first images in manifest order, with fixed
    // timesteps spread across the training range and fixed noise fields.
    const int vb = std::min(run.batch_size, n);
    std::vector<int> val_ts(static_cast<size_t>(vb));
    std::vector<ImageTensor> val_eps_fields;
    std::vector<const ImageTensor*> val_x0_ptrs;
    for (int i = 0; i < vb; ++i) {
        const double frac = vb == 1 ? 0.5 : static_cast<double>(i) / (vb - 1);
        val_ts[static_cast<size_t>(i)] =
            run.t_train_min +
            static_cast<int>(std::lround(frac * (run.t_train_max - run.t_train_min)));
        val_eps_fields.push_back(simplex_field(
            size, size, chans,
            Rng::mix(Rng::mix(run.seed, kValNoiseStream), static_cast<uint64_t>(i))));
        val_x0_ptrs.push_back(&healthy[static_cast<size_t>(i)].image);
    }
    const Tensor<float> val_x0 = batch_to_tensor(val_x0_ptrs);
    Tensor<float> val_xt(val_x0.shape);
    Tensor<float> val_eps(val_x0.shape);
    {
        std::vector<const ImageTensor*> eps_ptrs;
        for (const auto& e : val_eps_fields) eps_ptrs.push_back(&e);
        val_eps = batch_to_tensor(eps_ptrs);
        for (int i = 0; i < vb; ++i) {
            const double a = std::sqrt(sched.alpha_cum(val_ts[static_cast<size_t>(i)]));
            const double b =
                std::sqrt(1.0 - sched.alpha_cum(val_ts[static_cast<size_t>(i)]));
            for (int c = 0; c < chans; ++c)
                for (int y = 0; y < size; ++y)
                    for (int x = 0; x < size; ++x)
                        val_xt.at(i, c, y, x) = static_cast<float>(
                            a * val_x0.at(i, c, y, x) + b * val_eps.at(i, c, y, x));
        }
    }
    auto val_loss = [&]() {
        const Tensor<float> z = enc.forward(val_x0);
        const Tensor<float> pred = unet.forward(val_xt, val_ts, z);
        Tensor<float> unused;
        return mse_and_grad(pred, val_eps, unused);
    };

    DiffusionTrainResult result;
    result.val_losses.push_back(val_loss());

    Rng order_rng(Rng::mix(run.seed, kOrderStream));
    Rng t_rng(Rng::mix(run.seed, kTimestepStream));
    const uint64_t noise_base = Rng::mix(run.seed, kNoiseStream);
    uint64_t noise_counter = 0;

    std::vector<int> order(healthy.size());
    for (int i = 0; i < n; ++i) order[i] = i;

    for (int epoch = 0; epoch < run.max_epochs; ++epoch) {
        order_rng.shuffle(order);
        double epoch_loss = 0.0;
        int64_t epoch_samples = 0;
        for (int start = 0; start < n; start += run.batch_size) {
            const int b = std::min(run.batch_size, n - start);

            std::vector<const ImageTensor*> x0_ptrs;
            for (int i = 0; i < b; ++i) x0_ptrs.push_back(&healthy[order[start + i]].image);
            const Tensor<float> x0 = batch_to_tensor(x0_ptrs);

            std::vector<int> ts(static_cast<size_t>(b));
            std::vector<ImageTensor> eps_fields;
            eps_fields.reserve(static_cast<size_t>(b));
            for (int i = 0; i < b; ++i) {
                ts[static_cast<size_t>(i)] =
                    run.t_train_min +
                    static_cast<int>(t_rng.randint(run.t_train_max - run.t_train_min + 1));
                eps_fields.push_back(
                    simplex_field(size, size, chans, Rng::mix(noise_base, noise_counter++)));
            }
            std::vector<const ImageTensor*> eps_ptrs;
            for (const auto& e : eps_fields) eps_ptrs.push_back(&e);
            const Tensor<float> eps = batch_to_tensor(eps_ptrs);

            Tensor<float> xt(x0.shape);
            for (int i = 0; i < b; ++i) {
                const double a = std::sqrt(sched.alpha_cum(ts[static_cast<size_t>(i)]));
                const double bb =
                    std::sqrt(1.0 - sched.alpha_cum(ts[static_cast<size_t>(i)]));
                for (int c = 0; c < chans; ++c)
                    for (int y = 0; y < size; ++y)
                        for (int x = 0; x < size; ++x)
                            xt.at(i, c, y, x) = static_cast<float>(
                                a * x0.at(i, c, y, x) + bb * eps.at(i, c, y, x));
            }

            const Tensor<float> z = enc.forward(x0);
            const Tensor<float> pred = unet.forward(xt, ts, z);
            Tensor<float> grad;
            const double loss = mse_and_grad(pred, eps, grad);

            zero_grads(params);
            Tensor<float> gz;
            unet.backward(grad, &gz);
            enc.backward(gz);  // joint fine-tuning through the conditioning path
            opt.step(params);
            ++result.steps;
            epoch_loss += loss * b;
            epoch_samples += b;
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(epoch_samples));
        result.val_losses.push_back(val_loss());
    }

    save_joint_checkpoint(checkpoint_out, enc, enc_ckpt.config, unet, config, run.schedule,
                          result.steps);
    return result;
}

ImageTensor reconstruct(const ImageTensor& x0, JointCheckpoint& ckpt, int t_infer,
                        uint64_t seed, bool zero_condition) {
    if (ckpt.trained_steps == 0)
        throw std::invalid_argument("reconstruct: untrained checkpoint");
    if (!ckpt.encoder || !ckpt.unet)
        throw std::invalid_argument("reconstruct: checkpoint is missing networks");
    if (x0.height != ckpt.encoder_config.input_size ||
        x0.width != ckpt.encoder_config.input_size ||
        x0.channels != ckpt.encoder_config.in_channels)
        throw std::invalid_argument("reconstruct: input does not match checkpoint geometry");
    if (!x0.all_finite())
        throw std::invalid_argument("reconstruct: input has non-finite values");

    const NoiseSchedule sched = ckpt.schedule.build();
    if (!sched.valid_t(t_infer))
        throw std::invalid_argument("reconstruct: t_infer outside the schedule");

    const ImageTensor eps = simplex_field(x0.height, x0.width, x0.channels, seed);
    const ImageTensor xt = forward_diffuse(x0, t_infer, eps, sched);

    Tensor<float> z = ckpt.encoder->forward(batch_to_tensor({&x0}));
    if (zero_condition) z.fill(0.0f);
    const Tensor<float> pred =
        ckpt.unet->forward(batch_to_tensor({&xt}), {t_infer}, z);
    const ImageTensor eps_pred = tensor_to_image(pred, 0, ValueRange::unbounded());

    // The closed-form estimate can overshoot the data range (it divides by
    // sqrt(alpha_cum)); clip so residuals stay commensurate with the input.
    ImageTensor x_hat = estimate_x0(xt, t_infer, eps_pred, sched);
    x_hat.range = x0.range;
    if (x_hat.range.bounded) x_hat.clip_to_range();
    return x_hat;
}

AnomalyMap anomaly_map(const ImageTensor& x0, const ImageTensor& x_hat,
                       const PostprocessConfig& post) {
    if (!x0.same_shape(x_hat)) throw std::invalid_argument("anomaly_map: shape mismatch");
    if (!x0.all_finite() || !x_hat.all_finite())
        throw std::invalid_argument("anomaly_map: non-finite values");

    AnomalyMap out;
    out.residuals = ImageTensor(x0.height, x0.width, 1, ValueRange::unbounded());
    for (int y = 0; y < x0.height; ++y) {
        for (int x = 0; x < x0.width; ++x) {
            double acc = 0.0;
            for (int c = 0; c < x0.channels; ++c)
                acc += std::abs(x0.at(y, x, c) - x_hat.at(y, x, c));
            out.residuals.at(y, x, 0) = acc / x0.channels;
        }
    }
    if (post.median_filter) out.residuals = median_filter(out.residuals, post.median_k);

    if (post.restrict_foreground) {
        // The mask derives from the first argument (the observed image);
        // residuals outside it are zeroed so downstream consumers see the
        // restricted map too.
        BinaryMask fg = foreground_mask(x0);
        double sum = 0.0;
        int64_t count = 0;
        for (int y = 0; y < x0.height; ++y) {
            for (int x = 0; x < x0.width; ++x) {
                if (fg.at(y, x)) {
                    sum += out.residuals.at(y, x, 0);
                    ++count;
                } else {
                    out.residuals.at(y, x, 0) = 0.0;
                }
            }
        }
        out.score = count > 0 ? sum / static_cast<double>(count) : 0.0;
        out.foreground = std::move(fg);
    } else {
        double sum = 0.0;
        for (double v : out.residuals.values) sum += v;
        out.score = sum / static_cast<double>(out.residuals.values.size());
    }
    return out;
}

ClassLabel classify_image(double score, double threshold) {
    if (!std::isfinite(threshold))
        throw std::invalid_argument("classify_image: threshold must be finite");
    if (!std::isfinite(score))
        throw std::invalid_argument("classify_image: score must be finite");
    return score > threshold ? ClassLabel::target : ClassLabel::background;
}

double score_percentile_threshold(std::vector<double> scores, double percentile) {
    if (scores.empty())
        throw std::invalid_argument("score_percentile_threshold: empty score sample");
    if (!(percentile >= 0.0 && percentile <= 1.0))
        throw std::invalid_argument("score_percentile_threshold: percentile outside [0, 1]");
    for (double s : scores)
        if (!std::isfinite(s))
            throw std::invalid_argument("score_percentile_threshold: non-finite score");
    std::sort(scores.begin(), scores.end());
    const double q = percentile * static_cast<double>(scores.size() - 1);
    const size_t lo = static_cast<size_t>(q);
    const size_t hi = std::min(lo + 1, scores.size() - 1);
    const double frac = q - static_cast<double>(lo);
    return scores[lo] + frac * (scores[hi] - scores[lo]);
}

}  // namespace uad
