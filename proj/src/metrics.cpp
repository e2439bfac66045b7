#include "uad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace uad {

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

std::vector<double> gaussian_window() {
    std::vector<double> w(kSsimWindow);
    const int half = kSsimWindow / 2;
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - half;
        w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

// Separable Gaussian filter of one channel plane; only the valid region
// (where the full window fits) is ever read downstream.
std::vector<double> filter_plane(const ImageTensor& img, int c,
                                 const std::vector<double>& win, bool squared,
                                 const ImageTensor* other) {
    const int h = img.height, w = img.width, half = kSsimWindow / 2;
    std::vector<double> tmp(static_cast<size_t>(h) * w, 0.0);
    std::vector<double> out(static_cast<size_t>(h) * w, 0.0);
    // horizontal pass
    for (int y = 0; y < h; ++y) {
        for (int x = half; x < w - half; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) {
                double v = img.at(y, x - half + i, c);
                if (other != nullptr) v *= other->at(y, x - half + i, c);
                else if (squared) v *= v;
                acc += win[i] * v;
            }
            tmp[static_cast<size_t>(y) * w + x] = acc;
        }
    }
    // vertical pass
    for (int y = half; y < h - half; ++y) {
        for (int x = half; x < w - half; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kSsimWindow; ++i)
                acc += win[i] * tmp[static_cast<size_t>(y - half + i) * w + x];
            out[static_cast<size_t>(y) * w + x] = acc;
        }
    }
    return out;
}

void require_same_shape(const ImageTensor& x, const ImageTensor& y, const char* who) {
    if (!x.same_shape(y))
        throw std::invalid_argument(std::string(who) + ": image shapes differ");
}

double masked_reduce(const ImageTensor& a, const ImageTensor& b,
                     const BinaryMask* mask, bool squared, const char* who) {
    require_same_shape(a, b, who);
    if (mask != nullptr) {
        if (mask->height != a.height || mask->width != a.width)
            throw std::invalid_argument(std::string(who) + ": mask shape differs from images");
        if (mask->count() == 0)
            throw std::invalid_argument(std::string(who) + ": mask selects no pixels");
    }
    double acc = 0.0;
    int64_t n = 0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            if (mask != nullptr && !mask->at(y, x)) continue;
            for (int c = 0; c < a.channels; ++c) {
                const double d = a.at(y, x, c) - b.at(y, x, c);
                acc += squared ? d * d : std::abs(d);
                ++n;
            }
        }
    return acc / static_cast<double>(n);
}

// Sorted index order: descending score, original order breaking ties.
std::vector<size_t> order_by_score_desc(const std::vector<double>& scores) {
    std::vector<size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    return idx;
}

void check_score_labels(const std::vector<double>& scores,
                        const std::vector<uint8_t>& labels, const char* who) {
    if (scores.size() != labels.size())
        throw std::invalid_argument(std::string(who) + ": scores and labels differ in length");
    if (scores.empty())
        throw std::invalid_argument(std::string(who) + ": empty input");
    for (double s : scores)
        if (!std::isfinite(s))
            throw std::invalid_argument(std::string(who) + ": non-finite score");
    for (uint8_t l : labels)
        if (l > 1) throw std::invalid_argument(std::string(who) + ": labels must be 0 or 1");
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v, double mean) {
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

double ssim(const ImageTensor& x, const ImageTensor& y) {
    require_same_shape(x, y, "ssim");
    if (!x.range.bounded || !y.range.bounded)
        throw std::invalid_argument("ssim: requires a bounded (declared) dynamic range");
    if (x.range.lo != y.range.lo || x.range.hi != y.range.hi)
        throw std::invalid_argument("ssim: images declare different dynamic ranges");
    if (x.height < kSsimWindow || x.width < kSsimWindow)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");

    const double L = x.range.width();
    const double c1 = (0.01 * L) * (0.01 * L);
    const double c2 = (0.03 * L) * (0.03 * L);
    const auto win = gaussian_window();
    const int half = kSsimWindow / 2;
    const int w = x.width;

    double total = 0.0;
    int64_t count = 0;
    for (int c = 0; c < x.channels; ++c) {
        const auto ux = filter_plane(x, c, win, false, nullptr);
        const auto uy = filter_plane(y, c, win, false, nullptr);
        const auto uxx = filter_plane(x, c, win, true, nullptr);
        const auto uyy = filter_plane(y, c, win, true, nullptr);
        const auto uxy = filter_plane(x, c, win, false, &y);
        for (int yy = half; yy < x.height - half; ++yy)
            for (int xx = half; xx < w - half; ++xx) {
                const size_t i = static_cast<size_t>(yy) * w + xx;
                const double mx = ux[i], my = uy[i];
                const double vx = uxx[i] - mx * mx;
                const double vy = uyy[i] - my * my;
                const double cxy = uxy[i] - mx * my;
                const double num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
                const double den = (mx * mx + my * my + c1) * (vx + vy + c2);
                total += num / den;
                ++count;
            }
    }
    return total / static_cast<double>(count);
}

double mse(const ImageTensor& x, const ImageTensor& y, const BinaryMask* mask) {
    return masked_reduce(x, y, mask, true, "mse");
}

double l1(const ImageTensor& x, const ImageTensor& y, const BinaryMask* mask) {
    return masked_reduce(x, y, mask, false, "l1");
}

double dice(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw std::invalid_argument("dice: mask shapes differ");
    int64_t inter = 0, p = 0, g = 0;
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            const bool a = pred.at(y, x), b = gt.at(y, x);
            inter += (a && b);
            p += a;
            g += b;
        }
    if (p + g == 0) return 1.0;  // both empty: nothing missed, nothing spurious
    return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

std::pair<double, double> best_dice(const std::vector<ImageTensor>& maps,
                                    const std::vector<BinaryMask>& gts,
                                    int num_thresholds) {
    if (maps.empty()) throw std::invalid_argument("best_dice: empty dataset");
    if (maps.size() != gts.size())
        throw std::invalid_argument("best_dice: maps and masks differ in length");
    if (num_thresholds < 2) throw std::invalid_argument("best_dice: need at least 2 thresholds");
    size_t total = 0;
    for (size_t i = 0; i < maps.size(); ++i) {
        if (maps[i].channels != 1)
            throw std::invalid_argument("best_dice: anomaly maps must be single-channel");
        if (maps[i].height != gts[i].height || maps[i].width != gts[i].width)
            throw std::invalid_argument("best_dice: map and mask shapes differ");
        total += maps[i].values.size();
    }

    // Quantile-spaced candidate thresholds over the pooled residuals.
    std::vector<double> pooled;
    pooled.reserve(total);
    for (const auto& m : maps) pooled.insert(pooled.end(), m.values.begin(), m.values.end());
    std::sort(pooled.begin(), pooled.end());
    std::vector<double> cands;
    cands.reserve(num_thresholds);
    for (int i = 0; i < num_thresholds; ++i) {
        const size_t pos = static_cast<size_t>(
            std::llround(static_cast<double>(i) * static_cast<double>(pooled.size() - 1) /
                         static_cast<double>(num_thresholds - 1)));
        cands.push_back(pooled[pos]);
    }
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());

    int64_t gt_total = 0;
    for (const auto& g : gts) gt_total += g.count();

    double best = -1.0, best_thr = cands.front();
    for (double thr : cands) {
        int64_t inter = 0, pred = 0;
        for (size_t i = 0; i < maps.size(); ++i) {
            const auto& m = maps[i];
            const auto& g = gts[i];
            for (int y = 0; y < m.height; ++y)
                for (int x = 0; x < m.width; ++x) {
                    const bool on = m.at(y, x, 0) > thr;
                    pred += on;
                    inter += (on && g.at(y, x));
                }
        }
        const double d = (pred + gt_total == 0)
                             ? 1.0
                             : 2.0 * static_cast<double>(inter) /
                                   static_cast<double>(pred + gt_total);
        if (d > best) {  // strict >: ties resolve to the lowest threshold
            best = d;
            best_thr = thr;
        }
    }
    return {best, best_thr};
}

double auprc(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
    check_score_labels(scores, labels, "auprc");
    const int64_t npos = std::count(labels.begin(), labels.end(), uint8_t{1});
    if (npos == 0)
        throw std::invalid_argument("auprc: undefined without any positive labels");

    const auto idx = order_by_score_desc(scores);
    double area = 0.0;
    double prev_r = 0.0, prev_p = 1.0;  // anchor: zero recall at full precision
    int64_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < idx.size()) {
        // consume one tie group as a single threshold event
        size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            if (labels[idx[j]]) ++tp;
            else ++fp;
            ++j;
        }
        const double r = static_cast<double>(tp) / static_cast<double>(npos);
        const double p = static_cast<double>(tp) / static_cast<double>(tp + fp);
        if (r > prev_r) {  // points only where recall advances
            area += (r - prev_r) * (p + prev_p) / 2.0;
            prev_r = r;
            prev_p = p;
        }
        i = j;
    }
    return area;
}

double roc_auc(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
    check_score_labels(scores, labels, "roc_auc");
    const int64_t npos = std::count(labels.begin(), labels.end(), uint8_t{1});
    const int64_t nneg = static_cast<int64_t>(labels.size()) - npos;
    if (npos == 0 || nneg == 0)
        throw std::invalid_argument("roc_auc: needs both a positive and a negative label");

    // Average ranks over tie groups, then the Mann-Whitney statistic.
    std::vector<size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    double rank_pos_sum = 0.0;
    size_t i = 0;
    while (i < idx.size()) {
        size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (size_t k = i; k < j; ++k)
            if (labels[idx[k]]) rank_pos_sum += avg_rank;
        i = j;
    }
    const double u = rank_pos_sum - static_cast<double>(npos) * (npos + 1) / 2.0;
    return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

// --- report ------------------------------------------------------------------

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void MetricsReport::compute_aggregates() {
    if (records.empty()) throw std::invalid_argument("MetricsReport: no records");
    std::vector<double> s, m, a, sc;
    std::vector<uint8_t> labels;
    for (const auto& r : records) {
        s.push_back(r.ssim);
        m.push_back(r.mse);
        a.push_back(r.l1);
        sc.push_back(r.score);
        labels.push_back(static_cast<uint8_t>(r.label));
    }
    ssim_mean = mean_of(s);
    ssim_std = std_of(s, ssim_mean);
    mse_mean = mean_of(m);
    mse_std = std_of(m, mse_mean);
    l1_mean = mean_of(a);
    l1_std = std_of(a, l1_mean);
    score_mean = mean_of(sc);
    score_std = std_of(sc, score_mean);
    const bool has_pos = std::count(labels.begin(), labels.end(), uint8_t{1}) > 0;
    const bool has_neg = std::count(labels.begin(), labels.end(), uint8_t{0}) > 0;
    if (has_pos && has_neg) image_roc_auc = roc_auc(sc, labels);
}

std::string MetricsReport::to_csv() const {
    std::string out = "id,ssim,mse,l1,score,label\n";
    for (const auto& r : records) {
        out += r.id;
        out += ',';
        out += format_double(r.ssim);
        out += ',';
        out += format_double(r.mse);
        out += ',';
        out += format_double(r.l1);
        out += ',';
        out += format_double(r.score);
        out += ',';
        out += std::to_string(r.label);
        out += '\n';
    }
    return out;
}

std::string MetricsReport::to_summary_json() const {
    nlohmann::ordered_json j;
    j["schema_version"] = schema_version;
    j["num_images"] = records.size();
    int64_t npos = 0;
    for (const auto& r : records) npos += (r.label == 1);
    j["num_target"] = npos;
    j["num_background"] = static_cast<int64_t>(records.size()) - npos;
    j["ssim"] = {{"mean", ssim_mean}, {"std", ssim_std}};
    j["mse"] = {{"mean", mse_mean}, {"std", mse_std}};
    j["l1"] = {{"mean", l1_mean}, {"std", l1_std}};
    j["score"] = {{"mean", score_mean}, {"std", score_std}};
    j["lpips"] = nullptr;
    j["lpips_note"] = "requires a pretrained perceptual backbone; not computed";
    if (dice_best) j["dice_best"] = *dice_best;
    else j["dice_best"] = nullptr;
    if (dice_best_threshold) j["dice_best_threshold"] = *dice_best_threshold;
    else j["dice_best_threshold"] = nullptr;
    if (pixel_auprc) j["pixel_auprc"] = *pixel_auprc;
    else j["pixel_auprc"] = nullptr;
    if (image_roc_auc) j["image_roc_auc"] = *image_roc_auc;
    else j["image_roc_auc"] = nullptr;
    return j.dump(2) + "\n";
}

}  // namespace uad
