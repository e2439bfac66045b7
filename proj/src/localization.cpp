#include "uad/localization.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "uad/metrics.hpp"  // format_double

namespace uad {

double iou(const BBox& a, const BBox& b) {
    if (!a.valid() || !b.valid()) throw std::invalid_argument("iou: degenerate box");
    const int ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const int iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (ix <= 0 || iy <= 0) return 0.0;
    const int64_t inter = static_cast<int64_t>(ix) * iy;
    const int64_t uni = a.area() + b.area() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<BBox> extract_bboxes(const ImageTensor& residual, double threshold, int top_n) {
    if (residual.channels != 1)
        throw std::invalid_argument("extract_bboxes: residual map must be single-channel");
    if (!std::isfinite(threshold))
        throw std::invalid_argument("extract_bboxes: non-finite threshold");
    if (top_n < 0) throw std::invalid_argument("extract_bboxes: negative top_n");

    const int h = residual.height, w = residual.width;
    std::vector<uint8_t> on(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            on[static_cast<size_t>(y) * w + x] = residual.at(y, x, 0) > threshold;

    // 8-connected component sweep with an explicit stack.
    std::vector<uint8_t> seen(on.size(), 0);
    std::vector<BBox> boxes;
    std::vector<std::pair<int, int>> stack;
    for (int sy = 0; sy < h; ++sy)
        for (int sx = 0; sx < w; ++sx) {
            const size_t si = static_cast<size_t>(sy) * w + sx;
            if (!on[si] || seen[si]) continue;
            BBox box{sx, sy, sx + 1, sy + 1, 0.0};
            seen[si] = 1;
            stack.assign(1, {sy, sx});
            while (!stack.empty()) {
                const auto [cy, cx] = stack.back();
                stack.pop_back();
                box.x_min = std::min(box.x_min, cx);
                box.y_min = std::min(box.y_min, cy);
                box.x_max = std::max(box.x_max, cx + 1);
                box.y_max = std::max(box.y_max, cy + 1);
                box.score += residual.at(cy, cx, 0);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = cy + dy, nx = cx + dx;
                        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                        const size_t ni = static_cast<size_t>(ny) * w + nx;
                        if (on[ni] && !seen[ni]) {
                            seen[ni] = 1;
                            stack.push_back({ny, nx});
                        }
                    }
            }
            boxes.push_back(box);
        }

    std::sort(boxes.begin(), boxes.end(), [](const BBox& a, const BBox& b) {
        if (a.area() != b.area()) return a.area() > b.area();
        if (a.y_min != b.y_min) return a.y_min < b.y_min;
        return a.x_min < b.x_min;
    });
    if (static_cast<int>(boxes.size()) > top_n) boxes.resize(top_n);
    return boxes;
}

MatchResult match_detections(const std::vector<BBox>& preds, const std::vector<BBox>& gts,
                             double iou_threshold) {
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
        throw std::invalid_argument("match_detections: iou threshold must be in (0, 1]");
    std::vector<size_t> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return preds[a].score > preds[b].score; });

    MatchResult res;
    std::vector<uint8_t> taken(gts.size(), 0);
    for (size_t pi : order) {
        int best_gt = -1;
        double best_iou = 0.0;
        for (size_t gi = 0; gi < gts.size(); ++gi) {
            if (taken[gi]) continue;
            const double v = iou(preds[pi], gts[gi]);
            if (v > best_iou) {  // strict >: IoU ties go to the lowest gt index
                best_iou = v;
                best_gt = static_cast<int>(gi);
            }
        }
        if (best_gt >= 0 && best_iou >= iou_threshold) {
            taken[best_gt] = 1;
            ++res.tp;
            res.pairs.emplace_back(static_cast<int>(pi), best_gt);
        } else {
            ++res.fp;
        }
    }
    return res;
}

namespace {

int64_t total_gts(const std::vector<DetectionSet>& dataset) {
    int64_t n = 0;
    for (const auto& d : dataset) n += static_cast<int64_t>(d.gts.size());
    return n;
}

}  // namespace

double average_precision(const std::vector<DetectionSet>& dataset, double iou_threshold) {
    const int64_t npos = total_gts(dataset);
    if (npos == 0)
        throw std::invalid_argument("average_precision: no ground-truth boxes in dataset");

    // Per-image greedy matching decides which pooled predictions are hits.
    struct Entry {
        double score;
        uint8_t hit;
    };
    std::vector<Entry> entries;
    for (const auto& d : dataset) {
        const auto m = match_detections(d.preds, d.gts, iou_threshold);
        std::vector<uint8_t> hit(d.preds.size(), 0);
        for (const auto& [pi, gi] : m.pairs) hit[static_cast<size_t>(pi)] = 1;
        for (size_t i = 0; i < d.preds.size(); ++i)
            entries.push_back({d.preds[i].score, hit[i]});
    }
    if (entries.empty()) return 0.0;
    std::stable_sort(entries.begin(), entries.end(),
                     [](const Entry& a, const Entry& b) { return a.score > b.score; });

    // Precision-recall staircase with the all-point precision envelope.
    const size_t n = entries.size();
    std::vector<double> prec(n), rec(n);
    int64_t tp = 0;
    for (size_t i = 0; i < n; ++i) {
        tp += entries[i].hit;
        prec[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
        rec[i] = static_cast<double>(tp) / static_cast<double>(npos);
    }
    for (size_t i = n - 1; i > 0; --i) prec[i - 1] = std::max(prec[i - 1], prec[i]);
    double ap = 0.0, prev_r = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (rec[i] > prev_r) {
            ap += (rec[i] - prev_r) * prec[i];
            prev_r = rec[i];
        }
    }
    return ap;
}

double map_range(const std::vector<DetectionSet>& dataset) {
    double acc = 0.0;
    for (int k = 0; k < 10; ++k) acc += average_precision(dataset, (50 + 5 * k) / 100.0);
    return acc / 10.0;
}

double acc50(const std::vector<DetectionSet>& dataset) {
    const int64_t npos = total_gts(dataset);
    if (npos == 0) throw std::invalid_argument("acc50: no ground-truth boxes in dataset");
    const auto [tp, fp] = count_tp_fp(dataset, 0.5);
    (void)fp;
    return static_cast<double>(tp) / static_cast<double>(npos);
}

std::pair<int, int> count_tp_fp(const std::vector<DetectionSet>& dataset, double iou_threshold) {
    int tp = 0, fp = 0;
    for (const auto& d : dataset) {
        const auto m = match_detections(d.preds, d.gts, iou_threshold);
        tp += m.tp;
        fp += m.fp;
    }
    return {tp, fp};
}

// --- record I/O ----------------------------------------------------------------

std::string boxes_to_records(const std::vector<std::pair<std::string, BBox>>& rows) {
    std::string out;
    for (const auto& [id, b] : rows) {
        if (id.empty() || id.find_first_of(" \t\n") != std::string::npos)
            throw std::invalid_argument("box records: image id must be non-empty without spaces");
        out += id;
        out += ' ';
        out += std::to_string(b.x_min);
        out += ' ';
        out += std::to_string(b.y_min);
        out += ' ';
        out += std::to_string(b.x_max);
        out += ' ';
        out += std::to_string(b.y_max);
        out += ' ';
        out += format_double(b.score);
        out += '\n';
    }
    return out;
}

std::vector<std::pair<std::string, BBox>> boxes_from_records(const std::string& text) {
    std::vector<std::pair<std::string, BBox>> rows;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id;
        BBox b;
        if (!(ls >> id >> b.x_min >> b.y_min >> b.x_max >> b.y_max >> b.score)) {
            throw std::runtime_error("box records: malformed line " + std::to_string(lineno));
        }
        std::string extra;
        if (ls >> extra)
            throw std::runtime_error("box records: trailing fields on line " +
                                     std::to_string(lineno));
        if (!b.valid())
            throw std::runtime_error("box records: degenerate box on line " +
                                     std::to_string(lineno));
        rows.emplace_back(std::move(id), b);
    }
    return rows;
}

void write_box_records(const std::string& path,
                       const std::vector<std::pair<std::string, BBox>>& rows) {
    atomic_write_bytes(path, boxes_to_records(rows));
}

std::vector<std::pair<std::string, BBox>> read_box_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open box records: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return boxes_from_records(ss.str());
}

}  // namespace uad
