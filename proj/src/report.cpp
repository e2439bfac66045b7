#include "uad/report.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "uad/metrics.hpp"

namespace uad {

namespace {

// Plot geometry shared by the SVG writers.
constexpr int kSvgW = 480;
constexpr int kSvgH = 360;
constexpr double kLeft = 52.0, kRight = 464.0, kTop = 24.0, kBottom = 312.0;

double px(double unit_x) { return kLeft + unit_x * (kRight - kLeft); }
double py(double unit_y) { return kBottom - unit_y * (kBottom - kTop); }

void svg_open(std::ostringstream& out) {
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSvgW
        << "\" height=\"" << kSvgH << "\" viewBox=\"0 0 " << kSvgW << ' ' << kSvgH
        << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

// Axes with unit-interval ticks every 0.25 on both dimensions.
void svg_axes(std::ostringstream& out, const std::string& x_label,
              const std::string& y_label) {
    out << "<g stroke=\"#333\" stroke-width=\"1\" fill=\"none\">"
        << "<path d=\"M" << format_double(kLeft) << ' ' << format_double(kTop) << " L"
        << format_double(kLeft) << ' ' << format_double(kBottom) << " L"
        << format_double(kRight) << ' ' << format_double(kBottom) << "\"/></g>\n";
    out << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
    for (int i = 0; i <= 4; ++i) {
        const double u = i * 0.25;
        out << "<text x=\"" << format_double(px(u)) << "\" y=\""
            << format_double(kBottom + 16.0) << "\" text-anchor=\"middle\">"
            << format_double(u) << "</text>\n";
        out << "<text x=\"" << format_double(kLeft - 8.0) << "\" y=\""
            << format_double(py(u) + 4.0) << "\" text-anchor=\"end\">" << format_double(u)
            << "</text>\n";
    }
    out << "<text x=\"" << format_double((kLeft + kRight) / 2) << "\" y=\""
        << format_double(kBottom + 34.0) << "\" text-anchor=\"middle\">" << x_label
        << "</text>\n";
    out << "<text x=\"14\" y=\"" << format_double((kTop + kBottom) / 2)
        << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
        << format_double((kTop + kBottom) / 2) << ")\">" << y_label << "</text>\n</g>\n";
}

void svg_polyline(std::ostringstream& out, const std::vector<std::pair<double, double>>& pts,
                  const char* color) {
    out << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < pts.size(); ++i) {
        if (i) out << ' ';
        out << format_double(px(pts[i].first)) << ',' << format_double(py(pts[i].second));
    }
    out << "\"/>\n";
}

void svg_title(std::ostringstream& out, const std::string& text) {
    out << "<text x=\"" << format_double((kLeft + kRight) / 2)
        << "\" y=\"14\" font-family=\"sans-serif\" font-size=\"13\" fill=\"#111\" "
           "text-anchor=\"middle\">"
        << text << "</text>\n";
}

void check_curve_inputs(const std::vector<double>& scores,
                        const std::vector<uint8_t>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::invalid_argument("plot: scores and labels must be same-length and non-empty");
    for (double s : scores)
        if (!std::isfinite(s)) throw std::invalid_argument("plot: non-finite score");
}

bool both_classes(const std::vector<uint8_t>& labels) {
    bool pos = false, neg = false;
    for (uint8_t l : labels) (l ? pos : neg) = true;
    return pos && neg;
}

std::string single_class_svg(const std::string& title) {
    std::ostringstream out;
    svg_open(out);
    svg_title(out, title);
    out << "<text x=\"" << format_double((kLeft + kRight) / 2) << "\" y=\""
        << format_double((kTop + kBottom) / 2)
        << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#666\" "
           "text-anchor=\"middle\">curve undefined: only one class present</text>\n"
        << "</svg>\n";
    return out.str();
}

// Indices sorted by descending score, then grouped at tied values; the
// callback receives cumulative (tp, fp) after each group.
template <typename F>
void sweep_score_groups(const std::vector<double>& scores,
                        const std::vector<uint8_t>& labels, F&& emit) {
    std::vector<size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    int64_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < idx.size()) {
        size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            if (labels[idx[j]]) ++tp; else ++fp;
            ++j;
        }
        emit(tp, fp);
        i = j;
    }
}

}  // namespace

ImageTensor tile_grid(const std::vector<const ImageTensor*>& tiles, int cols) {
    if (tiles.empty()) throw std::invalid_argument("tile_grid: no tiles");
    if (cols < 1) throw std::invalid_argument("tile_grid: cols must be >= 1");
    const ImageTensor& first = *tiles.front();
    if (first.channels != 1)
        throw std::invalid_argument("tile_grid: tiles must be single-channel");
    for (const ImageTensor* t : tiles)
        if (!t->same_shape(first)) throw std::invalid_argument("tile_grid: mixed tile shapes");

    const int n = static_cast<int>(tiles.size());
    const int rows = (n + cols - 1) / cols;
    const int th = first.height, tw = first.width;
    ImageTensor grid(rows * th + (rows - 1), cols * tw + (cols - 1), 1,
                     ValueRange::unit());

    // one-pixel white separators between tiles
    for (int r = 1; r < rows; ++r)
        for (int x = 0; x < grid.width; ++x) grid.at(r * (th + 1) - 1, x, 0) = 1.0;
    for (int c = 1; c < cols; ++c)
        for (int y = 0; y < grid.height; ++y) grid.at(y, c * (tw + 1) - 1, 0) = 1.0;

    for (int i = 0; i < n; ++i) {
        const int r = i / cols, c = i % cols;
        const int oy = r * (th + 1), ox = c * (tw + 1);
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x)
                grid.at(oy + y, ox + x, 0) = std::clamp(tiles[i]->at(y, x, 0), 0.0, 1.0);
    }
    return grid;
}

RgbImage box_overlay(const ImageTensor& base, const std::vector<BBox>& predictions,
                     const std::vector<BBox>& ground_truth) {
    if (base.channels != 1)
        throw std::invalid_argument("box_overlay: base must be single-channel");
    RgbImage out(base.height, base.width);
    for (int y = 0; y < base.height; ++y) {
        for (int x = 0; x < base.width; ++x) {
            const auto g = static_cast<uint8_t>(
                std::lround(255.0 * std::clamp(base.at(y, x, 0), 0.0, 1.0)));
            out.at(y, x, 0) = out.at(y, x, 1) = out.at(y, x, 2) = g;
        }
    }
    auto draw = [&](const BBox& b, uint8_t r, uint8_t g, uint8_t bl) {
        if (!b.valid() || b.x_min < 0 || b.y_min < 0 || b.x_max > base.width ||
            b.y_max > base.height)
            throw std::invalid_argument("box_overlay: box outside the image");
        auto set = [&](int y, int x) {
            out.at(y, x, 0) = r;
            out.at(y, x, 1) = g;
            out.at(y, x, 2) = bl;
        };
        for (int x = b.x_min; x < b.x_max; ++x) {
            set(b.y_min, x);
            set(b.y_max - 1, x);
        }
        for (int y = b.y_min; y < b.y_max; ++y) {
            set(y, b.x_min);
            set(y, b.x_max - 1);
        }
    };
    // ground truth first so predictions stay visible where they overlap
    for (const BBox& b : ground_truth) draw(b, 60, 180, 75);
    for (const BBox& b : predictions) draw(b, 220, 50, 40);
    return out;
}

std::string roc_svg(const std::vector<double>& scores,
                    const std::vector<uint8_t>& labels) {
    check_curve_inputs(scores, labels);
    if (!both_classes(labels)) return single_class_svg("ROC");

    int64_t pos = 0;
    for (uint8_t l : labels) pos += l ? 1 : 0;
    const int64_t neg = static_cast<int64_t>(labels.size()) - pos;

    std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
    sweep_score_groups(scores, labels, [&](int64_t tp, int64_t fp) {
        pts.emplace_back(static_cast<double>(fp) / static_cast<double>(neg),
                         static_cast<double>(tp) / static_cast<double>(pos));
    });

    std::ostringstream out;
    svg_open(out);
    svg_title(out, "ROC (AUC = " + format_double(roc_auc(scores, labels)) + ")");
    svg_axes(out, "false positive rate", "true positive rate");
    out << "<line x1=\"" << format_double(px(0)) << "\" y1=\"" << format_double(py(0))
        << "\" x2=\"" << format_double(px(1)) << "\" y2=\"" << format_double(py(1))
        << "\" stroke=\"#bbb\" stroke-dasharray=\"4 3\"/>\n";
    svg_polyline(out, pts, "#2166ac");
    out << "</svg>\n";
    return out.str();
}

std::string pr_svg(const std::vector<double>& scores,
                   const std::vector<uint8_t>& labels) {
    check_curve_inputs(scores, labels);
    if (!both_classes(labels)) return single_class_svg("Precision-Recall");

    int64_t pos = 0;
    for (uint8_t l : labels) pos += l ? 1 : 0;

    // Same convention as the AUPRC metric: a point wherever recall advances,
    // anchored at (0, 1).
    std::vector<std::pair<double, double>> pts{{0.0, 1.0}};
    int64_t last_tp = 0;
    sweep_score_groups(scores, labels, [&](int64_t tp, int64_t fp) {
        if (tp > last_tp) {
            pts.emplace_back(static_cast<double>(tp) / static_cast<double>(pos),
                             static_cast<double>(tp) / static_cast<double>(tp + fp));
            last_tp = tp;
        }
    });

    std::ostringstream out;
    svg_open(out);
    svg_title(out, "Precision-Recall (AUPRC = " + format_double(auprc(scores, labels)) + ")");
    svg_axes(out, "recall", "precision");
    svg_polyline(out, pts, "#b2182b");
    out << "</svg>\n";
    return out.str();
}

std::string score_histogram_svg(const std::vector<double>& scores,
                                const std::vector<uint8_t>& labels, int bins) {
    check_curve_inputs(scores, labels);
    if (bins < 1) throw std::invalid_argument("plot: bins must be >= 1");

    const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
    const double lo = *lo_it;
    const double span = std::max(*hi_it - lo, 1e-300);  // degenerate: all in bin 0
    std::vector<int64_t> bg(static_cast<size_t>(bins), 0), tg(static_cast<size_t>(bins), 0);
    for (size_t i = 0; i < scores.size(); ++i) {
        int b = static_cast<int>((scores[i] - lo) / span * bins);
        b = std::clamp(b, 0, bins - 1);
        (labels[i] ? tg : bg)[static_cast<size_t>(b)] += 1;
    }
    int64_t peak = 1;
    for (int b = 0; b < bins; ++b)
        peak = std::max({peak, bg[static_cast<size_t>(b)], tg[static_cast<size_t>(b)]});

    std::ostringstream out;
    svg_open(out);
    svg_title(out, "Anomaly-score distribution");
    const double bin_w = (kRight - kLeft) / bins;
    auto bars = [&](const std::vector<int64_t>& counts, double offset, const char* color) {
        for (int b = 0; b < bins; ++b) {
            const int64_t c = counts[static_cast<size_t>(b)];
            if (c == 0) continue;
            const double h = (kBottom - kTop) * static_cast<double>(c) / peak;
            out << "<rect x=\"" << format_double(kLeft + b * bin_w + offset * bin_w)
                << "\" y=\"" << format_double(kBottom - h) << "\" width=\""
                << format_double(bin_w * 0.45) << "\" height=\"" << format_double(h)
                << "\" fill=\"" << color << "\"/>\n";
        }
    };
    bars(bg, 0.05, "#4878a8");
    bars(tg, 0.50, "#d4703a");
    out << "<line x1=\"" << format_double(kLeft) << "\" y1=\"" << format_double(kBottom)
        << "\" x2=\"" << format_double(kRight) << "\" y2=\"" << format_double(kBottom)
        << "\" stroke=\"#333\"/>\n";
    out << "<g font-family=\"sans-serif\" font-size=\"11\">"
        << "<rect x=\"60\" y=\"30\" width=\"10\" height=\"10\" fill=\"#4878a8\"/>"
        << "<text x=\"74\" y=\"39\" fill=\"#333\">background</text>"
        << "<rect x=\"150\" y=\"30\" width=\"10\" height=\"10\" fill=\"#d4703a\"/>"
        << "<text x=\"164\" y=\"39\" fill=\"#333\">target</text></g>\n";
    out << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">"
        << "<text x=\"" << format_double(kLeft) << "\" y=\""
        << format_double(kBottom + 16.0) << "\" text-anchor=\"middle\">"
        << format_double(lo) << "</text>"
        << "<text x=\"" << format_double(kRight) << "\" y=\""
        << format_double(kBottom + 16.0) << "\" text-anchor=\"middle\">"
        << format_double(*hi_it) << "</text>"
        << "<text x=\"" << format_double((kLeft + kRight) / 2) << "\" y=\""
        << format_double(kBottom + 34.0) << "\" text-anchor=\"middle\">mean residual "
           "score</text></g>\n";
    out << "</svg>\n";
    return out.str();
}

}  // namespace uad
