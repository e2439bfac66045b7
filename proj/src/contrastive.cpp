#include "uad/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace uad {

namespace {

double dot(const Code& a, const Code& b) {
    if (a.size() != b.size()) throw std::invalid_argument("code dimension mismatch");
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

void require_normalized(const Code& c, const char* what) {
    double n = std::sqrt(dot(c, c));
    if (std::abs(n - 1.0) > 1e-3)
        throw std::invalid_argument(std::string("code not unit-normalized: ") + what);
}

}  // namespace

double epsilon_infonce(const Code& anchor, const Code& positive,
                       const std::vector<Code>& negatives, double epsilon,
                       double temperature) {
    return epsilon_infonce_grad(anchor, positive, negatives, epsilon, temperature,
                                nullptr, nullptr, nullptr);
}

double epsilon_infonce_grad(const Code& anchor, const Code& positive,
                            const std::vector<Code>& negatives, double epsilon,
                            double temperature, Code* g_anchor, Code* g_positive,
                            std::vector<Code>* g_negatives) {
    if (epsilon < 0.0) throw std::invalid_argument("epsilon must be >= 0");
    if (temperature <= 0.0) throw std::invalid_argument("temperature must be > 0");
    require_normalized(anchor, "anchor");
    require_normalized(positive, "positive");
    for (const auto& n : negatives) require_normalized(n, "negative");

    const double sp = dot(anchor, positive) / temperature;
    std::vector<double> sn(negatives.size());
    for (size_t j = 0; j < negatives.size(); ++j)
        sn[j] = dot(anchor, negatives[j]) / temperature;

    // log-sum-exp over {sp - eps, sn...} with max subtraction for stability
    double mx = sp - epsilon;
    for (double s : sn) mx = std::max(mx, s);
    double z = std::exp(sp - epsilon - mx);
    for (double s : sn) z += std::exp(s - mx);
    const double logz = mx + std::log(z);
    const double loss = -sp + logz;

    if (g_anchor || g_positive || g_negatives) {
        // dL/dsp = -1 + exp(sp - eps)/Z ; dL/dsn_j = exp(sn_j)/Z
        const double dsp = -1.0 + std::exp(sp - epsilon - logz);
        const size_t D = anchor.size();
        if (g_anchor) g_anchor->assign(D, 0.0);
        if (g_positive) g_positive->assign(D, 0.0);
        if (g_negatives) g_negatives->assign(negatives.size(), Code(D, 0.0));
        for (size_t d = 0; d < D; ++d) {
            if (g_anchor) (*g_anchor)[d] += dsp * positive[d] / temperature;
            if (g_positive) (*g_positive)[d] = dsp * anchor[d] / temperature;
        }
        for (size_t j = 0; j < negatives.size(); ++j) {
            const double dsn = std::exp(sn[j] - logz);
            for (size_t d = 0; d < D; ++d) {
                if (g_anchor) (*g_anchor)[d] += dsn * negatives[j][d] / temperature;
                if (g_negatives) (*g_negatives)[j][d] = dsn * anchor[d] / temperature;
            }
        }
    }
    return loss;
}

bool instance_margin_check(const Code& anchor, const Code& positive,
                           const std::vector<Code>& negatives, double epsilon) {
    double dp = 0.0;
    for (size_t d = 0; d < anchor.size(); ++d) {
        double diff = anchor[d] - positive[d];
        dp += diff * diff;
    }
    for (const auto& neg : negatives) {
        double dn = 0.0;
        for (size_t d = 0; d < anchor.size(); ++d) {
            double diff = anchor[d] - neg[d];
            dn += diff * diff;
        }
        if (dn - dp < epsilon) return false;
    }
    return true;
}

double knn_identity_eval(const std::vector<Code>& train_codes,
                         const std::vector<int>& train_ids,
                         const std::vector<Code>& test_codes,
                         const std::vector<int>& test_ids, int k) {
    if (k < 1) throw std::invalid_argument("knn: k must be >= 1");
    if (train_codes.empty() || test_codes.empty())
        throw std::invalid_argument("knn: empty code list");
    if (train_codes.size() != train_ids.size() || test_codes.size() != test_ids.size())
        throw std::invalid_argument("knn: codes/ids length mismatch");

    const int kk = std::min<int>(k, static_cast<int>(train_codes.size()));
    int correct = 0;
    for (size_t q = 0; q < test_codes.size(); ++q) {
        std::vector<std::pair<double, size_t>> sims;  // (-sim, index)
        sims.reserve(train_codes.size());
        for (size_t i = 0; i < train_codes.size(); ++i)
            sims.emplace_back(-dot(test_codes[q], train_codes[i]), i);
        std::partial_sort(sims.begin(), sims.begin() + kk, sims.end());

        // majority over the k nearest; ties resolved by earliest appearance
        std::vector<std::pair<int, int>> votes;  // (label, count) in first-seen order
        for (int i = 0; i < kk; ++i) {
            int label = train_ids[sims[i].second];
            auto it = std::find_if(votes.begin(), votes.end(),
                                   [&](const auto& v) { return v.first == label; });
            if (it == votes.end())
                votes.emplace_back(label, 1);
            else
                ++it->second;
        }
        int best = votes[0].first, best_count = votes[0].second;
        for (const auto& [label, count] : votes)
            if (count > best_count) {
                best = label;
                best_count = count;
            }
        if (best == test_ids[q]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test_codes.size());
}

double linear_probe_eval(const std::vector<Code>& train_codes,
                         const std::vector<int>& train_labels,
                         const std::vector<Code>& test_codes,
                         const std::vector<int>& test_labels) {
    if (train_codes.empty() || test_codes.empty())
        throw std::invalid_argument("probe: empty code list");
    if (train_codes.size() != train_labels.size() ||
        test_codes.size() != test_labels.size())
        throw std::invalid_argument("probe: codes/labels length mismatch");

    int num_classes = 0;
    for (int l : train_labels) num_classes = std::max(num_classes, l + 1);
    bool single = true;
    for (int l : train_labels) single = single && (l == train_labels[0]);
    if (single) throw std::invalid_argument("probe: single-class training set");

    const size_t D = train_codes[0].size();
    const size_t N = train_codes.size();

    // standardize features on the training set
    Code mean(D, 0.0), stdev(D, 0.0);
    for (const auto& c : train_codes)
        for (size_t d = 0; d < D; ++d) mean[d] += c[d];
    for (auto& m : mean) m /= static_cast<double>(N);
    for (const auto& c : train_codes)
        for (size_t d = 0; d < D; ++d) stdev[d] += (c[d] - mean[d]) * (c[d] - mean[d]);
    for (auto& s : stdev) s = std::sqrt(s / static_cast<double>(N)) + 1e-12;
    auto standardize = [&](const Code& c) {
        Code out(D);
        for (size_t d = 0; d < D; ++d) out[d] = (c[d] - mean[d]) / stdev[d];
        return out;
    };
    std::vector<Code> xtr(N);
    for (size_t i = 0; i < N; ++i) xtr[i] = standardize(train_codes[i]);

    // full-batch softmax regression, deterministic zero init
    std::vector<Code> w(num_classes, Code(D, 0.0));
    Code b(num_classes, 0.0);
    const double lr = 0.5;
    const int iters = 500;
    std::vector<double> logits(num_classes), probs(num_classes);
    std::vector<Code> gw(num_classes, Code(D, 0.0));
    Code gb(num_classes, 0.0);
    for (int it = 0; it < iters; ++it) {
        for (auto& g : gw) std::fill(g.begin(), g.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (size_t i = 0; i < N; ++i) {
            double mx = -1e300;
            for (int c = 0; c < num_classes; ++c) {
                logits[c] = dot(w[c], xtr[i]) + b[c];
                mx = std::max(mx, logits[c]);
            }
            double z = 0.0;
            for (int c = 0; c < num_classes; ++c) z += std::exp(logits[c] - mx);
            for (int c = 0; c < num_classes; ++c) {
                probs[c] = std::exp(logits[c] - mx) / z;
                double err = probs[c] - (train_labels[i] == c ? 1.0 : 0.0);
                for (size_t d = 0; d < D; ++d) gw[c][d] += err * xtr[i][d];
                gb[c] += err;
            }
        }
        for (int c = 0; c < num_classes; ++c) {
            for (size_t d = 0; d < D; ++d) w[c][d] -= lr * gw[c][d] / static_cast<double>(N);
            b[c] -= lr * gb[c] / static_cast<double>(N);
        }
    }

    int correct = 0;
    for (size_t i = 0; i < test_codes.size(); ++i) {
        Code x = standardize(test_codes[i]);
        int arg = 0;
        double best = -1e300;
        for (int c = 0; c < num_classes; ++c) {
            double l = dot(w[c], x) + b[c];
            if (l > best) {
                best = l;
                arg = c;
            }
        }
        if (arg == test_labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test_codes.size());
}

}  // namespace uad
