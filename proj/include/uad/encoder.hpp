#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "uad/nn/ops.hpp"

namespace uad {

struct EncoderConfig {
    std::string backbone = "small";  // "tiny" | "small" | "deep"
    int in_channels = 1;
    int input_size = 64;
    int output_dim = 128;
    double epsilon_margin = 0.5;
    double learning_rate = 1e-4;
    int batch_size = 32;
    int epochs = 30;

    void validate() const {
        if (output_dim < 1) throw std::invalid_argument("encoder: output_dim must be >= 1");
        if (epsilon_margin < 0.0)
            throw std::invalid_argument("encoder: epsilon_margin must be >= 0");
        if (backbone != "tiny" && backbone != "small" && backbone != "deep")
            throw std::invalid_argument("encoder: unknown backbone '" + backbone + "'");
        if (in_channels < 1 || input_size < 8)
            throw std::invalid_argument("encoder: bad input geometry");
    }
    std::vector<int> stage_channels() const {
        if (backbone == "tiny") return {4, 8};
        if (backbone == "small") return {16, 32, 64, 128};
        return {32, 64, 128, 256};  // "deep"
    }
    int blocks_per_stage() const { return backbone == "deep" ? 2 : 1; }
};

namespace nn {

inline int norm_groups(int channels) { return channels % 8 == 0 ? 8 : channels; }

// Pre-activation residual block; downsampling blocks carry the stride on the
// first conv and a matching 1x1 projection skip.
template <typename S>
struct EncBlock {
    GroupNorm<S> n1;
    SiLU<S> a1;
    Conv2d<S> c1;
    GroupNorm<S> n2;
    SiLU<S> a2;
    Conv2d<S> c2;
    Conv2d<S> skip;
    bool has_skip = false;

    EncBlock() = default;
    EncBlock(int cin, int cout, int stride)
        : n1(cin, norm_groups(cin)), c1(cin, cout, 3, stride, 1),
          n2(cout, norm_groups(cout)), c2(cout, cout, 3, 1, 1),
          has_skip(cin != cout || stride != 1) {
        if (has_skip) skip = Conv2d<S>(cin, cout, 1, stride, 0);
    }

    void init(Rng& rng) {
        c1.init(rng);
        c2.init(rng);
        if (has_skip) skip.init(rng);
    }

    Tensor<S> forward(const Tensor<S>& x) {
        auto h = c1.forward(a1.forward(n1.forward(x)));
        h = c2.forward(a2.forward(n2.forward(h)));
        auto sk = has_skip ? skip.forward(x) : x;
        h += sk;
        return h;
    }

    Tensor<S> backward(const Tensor<S>& gy) {
        auto gh = n2.backward(a2.backward(c2.backward(gy)));
        auto gx = n1.backward(a1.backward(c1.backward(gh)));
        if (has_skip) {
            gx += skip.backward(gy);
        } else {
            gx += gy;
        }
        return gx;
    }

    void params(const std::string& prefix, std::vector<NamedParam<S>>& out) {
        n1.params(prefix + ".n1", out);
        c1.params(prefix + ".c1", out);
        n2.params(prefix + ".n2", out);
        c2.params(prefix + ".c2", out);
        if (has_skip) skip.params(prefix + ".skip", out);
    }
};

}  // namespace nn

// Row-wise L2 normalization of [N, D] codes, with the matching gradient
// pullback (g mapped through the unit-sphere projection).
template <typename S>
Tensor<S> l2_normalize_rows(const Tensor<S>& z, double eps = 1e-12) {
    Tensor<S> out = z;
    const int N = z.dim(0), D = z.dim(1);
    for (int n = 0; n < N; ++n) {
        double ss = 0.0;
        for (int d = 0; d < D; ++d) ss += static_cast<double>(z.at(n, d)) * z.at(n, d);
        const double inv = 1.0 / std::sqrt(std::max(ss, eps));
        for (int d = 0; d < D; ++d) out.at(n, d) = static_cast<S>(z.at(n, d) * inv);
    }
    return out;
}

template <typename S>
Tensor<S> l2_normalize_rows_backward(const Tensor<S>& z_raw, const Tensor<S>& g_norm,
                                     double eps = 1e-12) {
    Tensor<S> gz(z_raw.shape);
    const int N = z_raw.dim(0), D = z_raw.dim(1);
    for (int n = 0; n < N; ++n) {
        double ss = 0.0, zg = 0.0;
        for (int d = 0; d < D; ++d) {
            ss += static_cast<double>(z_raw.at(n, d)) * z_raw.at(n, d);
            zg += static_cast<double>(z_raw.at(n, d)) * g_norm.at(n, d);
        }
        ss = std::max(ss, eps);
        const double inv = 1.0 / std::sqrt(ss);
        for (int d = 0; d < D; ++d)
            gz.at(n, d) =
                static_cast<S>(inv * (g_norm.at(n, d) - z_raw.at(n, d) * zg / ss));
    }
    return gz;
}

// Residual convolutional encoder: stem conv, downsampling residual stages,
// global average pool, and a fully connected layer to the code dimension.
// forward() returns the pre-normalization embedding; contrastive similarity
// uses l2_normalize_rows on top of it.
template <typename S>
struct Encoder {
    EncoderConfig cfg;
    nn::Conv2d<S> stem;
    std::vector<nn::EncBlock<S>> blocks;
    nn::GroupNorm<S> head_norm;
    nn::SiLU<S> head_act;
    nn::GlobalAvgPool<S> gap;
    nn::Linear<S> fc;

    explicit Encoder(const EncoderConfig& c) : cfg(c) {
        cfg.validate();
        const auto chans = cfg.stage_channels();
        const int down = static_cast<int>(chans.size()) - 1;
        if (cfg.input_size % (1 << down) != 0)
            throw std::invalid_argument("encoder: input_size must be divisible by " +
                                        std::to_string(1 << down));
        stem = nn::Conv2d<S>(cfg.in_channels, chans[0], 3, 1, 1);
        int prev = chans[0];
        for (size_t s = 0; s < chans.size(); ++s) {
            blocks.emplace_back(prev, chans[s], s == 0 ? 1 : 2);
            prev = chans[s];
            for (int b = 1; b < cfg.blocks_per_stage(); ++b)
                blocks.emplace_back(prev, prev, 1);
        }
        head_norm = nn::GroupNorm<S>(prev, nn::norm_groups(prev));
        fc = nn::Linear<S>(prev, cfg.output_dim);
    }

    void init(Rng& rng) {
        stem.init(rng);
        for (auto& b : blocks) b.init(rng);
        fc.init(rng);
    }

    Tensor<S> forward(const Tensor<S>& x) {
        if (x.shape.size() != 4 || x.c() != cfg.in_channels || x.h() != cfg.input_size ||
            x.w() != cfg.input_size)
            throw std::invalid_argument("encoder: input resolution/channel mismatch");
        auto h = stem.forward(x);
        for (auto& b : blocks) h = b.forward(h);
        auto pooled = gap.forward(head_act.forward(head_norm.forward(h)));
        return fc.forward(pooled);
    }

    Tensor<S> backward(const Tensor<S>& gz) {
        auto g = gap.backward(fc.backward(gz));
        g = head_norm.backward(head_act.backward(g));
        for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) g = it->backward(g);
        return stem.backward(g);
    }

    void params(std::vector<nn::NamedParam<S>>& out) {
        stem.params("enc.stem", out);
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].params("enc.block" + std::to_string(i), out);
        head_norm.params("enc.head_norm", out);
        fc.params("enc.fc", out);
    }
};

}  // namespace uad
