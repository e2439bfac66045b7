#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "uad/nn/ops.hpp"

namespace uad {

struct DenoiserConfig {
    int in_channels = 1;
    int input_size = 64;
    int base_channels = 32;
    std::vector<int> channel_multipliers = {1, 2, 4};
    int groups = 8;
    int time_embed_dim = 128;
    int cond_dim = 128;                 // matches encoder output_dim
    std::vector<int> attention_levels;  // level indices; empty = none

    void validate() const {
        if (in_channels < 1 || input_size < 8)
            throw std::invalid_argument("denoiser: bad input geometry");
        if (base_channels < 1 || channel_multipliers.empty())
            throw std::invalid_argument("denoiser: bad channel plan");
        if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
            throw std::invalid_argument("denoiser: time_embed_dim must be even and >= 2");
        if (cond_dim < 1) throw std::invalid_argument("denoiser: cond_dim must be >= 1");
        const int levels = static_cast<int>(channel_multipliers.size());
        const int factor = 1 << (levels - 1);
        if (input_size % factor != 0)
            throw std::invalid_argument("denoiser: input_size must be divisible by " +
                                        std::to_string(factor));
        for (int m : channel_multipliers) {
            if (m < 1) throw std::invalid_argument("denoiser: multipliers must be >= 1");
            // every normalization site sees either C or 2C channels
            if ((base_channels * m) % groups != 0)
                throw std::invalid_argument(
                    "denoiser: group count must divide channels at every level");
        }
        for (int a : attention_levels)
            if (a < 0 || a >= levels)
                throw std::invalid_argument("denoiser: attention level out of range");
    }
    int level_channels(int i) const { return base_channels * channel_multipliers[i]; }
    int levels() const { return static_cast<int>(channel_multipliers.size()); }
    bool attention_at(int i) const {
        return std::find(attention_levels.begin(), attention_levels.end(), i) !=
               attention_levels.end();
    }
};

// Sinusoidal features of a timestep: [sin(t*f_0..f_{h-1}) | cos(...)] with
// geometric frequencies from 1 down to 1/10000.
inline std::vector<double> time_embedding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0)
        throw std::invalid_argument("time_embedding: dim must be even and >= 2");
    if (t < 0) throw std::invalid_argument("time_embedding: t must be >= 0");
    const int half = dim / 2;
    std::vector<double> out(dim);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        out[i] = std::sin(t * freq);
        out[half + i] = std::cos(t * freq);
    }
    return out;
}

namespace nn {

// Adaptive group normalization: group-normalize h (no learned affine), then
// scale and shift each channel by (1 + s) and b, where [s | b] is a learned
// zero-initialized affine map of the conditioning vector. At initialization
// the output is exactly the plain group normalization of h.
template <typename S>
struct AdaGN {
    int channels = 0;
    GroupNorm<S> gn;
    Linear<S> ada;  // cond -> [s | b]

    Tensor<S> xh_cache;  // normalized pre-modulation activations
    Tensor<S> ss_cache;  // [N, 2C] scale/shift rows

    AdaGN() = default;
    AdaGN(int ch, int groups, int cond_dim)
        : channels(ch), gn(ch, groups, /*affine=*/false), ada(cond_dim, 2 * ch) {}

    void init() { ada.init_zero(); }

    Tensor<S> forward(const Tensor<S>& h, const Tensor<S>& cond) {
        xh_cache = gn.forward(h);
        ss_cache = ada.forward(cond);
        const int N = h.n(), C = channels;
        const size_t plane = static_cast<size_t>(h.h()) * h.w();
        Tensor<S> mod(h.shape);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const S s = ss_cache.at(n, c);
                const S b = ss_cache.at(n, C + c);
                const size_t off = (static_cast<size_t>(n) * C + c) * plane;
                for (size_t i = 0; i < plane; ++i)
                    mod.data[off + i] = xh_cache.data[off + i] * (S(1) + s) + b;
            }
        return mod;
    }

    // Accumulates the conditioning gradient into gcond.
    Tensor<S> backward(const Tensor<S>& gy, Tensor<S>& gcond) {
        const int N = gy.n(), C = channels;
        const size_t plane = static_cast<size_t>(gy.h()) * gy.w();
        Tensor<S> gxh(gy.shape);
        Tensor<S> gss({N, 2 * C});
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const S s = ss_cache.at(n, c);
                const size_t off = (static_cast<size_t>(n) * C + c) * plane;
                double ds = 0.0, db = 0.0;
                for (size_t i = 0; i < plane; ++i) {
                    const S g = gy.data[off + i];
                    gxh.data[off + i] = g * (S(1) + s);
                    ds += static_cast<double>(g) * xh_cache.data[off + i];
                    db += g;
                }
                gss.at(n, c) = static_cast<S>(ds);
                gss.at(n, C + c) = static_cast<S>(db);
            }
        gcond += ada.backward(gss);
        return gn.backward(gxh);
    }

    void params(const std::string& prefix, std::vector<NamedParam<S>>& out) {
        ada.params(prefix + ".ada", out);
    }
};

// Residual block whose second normalization is the conditioned AdaGN; the
// final conv starts at zero so the block begins as its own skip connection.
template <typename S>
struct CondResBlock {
    int in_ch = 0, out_ch = 0;
    GroupNorm<S> n1;
    SiLU<S> a1;
    Conv2d<S> c1;
    AdaGN<S> adagn;
    SiLU<S> a2;
    Conv2d<S> c2;  // zero-init
    Conv2d<S> skip;
    bool has_skip = false;

    CondResBlock() = default;
    CondResBlock(int cin, int cout, int groups, int cond_dim)
        : in_ch(cin), out_ch(cout), n1(cin, groups), c1(cin, cout, 3, 1, 1),
          adagn(cout, groups, cond_dim), c2(cout, cout, 3, 1, 1), has_skip(cin != cout) {
        if (has_skip) skip = Conv2d<S>(cin, cout, 1, 1, 0);
    }

    void init(Rng& rng) {
        c1.init(rng);
        adagn.init();
        c2.init_zero();
        if (has_skip) skip.init(rng);
    }

    Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& cond) {
        auto h = c1.forward(a1.forward(n1.forward(x)));
        auto out = c2.forward(a2.forward(adagn.forward(h, cond)));
        auto sk = has_skip ? skip.forward(x) : x;
        out += sk;
        return out;
    }

    // Accumulates the conditioning gradient into gcond.
    Tensor<S> backward(const Tensor<S>& gy, Tensor<S>& gcond) {
        auto gmod = a2.backward(c2.backward(gy));
        auto gh = adagn.backward(gmod, gcond);
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
        adagn.params(prefix + ".adagn", out);
        c2.params(prefix + ".c2", out);
        if (has_skip) skip.params(prefix + ".skip", out);
    }
};

}  // namespace nn

// Conditional noise-prediction U-Net. Each resolution level runs one
// conditioned residual block on the way down (plus optional self-attention),
// a middle block at the bottom, and mirrored blocks on skip-concatenated
// features on the way up. The conditioning vector per sample is
// MLP(sinusoidal(t)) + W z_bg, shared by every block through one SiLU.
template <typename S>
struct UNet {
    DenoiserConfig cfg;

    nn::Linear<S> time_fc1, time_fc2;
    nn::SiLU<S> time_act;
    nn::Linear<S> z_proj;
    nn::SiLU<S> cond_act;

    nn::Conv2d<S> stem;
    std::vector<nn::CondResBlock<S>> down_blocks;
    std::vector<std::optional<nn::SelfAttention2d<S>>> down_attn;
    std::vector<nn::Conv2d<S>> down_convs;  // stride-2, levels-1 of them
    nn::CondResBlock<S> mid_block;
    std::optional<nn::SelfAttention2d<S>> mid_attn;
    std::vector<nn::CondResBlock<S>> up_blocks;  // indexed by level
    std::vector<std::optional<nn::SelfAttention2d<S>>> up_attn;
    std::vector<nn::Upsample2x<S>> up_samplers;  // level 1..L-1
    std::vector<nn::Conv2d<S>> up_convs;
    nn::GroupNorm<S> out_norm;
    nn::SiLU<S> out_act;
    nn::Conv2d<S> out_conv;  // zero-init

    // forward caches
    Tensor<S> temb_cache;                // [N, time_embed_dim] sinusoidal rows
    std::vector<Tensor<S>> skip_caches;  // down-path per-level outputs

    explicit UNet(const DenoiserConfig& c) : cfg(c) {
        cfg.validate();
        const int L = cfg.levels();
        const int td = cfg.time_embed_dim;
        time_fc1 = nn::Linear<S>(td, td);
        time_fc2 = nn::Linear<S>(td, td);
        z_proj = nn::Linear<S>(cfg.cond_dim, td);
        stem = nn::Conv2d<S>(cfg.in_channels, cfg.level_channels(0), 3, 1, 1);
        for (int i = 0; i < L; ++i) {
            const int ch = cfg.level_channels(i);
            const int cin = i == 0 ? cfg.level_channels(0) : cfg.level_channels(i);
            down_blocks.emplace_back(cin, ch, cfg.groups, td);
            down_attn.emplace_back();
            if (cfg.attention_at(i)) down_attn.back().emplace(ch, cfg.groups);
            if (i + 1 < L)
                down_convs.emplace_back(ch, cfg.level_channels(i + 1), 3, 2, 1);
        }
        mid_block = nn::CondResBlock<S>(cfg.level_channels(L - 1),
                                        cfg.level_channels(L - 1), cfg.groups, td);
        if (cfg.attention_at(L - 1))
            mid_attn.emplace(cfg.level_channels(L - 1), cfg.groups);
        up_blocks.reserve(L);
        for (int i = 0; i < L; ++i) {
            const int ch = cfg.level_channels(i);
            up_blocks.emplace_back(2 * ch, ch, cfg.groups, td);
            up_attn.emplace_back();
            if (cfg.attention_at(i)) up_attn.back().emplace(ch, cfg.groups);
            if (i > 0) {
                up_samplers.emplace_back();
                up_convs.emplace_back(ch, cfg.level_channels(i - 1), 3, 1, 1);
            }
        }
        out_norm = nn::GroupNorm<S>(cfg.level_channels(0), cfg.groups);
        out_conv = nn::Conv2d<S>(cfg.level_channels(0), cfg.in_channels, 3, 1, 1);
    }

    void init(Rng& rng) {
        time_fc1.init(rng);
        time_fc2.init(rng);
        z_proj.init(rng);
        stem.init(rng);
        for (auto& b : down_blocks) b.init(rng);
        for (auto& a : down_attn)
            if (a) a->init(rng);
        for (auto& c : down_convs) c.init(rng);
        mid_block.init(rng);
        if (mid_attn) mid_attn->init(rng);
        for (auto& b : up_blocks) b.init(rng);
        for (auto& a : up_attn)
            if (a) a->init(rng);
        for (auto& c : up_convs) c.init(rng);
        out_conv.init_zero();
    }

    // Fused per-sample conditioning, pre-activation.
    Tensor<S> make_cond(const std::vector<int>& ts, const Tensor<S>& z) {
        const int N = static_cast<int>(ts.size());
        temb_cache = Tensor<S>({N, cfg.time_embed_dim});
        for (int n = 0; n < N; ++n) {
            if (ts[n] < 1) throw std::invalid_argument("denoiser: timestep must be >= 1");
            auto e = time_embedding(ts[n], cfg.time_embed_dim);
            for (int d = 0; d < cfg.time_embed_dim; ++d)
                temb_cache.at(n, d) = static_cast<S>(e[d]);
        }
        auto t_path = time_fc2.forward(time_act.forward(time_fc1.forward(temb_cache)));
        auto z_path = z_proj.forward(z);
        t_path += z_path;
        return t_path;
    }

    Tensor<S> forward(const Tensor<S>& xt, const std::vector<int>& ts,
                      const Tensor<S>& z) {
        if (xt.shape.size() != 4 || xt.c() != cfg.in_channels ||
            xt.h() != cfg.input_size || xt.w() != cfg.input_size)
            throw std::invalid_argument("denoiser: input resolution/channel mismatch");
        if (static_cast<int>(ts.size()) != xt.n())
            throw std::invalid_argument("denoiser: one timestep per sample required");
        if (z.shape.size() != 2 || z.dim(0) != xt.n() || z.dim(1) != cfg.cond_dim)
            throw std::invalid_argument("denoiser: conditioning dimension mismatch");

        auto cond = cond_act.forward(make_cond(ts, z));

        const int L = cfg.levels();
        skip_caches.assign(static_cast<size_t>(L), {});
        auto h = stem.forward(xt);
        for (int i = 0; i < L; ++i) {
            h = down_blocks[i].forward(h, cond);
            if (down_attn[i]) h = down_attn[i]->forward(h);
            skip_caches[i] = h;
            if (i + 1 < L) h = down_convs[i].forward(h);
        }
        h = mid_block.forward(h, cond);
        if (mid_attn) h = mid_attn->forward(h);
        for (int i = L - 1; i >= 0; --i) {
            h = up_blocks[i].forward(nn::concat_channels(h, skip_caches[i]), cond);
            if (up_attn[i]) h = up_attn[i]->forward(h);
            if (i > 0) h = up_convs[i - 1].forward(up_samplers[i - 1].forward(h));
        }
        return out_conv.forward(out_act.forward(out_norm.forward(h)));
    }

    // Backpropagates the noise-prediction gradient; writes the z_bg gradient
    // (for joint encoder fine-tuning) into *gz when non-null, and returns the
    // gradient with respect to xt.
    Tensor<S> backward(const Tensor<S>& geps, Tensor<S>* gz = nullptr) {
        const int L = cfg.levels();
        const int N = geps.n();
        Tensor<S> gcond({N, cfg.time_embed_dim});

        auto g = out_norm.backward(out_act.backward(out_conv.backward(geps)));
        std::vector<Tensor<S>> gskips(static_cast<size_t>(L));
        for (int i = 0; i < L; ++i) {
            if (i > 0) g = up_samplers[i - 1].backward(up_convs[i - 1].backward(g));
            if (up_attn[i]) g = up_attn[i]->backward(g);
            auto gcat = up_blocks[i].backward(g, gcond);
            auto [gh, gskip] = nn::split_channels(gcat, cfg.level_channels(i));
            gskips[i] = std::move(gskip);
            g = std::move(gh);
        }
        if (mid_attn) g = mid_attn->backward(g);
        g = mid_block.backward(g, gcond);
        for (int i = L - 1; i >= 0; --i) {
            if (i + 1 < L) g = down_convs[i].backward(g);
            g += gskips[i];
            if (down_attn[i]) g = down_attn[i]->backward(g);
            g = down_blocks[i].backward(g, gcond);
        }
        auto gx = stem.backward(g);

        auto gfused = cond_act.backward(gcond);
        if (gz) *gz = z_proj.backward(gfused);
        time_fc1.backward(time_act.backward(time_fc2.backward(gfused)));
        return gx;
    }

    void params(std::vector<nn::NamedParam<S>>& out) {
        time_fc1.params("unet.time_fc1", out);
        time_fc2.params("unet.time_fc2", out);
        z_proj.params("unet.z_proj", out);
        stem.params("unet.stem", out);
        for (size_t i = 0; i < down_blocks.size(); ++i)
            down_blocks[i].params("unet.down" + std::to_string(i), out);
        for (size_t i = 0; i < down_attn.size(); ++i)
            if (down_attn[i])
                down_attn[i]->params("unet.down_attn" + std::to_string(i), out);
        for (size_t i = 0; i < down_convs.size(); ++i)
            down_convs[i].params("unet.down_conv" + std::to_string(i), out);
        mid_block.params("unet.mid", out);
        if (mid_attn) mid_attn->params("unet.mid_attn", out);
        for (size_t i = 0; i < up_blocks.size(); ++i)
            up_blocks[i].params("unet.up" + std::to_string(i), out);
        for (size_t i = 0; i < up_attn.size(); ++i)
            if (up_attn[i]) up_attn[i]->params("unet.up_attn" + std::to_string(i), out);
        for (size_t i = 0; i < up_convs.size(); ++i)
            up_convs[i].params("unet.up_conv" + std::to_string(i), out);
        out_norm.params("unet.out_norm", out);
        out_conv.params("unet.out_conv", out);
    }
};

}  // namespace uad
