#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "uad/nn/param.hpp"
#include "uad/rng.hpp"
#include "uad/tensor.hpp"

namespace uad::nn {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecCol = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// --- im2col / col2im ------------------------------------------------------
// col is [Cin*k*k, Ho*Wo] row-major; one sample at a time.

template <typename S>
void im2col(const S* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            S* col) {
    const size_t patch = static_cast<size_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                S* row = col + ((static_cast<size_t>(c) * k + ky) * k + kx) * patch;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    S* dst = row + static_cast<size_t>(oy) * Wo;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst, dst + Wo, S(0));
                        continue;
                    }
                    const S* src = x + (static_cast<size_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        dst[ox] = (ix >= 0 && ix < W) ? src[ix] : S(0);
                    }
                }
            }
}

template <typename S>
void col2im_add(const S* col, int C, int H, int W, int k, int stride, int pad, int Ho,
                int Wo, S* dx) {
    const size_t patch = static_cast<size_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const S* row = col + ((static_cast<size_t>(c) * k + ky) * k + kx) * patch;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    S* dst = dx + (static_cast<size_t>(c) * H + iy) * W;
                    const S* src = row + static_cast<size_t>(oy) * Wo;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < W) dst[ix] += src[ox];
                    }
                }
            }
}

// --- conv2d ----------------------------------------------------------------

template <typename S>
struct Conv2d {
    int in_ch = 0, out_ch = 0, ksize = 3, stride = 1, pad = 1;
    Param<S> w;  // [out, in, k, k]
    Param<S> b;  // [out]
    Tensor<S> x_cache;

    Conv2d() = default;
    Conv2d(int cin, int cout, int k, int s = 1, int p = -1)
        : in_ch(cin), out_ch(cout), ksize(k), stride(s), pad(p < 0 ? k / 2 : p),
          w({cout, cin, k, k}), b({cout}) {
        if (cin <= 0 || cout <= 0 || k <= 0 || s <= 0)
            throw std::invalid_argument("conv2d: bad geometry");
    }

    void init(Rng& rng) {  // Kaiming for the SiLU family
        w.init_randn(rng, std::sqrt(2.0 / (static_cast<double>(in_ch) * ksize * ksize)));
        b.w.zero();
    }
    void init_zero() {
        w.w.zero();
        b.w.zero();
    }

    int out_hw(int in) const { return (in + 2 * pad - ksize) / stride + 1; }

    Tensor<S> forward(const Tensor<S>& x) {
        if (x.shape.size() != 4 || x.c() != in_ch)
            throw std::invalid_argument("conv2d: input channel mismatch");
        x_cache = x;
        const int N = x.n(), H = x.h(), W = x.w();
        const int Ho = out_hw(H), Wo = out_hw(W);
        if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: output collapses");
        const int K = in_ch * ksize * ksize;
        const int P = Ho * Wo;

        Tensor<S> out({N, out_ch, Ho, Wo});
        AlignedVec<S> col(static_cast<size_t>(K) * P);
        Eigen::Map<const MatRM<S>> wm(w.w.data.data(), out_ch, K);
        Eigen::Map<const VecCol<S>> bv(b.w.data.data(), out_ch);
        for (int n = 0; n < N; ++n) {
            im2col(x.data.data() + static_cast<size_t>(n) * in_ch * H * W, in_ch, H, W,
                   ksize, stride, pad, Ho, Wo, col.data());
            Eigen::Map<const MatRM<S>> cm(col.data(), K, P);
            Eigen::Map<MatRM<S>> om(out.data.data() + static_cast<size_t>(n) * out_ch * P,
                                    out_ch, P);
            om.noalias() = wm * cm;
            om.colwise() += bv;
        }
        return out;
    }

    Tensor<S> backward(const Tensor<S>& gy) {
        const int N = x_cache.n(), H = x_cache.h(), W = x_cache.w();
        const int Ho = gy.h(), Wo = gy.w();
        const int K = in_ch * ksize * ksize;
        const int P = Ho * Wo;

        Tensor<S> gx(x_cache.shape);
        AlignedVec<S> col(static_cast<size_t>(K) * P);
        AlignedVec<S> dcol(static_cast<size_t>(K) * P);
        Eigen::Map<const MatRM<S>> wm(w.w.data.data(), out_ch, K);
        Eigen::Map<MatRM<S>> gwm(w.g.data.data(), out_ch, K);
        Eigen::Map<VecCol<S>> gbv(b.g.data.data(), out_ch);
        for (int n = 0; n < N; ++n) {
            im2col(x_cache.data.data() + static_cast<size_t>(n) * in_ch * H * W, in_ch, H,
                   W, ksize, stride, pad, Ho, Wo, col.data());
            Eigen::Map<const MatRM<S>> cm(col.data(), K, P);
            Eigen::Map<const MatRM<S>> gym(
                gy.data.data() + static_cast<size_t>(n) * out_ch * P, out_ch, P);
            gwm.noalias() += gym * cm.transpose();
            gbv.noalias() += gym.rowwise().sum();
            Eigen::Map<MatRM<S>> dcm(dcol.data(), K, P);
            dcm.noalias() = wm.transpose() * gym;
            col2im_add(dcol.data(), in_ch, H, W, ksize, stride, pad, Ho, Wo,
                       gx.data.data() + static_cast<size_t>(n) * in_ch * H * W);
        }
        return gx;
    }

    void params(const std::string& prefix, std::vector<NamedParam<S>>& out) {
        out.push_back({prefix + ".w", &w});
        out.push_back({prefix + ".b", &b});
    }
};

// --- linear ----------------------------------------------------------------

template <typename S>
struct Linear {
    int in_dim = 0, out_dim = 0;
    Param<S> w;  // [out, in]
    Param<S> b;  // [out]
    Tensor<S> x_cache;

    Linear() = default;
    Linear(int din, int dout) : in_dim(din), out_dim(dout), w({dout, din}), b({dout}) {}

    void init(Rng& rng) {
        w.init_randn(rng, std::sqrt(1.0 / in_dim));
        b.w.zero();
    }
    void init_zero() {
        w.w.zero();
        b.w.zero();
    }

    Tensor<S> forward(const Tensor<S>& x) {
        if (x.shape.size() != 2 || x.dim(1) != in_dim)
            throw std::invalid_argument("linear: input dim mismatch");
        x_cache = x;
        const int N = x.dim(0);
        Tensor<S> out({N, out_dim});
        Eigen::Map<const MatRM<S>> xm(x.data.data(), N, in_dim);
        Eigen::Map<const MatRM<S>> wm(w.w.data.data(), out_dim, in_dim);
        Eigen::Map<MatRM<S>> om(out.data.data(), N, out_dim);
        om.noalias() = xm * wm.transpose();
        om.rowwise() += Eigen::Map<const VecCol<S>>(b.w.data.data(), out_dim).transpose();
        return out;
    }

    Tensor<S> backward(const Tensor<S>& gy) {
        const int N = x_cache.dim(0);
        Tensor<S> gx({N, in_dim});
        Eigen::Map<const MatRM<S>> xm(x_cache.data.data(), N, in_dim);
        Eigen::Map<const MatRM<S>> gym(gy.data.data(), N, out_dim);
        Eigen::Map<const MatRM<S>> wm(w.w.data.data(), out_dim, in_dim);
        Eigen::Map<MatRM<S>> gwm(w.g.data.data(), out_dim, in_dim);
        Eigen::Map<VecCol<S>> gbv(b.g.data.data(), out_dim);
        gwm.noalias() += gym.transpose() * xm;
        gbv.noalias() += gym.colwise().sum().transpose();
        Eigen::Map<MatRM<S>> gxm(gx.data.data(), N, in_dim);
        gxm.noalias() = gym * wm;
        return gx;
    }

    void params(const std::string& prefix, std::vector<NamedParam<S>>& out) {
        out.push_back({prefix + ".w", &w});
        out.push_back({prefix + ".b", &b});
    }
};

// --- group normalization ----------------------------------------------------

template <typename S>
struct GroupNorm {
    int channels = 0, groups = 1;
    bool affine = true;
    double eps = 1e-5;
    Param<S> gamma, beta;
    Tensor<S> xhat_cache;
    std::vector<double> rstd_cache;

    GroupNorm() = default;
    GroupNorm(int ch, int g, bool aff = true) : channels(ch), groups(g), affine(aff) {
        if (g <= 0 || ch % g != 0)
            throw std::invalid_argument("group_norm: groups must divide channels");
        if (affine) {
            gamma = Param<S>({ch});
            beta = Param<S>({ch});
            gamma.w.fill(S(1));
        }
    }

    Tensor<S> forward(const Tensor<S>& x) {
        if (x.shape.size() != 4 || x.c() != channels)
            throw std::invalid_argument("group_norm: channel mismatch");
        const int N = x.n(), C = channels, H = x.h(), W = x.w();
        const int cpg = C / groups;
        const size_t gsize = static_cast<size_t>(cpg) * H * W;

        Tensor<S> out(x.shape);
        xhat_cache = Tensor<S>(x.shape);
        rstd_cache.assign(static_cast<size_t>(N) * groups, 0.0);
        for (int n = 0; n < N; ++n)
            for (int g = 0; g < groups; ++g) {
                const S* xp = x.data.data() +
                              (static_cast<size_t>(n) * C + g * cpg) * H * W;
                double mean = 0.0;
                for (size_t i = 0; i < gsize; ++i) mean += xp[i];
                mean /= static_cast<double>(gsize);
                double var = 0.0;
                for (size_t i = 0; i < gsize; ++i) {
                    double d = xp[i] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(gsize);
                const double rstd = 1.0 / std::sqrt(var + eps);
                rstd_cache[static_cast<size_t>(n) * groups + g] = rstd;

                S* xh = xhat_cache.data.data() +
                        (static_cast<size_t>(n) * C + g * cpg) * H * W;
                S* op = out.data.data() + (static_cast<size_t>(n) * C + g * cpg) * H * W;
                for (int cc = 0; cc < cpg; ++cc) {
                    const int c = g * cpg + cc;
                    const double ga = affine ? static_cast<double>(gamma.w.data[c]) : 1.0;
                    const double be = affine ? static_cast<double>(beta.w.data[c]) : 0.0;
                    const size_t off = static_cast<size_t>(cc) * H * W;
                    for (size_t i = 0; i < static_cast<size_t>(H) * W; ++i) {
                        double h = (xp[off + i] - mean) * rstd;
                        xh[off + i] = static_cast<S>(h);
                        op[off + i] = static_cast<S>(ga * h + be);
                    }
                }
            }
        return out;
    }

    Tensor<S> backward(const Tensor<S>& gy) {
        const int N = gy.n(), C = channels, H = gy.h(), W = gy.w();
        const int cpg = C / groups;
        const size_t plane = static_cast<size_t>(H) * W;
        const double m = static_cast<double>(cpg) * plane;

        Tensor<S> gx(gy.shape);
        for (int n = 0; n < N; ++n)
            for (int g = 0; g < groups; ++g) {
                const size_t base = (static_cast<size_t>(n) * C + g * cpg) * plane;
                const double rstd = rstd_cache[static_cast<size_t>(n) * groups + g];

                double s1 = 0.0, s2 = 0.0;  // sum(dxhat), sum(dxhat * xhat)
                for (int cc = 0; cc < cpg; ++cc) {
                    const int c = g * cpg + cc;
                    const double ga = affine ? static_cast<double>(gamma.w.data[c]) : 1.0;
                    const size_t off = base + static_cast<size_t>(cc) * plane;
                    for (size_t i = 0; i < plane; ++i) {
                        double dxh = ga * gy.data[off + i];
                        s1 += dxh;
                        s2 += dxh * xhat_cache.data[off + i];
                    }
                }
                for (int cc = 0; cc < cpg; ++cc) {
                    const int c = g * cpg + cc;
                    const double ga = affine ? static_cast<double>(gamma.w.data[c]) : 1.0;
                    const size_t off = base + static_cast<size_t>(cc) * plane;
                    for (size_t i = 0; i < plane; ++i) {
                        double dxh = ga * gy.data[off + i];
                        double xh = xhat_cache.data[off + i];
                        gx.data[off + i] =
                            static_cast<S>(rstd * (dxh - s1 / m - xh * s2 / m));
                    }
                }
            }
        if (affine) {
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const size_t off = (static_cast<size_t>(n) * C + c) * plane;
                    double dg = 0.0, db = 0.0;
                    for (size_t i = 0; i < plane; ++i) {
                        dg += gy.data[off + i] * xhat_cache.data[off + i];
                        db += gy.data[off + i];
                    }
                    gamma.g.data[c] += static_cast<S>(dg);
                    beta.g.data[c] += static_cast<S>(db);
                }
        }
        return gx;
    }

    void params(const std::string& prefix, std::vector<NamedParam<S>>& out) {
        if (!affine) return;
        out.push_back({prefix + ".gamma", &gamma});
        out.push_back({prefix + ".beta", &beta});
    }
};

// --- SiLU -------------------------------------------------------------------

template <typename S>
struct SiLU {
    Tensor<S> x_cache;

    Tensor<S> forward(const Tensor<S>& x) {
        x_cache = x;
        Tensor<S> out(x.shape);
        for (size_t i = 0; i < x.data.size(); ++i) {
            double v = x.data[i];
            out.data[i] = static_cast<S>(v / (1.0 + std::exp(-v)));
        }
        return out;
    }

    Tensor<S> backward(const Tensor<S>& gy) {
        Tensor<S> gx(gy.shape);
        for (size_t i = 0; i < gy.data.size(); ++i) {
            double v = x_cache.data[i];
            double sig = 1.0 / (1.0 + std::exp(-v));
            gx.data[i] = static_cast<S>(gy.data[i] * sig * (1.0 + v * (1.0 - sig)));
        }
        return gx;
    }
};

// --- resampling / pooling / concat ------------------------------------------

template <typename S>
struct Upsample2x {
    std::vector<int> in_shape;

    Tensor<S> forward(const Tensor<S>& x) {
        in_shape = x.shape;
        const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
        Tensor<S> out({N, C, 2 * H, 2 * W});
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y)
                    for (int x2 = 0; x2 < W; ++x2) {
                        S v = x.at(n, c, y, x2);
                        out.at(n, c, 2 * y, 2 * x2) = v;
                        out.at(n, c, 2 * y, 2 * x2 + 1) = v;
                        out.at(n, c, 2 * y + 1, 2 * x2) = v;
                        out.at(n, c, 2 * y + 1, 2 * x2 + 1) = v;
                    }
        return out;
    }

    Tensor<S> backward(const Tensor<S>& gy) {
        Tensor<S> gx(in_shape);
        const int N = gx.n(), C = gx.c(), H = gx.h(), W = gx.w();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y)
                    for (int x2 = 0; x2 < W; ++x2)
                        gx.at(n, c, y, x2) = gy.at(n, c, 2 * y, 2 * x2) +
                                             gy.at(n, c, 2 * y, 2 * x2 + 1) +
                                             gy.at(n, c, 2 * y + 1, 2 * x2) +
                                             gy.at(n, c, 2 * y + 1, 2 * x2 + 1);
        return gx;
    }
};

template <typename S>
struct GlobalAvgPool {
    std::vector<int> in_shape;

    Tensor<S> forward(const Tensor<S>& x) {
        in_shape = x.shape;
        const int N = x.n(), C = x.c();
        const size_t plane = static_cast<size_t>(x.h()) * x.w();
        Tensor<S> out({N, C});
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const S* p = x.data.data() + (static_cast<size_t>(n) * C + c) * plane;
                double acc = 0.0;
                for (size_t i = 0; i < plane; ++i) acc += p[i];
                out.at(n, c) = static_cast<S>(acc / static_cast<double>(plane));
            }
        return out;
    }

    Tensor<S> backward(const Tensor<S>& gy) {
        Tensor<S> gx(in_shape);
        const int N = gx.n(), C = gx.c();
        const size_t plane = static_cast<size_t>(gx.h()) * gx.w();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                S v = static_cast<S>(gy.at(n, c) / static_cast<double>(plane));
                S* p = gx.data.data() + (static_cast<size_t>(n) * C + c) * plane;
                std::fill(p, p + plane, v);
            }
        return gx;
    }
};

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
        throw std::invalid_argument("concat: spatial/batch mismatch");
    const int N = a.n(), H = a.h(), W = a.w();
    const size_t plane = static_cast<size_t>(H) * W;
    Tensor<S> out({N, a.c() + b.c(), H, W});
    for (int n = 0; n < N; ++n) {
        std::copy(a.data.begin() + static_cast<size_t>(n) * a.c() * plane,
                  a.data.begin() + static_cast<size_t>(n + 1) * a.c() * plane,
                  out.data.begin() + static_cast<size_t>(n) * out.c() * plane);
        std::copy(b.data.begin() + static_cast<size_t>(n) * b.c() * plane,
                  b.data.begin() + static_cast<size_t>(n + 1) * b.c() * plane,
                  out.data.begin() + (static_cast<size_t>(n) * out.c() + a.c()) * plane);
    }
    return out;
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> split_channels(const Tensor<S>& g, int ca) {
    const int N = g.n(), H = g.h(), W = g.w();
    const int cb = g.c() - ca;
    if (ca <= 0 || cb <= 0) throw std::invalid_argument("split: bad channel split");
    const size_t plane = static_cast<size_t>(H) * W;
    Tensor<S> a({N, ca, H, W}), b({N, cb, H, W});
    for (int n = 0; n < N; ++n) {
        std::copy(g.data.begin() + static_cast<size_t>(n) * g.c() * plane,
                  g.data.begin() + (static_cast<size_t>(n) * g.c() + ca) * plane,
                  a.data.begin() + static_cast<size_t>(n) * ca * plane);
        std::copy(g.data.begin() + (static_cast<size_t>(n) * g.c() + ca) * plane,
                  g.data.begin() + static_cast<size_t>(n + 1) * g.c() * plane,
                  b.data.begin() + static_cast<size_t>(n) * cb * plane);
    }
    return {std::move(a), std::move(b)};
}

// --- single-head spatial self-attention --------------------------------------
// Pre-normalized, residual; the output projection starts at zero so the block
// is the identity at initialization.

template <typename S>
struct SelfAttention2d {
    int channels = 0;
    GroupNorm<S> norm;
    Param<S> wq, wk, wv, wo;  // each [C, C], applied as 1x1 projections

    Tensor<S> h_cache, q_cache, k_cache, v_cache, attn_cache, o_cache;

    SelfAttention2d() = default;
    SelfAttention2d(int ch, int groups)
        : channels(ch), norm(ch, groups, true), wq({ch, ch}), wk({ch, ch}),
          wv({ch, ch}), wo({ch, ch}) {}

    void init(Rng& rng) {
        const double s = std::sqrt(1.0 / channels);
        wq.init_randn(rng, s);
        wk.init_randn(rng, s);
        wv.init_randn(rng, s);
        wo.w.zero();
    }

    Tensor<S> forward(const Tensor<S>& x) {
        const int N = x.n(), C = channels, H = x.h(), W = x.w();
        const int T = H * W;
        h_cache = norm.forward(x);
        q_cache = Tensor<S>({N, C, T});
        k_cache = Tensor<S>({N, C, T});
        v_cache = Tensor<S>({N, C, T});
        attn_cache = Tensor<S>({N, T, T});
        o_cache = Tensor<S>({N, C, T});
        Tensor<S> out = x;  // residual base

        Eigen::Map<const MatRM<S>> wqm(wq.w.data.data(), C, C);
        Eigen::Map<const MatRM<S>> wkm(wk.w.data.data(), C, C);
        Eigen::Map<const MatRM<S>> wvm(wv.w.data.data(), C, C);
        Eigen::Map<const MatRM<S>> wom(wo.w.data.data(), C, C);
        const double scale = 1.0 / std::sqrt(static_cast<double>(C));

        for (int n = 0; n < N; ++n) {
            const size_t ct = static_cast<size_t>(C) * T;
            Eigen::Map<const MatRM<S>> hm(h_cache.data.data() + n * ct, C, T);
            Eigen::Map<MatRM<S>> qm(q_cache.data.data() + n * ct, C, T);
            Eigen::Map<MatRM<S>> km(k_cache.data.data() + n * ct, C, T);
            Eigen::Map<MatRM<S>> vm(v_cache.data.data() + n * ct, C, T);
            qm.noalias() = wqm * hm;
            km.noalias() = wkm * hm;
            vm.noalias() = wvm * hm;

            Eigen::Map<MatRM<S>> am(
                attn_cache.data.data() + static_cast<size_t>(n) * T * T, T, T);
            am.noalias() = qm.transpose() * km;
            am *= static_cast<S>(scale);
            for (int j = 0; j < T; ++j) {  // row softmax
                S mx = am.row(j).maxCoeff();
                double z = 0.0;
                for (int i = 0; i < T; ++i) {
                    double e = std::exp(static_cast<double>(am(j, i) - mx));
                    am(j, i) = static_cast<S>(e);
                    z += e;
                }
                am.row(j) *= static_cast<S>(1.0 / z);
            }

            Eigen::Map<MatRM<S>> om(o_cache.data.data() + n * ct, C, T);
            om.noalias() = vm * am.transpose();
            Eigen::Map<MatRM<S>> ym(out.data.data() + n * ct, C, T);
            ym.noalias() += wom * om;
        }
        return out;
    }

    Tensor<S> backward(const Tensor<S>& gy) {
        const int N = gy.n(), C = channels, H = gy.h(), W = gy.w();
        const int T = H * W;
        Tensor<S> gh({N, C, H, W});

        Eigen::Map<const MatRM<S>> wqm(wq.w.data.data(), C, C);
        Eigen::Map<const MatRM<S>> wkm(wk.w.data.data(), C, C);
        Eigen::Map<const MatRM<S>> wvm(wv.w.data.data(), C, C);
        Eigen::Map<const MatRM<S>> wom(wo.w.data.data(), C, C);
        Eigen::Map<MatRM<S>> gwq(wq.g.data.data(), C, C);
        Eigen::Map<MatRM<S>> gwk(wk.g.data.data(), C, C);
        Eigen::Map<MatRM<S>> gwv(wv.g.data.data(), C, C);
        Eigen::Map<MatRM<S>> gwo(wo.g.data.data(), C, C);
        const double scale = 1.0 / std::sqrt(static_cast<double>(C));

        for (int n = 0; n < N; ++n) {
            const size_t ct = static_cast<size_t>(C) * T;
            Eigen::Map<const MatRM<S>> gym(gy.data.data() + n * ct, C, T);
            Eigen::Map<const MatRM<S>> hm(h_cache.data.data() + n * ct, C, T);
            Eigen::Map<const MatRM<S>> qm(q_cache.data.data() + n * ct, C, T);
            Eigen::Map<const MatRM<S>> km(k_cache.data.data() + n * ct, C, T);
            Eigen::Map<const MatRM<S>> vm(v_cache.data.data() + n * ct, C, T);
            Eigen::Map<const MatRM<S>> am(
                attn_cache.data.data() + static_cast<size_t>(n) * T * T, T, T);
            Eigen::Map<const MatRM<S>> om(o_cache.data.data() + n * ct, C, T);

            gwo.noalias() += gym * om.transpose();
            MatRM<S> dO = wom.transpose() * gym;          // [C, T]
            MatRM<S> dV = dO * am;                        // [C, T]
            MatRM<S> dA = dO.transpose() * vm;            // [T, T]

            MatRM<S> dS(T, T);  // softmax backward per row
            for (int j = 0; j < T; ++j) {
                double dot = 0.0;
                for (int i = 0; i < T; ++i)
                    dot += static_cast<double>(dA(j, i)) * am(j, i);
                for (int i = 0; i < T; ++i)
                    dS(j, i) = static_cast<S>((dA(j, i) - dot) * am(j, i) * scale);
            }

            MatRM<S> dQ = km * dS.transpose();  // [C, T]
            MatRM<S> dK = qm * dS;              // [C, T]

            gwq.noalias() += dQ * hm.transpose();
            gwk.noalias() += dK * hm.transpose();
            gwv.noalias() += dV * hm.transpose();
            Eigen::Map<MatRM<S>> ghm(gh.data.data() + n * ct, C, T);
            ghm.noalias() = wqm.transpose() * dQ;
            ghm.noalias() += wkm.transpose() * dK;
            ghm.noalias() += wvm.transpose() * dV;
        }
        Tensor<S> gx = norm.backward(gh);
        for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gy.data[i];  // residual
        return gx;
    }

    void params(const std::string& prefix, std::vector<NamedParam<S>>& out) {
        norm.params(prefix + ".norm", out);
        out.push_back({prefix + ".wq", &wq});
        out.push_back({prefix + ".wk", &wk});
        out.push_back({prefix + ".wv", &wv});
        out.push_back({prefix + ".wo", &wo});
    }
};

}  // namespace uad::nn
