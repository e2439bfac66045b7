#include <cmath>
#include <functional>
#include <vector>

#include <doctest.h>

#include "uad/nn/ops.hpp"
#include "uad/nn/param.hpp"

using namespace uad;
using namespace uad::nn;

namespace {

using DTensor = Tensor<double>;

DTensor randn_like(std::vector<int> shape, Rng& rng) {
    return DTensor::randn(std::move(shape), rng);
}

double dot(const DTensor& a, const DTensor& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

// Central finite difference of loss() wrt one scalar slot.
double fd_slot(double& slot, const std::function<double()>& loss, double h = 1e-5) {
    const double orig = slot;
    slot = orig + h;
    const double fp = loss();
    slot = orig - h;
    const double fm = loss();
    slot = orig;
    return (fp - fm) / (2.0 * h);
}

void check_close_rel(double got, double want, double tol) {
    CHECK(std::abs(got - want) <= tol * std::max({1.0, std::abs(got), std::abs(want)}));
}

// Verifies every analytic gradient the layer produces (input + params) against
// finite differences of loss = <forward(x), R> for a fixed random probe R.
template <typename Layer>
void check_grads(Layer& layer, DTensor x, Rng& rng, double tol = 1e-6) {
    auto out0 = layer.forward(x);
    DTensor probe = randn_like(out0.shape, rng);
    auto loss = [&]() { return dot(layer.forward(x), probe); };

    std::vector<NamedParam<double>> named;
    layer.params("p", named);
    for (auto& np : named) np.p->zero_grad();
    layer.forward(x);
    DTensor gx = layer.backward(probe);

    for (size_t i = 0; i < x.data.size(); ++i)
        check_close_rel(gx.data[i], fd_slot(x.data[i], loss), tol);
    for (auto& np : named)
        for (size_t i = 0; i < np.p->w.data.size(); ++i)
            check_close_rel(np.p->g.data[i], fd_slot(np.p->w.data[i], loss), tol);
}

}  // namespace

TEST_CASE("conv2d forward matches a direct convolution oracle")  // [DERIVED]
{
    Rng rng(101);
    Conv2d<double> conv(2, 3, 3, 1, 1);
    conv.init(rng);
    auto x = randn_like({2, 2, 5, 4}, rng);
    auto y = conv.forward(x);
    REQUIRE(y.shape == std::vector<int>({2, 3, 5, 4}));

    for (int n = 0; n < 2; ++n)
        for (int oc = 0; oc < 3; ++oc)
            for (int oy = 0; oy < 5; ++oy)
                for (int ox = 0; ox < 4; ++ox) {
                    double acc = conv.b.w.data[oc];
                    for (int ic = 0; ic < 2; ++ic)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                int iy = oy + ky - 1, ix = ox + kx - 1;
                                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 4) continue;
                                acc += conv.w.w.at(oc, ic, ky, kx) * x.at(n, ic, iy, ix);
                            }
                    CHECK(y.at(n, oc, oy, ox) == doctest::Approx(acc).epsilon(1e-12));
                }
}

TEST_CASE("conv2d stride-2 geometry")
{
    Rng rng(102);
    Conv2d<double> conv(1, 4, 3, 2, 1);
    conv.init(rng);
    auto x = randn_like({1, 1, 8, 8}, rng);
    auto y = conv.forward(x);
    CHECK(y.shape == std::vector<int>({1, 4, 4, 4}));
    CHECK_THROWS_AS(conv.forward(randn_like({1, 2, 8, 8}, rng)), std::invalid_argument);
}

TEST_CASE("conv2d gradients match finite differences")  // [DERIVED] fd oracle
{
    Rng rng(103);
    Conv2d<double> conv(2, 3, 3, 1, 1);
    conv.init(rng);
    check_grads(conv, randn_like({2, 2, 4, 4}, rng), rng);
}

TEST_CASE("strided conv2d gradients match finite differences")
{
    Rng rng(104);
    Conv2d<double> conv(2, 2, 3, 2, 1);
    conv.init(rng);
    check_grads(conv, randn_like({1, 2, 6, 6}, rng), rng);
}

TEST_CASE("1x1 conv2d gradients match finite differences")
{
    Rng rng(105);
    Conv2d<double> conv(3, 2, 1, 1, 0);
    conv.init(rng);
    check_grads(conv, randn_like({2, 3, 3, 3}, rng), rng);
}

TEST_CASE("linear forward fixture and gradients")
{
    Rng rng(106);
    Linear<double> lin(3, 2);
    lin.w.w.data = {1, 0, 0, 0, 1, 0};  // rows select x0, x1
    lin.b.w.data = {0.5, -0.5};
    DTensor x({1, 3});
    x.data = {2.0, 3.0, 4.0};
    auto y = lin.forward(x);
    CHECK(y.data[0] == doctest::Approx(2.5));   // [DERIVED] x0 + 0.5
    CHECK(y.data[1] == doctest::Approx(2.5));   // x1 - 0.5

    lin.init(rng);
    check_grads(lin, randn_like({4, 3}, rng), rng);
}

TEST_CASE("group norm: per-group moments are 0/1 before affine")  // [DERIVED]
{
    Rng rng(107);
    GroupNorm<double> gn(6, 3, /*affine=*/false);
    auto x = randn_like({2, 6, 5, 5}, rng);
    for (auto& v : x.data) v = v * 3.0 + 1.5;  // non-trivial scale/shift
    auto y = gn.forward(x);
    const int cpg = 2, plane = 25;
    for (int n = 0; n < 2; ++n)
        for (int g = 0; g < 3; ++g) {
            double mean = 0.0, var = 0.0;
            for (int cc = 0; cc < cpg; ++cc)
                for (int i = 0; i < plane; ++i)
                    mean += y.data[((n * 6 + g * cpg + cc) * plane) + i];
            mean /= cpg * plane;
            for (int cc = 0; cc < cpg; ++cc)
                for (int i = 0; i < plane; ++i) {
                    double d = y.data[((n * 6 + g * cpg + cc) * plane) + i] - mean;
                    var += d * d;
                }
            var /= cpg * plane;
            CHECK(std::abs(mean) < 1e-10);
            CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps-stabilized
        }
}

TEST_CASE("group norm gradients match finite differences (affine)")
{
    Rng rng(108);
    GroupNorm<double> gn(4, 2, true);
    for (auto& v : gn.gamma.w.data) v = 1.0 + 0.1 * rng.normal();
    for (auto& v : gn.beta.w.data) v = 0.1 * rng.normal();
    check_grads(gn, randn_like({2, 4, 3, 3}, rng), rng, 1e-5);
}

TEST_CASE("group norm gradients match finite differences (no affine)")
{
    Rng rng(109);
    GroupNorm<double> gn(4, 4, false);
    check_grads(gn, randn_like({1, 4, 4, 4}, rng), rng, 1e-5);
}

TEST_CASE("group norm rejects indivisible group counts")
{
    CHECK_THROWS_AS(GroupNorm<double>(6, 4), std::invalid_argument);
    CHECK_THROWS_AS(GroupNorm<double>(6, 0), std::invalid_argument);
}

TEST_CASE("silu values and gradients")
{
    SiLU<double> act;
    DTensor x({1, 1, 1, 3});
    x.data = {0.0, 1.0, -1.0};
    auto y = act.forward(x);
    CHECK(y.data[0] == doctest::Approx(0.0));
    CHECK(y.data[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));  // [DERIVED]
    CHECK(y.data[2] == doctest::Approx(-1.0 / (1.0 + std::exp(1.0))));

    Rng rng(110);
    auto xr = randn_like({2, 3, 2, 2}, rng);
    auto probe = randn_like({2, 3, 2, 2}, rng);
    act.forward(xr);
    auto gx = act.backward(probe);
    auto loss = [&]() { return dot(act.forward(xr), probe); };
    for (size_t i = 0; i < xr.data.size(); ++i)
        check_close_rel(gx.data[i], fd_slot(xr.data[i], loss), 1e-6);
}

TEST_CASE("upsample and global pool are exact adjoints")  // [DERIVED] <Ax,y>=<x,A'y>
{
    Rng rng(111);
    Upsample2x<double> up;
    auto x = randn_like({2, 3, 4, 4}, rng);
    auto ax = up.forward(x);
    auto y = randn_like(ax.shape, rng);
    auto aty = up.backward(y);
    CHECK(dot(ax, y) == doctest::Approx(dot(x, aty)).epsilon(1e-12));

    GlobalAvgPool<double> gap;
    auto x2 = randn_like({2, 5, 3, 3}, rng);
    auto ax2 = gap.forward(x2);
    auto y2 = randn_like(ax2.shape, rng);
    auto aty2 = gap.backward(y2);
    CHECK(dot(ax2, y2) == doctest::Approx(dot(x2, aty2)).epsilon(1e-12));
}

TEST_CASE("upsample duplicates pixels 2x2")
{
    DTensor x({1, 1, 2, 2});
    x.data = {1, 2, 3, 4};
    Upsample2x<double> up;
    auto y = up.forward(x);
    CHECK(y.shape == std::vector<int>({1, 1, 4, 4}));
    CHECK(y.at(0, 0, 0, 0) == 1);
    CHECK(y.at(0, 0, 1, 1) == 1);
    CHECK(y.at(0, 0, 0, 2) == 2);
    CHECK(y.at(0, 0, 3, 3) == 4);
}

TEST_CASE("concat/split channels round trip")
{
    Rng rng(112);
    auto a = randn_like({2, 3, 4, 4}, rng);
    auto b = randn_like({2, 2, 4, 4}, rng);
    auto cat = concat_channels(a, b);
    REQUIRE(cat.shape == std::vector<int>({2, 5, 4, 4}));
    CHECK(cat.at(1, 0, 2, 2) == a.at(1, 0, 2, 2));
    CHECK(cat.at(1, 3, 2, 2) == b.at(1, 0, 2, 2));
    auto [ra, rb] = split_channels(cat, 3);
    CHECK(ra.data == a.data);
    CHECK(rb.data == b.data);
}

TEST_CASE("self-attention is the identity at initialization")  // [TRIVIAL] zero-init wo
{
    Rng rng(113);
    SelfAttention2d<double> attn(4, 2);
    attn.init(rng);
    auto x = randn_like({2, 4, 3, 3}, rng);
    auto y = attn.forward(x);
    for (size_t i = 0; i < x.data.size(); ++i)
        CHECK(y.data[i] == doctest::Approx(x.data[i]).epsilon(1e-12));
}

TEST_CASE("self-attention gradients match finite differences")
{
    Rng rng(114);
    SelfAttention2d<double> attn(4, 2);
    attn.init(rng);
    // Perturb wo away from zero so its gradient path is exercised.
    for (auto& v : attn.wo.w.data) v = 0.2 * rng.normal();
    check_grads(attn, randn_like({1, 4, 2, 3}, rng), rng, 1e-5);
}

TEST_CASE("adam: first step moves each weight by ~lr against unit gradient")
{
    // [DERIVED] bias-corrected first step is exactly lr * g / (|g| + eps').
    Param<double> p({2});
    p.w.data = {1.0, -2.0};
    p.g.data = {0.5, -3.0};
    Adam<double> opt;
    opt.lr = 0.1;
    std::vector<Param<double>*> ps = {&p};
    opt.step(ps);
    CHECK(p.w.data[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-4));
    CHECK(p.w.data[1] == doctest::Approx(-2.0 + 0.1).epsilon(1e-4));
}

TEST_CASE("adam converges on a quadratic")
{
    Param<double> p({1});
    p.w.data = {5.0};
    Adam<double> opt;
    opt.lr = 0.05;
    std::vector<Param<double>*> ps = {&p};
    for (int i = 0; i < 2000; ++i) {
        p.zero_grad();
        p.g.data[0] = 2.0 * (p.w.data[0] - 1.5);  // d/dw (w - 1.5)^2
        opt.step(ps);
    }
    CHECK(p.w.data[0] == doctest::Approx(1.5).epsilon(1e-3));
}
