#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "uad/tensor.hpp"

namespace uad::nn {

// Trainable tensor with its gradient accumulator and Adam state. Gradients
// accumulate across backward calls until zero_grad().
template <typename S>
struct Param {
    Tensor<S> w;
    Tensor<S> g;
    Tensor<S> m;  // Adam first moment
    Tensor<S> v;  // Adam second moment

    Param() = default;
    explicit Param(std::vector<int> shape)
        : w(shape), g(shape), m(shape), v(std::move(shape)) {}

    void init_randn(Rng& rng, double stddev) {
        for (auto& x : w.data) x = static_cast<S>(rng.normal() * stddev);
    }
    void zero_grad() { g.zero(); }
    int64_t numel() const { return w.numel(); }
};

template <typename S>
struct NamedParam {
    std::string name;
    Param<S>* p;
};

// Adam with bias correction; step() applies one update to every param and
// advances the shared step counter.
template <typename S>
struct Adam {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t t = 0;

    void step(const std::vector<Param<S>*>& params) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (Param<S>* p : params) {
            for (size_t i = 0; i < p->w.data.size(); ++i) {
                double g = static_cast<double>(p->g.data[i]);
                double m = beta1 * p->m.data[i] + (1.0 - beta1) * g;
                double v = beta2 * p->v.data[i] + (1.0 - beta2) * g * g;
                p->m.data[i] = static_cast<S>(m);
                p->v.data[i] = static_cast<S>(v);
                double mhat = m / bc1;
                double vhat = v / bc2;
                p->w.data[i] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

template <typename S>
inline std::vector<Param<S>*> unnamed(const std::vector<NamedParam<S>>& named) {
    std::vector<Param<S>*> out;
    out.reserve(named.size());
    for (const auto& np : named) out.push_back(np.p);
    return out;
}

}  // namespace uad::nn
