#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "uad/rng.hpp"

namespace uad {

// 64-byte-aligned storage for every buffer the linear-algebra kernels touch.
// Vectorized kernels peel loops to an alignment boundary, so reduction order
// — and therefore the low bits of sums — would otherwise depend on where the
// heap happened to place a buffer; pinning the alignment keeps training and
// inference bitwise reproducible.
template <typename T>
struct AlignedAlloc {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAlloc() = default;
    template <typename U>
    AlignedAlloc(const AlignedAlloc<U>&) noexcept {}

    T* allocate(size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
    }
    void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    bool operator==(const AlignedAlloc<U>&) const noexcept {
        return true;
    }
};

template <typename T>
using AlignedVec = std::vector<T, AlignedAlloc<T>>;

// Dense row-major tensor used by the network code. Rank is either 2 ([N, D])
// or 4 ([N, C, H, W]); shape is kept dynamic so the same type serves both.
template <typename S>
struct Tensor {
    std::vector<int> shape;
    AlignedVec<S> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> shp) : shape(std::move(shp)) {
        data.assign(static_cast<size_t>(numel_of(shape)), S(0));
    }

    static int64_t numel_of(const std::vector<int>& shp) {
        int64_t n = 1;
        for (int d : shp) {
            if (d <= 0) throw std::invalid_argument("tensor dim must be positive");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    // Rank-4 accessors.
    int n() const { return shape[0]; }
    int c() const { return shape[1]; }
    int h() const { return shape[2]; }
    int w() const { return shape[3]; }

    S& at(int in, int ic, int ih, int iw) {
        return data[((static_cast<size_t>(in) * c() + ic) * h() + ih) * w() + iw];
    }
    S at(int in, int ic, int ih, int iw) const {
        return data[((static_cast<size_t>(in) * c() + ic) * h() + ih) * w() + iw];
    }

    // Rank-2 accessors.
    S& at(int in, int id) { return data[static_cast<size_t>(in) * dim(1) + id]; }
    S at(int in, int id) const { return data[static_cast<size_t>(in) * dim(1) + id]; }

    void zero() { std::fill(data.begin(), data.end(), S(0)); }
    void fill(S v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    static Tensor zeros(std::vector<int> shp) { return Tensor(std::move(shp)); }

    static Tensor randn(std::vector<int> shp, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(shp));
        for (auto& v : t.data) v = static_cast<S>(rng.normal() * stddev);
        return t;
    }
};

template <typename S>
Tensor<S>& operator+=(Tensor<S>& a, const Tensor<S>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("tensor shape mismatch in +=");
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
    return a;
}

using FTensor = Tensor<float>;

}  // namespace uad
