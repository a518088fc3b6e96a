#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

namespace flashsplit {

// Dense NCHW tensor of doubles; the one value carrier for network
// activations, parameters and batched images/latents.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_), v(static_cast<size_t>(n_) * c_ * h_ * w_, 0.0) {}

    static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }

    size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }

    size_t idx(int ni, int ci, int y, int x) const {
        return ((static_cast<size_t>(ni) * c + ci) * h + y) * w + x;
    }
    double& at(int ni, int ci, int y, int x) { return v[idx(ni, ci, y, x)]; }
    double at(int ni, int ci, int y, int x) const { return v[idx(ni, ci, y, x)]; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }
};

// Bit-level equality, the strongest equivalence the kernel contracts promise.
inline bool bits_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    if (a.v.empty()) return true;
    return std::memcmp(a.v.data(), b.v.data(), a.size() * sizeof(double)) == 0;
}

} // namespace flashsplit
