#pragma once

#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace flashsplit {

// Global switch between the serial reference kernels and the OpenMP ones.
// Every kernel accumulates in the same per-output-element order in both
// modes, so results are bit-identical; tests flip this to verify that.
enum class Exec { serial, parallel };

inline Exec& exec_mode() {
    static Exec mode = Exec::parallel;
    return mode;
}

template <typename F>
void parallel_for(std::ptrdiff_t n, F&& body) {
    if (exec_mode() == Exec::parallel) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
    } else {
        for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
    }
}

// Reduction with a fixed blocked summation order: partial sums over fixed
// 4096-element blocks, then a serial sum of the partials. The result does
// not depend on the thread count.
template <typename F>
double block_sum(std::ptrdiff_t n, F&& term) {
    constexpr std::ptrdiff_t kBlock = 4096;
    const std::ptrdiff_t nblocks = (n + kBlock - 1) / kBlock;
    std::vector<double> partial(static_cast<size_t>(nblocks), 0.0);
    parallel_for(nblocks, [&](std::ptrdiff_t b) {
        const std::ptrdiff_t lo = b * kBlock;
        const std::ptrdiff_t hi = lo + kBlock < n ? lo + kBlock : n;
        double acc = 0.0;
        for (std::ptrdiff_t i = lo; i < hi; ++i) acc += term(i);
        partial[static_cast<size_t>(b)] = acc;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

} // namespace flashsplit
