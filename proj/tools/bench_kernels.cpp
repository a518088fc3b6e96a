#include <chrono>
#include <cstdio>
#include <functional>

#include <omp.h>

#include "flashsplit/core/kernels.hpp"
#include "flashsplit/core/rng.hpp"

using namespace flashsplit;

static Tensor randn(int n, int c, int h, int w, Rng& rng) {
    Tensor t(n, c, h, w);
    for (double& v : t.v) v = rng.normal();
    return t;
}

static double best_ms(const std::function<void()>& fn, int reps) {
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        fn();
        auto t1 = std::chrono::steady_clock::now();
        double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        if (ms < best) best = ms;
    }
    return best;
}

static void report(const char* name, double ref_ms, double kern_ms, bool exact, double gflop) {
    std::printf("%-18s ref %9.3f ms   omp %9.3f ms   speedup %5.2fx   bit-exact %s", name, ref_ms,
                kern_ms, ref_ms / kern_ms, exact ? "yes" : "NO");
    if (gflop > 0.0) std::printf("   %7.2f GFLOP/s", gflop / (kern_ms * 1e-3) * 1e-9);
    std::printf("\n");
}

int main() {
    const int reps = 5;
    Rng rng(42);
    std::printf("threads: %d\n", omp_get_max_threads());

    {
        Tensor x = randn(4, 32, 64, 64, rng);
        Tensor w = randn(32, 32, 3, 3, rng);
        Tensor b = randn(1, 32, 1, 1, rng);
        Tensor a = ref::conv2d(x, w, b, 1, 1);
        Tensor o = kern::conv2d(x, w, b, 1, 1);
        double flop = 2.0 * 4 * 32 * 64 * 64 * 32 * 9;
        report("conv2d 3x3", best_ms([&] { ref::conv2d(x, w, b, 1, 1); }, reps),
               best_ms([&] { kern::conv2d(x, w, b, 1, 1); }, reps), bits_equal(a, o), flop);

        Tensor gy = randn(4, 32, 64, 64, rng);
        Tensor ax = ref::conv2d_bwd_x(gy, w, 1, 1, 64, 64);
        Tensor ox = kern::conv2d_bwd_x(gy, w, 1, 1, 64, 64);
        report("conv2d_bwd_x", best_ms([&] { ref::conv2d_bwd_x(gy, w, 1, 1, 64, 64); }, reps),
               best_ms([&] { kern::conv2d_bwd_x(gy, w, 1, 1, 64, 64); }, reps), bits_equal(ax, ox),
               flop);

        Tensor aw = ref::conv2d_bwd_w(gy, x, 3, 3, 1, 1);
        Tensor ow = kern::conv2d_bwd_w(gy, x, 3, 3, 1, 1);
        report("conv2d_bwd_w", best_ms([&] { ref::conv2d_bwd_w(gy, x, 3, 3, 1, 1); }, reps),
               best_ms([&] { kern::conv2d_bwd_w(gy, x, 3, 3, 1, 1); }, reps), bits_equal(aw, ow),
               flop);
    }

    {
        Tensor a = randn(16, 64, 256, 1, rng);
        Tensor b = randn(16, 256, 64, 1, rng);
        Tensor ra = ref::bmm(a, false, b, false);
        Tensor ka = kern::bmm(a, false, b, false);
        report("bmm 64x256x64", best_ms([&] { ref::bmm(a, false, b, false); }, reps),
               best_ms([&] { kern::bmm(a, false, b, false); }, reps), bits_equal(ra, ka),
               2.0 * 16 * 64 * 256 * 64);
    }

    {
        Tensor x = randn(8, 64, 32, 32, rng);
        Tensor gamma = randn(1, 64, 1, 1, rng);
        Tensor beta = randn(1, 64, 1, 1, rng);
        GnCache c1, c2;
        Tensor ra = ref::group_norm(x, 8, gamma, beta, 1e-5, c1);
        Tensor ka = kern::group_norm(x, 8, gamma, beta, 1e-5, c2);
        report("group_norm", best_ms([&] { ref::group_norm(x, 8, gamma, beta, 1e-5, c1); }, reps),
               best_ms([&] { kern::group_norm(x, 8, gamma, beta, 1e-5, c2); }, reps),
               bits_equal(ra, ka), 0.0);
    }

    {
        Tensor x = randn(16, 16, 16, 1, rng);
        Tensor ra = ref::softmax_h(x);
        Tensor ka = kern::softmax_h(x);
        report("softmax_h", best_ms([&] { ref::softmax_h(x); }, reps),
               best_ms([&] { kern::softmax_h(x); }, reps), bits_equal(ra, ka), 0.0);
    }

    {
        Tensor x = randn(8, 32, 32, 32, rng);
        Tensor ra = ref::silu(x);
        Tensor ka = kern::silu(x);
        report("silu", best_ms([&] { ref::silu(x); }, reps),
               best_ms([&] { kern::silu(x); }, reps), bits_equal(ra, ka), 0.0);
        Tensor ru = ref::upsample2x(x);
        Tensor ku = kern::upsample2x(x);
        report("upsample2x", best_ms([&] { ref::upsample2x(x); }, reps),
               best_ms([&] { kern::upsample2x(x); }, reps), bits_equal(ru, ku), 0.0);
    }

    return 0;
}
