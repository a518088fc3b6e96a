#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <omp.h>

#include "flashsplit/core/kernels.hpp"
#include "test_util.hpp"

using namespace flashsplit;

TEST_CASE("conv2d forward matches the serial reference bit for bit") {
    Rng rng(11);
    for (auto [stride, pad] : {std::pair<int, int>{1, 1}, {2, 1}, {1, 0}, {2, 0}}) {
        Tensor x = randn(rng, 2, 3, 13, 9);
        Tensor w = randn(rng, 5, 3, 3, 3);
        Tensor b = randn(rng, 1, 5, 1, 1);
        CHECK(bits_equal(ref::conv2d(x, w, b, stride, pad), kern::conv2d(x, w, b, stride, pad)));
    }
    Tensor x = randn(rng, 3, 6, 8, 8);
    Tensor w1 = randn(rng, 4, 6, 1, 1);
    Tensor b1 = randn(rng, 1, 4, 1, 1);
    CHECK(bits_equal(ref::conv2d(x, w1, b1, 1, 0), kern::conv2d(x, w1, b1, 1, 0)));
}

TEST_CASE("conv2d backward kernels match the serial reference bit for bit") {
    Rng rng(12);
    for (int stride : {1, 2}) {
        Tensor x = randn(rng, 2, 4, 12, 10);
        Tensor w = randn(rng, 6, 4, 3, 3);
        Tensor b = randn(rng, 1, 6, 1, 1);
        Tensor y = kern::conv2d(x, w, b, stride, 1);
        Tensor gy = randn(rng, y.n, y.c, y.h, y.w);
        CHECK(bits_equal(ref::conv2d_bwd_x(gy, w, stride, 1, 12, 10),
                         kern::conv2d_bwd_x(gy, w, stride, 1, 12, 10)));
        CHECK(bits_equal(ref::conv2d_bwd_w(gy, x, 3, 3, stride, 1),
                         kern::conv2d_bwd_w(gy, x, 3, 3, stride, 1)));
        CHECK(bits_equal(ref::conv2d_bwd_b(gy), kern::conv2d_bwd_b(gy)));
    }
}

TEST_CASE("bmm matches the serial reference for every transpose and broadcast") {
    Rng rng(13);
    for (bool ta : {false, true})
        for (bool tb : {false, true})
            for (int nb : {3, 1}) {
                int M = 4, K = 5, N = 6;
                Tensor a = ta ? randn(rng, 3, K, M, 1) : randn(rng, 3, M, K, 1);
                Tensor b = tb ? randn(rng, nb, N, K, 1) : randn(rng, nb, K, N, 1);
                CHECK(bits_equal(ref::bmm(a, ta, b, tb), kern::bmm(a, ta, b, tb)));
            }
}

TEST_CASE("group_norm, softmax_h, silu and upsample2x match the serial reference") {
    Rng rng(14);
    Tensor x = randn(rng, 2, 12, 7, 5);
    Tensor gamma = randn(rng, 1, 12, 1, 1);
    Tensor beta = randn(rng, 1, 12, 1, 1);
    GnCache c1, c2;
    CHECK(bits_equal(ref::group_norm(x, 4, gamma, beta, 1e-5, c1),
                     kern::group_norm(x, 4, gamma, beta, 1e-5, c2)));
    CHECK(bits_equal(c1.mean, c2.mean));
    CHECK(bits_equal(c1.rstd, c2.rstd));

    Tensor t = randn(rng, 2, 9, 16, 1);
    CHECK(bits_equal(ref::softmax_h(t), kern::softmax_h(t)));
    CHECK(bits_equal(ref::silu(x), kern::silu(x)));
    CHECK(bits_equal(ref::upsample2x(x), kern::upsample2x(x)));
}

TEST_CASE("thread count does not change optimized kernel results") {
    Rng rng(15);
    Tensor x = randn(rng, 2, 8, 16, 16);
    Tensor w = randn(rng, 8, 8, 3, 3);
    Tensor b = randn(rng, 1, 8, 1, 1);
    int keep = omp_get_max_threads();
    omp_set_num_threads(1);
    Tensor y1 = kern::conv2d(x, w, b, 1, 1);
    Tensor gy = randn(rng, y1.n, y1.c, y1.h, y1.w);
    Tensor gw1 = kern::conv2d_bwd_w(gy, x, 3, 3, 1, 1);
    omp_set_num_threads(4);
    Tensor y4 = kern::conv2d(x, w, b, 1, 1);
    Tensor gw4 = kern::conv2d_bwd_w(gy, x, 3, 3, 1, 1);
    omp_set_num_threads(keep);
    CHECK(bits_equal(y1, y4));
    CHECK(bits_equal(gw1, gw4));
}

static Tensor naive_depthwise(const Tensor& x, const std::vector<double>& k, int kh, int kw) {
    Tensor y(x.n, x.c, x.h - kh + 1, x.w - kw + 1);
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c)
            for (int oy = 0; oy < y.h; ++oy)
                for (int ox = 0; ox < y.w; ++ox) {
                    double s = 0.0;
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx)
                            s += k[size_t(ky) * kw + kx] * x.at(n, c, oy + ky, ox + kx);
                    y.at(n, c, oy, ox) = s;
                }
    return y;
}

TEST_CASE("depthwise_valid matches a naive loop and its adjoint") {
    Rng rng(16);
    Tensor x = randn(rng, 2, 3, 9, 8);
    std::vector<double> k(15);
    for (double& v : k) v = rng.normal();
    Tensor y = kern::depthwise_valid(x, k, 5, 3);
    Tensor ref = naive_depthwise(x, k, 5, 3);
    CHECK(y.same_shape(ref));
    CHECK(max_abs_diff(y, ref) < 1e-12);

    Tensor gy = randn(rng, y.n, y.c, y.h, y.w);
    Tensor gx = kern::depthwise_valid_bwd_x(gy, k, 5, 3, x.h, x.w);
    Tensor gref(x.n, x.c, x.h, x.w);
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c)
            for (int oy = 0; oy < y.h; ++oy)
                for (int ox = 0; ox < y.w; ++ox)
                    for (int ky = 0; ky < 5; ++ky)
                        for (int kx = 0; kx < 3; ++kx)
                            gref.at(n, c, oy + ky, ox + kx)
                                += k[size_t(ky) * 3 + kx] * gy.at(n, c, oy, ox);
    CHECK(max_abs_diff(gx, gref) < 1e-12);
}
