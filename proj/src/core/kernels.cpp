#include "flashsplit/core/kernels.hpp"

#include <cmath>

#include "flashsplit/core/error.hpp"
#include "flashsplit/core/exec.hpp"

namespace flashsplit {

namespace {

int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

void check_conv_shapes(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    require(stride >= 1 && pad >= 0, ErrorKind::contract, "conv2d: bad stride/pad");
    require(x.c == w.c, ErrorKind::shape, "conv2d: input channels mismatch");
    require(b.n == 1 && b.c == w.n && b.h == 1 && b.w == 1, ErrorKind::shape,
            "conv2d: bias shape mismatch");
    require(conv_out(x.h, w.h, stride, pad) >= 1 && conv_out(x.w, w.w, stride, pad) >= 1,
            ErrorKind::shape, "conv2d: output would be empty");
}

// First ox with ox*stride + k0 >= 0, clamped to 0.
inline int ox_lo(int k0, int stride) { return k0 >= 0 ? 0 : (-k0 + stride - 1) / stride; }
// One past the last ox with ox*stride + k0 <= limit-1.
inline int ox_hi(int k0, int stride, int limit, int out) {
    const int top = limit - 1 - k0;
    if (top < 0) return 0;
    const int hi = top / stride + 1;
    return hi < out ? hi : out;
}

} // namespace

namespace ref {

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    check_conv_shapes(x, w, b, stride, pad);
    const int Ho = conv_out(x.h, w.h, stride, pad);
    const int Wo = conv_out(x.w, w.w, stride, pad);
    Tensor y(x.n, w.n, Ho, Wo);
    for (int n = 0; n < x.n; ++n)
        for (int oc = 0; oc < w.n; ++oc)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    double acc = b.v[static_cast<size_t>(oc)];
                    for (int ic = 0; ic < x.c; ++ic)
                        for (int ky = 0; ky < w.h; ++ky)
                            for (int kx = 0; kx < w.w; ++kx) {
                                const int iy = oy * stride + ky - pad;
                                const int ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                                acc += x.at(n, ic, iy, ix) * w.at(oc, ic, ky, kx);
                            }
                    y.at(n, oc, oy, ox) = acc;
                }
    return y;
}

Tensor conv2d_bwd_x(const Tensor& gy, const Tensor& w, int stride, int pad, int H, int W) {
    Tensor gx(gy.n, w.c, H, W);
    for (int n = 0; n < gy.n; ++n)
        for (int ic = 0; ic < w.c; ++ic)
            for (int iy = 0; iy < H; ++iy)
                for (int ix = 0; ix < W; ++ix) {
                    double acc = 0.0;
                    for (int oc = 0; oc < w.n; ++oc)
                        for (int ky = 0; ky < w.h; ++ky)
                            for (int kx = 0; kx < w.w; ++kx) {
                                const int ty = iy + pad - ky;
                                const int tx = ix + pad - kx;
                                if (ty < 0 || tx < 0 || ty % stride || tx % stride) continue;
                                const int oy = ty / stride;
                                const int ox = tx / stride;
                                if (oy >= gy.h || ox >= gy.w) continue;
                                acc += gy.at(n, oc, oy, ox) * w.at(oc, ic, ky, kx);
                            }
                    gx.at(n, ic, iy, ix) = acc;
                }
    return gx;
}

Tensor conv2d_bwd_w(const Tensor& gy, const Tensor& x, int kh, int kw, int stride, int pad) {
    Tensor gw(gy.c, x.c, kh, kw);
    for (int oc = 0; oc < gy.c; ++oc)
        for (int ic = 0; ic < x.c; ++ic)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    double acc = 0.0;
                    for (int n = 0; n < gy.n; ++n)
                        for (int oy = 0; oy < gy.h; ++oy)
                            for (int ox = 0; ox < gy.w; ++ox) {
                                const int iy = oy * stride + ky - pad;
                                const int ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                                acc += gy.at(n, oc, oy, ox) * x.at(n, ic, iy, ix);
                            }
                    gw.at(oc, ic, ky, kx) = acc;
                }
    return gw;
}

Tensor conv2d_bwd_b(const Tensor& gy) {
    Tensor gb(1, gy.c, 1, 1);
    for (int oc = 0; oc < gy.c; ++oc) {
        double acc = 0.0;
        for (int n = 0; n < gy.n; ++n)
            for (int oy = 0; oy < gy.h; ++oy)
                for (int ox = 0; ox < gy.w; ++ox) acc += gy.at(n, oc, oy, ox);
        gb.v[static_cast<size_t>(oc)] = acc;
    }
    return gb;
}

Tensor bmm(const Tensor& a, bool ta, const Tensor& b, bool tb) {
    const int B = a.n;
    const int M = ta ? a.h : a.c;
    const int K = ta ? a.c : a.h;
    const int Kb = tb ? b.h : b.c;
    const int P = tb ? b.c : b.h;
    require(a.w == 1 && b.w == 1, ErrorKind::shape, "bmm: operands must have w == 1");
    require(K == Kb, ErrorKind::shape, "bmm: inner dimensions mismatch");
    require(b.n == 1 || b.n == B, ErrorKind::shape, "bmm: batch mismatch");
    Tensor c(B, M, P, 1);
    for (int bi = 0; bi < B; ++bi) {
        const int bb = b.n == 1 ? 0 : bi;
        for (int m = 0; m < M; ++m)
            for (int p = 0; p < P; ++p) {
                double acc = 0.0;
                for (int k = 0; k < K; ++k) {
                    const double av = ta ? a.at(bi, k, m, 0) : a.at(bi, m, k, 0);
                    const double bv = tb ? b.at(bb, p, k, 0) : b.at(bb, k, p, 0);
                    acc += av * bv;
                }
                c.at(bi, m, p, 0) = acc;
            }
    }
    return c;
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  double eps, GnCache& cache) {
    require(x.c % groups == 0, ErrorKind::shape, "group_norm: channels not divisible by groups");
    const int cg = x.c / groups;
    const int m = cg * x.h * x.w;
    Tensor y(x.n, x.c, x.h, x.w);
    cache.mean = Tensor(x.n, groups, 1, 1);
    cache.rstd = Tensor(x.n, groups, 1, 1);
    for (int n = 0; n < x.n; ++n)
        for (int g = 0; g < groups; ++g) {
            const double* base = &x.v[x.idx(n, g * cg, 0, 0)];
            double mean = 0.0;
            for (int i = 0; i < m; ++i) mean += base[i];
            mean /= m;
            double var = 0.0;
            for (int i = 0; i < m; ++i) {
                const double d = base[i] - mean;
                var += d * d;
            }
            var /= m;
            const double rstd = 1.0 / std::sqrt(var + eps);
            cache.mean.at(n, g, 0, 0) = mean;
            cache.rstd.at(n, g, 0, 0) = rstd;
            for (int c = 0; c < cg; ++c) {
                const int ch = g * cg + c;
                const double ga = gamma.v[static_cast<size_t>(ch)];
                const double be = beta.v[static_cast<size_t>(ch)];
                for (int i = 0; i < x.h * x.w; ++i) {
                    const double xv = x.v[x.idx(n, ch, 0, 0) + static_cast<size_t>(i)];
                    y.v[y.idx(n, ch, 0, 0) + static_cast<size_t>(i)] =
                        (xv - mean) * rstd * ga + be;
                }
            }
        }
    return y;
}

Tensor softmax_h(const Tensor& x) {
    require(x.w == 1, ErrorKind::shape, "softmax_h: expects w == 1");
    Tensor y(x.n, x.c, x.h, x.w);
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c) {
            const double* row = &x.v[x.idx(n, c, 0, 0)];
            double* out = &y.v[y.idx(n, c, 0, 0)];
            double mx = row[0];
            for (int i = 1; i < x.h; ++i) mx = row[i] > mx ? row[i] : mx;
            double sum = 0.0;
            for (int i = 0; i < x.h; ++i) {
                out[i] = std::exp(row[i] - mx);
                sum += out[i];
            }
            for (int i = 0; i < x.h; ++i) out[i] /= sum;
        }
    return y;
}

Tensor silu(const Tensor& x) {
    Tensor y(x.n, x.c, x.h, x.w);
    for (size_t i = 0; i < x.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x.v[i]));
        y.v[i] = x.v[i] * s;
    }
    return y;
}

Tensor upsample2x(const Tensor& x) {
    Tensor y(x.n, x.c, x.h * 2, x.w * 2);
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c)
            for (int iy = 0; iy < y.h; ++iy)
                for (int ix = 0; ix < y.w; ++ix)
                    y.at(n, c, iy, ix) = x.at(n, c, iy / 2, ix / 2);
    return y;
}

} // namespace ref

namespace kern {

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    check_conv_shapes(x, w, b, stride, pad);
    const int Ho = conv_out(x.h, w.h, stride, pad);
    const int Wo = conv_out(x.w, w.w, stride, pad);
    Tensor y(x.n, w.n, Ho, Wo);
    parallel_for(static_cast<std::ptrdiff_t>(x.n) * w.n, [&](std::ptrdiff_t job) {
        const int n = static_cast<int>(job) / w.n;
        const int oc = static_cast<int>(job) % w.n;
        double* yplane = &y.v[y.idx(n, oc, 0, 0)];
        const double bias = b.v[static_cast<size_t>(oc)];
        for (int i = 0; i < Ho * Wo; ++i) yplane[i] = bias;
        for (int ic = 0; ic < x.c; ++ic)
            for (int ky = 0; ky < w.h; ++ky)
                for (int kx = 0; kx < w.w; ++kx) {
                    const double wv = w.at(oc, ic, ky, kx);
                    const int lo = ox_lo(kx - pad, stride);
                    const int hi = ox_hi(kx - pad, stride, x.w, Wo);
                    for (int oy = 0; oy < Ho; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= x.h) continue;
                        const double* xrow = &x.v[x.idx(n, ic, iy, 0)];
                        double* yrow = yplane + static_cast<size_t>(oy) * Wo;
                        if (stride == 1) {
                            const double* xs = xrow + kx - pad;
                            for (int ox = lo; ox < hi; ++ox) yrow[ox] += wv * xs[ox];
                        } else {
                            for (int ox = lo; ox < hi; ++ox)
                                yrow[ox] += wv * xrow[ox * stride + kx - pad];
                        }
                    }
                }
    });
    return y;
}

Tensor conv2d_bwd_x(const Tensor& gy, const Tensor& w, int stride, int pad, int H, int W) {
    Tensor gx(gy.n, w.c, H, W);
    parallel_for(static_cast<std::ptrdiff_t>(gy.n) * w.c, [&](std::ptrdiff_t job) {
        const int n = static_cast<int>(job) / w.c;
        const int ic = static_cast<int>(job) % w.c;
        double* gplane = &gx.v[gx.idx(n, ic, 0, 0)];
        for (int oc = 0; oc < w.n; ++oc)
            for (int ky = 0; ky < w.h; ++ky)
                for (int kx = 0; kx < w.w; ++kx) {
                    const double wv = w.at(oc, ic, ky, kx);
                    const int lo = ox_lo(kx - pad, stride);
                    const int hi = ox_hi(kx - pad, stride, W, gy.w);
                    for (int oy = 0; oy < gy.h; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        const double* gyrow = &gy.v[gy.idx(n, oc, oy, 0)];
                        double* grow = gplane + static_cast<size_t>(iy) * W;
                        if (stride == 1) {
                            double* gs = grow + kx - pad;
                            for (int ox = lo; ox < hi; ++ox) gs[ox] += wv * gyrow[ox];
                        } else {
                            for (int ox = lo; ox < hi; ++ox)
                                grow[ox * stride + kx - pad] += wv * gyrow[ox];
                        }
                    }
                }
    });
    return gx;
}

Tensor conv2d_bwd_w(const Tensor& gy, const Tensor& x, int kh, int kw, int stride, int pad) {
    Tensor gw(gy.c, x.c, kh, kw);
    parallel_for(static_cast<std::ptrdiff_t>(gy.c) * x.c, [&](std::ptrdiff_t job) {
        const int oc = static_cast<int>(job) / x.c;
        const int ic = static_cast<int>(job) % x.c;
        std::vector<double> acc(static_cast<size_t>(kh) * kw, 0.0);
        for (int n = 0; n < gy.n; ++n)
            for (int oy = 0; oy < gy.h; ++oy) {
                const double* gyrow = &gy.v[gy.idx(n, oc, oy, 0)];
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= x.h) continue;
                    const double* xrow = &x.v[x.idx(n, ic, iy, 0)];
                    double* arow = &acc[static_cast<size_t>(ky) * kw];
                    for (int kx = 0; kx < kw; ++kx) {
                        const int lo = ox_lo(kx - pad, stride);
                        const int hi = ox_hi(kx - pad, stride, x.w, gy.w);
                        double a = arow[kx];
                        if (stride == 1) {
                            const double* xs = xrow + kx - pad;
                            for (int ox = lo; ox < hi; ++ox) a += gyrow[ox] * xs[ox];
                        } else {
                            for (int ox = lo; ox < hi; ++ox)
                                a += gyrow[ox] * xrow[ox * stride + kx - pad];
                        }
                        arow[kx] = a;
                    }
                }
            }
        for (int i = 0; i < kh * kw; ++i)
            gw.v[gw.idx(oc, ic, 0, 0) + static_cast<size_t>(i)] = acc[static_cast<size_t>(i)];
    });
    return gw;
}

Tensor conv2d_bwd_b(const Tensor& gy) {
    Tensor gb(1, gy.c, 1, 1);
    parallel_for(gy.c, [&](std::ptrdiff_t oc) {
        double acc = 0.0;
        for (int n = 0; n < gy.n; ++n) {
            const double* plane = &gy.v[gy.idx(n, static_cast<int>(oc), 0, 0)];
            for (int i = 0; i < gy.h * gy.w; ++i) acc += plane[i];
        }
        gb.v[static_cast<size_t>(oc)] = acc;
    });
    return gb;
}

Tensor depthwise_valid(const Tensor& x, const std::vector<double>& k, int kh, int kw) {
    require(static_cast<int>(k.size()) == kh * kw, ErrorKind::shape,
            "depthwise_valid: kernel size mismatch");
    require(x.h >= kh && x.w >= kw, ErrorKind::shape, "depthwise_valid: input smaller than kernel");
    const int Ho = x.h - kh + 1;
    const int Wo = x.w - kw + 1;
    Tensor y(x.n, x.c, Ho, Wo);
    parallel_for(static_cast<std::ptrdiff_t>(x.n) * x.c, [&](std::ptrdiff_t job) {
        const int n = static_cast<int>(job) / x.c;
        const int c = static_cast<int>(job) % x.c;
        for (int oy = 0; oy < Ho; ++oy) {
            double* yrow = &y.v[y.idx(n, c, oy, 0)];
            for (int ky = 0; ky < kh; ++ky) {
                const double* xrow = &x.v[x.idx(n, c, oy + ky, 0)];
                for (int kx = 0; kx < kw; ++kx) {
                    const double wv = k[static_cast<size_t>(ky) * kw + kx];
                    const double* xs = xrow + kx;
                    for (int ox = 0; ox < Wo; ++ox) yrow[ox] += wv * xs[ox];
                }
            }
        }
    });
    return y;
}

Tensor depthwise_valid_bwd_x(const Tensor& gy, const std::vector<double>& k, int kh, int kw,
                             int H, int W) {
    Tensor gx(gy.n, gy.c, H, W);
    parallel_for(static_cast<std::ptrdiff_t>(gy.n) * gy.c, [&](std::ptrdiff_t job) {
        const int n = static_cast<int>(job) / gy.c;
        const int c = static_cast<int>(job) % gy.c;
        for (int oy = 0; oy < gy.h; ++oy) {
            const double* gyrow = &gy.v[gy.idx(n, c, oy, 0)];
            for (int ky = 0; ky < kh; ++ky) {
                double* grow = &gx.v[gx.idx(n, c, oy + ky, 0)];
                for (int kx = 0; kx < kw; ++kx) {
                    const double wv = k[static_cast<size_t>(ky) * kw + kx];
                    double* gs = grow + kx;
                    for (int ox = 0; ox < gy.w; ++ox) gs[ox] += wv * gyrow[ox];
                }
            }
        }
    });
    return gx;
}

Tensor bmm(const Tensor& a, bool ta, const Tensor& b, bool tb) {
    const int B = a.n;
    const int M = ta ? a.h : a.c;
    const int K = ta ? a.c : a.h;
    const int Kb = tb ? b.h : b.c;
    const int P = tb ? b.c : b.h;
    require(a.w == 1 && b.w == 1, ErrorKind::shape, "bmm: operands must have w == 1");
    require(K == Kb, ErrorKind::shape, "bmm: inner dimensions mismatch");
    require(b.n == 1 || b.n == B, ErrorKind::shape, "bmm: batch mismatch");
    Tensor c(B, M, P, 1);
    parallel_for(static_cast<std::ptrdiff_t>(B) * M, [&](std::ptrdiff_t job) {
        const int bi = static_cast<int>(job) / M;
        const int m = static_cast<int>(job) % M;
        const int bb = b.n == 1 ? 0 : bi;
        double* crow = &c.v[c.idx(bi, m, 0, 0)];
        if (!ta && !tb) {
            const double* arow = &a.v[a.idx(bi, m, 0, 0)];
            for (int k = 0; k < K; ++k) {
                const double av = arow[k];
                const double* brow = &b.v[b.idx(bb, k, 0, 0)];
                for (int p = 0; p < P; ++p) crow[p] += av * brow[p];
            }
        } else {
            for (int p = 0; p < P; ++p) {
                double acc = 0.0;
                for (int k = 0; k < K; ++k) {
                    const double av = ta ? a.at(bi, k, m, 0) : a.at(bi, m, k, 0);
                    const double bv = tb ? b.at(bb, p, k, 0) : b.at(bb, k, p, 0);
                    acc += av * bv;
                }
                crow[p] = acc;
            }
        }
    });
    return c;
}

void bmm_bwd(const Tensor& gy, const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor* ga,
             Tensor* gb) {
    // gy is [B,M,P]. dA = gy op B, dB = A op gy, transposed per the flags.
    if (ga) {
        if (ta && b.n == 1 && gy.n > 1) {
            // dA_i = B * gy_i^T; compute gy * B^T batched, then transpose per batch
            Tensor g = bmm(gy, false, b, !tb);
            require(g.n == a.n && g.c == a.h && g.h == a.c, ErrorKind::shape, "bmm_bwd: ga shape");
            const int K = a.c, M = a.h;
            parallel_for(static_cast<std::ptrdiff_t>(a.size()), [&](std::ptrdiff_t i) {
                const int bi = static_cast<int>(i) / (K * M);
                const int k = (static_cast<int>(i) / M) % K;
                const int m = static_cast<int>(i) % M;
                ga->v[static_cast<size_t>(i)] += g.v[g.idx(bi, m, k, 0)];
            });
        } else {
            Tensor g = ta ? bmm(b, tb, gy, true) : bmm(gy, false, b, !tb);
            require(g.same_shape(a), ErrorKind::shape, "bmm_bwd: ga shape");
            parallel_for(static_cast<std::ptrdiff_t>(g.size()),
                         [&](std::ptrdiff_t i) { ga->v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)]; });
        }
    }
    if (gb) {
        Tensor g = tb ? bmm(gy, true, a, ta) : bmm(a, !ta, gy, false);
        if (b.n == 1 && gy.n > 1) {
            // broadcast operand: reduce over the batch, b ascending
            parallel_for(static_cast<std::ptrdiff_t>(b.size()), [&](std::ptrdiff_t i) {
                double acc = 0.0;
                for (int bi = 0; bi < gy.n; ++bi)
                    acc += g.v[static_cast<size_t>(bi) * b.size() + static_cast<size_t>(i)];
                gb->v[static_cast<size_t>(i)] += acc;
            });
        } else {
            parallel_for(static_cast<std::ptrdiff_t>(g.size()),
                         [&](std::ptrdiff_t i) { gb->v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)]; });
        }
    }
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  double eps, GnCache& cache) {
    require(x.c % groups == 0, ErrorKind::shape, "group_norm: channels not divisible by groups");
    const int cg = x.c / groups;
    const int m = cg * x.h * x.w;
    Tensor y(x.n, x.c, x.h, x.w);
    cache.mean = Tensor(x.n, groups, 1, 1);
    cache.rstd = Tensor(x.n, groups, 1, 1);
    parallel_for(static_cast<std::ptrdiff_t>(x.n) * groups, [&](std::ptrdiff_t job) {
        const int n = static_cast<int>(job) / groups;
        const int g = static_cast<int>(job) % groups;
        const double* base = &x.v[x.idx(n, g * cg, 0, 0)];
        double mean = 0.0;
        for (int i = 0; i < m; ++i) mean += base[i];
        mean /= m;
        double var = 0.0;
        for (int i = 0; i < m; ++i) {
            const double d = base[i] - mean;
            var += d * d;
        }
        var /= m;
        const double rstd = 1.0 / std::sqrt(var + eps);
        cache.mean.at(n, g, 0, 0) = mean;
        cache.rstd.at(n, g, 0, 0) = rstd;
        double* out = &y.v[y.idx(n, g * cg, 0, 0)];
        const int hw = x.h * x.w;
        for (int c = 0; c < cg; ++c) {
            const double ga = gamma.v[static_cast<size_t>(g * cg + c)];
            const double be = beta.v[static_cast<size_t>(g * cg + c)];
            for (int i = 0; i < hw; ++i) {
                const size_t o = static_cast<size_t>(c) * hw + i;
                out[o] = (base[o] - mean) * rstd * ga + be;
            }
        }
    });
    return y;
}

void group_norm_bwd(const Tensor& gy, const Tensor& x, int groups, const Tensor& gamma,
                    const GnCache& cache, Tensor* gx, Tensor* dgamma, Tensor* dbeta) {
    const int cg = x.c / groups;
    const int m = cg * x.h * x.w;
    const int hw = x.h * x.w;
    if (gx) {
        parallel_for(static_cast<std::ptrdiff_t>(x.n) * groups, [&](std::ptrdiff_t job) {
            const int n = static_cast<int>(job) / groups;
            const int g = static_cast<int>(job) % groups;
            const double mean = cache.mean.at(n, g, 0, 0);
            const double rstd = cache.rstd.at(n, g, 0, 0);
            const double* xb = &x.v[x.idx(n, g * cg, 0, 0)];
            const double* gb = &gy.v[gy.idx(n, g * cg, 0, 0)];
            double s1 = 0.0, s2 = 0.0;
            for (int c = 0; c < cg; ++c) {
                const double ga = gamma.v[static_cast<size_t>(g * cg + c)];
                for (int i = 0; i < hw; ++i) {
                    const size_t o = static_cast<size_t>(c) * hw + i;
                    const double gyv = gb[o] * ga;
                    s1 += gyv;
                    s2 += gyv * (xb[o] - mean) * rstd;
                }
            }
            double* out = &gx->v[gx->idx(n, g * cg, 0, 0)];
            for (int c = 0; c < cg; ++c) {
                const double ga = gamma.v[static_cast<size_t>(g * cg + c)];
                for (int i = 0; i < hw; ++i) {
                    const size_t o = static_cast<size_t>(c) * hw + i;
                    const double xh = (xb[o] - mean) * rstd;
                    out[o] += rstd * (gb[o] * ga - (s1 + xh * s2) / m);
                }
            }
        });
    }
    if (dgamma || dbeta) {
        parallel_for(x.c, [&](std::ptrdiff_t cc) {
            const int c = static_cast<int>(cc);
            const int g = c / cg;
            double dg = 0.0, db = 0.0;
            for (int n = 0; n < x.n; ++n) {
                const double mean = cache.mean.at(n, g, 0, 0);
                const double rstd = cache.rstd.at(n, g, 0, 0);
                const double* xp = &x.v[x.idx(n, c, 0, 0)];
                const double* gp = &gy.v[gy.idx(n, c, 0, 0)];
                for (int i = 0; i < hw; ++i) {
                    dg += gp[i] * (xp[i] - mean) * rstd;
                    db += gp[i];
                }
            }
            if (dgamma) dgamma->v[static_cast<size_t>(c)] += dg;
            if (dbeta) dbeta->v[static_cast<size_t>(c)] += db;
        });
    }
}

Tensor softmax_h(const Tensor& x) {
    require(x.w == 1, ErrorKind::shape, "softmax_h: expects w == 1");
    Tensor y(x.n, x.c, x.h, x.w);
    parallel_for(static_cast<std::ptrdiff_t>(x.n) * x.c, [&](std::ptrdiff_t job) {
        const int n = static_cast<int>(job) / x.c;
        const int c = static_cast<int>(job) % x.c;
        const double* row = &x.v[x.idx(n, c, 0, 0)];
        double* out = &y.v[y.idx(n, c, 0, 0)];
        double mx = row[0];
        for (int i = 1; i < x.h; ++i) mx = row[i] > mx ? row[i] : mx;
        double sum = 0.0;
        for (int i = 0; i < x.h; ++i) {
            out[i] = std::exp(row[i] - mx);
            sum += out[i];
        }
        for (int i = 0; i < x.h; ++i) out[i] /= sum;
    });
    return y;
}

Tensor softmax_h_bwd(const Tensor& y, const Tensor& gy) {
    Tensor gx(y.n, y.c, y.h, y.w);
    parallel_for(static_cast<std::ptrdiff_t>(y.n) * y.c, [&](std::ptrdiff_t job) {
        const int n = static_cast<int>(job) / y.c;
        const int c = static_cast<int>(job) % y.c;
        const double* yr = &y.v[y.idx(n, c, 0, 0)];
        const double* gr = &gy.v[gy.idx(n, c, 0, 0)];
        double* out = &gx.v[gx.idx(n, c, 0, 0)];
        double dot = 0.0;
        for (int i = 0; i < y.h; ++i) dot += gr[i] * yr[i];
        for (int i = 0; i < y.h; ++i) out[i] = yr[i] * (gr[i] - dot);
    });
    return gx;
}

Tensor silu(const Tensor& x) {
    Tensor y(x.n, x.c, x.h, x.w);
    parallel_for(static_cast<std::ptrdiff_t>(x.size()), [&](std::ptrdiff_t i) {
        const double s = 1.0 / (1.0 + std::exp(-x.v[static_cast<size_t>(i)]));
        y.v[static_cast<size_t>(i)] = x.v[static_cast<size_t>(i)] * s;
    });
    return y;
}

Tensor silu_bwd(const Tensor& x, const Tensor& gy) {
    Tensor gx(x.n, x.c, x.h, x.w);
    parallel_for(static_cast<std::ptrdiff_t>(x.size()), [&](std::ptrdiff_t i) {
        const double xv = x.v[static_cast<size_t>(i)];
        const double s = 1.0 / (1.0 + std::exp(-xv));
        gx.v[static_cast<size_t>(i)] = gy.v[static_cast<size_t>(i)] * s * (1.0 + xv * (1.0 - s));
    });
    return gx;
}

Tensor upsample2x(const Tensor& x) {
    Tensor y(x.n, x.c, x.h * 2, x.w * 2);
    parallel_for(static_cast<std::ptrdiff_t>(x.n) * x.c, [&](std::ptrdiff_t job) {
        const int n = static_cast<int>(job) / x.c;
        const int c = static_cast<int>(job) % x.c;
        for (int iy = 0; iy < y.h; ++iy) {
            const double* xrow = &x.v[x.idx(n, c, iy / 2, 0)];
            double* yrow = &y.v[y.idx(n, c, iy, 0)];
            for (int ix = 0; ix < y.w; ++ix) yrow[ix] = xrow[ix / 2];
        }
    });
    return y;
}

Tensor upsample2x_bwd(const Tensor& gy) {
    Tensor gx(gy.n, gy.c, gy.h / 2, gy.w / 2);
    parallel_for(static_cast<std::ptrdiff_t>(gx.n) * gx.c, [&](std::ptrdiff_t job) {
        const int n = static_cast<int>(job) / gx.c;
        const int c = static_cast<int>(job) % gx.c;
        for (int iy = 0; iy < gx.h; ++iy) {
            double* out = &gx.v[gx.idx(n, c, iy, 0)];
            const double* r0 = &gy.v[gy.idx(n, c, iy * 2, 0)];
            const double* r1 = &gy.v[gy.idx(n, c, iy * 2 + 1, 0)];
            for (int ix = 0; ix < gx.w; ++ix)
                out[ix] = r0[ix * 2] + r0[ix * 2 + 1] + r1[ix * 2] + r1[ix * 2 + 1];
        }
    });
    return gx;
}

} // namespace kern

} // namespace flashsplit
