#include "flashsplit/core/graph.hpp"

#include <cmath>
#include <memory>
#include <utility>

#include "flashsplit/core/error.hpp"
#include "flashsplit/core/exec.hpp"

namespace flashsplit {

int Graph::push(Tensor value, bool ng) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = ng;
    if (ng) node.grad = Tensor(node.value.n, node.value.c, node.value.h, node.value.w);
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

int Graph::input(Tensor v) { return push(std::move(v), false); }

int Graph::param(const Tensor* value, Tensor* grad_acc) {
    Node node;
    node.ext = value;
    node.ext_grad = grad_acc;
    node.needs_grad = grad_acc != nullptr;
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

const Tensor& Graph::val(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.ext ? *n.ext : n.value;
}

const Tensor& Graph::grad(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.ext_grad ? *n.ext_grad : n.grad;
}

Tensor& Graph::grad_buf(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    return n.ext_grad ? *n.ext_grad : n.grad;
}

void Graph::accumulate(int id, const Tensor& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad) return;
    Tensor& dst = grad_buf(id);
    require(dst.same_shape(g), ErrorKind::shape, "graph: gradient shape mismatch");
    parallel_for(static_cast<std::ptrdiff_t>(g.size()), [&](std::ptrdiff_t i) {
        dst.v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)];
    });
    n.touched = true;
}

void Graph::backward(int root) {
    require(val(root).size() == 1, ErrorKind::contract, "backward: root must be scalar");
    Node& r = nodes_[static_cast<size_t>(root)];
    require(r.needs_grad, ErrorKind::contract, "backward: root does not depend on parameters");
    grad_buf(root).v[0] += 1.0;
    r.touched = true;
    for (int id = root; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.touched && n.back) n.back();
    }
}

int Graph::conv2d(int x, int w, int b, int stride, int pad) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    Tensor y = kern::conv2d(xv, wv, val(b), stride, pad);
    const bool ng = needs_grad(x) || needs_grad(w) || needs_grad(b);
    const int id = push(std::move(y), ng);
    if (ng)
        nodes_[static_cast<size_t>(id)].back = [this, x, w, b, stride, pad, id]() {
            const Tensor& gy = grad(id);
            const Tensor& xv2 = val(x);
            const Tensor& wv2 = val(w);
            if (needs_grad(x))
                accumulate(x, kern::conv2d_bwd_x(gy, wv2, stride, pad, xv2.h, xv2.w));
            if (needs_grad(w))
                accumulate(w, kern::conv2d_bwd_w(gy, xv2, wv2.h, wv2.w, stride, pad));
            if (needs_grad(b)) accumulate(b, kern::conv2d_bwd_b(gy));
        };
    return id;
}

int Graph::group_norm(int x, int gamma, int beta, int groups, double eps) {
    auto cache = std::make_shared<GnCache>();
    Tensor y = kern::group_norm(val(x), groups, val(gamma), val(beta), eps, *cache);
    const bool ng = needs_grad(x) || needs_grad(gamma) || needs_grad(beta);
    const int id = push(std::move(y), ng);
    if (ng)
        nodes_[static_cast<size_t>(id)].back = [this, x, gamma, beta, groups, cache, id]() {
            const Tensor& gy = grad(id);
            const Tensor& xv = val(x);
            Tensor gx(xv.n, xv.c, xv.h, xv.w);
            Tensor dgamma(1, xv.c, 1, 1), dbeta(1, xv.c, 1, 1);
            kern::group_norm_bwd(gy, xv, groups, val(gamma), *cache,
                                 needs_grad(x) ? &gx : nullptr,
                                 needs_grad(gamma) ? &dgamma : nullptr,
                                 needs_grad(beta) ? &dbeta : nullptr);
            if (needs_grad(x)) accumulate(x, gx);
            if (needs_grad(gamma)) accumulate(gamma, dgamma);
            if (needs_grad(beta)) accumulate(beta, dbeta);
        };
    return id;
}

int Graph::silu(int x) {
    Tensor y = kern::silu(val(x));
    const int id = push(std::move(y), needs_grad(x));
    if (needs_grad(x))
        nodes_[static_cast<size_t>(id)].back = [this, x, id]() {
            accumulate(x, kern::silu_bwd(val(x), grad(id)));
        };
    return id;
}

int Graph::add(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require(av.same_shape(bv), ErrorKind::shape, "add: shape mismatch");
    Tensor y(av.n, av.c, av.h, av.w);
    parallel_for(static_cast<std::ptrdiff_t>(y.size()), [&](std::ptrdiff_t i) {
        y.v[static_cast<size_t>(i)] = av.v[static_cast<size_t>(i)] + bv.v[static_cast<size_t>(i)];
    });
    const bool ng = needs_grad(a) || needs_grad(b);
    const int id = push(std::move(y), ng);
    if (ng)
        nodes_[static_cast<size_t>(id)].back = [this, a, b, id]() {
            accumulate(a, grad(id));
            accumulate(b, grad(id));
        };
    return id;
}

int Graph::sub(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require(av.same_shape(bv), ErrorKind::shape, "sub: shape mismatch");
    Tensor y(av.n, av.c, av.h, av.w);
    parallel_for(static_cast<std::ptrdiff_t>(y.size()), [&](std::ptrdiff_t i) {
        y.v[static_cast<size_t>(i)] = av.v[static_cast<size_t>(i)] - bv.v[static_cast<size_t>(i)];
    });
    const bool ng = needs_grad(a) || needs_grad(b);
    const int id = push(std::move(y), ng);
    if (ng)
        nodes_[static_cast<size_t>(id)].back = [this, a, b, id]() {
            const Tensor& gy = grad(id);
            accumulate(a, gy);
            if (needs_grad(b)) {
                Tensor gb(gy.n, gy.c, gy.h, gy.w);
                parallel_for(static_cast<std::ptrdiff_t>(gy.size()), [&](std::ptrdiff_t i) {
                    gb.v[static_cast<size_t>(i)] = -gy.v[static_cast<size_t>(i)];
                });
                accumulate(b, gb);
            }
        };
    return id;
}

int Graph::mul(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require(av.same_shape(bv), ErrorKind::shape, "mul: shape mismatch");
    Tensor y(av.n, av.c, av.h, av.w);
    parallel_for(static_cast<std::ptrdiff_t>(y.size()), [&](std::ptrdiff_t i) {
        y.v[static_cast<size_t>(i)] = av.v[static_cast<size_t>(i)] * bv.v[static_cast<size_t>(i)];
    });
    const bool ng = needs_grad(a) || needs_grad(b);
    const int id = push(std::move(y), ng);
    if (ng)
        nodes_[static_cast<size_t>(id)].back = [this, a, b, id]() {
            const Tensor& gy = grad(id);
            const Tensor& av2 = val(a);
            const Tensor& bv2 = val(b);
            if (needs_grad(a)) {
                Tensor ga(gy.n, gy.c, gy.h, gy.w);
                parallel_for(static_cast<std::ptrdiff_t>(gy.size()), [&](std::ptrdiff_t i) {
                    ga.v[static_cast<size_t>(i)] =
                        gy.v[static_cast<size_t>(i)] * bv2.v[static_cast<size_t>(i)];
                });
                accumulate(a, ga);
            }
            if (needs_grad(b)) {
                Tensor gb(gy.n, gy.c, gy.h, gy.w);
                parallel_for(static_cast<std::ptrdiff_t>(gy.size()), [&](std::ptrdiff_t i) {
                    gb.v[static_cast<size_t>(i)] =
                        gy.v[static_cast<size_t>(i)] * av2.v[static_cast<size_t>(i)];
                });
                accumulate(b, gb);
            }
        };
    return id;
}

int Graph::div(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require(av.same_shape(bv), ErrorKind::shape, "div: shape mismatch");
    Tensor y(av.n, av.c, av.h, av.w);
    parallel_for(static_cast<std::ptrdiff_t>(y.size()), [&](std::ptrdiff_t i) {
        y.v[static_cast<size_t>(i)] = av.v[static_cast<size_t>(i)] / bv.v[static_cast<size_t>(i)];
    });
    const bool ng = needs_grad(a) || needs_grad(b);
    const int id = push(std::move(y), ng);
    if (ng)
        nodes_[static_cast<size_t>(id)].back = [this, a, b, id]() {
            const Tensor& gy = grad(id);
            const Tensor& av2 = val(a);
            const Tensor& bv2 = val(b);
            if (needs_grad(a)) {
                Tensor ga(gy.n, gy.c, gy.h, gy.w);
                parallel_for(static_cast<std::ptrdiff_t>(gy.size()), [&](std::ptrdiff_t i) {
                    ga.v[static_cast<size_t>(i)] =
                        gy.v[static_cast<size_t>(i)] / bv2.v[static_cast<size_t>(i)];
                });
                accumulate(a, ga);
            }
            if (needs_grad(b)) {
                Tensor gb(gy.n, gy.c, gy.h, gy.w);
                parallel_for(static_cast<std::ptrdiff_t>(gy.size()), [&](std::ptrdiff_t i) {
                    const double bb = bv2.v[static_cast<size_t>(i)];
                    gb.v[static_cast<size_t>(i)] =
                        -gy.v[static_cast<size_t>(i)] * av2.v[static_cast<size_t>(i)] / (bb * bb);
                });
                accumulate(b, gb);
            }
        };
    return id;
}

int Graph::scale(int x, double a) {
    const Tensor& xv = val(x);
    Tensor y(xv.n, xv.c, xv.h, xv.w);
    parallel_for(static_cast<std::ptrdiff_t>(y.size()), [&](std::ptrdiff_t i) {
        y.v[static_cast<size_t>(i)] = a * xv.v[static_cast<size_t>(i)];
    });
    const int id = push(std::move(y), needs_grad(x));
    if (needs_grad(x))
        nodes_[static_cast<size_t>(id)].back = [this, x, a, id]() {
            const Tensor& gy = grad(id);
            Tensor gx(gy.n, gy.c, gy.h, gy.w);
            parallel_for(static_cast<std::ptrdiff_t>(gy.size()), [&](std::ptrdiff_t i) {
                gx.v[static_cast<size_t>(i)] = a * gy.v[static_cast<size_t>(i)];
            });
            accumulate(x, gx);
        };
    return id;
}

int Graph::offset(int x, double b) {
    const Tensor& xv = val(x);
    Tensor y(xv.n, xv.c, xv.h, xv.w);
    parallel_for(static_cast<std::ptrdiff_t>(y.size()), [&](std::ptrdiff_t i) {
        y.v[static_cast<size_t>(i)] = xv.v[static_cast<size_t>(i)] + b;
    });
    const int id = push(std::move(y), needs_grad(x));
    if (needs_grad(x))
        nodes_[static_cast<size_t>(id)].back = [this, x, id]() { accumulate(x, grad(id)); };
    return id;
}

int Graph::abs_(int x) {
    const Tensor& xv = val(x);
    Tensor y(xv.n, xv.c, xv.h, xv.w);
    parallel_for(static_cast<std::ptrdiff_t>(y.size()), [&](std::ptrdiff_t i) {
        y.v[static_cast<size_t>(i)] = std::fabs(xv.v[static_cast<size_t>(i)]);
    });
    const int id = push(std::move(y), needs_grad(x));
    if (needs_grad(x))
        nodes_[static_cast<size_t>(id)].back = [this, x, id]() {
            const Tensor& gy = grad(id);
            const Tensor& xv2 = val(x);
            Tensor gx(gy.n, gy.c, gy.h, gy.w);
            parallel_for(static_cast<std::ptrdiff_t>(gy.size()), [&](std::ptrdiff_t i) {
                const double s = xv2.v[static_cast<size_t>(i)];
                gx.v[static_cast<size_t>(i)] =
                    s > 0.0 ? gy.v[static_cast<size_t>(i)] : (s < 0.0 ? -gy.v[static_cast<size_t>(i)] : 0.0);
            });
            accumulate(x, gx);
        };
    return id;
}

int Graph::clamp(int x, double lo, double hi) {
    const Tensor& xv = val(x);
    Tensor y(xv.n, xv.c, xv.h, xv.w);
    parallel_for(static_cast<std::ptrdiff_t>(y.size()), [&](std::ptrdiff_t i) {
        const double v = xv.v[static_cast<size_t>(i)];
        y.v[static_cast<size_t>(i)] = v < lo ? lo : (v > hi ? hi : v);
    });
    const int id = push(std::move(y), needs_grad(x));
    if (needs_grad(x))
        nodes_[static_cast<size_t>(id)].back = [this, x, lo, hi, id]() {
            const Tensor& gy = grad(id);
            const Tensor& xv2 = val(x);
            Tensor gx(gy.n, gy.c, gy.h, gy.w);
            parallel_for(static_cast<std::ptrdiff_t>(gy.size()), [&](std::ptrdiff_t i) {
                const double v = xv2.v[static_cast<size_t>(i)];
                gx.v[static_cast<size_t>(i)] =
                    (v > lo && v < hi) ? gy.v[static_cast<size_t>(i)] : 0.0;
            });
            accumulate(x, gx);
        };
    return id;
}

int Graph::concat_c(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require(av.n == bv.n && av.h == bv.h && av.w == bv.w, ErrorKind::shape,
            "concat_c: non-channel dims mismatch");
    Tensor y(av.n, av.c + bv.c, av.h, av.w);
    const size_t plane_a = static_cast<size_t>(av.c) * av.h * av.w;
    const size_t plane_b = static_cast<size_t>(bv.c) * bv.h * bv.w;
    parallel_for(av.n, [&](std::ptrdiff_t n) {
        double* dst = &y.v[y.idx(static_cast<int>(n), 0, 0, 0)];
        std::copy_n(&av.v[static_cast<size_t>(n) * plane_a], plane_a, dst);
        std::copy_n(&bv.v[static_cast<size_t>(n) * plane_b], plane_b, dst + plane_a);
    });
    const bool ng = needs_grad(a) || needs_grad(b);
    const int id = push(std::move(y), ng);
    if (ng)
        nodes_[static_cast<size_t>(id)].back = [this, a, b, plane_a, plane_b, id]() {
            const Tensor& gy = grad(id);
            const Tensor& av2 = val(a);
            const Tensor& bv2 = val(b);
            if (needs_grad(a)) {
                Tensor ga(av2.n, av2.c, av2.h, av2.w);
                parallel_for(av2.n, [&](std::ptrdiff_t n) {
                    std::copy_n(&gy.v[gy.idx(static_cast<int>(n), 0, 0, 0)], plane_a,
                                &ga.v[static_cast<size_t>(n) * plane_a]);
                });
                accumulate(a, ga);
            }
            if (needs_grad(b)) {
                Tensor gb(bv2.n, bv2.c, bv2.h, bv2.w);
                parallel_for(bv2.n, [&](std::ptrdiff_t n) {
                    std::copy_n(&gy.v[gy.idx(static_cast<int>(n), 0, 0, 0)] + plane_a, plane_b,
                                &gb.v[static_cast<size_t>(n) * plane_b]);
                });
                accumulate(b, gb);
            }
        };
    return id;
}

int Graph::upsample2x(int x) {
    Tensor y = kern::upsample2x(val(x));
    const int id = push(std::move(y), needs_grad(x));
    if (needs_grad(x))
        nodes_[static_cast<size_t>(id)].back = [this, x, id]() {
            accumulate(x, kern::upsample2x_bwd(grad(id)));
        };
    return id;
}

int Graph::tokens(int x) {
    const Tensor& xv = val(x);
    Tensor y(xv.n, xv.c, xv.h * xv.w, 1);
    y.v = xv.v;
    const int hh = xv.h, ww = xv.w;
    const int id = push(std::move(y), needs_grad(x));
    if (needs_grad(x))
        nodes_[static_cast<size_t>(id)].back = [this, x, hh, ww, id]() {
            const Tensor& gy = grad(id);
            Tensor gx(gy.n, gy.c, hh, ww);
            gx.v = gy.v;
            accumulate(x, gx);
        };
    return id;
}

int Graph::untokens(int x, int h, int w) {
    const Tensor& xv = val(x);
    require(xv.h == h * w && xv.w == 1, ErrorKind::shape,
            "untokens: token count mismatch, got [" + std::to_string(xv.n) + ","
                + std::to_string(xv.c) + "," + std::to_string(xv.h) + "," + std::to_string(xv.w)
                + "] for " + std::to_string(h) + "x" + std::to_string(w));
    Tensor y(xv.n, xv.c, h, w);
    y.v = xv.v;
    const int id = push(std::move(y), needs_grad(x));
    if (needs_grad(x))
        nodes_[static_cast<size_t>(id)].back = [this, x, h, w, id]() {
            const Tensor& gy = grad(id);
            Tensor gx(gy.n, gy.c, h * w, 1);
            gx.v = gy.v;
            accumulate(x, gx);
        };
    return id;
}

int Graph::bmm(int a, bool ta, int b, bool tb) {
    Tensor y = kern::bmm(val(a), ta, val(b), tb);
    const bool ng = needs_grad(a) || needs_grad(b);
    const int id = push(std::move(y), ng);
    if (ng)
        nodes_[static_cast<size_t>(id)].back = [this, a, ta, b, tb, id]() {
            const Tensor& gy = grad(id);
            const Tensor& av = val(a);
            const Tensor& bv = val(b);
            Tensor ga, gb;
            if (needs_grad(a)) ga = Tensor(av.n, av.c, av.h, av.w);
            if (needs_grad(b)) gb = Tensor(bv.n, bv.c, bv.h, bv.w);
            kern::bmm_bwd(gy, av, ta, bv, tb, needs_grad(a) ? &ga : nullptr,
                          needs_grad(b) ? &gb : nullptr);
            if (needs_grad(a)) accumulate(a, ga);
            if (needs_grad(b)) accumulate(b, gb);
        };
    return id;
}

int Graph::softmax_h(int x) {
    Tensor y = kern::softmax_h(val(x));
    const int id = push(std::move(y), needs_grad(x));
    if (needs_grad(x))
        nodes_[static_cast<size_t>(id)].back = [this, x, id]() {
            accumulate(x, kern::softmax_h_bwd(val(id), grad(id)));
        };
    return id;
}

int Graph::depthwise_fixed(int x, std::vector<double> k, int kh, int kw) {
    const Tensor& xv = val(x);
    const int H = xv.h, W = xv.w;
    Tensor y = kern::depthwise_valid(xv, k, kh, kw);
    const int id = push(std::move(y), needs_grad(x));
    if (needs_grad(x))
        nodes_[static_cast<size_t>(id)].back = [this, x, k = std::move(k), kh, kw, H, W, id]() {
            accumulate(x, kern::depthwise_valid_bwd_x(grad(id), k, kh, kw, H, W));
        };
    return id;
}

int Graph::add_nc11(int x, int v) {
    const Tensor& xv = val(x);
    const Tensor& vv = val(v);
    require(vv.n == xv.n && vv.c == xv.c && vv.h == 1 && vv.w == 1, ErrorKind::shape,
            "add_nc11: expects [N,C,1,1] bias");
    Tensor y(xv.n, xv.c, xv.h, xv.w);
    const int hw = xv.h * xv.w;
    parallel_for(static_cast<std::ptrdiff_t>(xv.n) * xv.c, [&](std::ptrdiff_t job) {
        const double bias = vv.v[static_cast<size_t>(job)];
        const double* src = &xv.v[static_cast<size_t>(job) * hw];
        double* dst = &y.v[static_cast<size_t>(job) * hw];
        for (int i = 0; i < hw; ++i) dst[i] = src[i] + bias;
    });
    const bool ng = needs_grad(x) || needs_grad(v);
    const int id = push(std::move(y), ng);
    if (ng)
        nodes_[static_cast<size_t>(id)].back = [this, x, v, hw, id]() {
            const Tensor& gy = grad(id);
            if (needs_grad(x)) accumulate(x, gy);
            if (needs_grad(v)) {
                Tensor gv(gy.n, gy.c, 1, 1);
                parallel_for(static_cast<std::ptrdiff_t>(gy.n) * gy.c, [&](std::ptrdiff_t job) {
                    const double* src = &gy.v[static_cast<size_t>(job) * hw];
                    double acc = 0.0;
                    for (int i = 0; i < hw; ++i) acc += src[i];
                    gv.v[static_cast<size_t>(job)] = acc;
                });
                accumulate(v, gv);
            }
        };
    return id;
}

int Graph::channel_affine(int x, std::vector<double> sc, std::vector<double> sh) {
    const Tensor& xv = val(x);
    require(static_cast<int>(sc.size()) == xv.c && static_cast<int>(sh.size()) == xv.c,
            ErrorKind::shape, "channel_affine: per-channel vectors mismatch");
    Tensor y(xv.n, xv.c, xv.h, xv.w);
    const int hw = xv.h * xv.w;
    parallel_for(static_cast<std::ptrdiff_t>(xv.n) * xv.c, [&](std::ptrdiff_t job) {
        const int c = static_cast<int>(job) % xv.c;
        const double* src = &xv.v[static_cast<size_t>(job) * hw];
        double* dst = &y.v[static_cast<size_t>(job) * hw];
        for (int i = 0; i < hw; ++i) dst[i] = src[i] * sc[static_cast<size_t>(c)] + sh[static_cast<size_t>(c)];
    });
    const int id = push(std::move(y), needs_grad(x));
    if (needs_grad(x))
        nodes_[static_cast<size_t>(id)].back = [this, x, sc = std::move(sc), hw, id]() {
            const Tensor& gy = grad(id);
            Tensor gx(gy.n, gy.c, gy.h, gy.w);
            parallel_for(static_cast<std::ptrdiff_t>(gy.n) * gy.c, [&](std::ptrdiff_t job) {
                const int c = static_cast<int>(job) % gy.c;
                const double* src = &gy.v[static_cast<size_t>(job) * hw];
                double* dst = &gx.v[static_cast<size_t>(job) * hw];
                for (int i = 0; i < hw; ++i) dst[i] = src[i] * sc[static_cast<size_t>(c)];
            });
            accumulate(x, gx);
        };
    return id;
}

int Graph::mean_all(int x) {
    const Tensor& xv = val(x);
    const double total = block_sum(static_cast<std::ptrdiff_t>(xv.size()), [&](std::ptrdiff_t i) {
        return xv.v[static_cast<size_t>(i)];
    });
    Tensor y(1, 1, 1, 1);
    const double inv = 1.0 / static_cast<double>(xv.size());
    y.v[0] = total * inv;
    const int id = push(std::move(y), needs_grad(x));
    if (needs_grad(x))
        nodes_[static_cast<size_t>(id)].back = [this, x, inv, id]() {
            const double g = grad(id).v[0] * inv;
            const Tensor& xv2 = val(x);
            Tensor gx(xv2.n, xv2.c, xv2.h, xv2.w);
            gx.fill(g);
            accumulate(x, gx);
        };
    return id;
}

} // namespace flashsplit
