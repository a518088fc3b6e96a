#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_util.hpp"

using namespace flashsplit;

// every op gets a central finite-difference check through a scalar probe

static ParamStore make_store(std::initializer_list<std::pair<const char*, Tensor>> t) {
    ParamStore ps;
    for (auto& [name, ten] : t) ps.add(name, ten);
    return ps;
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(21);
    for (auto [stride, pad] : {std::pair<int, int>{1, 1}, {2, 1}, {1, 0}}) {
        ParamStore ps = make_store({{"x", randn(rng, 2, 3, 6, 6)},
                                       {"w", randn(rng, 4, 3, 3, 3, 0.3)},
                                       {"b", randn(rng, 1, 4, 1, 1)}});
        auto build = [&, stride, pad](Bind& b) {
            int y = b.g.conv2d(b("x"), b("w"), b("b"), stride, pad);
            return b.g.mean_all(b.g.mul(y, y));
        };
        CHECK(fd_max_rel_err(ps, build, {"x", "w", "b"}, 6, 91) < 1e-6);
    }
}

TEST_CASE("group_norm gradients match finite differences") {
    Rng rng(22);
    ParamStore ps = make_store({{"x", randn(rng, 2, 8, 5, 4)},
                                   {"g", randn(rng, 1, 8, 1, 1)},
                                   {"b", randn(rng, 1, 8, 1, 1)}});
    auto build = [&](Bind& b) {
        int y = b.g.group_norm(b("x"), b("g"), b("b"), 4);
        return b.g.mean_all(b.g.mul(y, y));
    };
    CHECK(fd_max_rel_err(ps, build, {"x", "g", "b"}, 8, 92) < 1e-6);
}

TEST_CASE("pointwise op gradients match finite differences") {
    Rng rng(23);
    ParamStore ps = make_store({{"a", randn(rng, 1, 2, 5, 5)}, {"b", randn(rng, 1, 2, 5, 5)}});
    // keep divisors and abs/clamp arguments away from their kinks
    for (double& v : ps.value("b").v) v = (v < 0.0 ? v - 1.5 : v + 1.5);

    auto probe = [](Bind& bd, int y) { return bd.g.mean_all(bd.g.mul(y, y)); };
    using BuildFn = std::function<int(Bind&)>;
    std::vector<BuildFn> builds = {
        [&](Bind& b) { return probe(b, b.g.add(b("a"), b("b"))); },
        [&](Bind& b) { return probe(b, b.g.sub(b("a"), b("b"))); },
        [&](Bind& b) { return probe(b, b.g.mul(b("a"), b("b"))); },
        [&](Bind& b) { return probe(b, b.g.div(b("a"), b("b"))); },
        [&](Bind& b) { return probe(b, b.g.scale(b("a"), -1.7)); },
        [&](Bind& b) { return probe(b, b.g.offset(b("a"), 0.4)); },
        [&](Bind& b) { return probe(b, b.g.abs_(b("b"))); },
        [&](Bind& b) { return probe(b, b.g.silu(b("a"))); },
        [&](Bind& b) { return probe(b, b.g.clamp(b("b"), -40.0, 40.0)); },
        [&](Bind& b) { return probe(b, b.g.concat_c(b("a"), b("b"))); },
        [&](Bind& b) { return probe(b, b.g.upsample2x(b("a"))); },
    };
    for (size_t i = 0; i < builds.size(); ++i) {
        INFO("build index ", i);
        CHECK(fd_max_rel_err(ps, builds[i], {"a", "b"}, 6, 93 + uint64_t(i)) < 1e-6);
    }
}

TEST_CASE("token reshape round trip is exact and differentiable") {
    Rng rng(24);
    ParamStore ps = make_store({{"x", randn(rng, 2, 3, 4, 5)}});
    auto build = [&](Bind& b) {
        int t = b.g.tokens(b("x"));
        int y = b.g.untokens(t, 4, 5);
        return b.g.mean_all(b.g.mul(y, y));
    };
    CHECK(fd_max_rel_err(ps, build, {"x"}, 8, 94) < 1e-6);

    Graph g;
    Bind b{g, ps, false, {}};
    int x = b("x");
    CHECK(bits_equal(g.val(g.untokens(g.tokens(x), 4, 5)), ps.value("x")));
}

TEST_CASE("bmm gradients match finite differences for every flag pair") {
    Rng rng(25);
    for (bool ta : {false, true})
        for (bool tb : {false, true})
            for (int nb : {2, 1}) {
                ParamStore ps = make_store(
                    {{"a", ta ? randn(rng, 2, 4, 3, 1) : randn(rng, 2, 3, 4, 1)},
                        {"b", tb ? randn(rng, nb, 5, 4, 1) : randn(rng, nb, 4, 5, 1)}});
                auto build = [&, ta, tb](Bind& bd) {
                    int y = bd.g.bmm(bd("a"), ta, bd("b"), tb);
                    return bd.g.mean_all(bd.g.mul(y, y));
                };
                INFO("ta ", ta, " tb ", tb, " nb ", nb);
                CHECK(fd_max_rel_err(ps, build, {"a", "b"}, 5, 95) < 1e-6);
            }
}

TEST_CASE("softmax_h gradients match finite differences") {
    Rng rng(26);
    ParamStore ps = make_store({{"x", randn(rng, 2, 3, 7, 1)}});
    Tensor w = randn(rng, 2, 3, 7, 1);
    auto build = [&](Bind& b) {
        int y = b.g.softmax_h(b("x"));
        return b.g.mean_all(b.g.mul(y, b.g.input(w)));
    };
    CHECK(fd_max_rel_err(ps, build, {"x"}, 10, 96) < 1e-6);
}

TEST_CASE("depthwise, channel_affine, add_nc11 and mean_all match finite differences") {
    Rng rng(27);
    std::vector<double> k(9);
    for (double& v : k) v = rng.normal();
    ParamStore ps = make_store({{"x", randn(rng, 2, 3, 6, 6)}, {"v", randn(rng, 2, 3, 1, 1)}});
    auto b1 = [&](Bind& b) {
        int y = b.g.depthwise_fixed(b("x"), k, 3, 3);
        return b.g.mean_all(b.g.mul(y, y));
    };
    CHECK(fd_max_rel_err(ps, b1, {"x"}, 8, 97) < 1e-6);

    auto b2 = [&](Bind& b) {
        int y = b.g.channel_affine(b("x"), {0.5, -1.25, 2.0}, {0.1, 0.0, -0.7});
        return b.g.mean_all(b.g.mul(y, y));
    };
    CHECK(fd_max_rel_err(ps, b2, {"x"}, 8, 98) < 1e-6);

    auto b3 = [&](Bind& b) {
        int y = b.g.add_nc11(b("x"), b("v"));
        return b.g.mean_all(b.g.mul(y, y));
    };
    CHECK(fd_max_rel_err(ps, b3, {"x", "v"}, 8, 99) < 1e-6);
}

TEST_CASE("gradients accumulate across two graphs over one store") {
    Rng rng(28);
    ParamStore ps = make_store({{"x", randn(rng, 1, 2, 3, 3)}});
    ps.zero_grads();
    for (int rep = 0; rep < 2; ++rep) {
        Graph g;
        Bind b{g, ps, true, {}};
        g.backward(g.mean_all(b.g.mul(b("x"), b("x"))));
    }
    const Tensor& x = ps.value("x");
    const Tensor& gx = ps.grad("x");
    for (size_t i = 0; i < x.v.size(); ++i)
        CHECK(gx.v[i] == doctest::Approx(2.0 * 2.0 * x.v[i] / double(x.size())).epsilon(1e-12));
}
