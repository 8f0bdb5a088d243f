#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kbca/attention.hpp"
#include "kbca/gradcheck.hpp"

using namespace kbca;

namespace {

// Bind an attention module's parameters from tensors onto a tape.
AttentionVars bind_att(Tape& t, std::vector<Tensor>& p, bool trainable,
                       std::vector<Var>* vars = nullptr) {
    AttentionVars a;
    Var* slots[8] = {&a.w1, &a.b1, &a.w2, &a.b2, &a.w3, &a.b3, &a.wo, &a.bo};
    for (int i = 0; i < 8; ++i) {
        *slots[i] = t.leaf(p[i], trainable);
        if (vars) vars->push_back(*slots[i]);
    }
    return a;
}

std::vector<Tensor> random_att_params(std::size_t d, Rng& rng) {
    std::vector<Tensor> p;
    for (int i = 0; i < 4; ++i) {
        Tensor w({d, d});
        for (auto& x : w.data()) x = 0.4 * rng.normal();
        p.push_back(std::move(w));
        Tensor b({d});
        for (auto& x : b.data()) x = 0.1 * rng.normal();
        p.push_back(std::move(b));
    }
    return p;
}

std::vector<Tensor> identity_att_params(std::size_t d) {
    std::vector<Tensor> p;
    for (int i = 0; i < 4; ++i) {
        Tensor w({d, d});
        for (std::size_t k = 0; k < d; ++k) w(k, k) = 1.0;
        p.push_back(std::move(w));
        p.push_back(Tensor::zeros({d}));
    }
    return p;
}

} // namespace

TEST_CASE("single position attends to itself: map is [[1]]") {
    Tape t;
    Rng rng(1, 0x5);
    auto pt = random_att_params(4, rng);
    Var u = t.leaf(Tensor::row({0.5, -1.0, 2.0, 0.1}));
    AttentionOutput out = self_attention(u, bind_att(t, pt, false), 2);
    REQUIRE(out.maps.size() == 2);
    for (const Var& m : out.maps) {
        CHECK(t.value(m).rows() == 1);
        CHECK(t.value(m)(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("constant queries give a uniform attention map") {
    // zero input + zero bias means every query row is identical, so each
    // row of the map is the same distribution; with zero keys it is uniform.
    Tape t;
    auto pt = identity_att_params(4);
    Var u = t.leaf(Tensor::zeros({3, 4}));
    AttentionOutput out = self_attention(u, bind_att(t, pt, false), 1);
    const Tensor& m = t.value(out.maps[0]);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(m(i, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("attention map equals a long-double scaled-dot-product oracle") {
    // identity projections, heads=1, d=2: map = softmax(U U^T / sqrt(2))
    Tape t;
    auto pt = identity_att_params(2);
    Tensor u = Tensor::matrix({{0.8, -0.3}, {1.5, 0.4}});
    AttentionOutput out = self_attention(t.leaf(u), bind_att(t, pt, false), 1);
    Tensor m = t.value(out.maps[0]); // copy: later tape pushes may reallocate

    long double inv_sqrt = 1.0L / std::sqrt(2.0L);
    for (int i = 0; i < 2; ++i) {
        long double logits[2], mx = -1e30L;
        for (int j = 0; j < 2; ++j) {
            logits[j] = (static_cast<long double>(u(i, 0)) * u(j, 0) +
                         static_cast<long double>(u(i, 1)) * u(j, 1)) *
                        inv_sqrt;
            mx = std::max(mx, logits[j]);
        }
        long double z = 0.0L;
        for (int j = 0; j < 2; ++j) z += std::exp(logits[j] - mx);
        for (int j = 0; j < 2; ++j) {
            long double ref = std::exp(logits[j] - mx) / z;
            CHECK(std::abs(static_cast<long double>(m(i, j)) - ref) < 1e-12L);
        }
    }

    // and the standalone map helper agrees with the module's head map
    Var q = t.leaf(u), k = t.leaf(u);
    const Tensor& m2 = t.value(attention_map(q, k));
    for (std::size_t i = 0; i < m.numel(); ++i) CHECK(m[i] == doctest::Approx(m2[i]).epsilon(1e-15));
}

TEST_CASE("maps are row-stochastic for random inputs and all heads") {
    Rng rng(7, 0x33);
    for (int rep = 0; rep < 10; ++rep) {
        Tape t;
        std::size_t d = 8, n = 1 + rng.below(6);
        auto pt = random_att_params(d, rng);
        Tensor u({n, d});
        for (auto& x : u.data()) x = 2.0 * rng.normal();
        AttentionOutput out = self_attention(t.leaf(u), bind_att(t, pt, false), 4);
        REQUIRE(out.maps.size() == 4);
        for (const Var& mv : out.maps) {
            const Tensor& m = t.value(mv);
            for (std::size_t i = 0; i < m.rows(); ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < m.cols(); ++j) {
                    CHECK(m(i, j) >= 0.0);
                    s += m(i, j);
                }
                CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("self-attention is permutation equivariant") {
    Rng rng(11, 0x44);
    Tape t;
    std::size_t d = 8, n = 5;
    auto pt = random_att_params(d, rng);
    Tensor u({n, d});
    for (auto& x : u.data()) x = rng.normal();
    std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    Tensor up({n, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) up(i, j) = u(perm[i], j);

    auto pt2 = pt;
    AttentionOutput a = self_attention(t.leaf(u), bind_att(t, pt, false), 2);
    AttentionOutput b = self_attention(t.leaf(up), bind_att(t, pt2, false), 2);
    const Tensor &av = t.value(a.out), &bv = t.value(b.out);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            CHECK(std::abs(bv(i, j) - av(perm[i], j)) < 1e-10);
}

TEST_CASE("key mask zeroes masked positions' attention weight") {
    Rng rng(3, 0x55);
    Tape t;
    auto pt = random_att_params(4, rng);
    Tensor u({4, 4});
    for (auto& x : u.data()) x = rng.normal();
    std::vector<bool> mask = {false, true, false, true};
    AttentionOutput out = self_attention(t.leaf(u), bind_att(t, pt, false), 2, &mask);
    for (const Var& mv : out.maps) {
        const Tensor& m = t.value(mv);
        for (std::size_t i = 0; i < m.rows(); ++i) {
            CHECK(m(i, 1) == 0.0);
            CHECK(m(i, 3) == 0.0);
            CHECK(m(i, 0) + m(i, 2) == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("cross-attention output shape follows the query side") {
    Rng rng(9, 0x66);
    Tape t;
    auto pt = random_att_params(4, rng);
    Tensor q({5, 4}), kv({3, 4});
    for (auto& x : q.data()) x = rng.normal();
    for (auto& x : kv.data()) x = rng.normal();
    AttentionOutput out = multi_head_attention(t.leaf(q), t.leaf(kv), bind_att(t, pt, false), 2);
    CHECK(t.value(out.out).rows() == 5);
    CHECK(t.value(out.out).cols() == 4);
    CHECK(t.value(out.maps[0]).rows() == 5);
    CHECK(t.value(out.maps[0]).cols() == 3);
}

TEST_CASE("attention parameter gradients match finite differences") {
    Rng rng(21, 0x77);
    std::size_t d = 4, n = 3;
    auto pt = random_att_params(d, rng);
    Tensor u({n, d});
    for (auto& x : u.data()) x = rng.normal();
    Tensor w({n, d});
    for (auto& x : w.data()) x = rng.normal();

    std::vector<Tensor*> param_ptrs;
    for (auto& p : pt) param_ptrs.push_back(&p);
    auto build = [&](Tape& t) {
        std::vector<Var> vars;
        AttentionVars a = bind_att(t, pt, true, &vars);
        AttentionOutput out = self_attention(t.leaf(u), a, 2);
        GradCheckProblem prob;
        prob.loss = dot_const(out.out, w);
        prob.param_vars = vars;
        return prob;
    };
    CHECK(check_gradient(build, param_ptrs) < 1e-4);
}

TEST_CASE("invalid head counts are rejected") {
    Tape t;
    auto pt = identity_att_params(4);
    Var u = t.leaf(Tensor::zeros({2, 4}));
    AttentionVars a = bind_att(t, pt, false);
    CHECK_THROWS_AS(multi_head_attention(u, u, a, 3), ShapeError);
    CHECK_THROWS_AS(multi_head_attention(u, u, a, 0), ShapeError);
}
