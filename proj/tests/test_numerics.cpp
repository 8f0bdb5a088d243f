#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kbca/gradcheck.hpp"
#include "kbca/rng.hpp"
#include "kbca/tape.hpp"

using namespace kbca;

TEST_CASE("tensor constructors and shape checks") {
    Tensor m = Tensor::matrix({{1.0, 2.0}, {3.0, 4.0}});
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 2);
    CHECK(m(1, 0) == 3.0);
    CHECK(Tensor::row({1, 2, 3}).shape() == std::vector<std::size_t>{1, 3});
    CHECK(Tensor::column({1, 2, 3}).shape() == std::vector<std::size_t>{3, 1});
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), ShapeError);
    CHECK_THROWS_AS(Tensor::matrix({{1.0}, {1.0, 2.0}}), ShapeError);
}

TEST_CASE("rng is a pure function of (seed, stream, index)") {
    Rng a(42, 7), b(42, 7);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    // consuming part of one stream does not change another
    Rng c(42, 7);
    Rng d = c.substream(3);
    Rng e = Rng(42, 7).substream(3);
    c.next_u64();
    for (int i = 0; i < 10; ++i) CHECK(d.next_u64() == e.next_u64());

    // different seeds / streams decorrelate
    CHECK(Rng(1, 0).next_u64() != Rng(2, 0).next_u64());
    CHECK(Rng(1, 0).next_u64() != Rng(1, 1).next_u64());

    // uniform stays in [0, 1)
    Rng f(9);
    for (int i = 0; i < 10000; ++i) {
        double u = f.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("matmul agrees with a hand-computed product") {
    Tape t;
    Var a = t.leaf(Tensor::matrix({{1, 2}, {3, 4}}));
    Var b = t.leaf(Tensor::matrix({{5, 6}, {7, 8}}));
    const Tensor& c = t.value(matmul(a, b));
    CHECK(c(0, 0) == 19.0);
    CHECK(c(0, 1) == 22.0);
    CHECK(c(1, 0) == 43.0);
    CHECK(c(1, 1) == 50.0);

    Var bad = t.leaf(Tensor({3, 3}));
    CHECK_THROWS_AS(matmul(a, bad), ShapeError);
}

TEST_CASE("softmax rows match a frozen oracle and are shift invariant") {
    Tape t;
    Var y = softmax_rows(t.leaf(Tensor::row({1.0, 2.0, 3.0})));
    // softmax(1,2,3) evaluated independently at high precision
    CHECK(t.value(y)(0, 0) == doctest::Approx(0.09003057317038046).epsilon(1e-12));
    CHECK(t.value(y)(0, 1) == doctest::Approx(0.24472847105479767).epsilon(1e-12));
    CHECK(t.value(y)(0, 2) == doctest::Approx(0.6652409557748219).epsilon(1e-12));

    Var y2 = softmax_rows(t.leaf(Tensor::row({101.0, 102.0, 103.0})));
    for (int j = 0; j < 3; ++j)
        CHECK(std::abs(t.value(y)(0, j) - t.value(y2)(0, j)) <= 1e-12);
}

TEST_CASE("cross entropy of uniform logits is log C") {
    Tape t;
    Var l = t.leaf(Tensor::row({0.7, 0.7, 0.7, 0.7}));
    CHECK(t.value(cross_entropy(l, 2))[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK_THROWS_AS(cross_entropy(l, 4), ConfigError);
}

TEST_CASE("gradient check framework: analytic quadratic") {
    // loss = sum x^2, gradient 2x exactly; central differences are exact
    // for quadratics so the relative error should be at rounding level.
    Tensor x = Tensor::matrix({{0.3, -1.2}, {2.5, 0.0}});
    auto build = [&](Tape& t) {
        Var xv = t.leaf(x, true);
        GradCheckProblem p;
        p.loss = dot_const(mul(xv, xv), Tensor::full({2, 2}, 1.0));
        p.param_vars = {xv};
        return p;
    };
    CHECK(check_gradient(build, {&x}) < 1e-8);
}

TEST_CASE("gradients of composite tape programs match finite differences") {
    Rng rng(3, 0x7e57);
    Tensor a({3, 4}), b({4, 3}), gain({3}), bias({3});
    for (auto& v : a.data()) v = rng.normal();
    for (auto& v : b.data()) v = rng.normal();
    for (auto& v : gain.data()) v = 1.0 + 0.2 * rng.normal();
    for (auto& v : bias.data()) v = 0.2 * rng.normal();
    Tensor w = Tensor::full({3, 3}, 0.0);
    for (auto& v : w.data()) v = rng.normal();

    auto build = [&](Tape& t) {
        Var av = t.leaf(a, true), bv = t.leaf(b, true);
        Var gv = t.leaf(gain, true), biv = t.leaf(bias, true);
        Var h = relu(matmul(av, bv));
        h = layernorm(h, gv, biv);
        h = softmax_rows(h);
        GradCheckProblem p;
        p.loss = dot_const(h, w);
        p.param_vars = {av, bv, gv, biv};
        return p;
    };
    CHECK(check_gradient(build, {&a, &b, &gain, &bias}) < 1e-5);
}

TEST_CASE("row_normalize divides by row sums and rejects non-positive rows") {
    Tape t;
    Var y = row_normalize(t.leaf(Tensor::matrix({{1, 3}, {2, 2}})));
    CHECK(t.value(y)(0, 0) == doctest::Approx(0.25));
    CHECK(t.value(y)(0, 1) == doctest::Approx(0.75));
    CHECK(t.value(y)(1, 0) == doctest::Approx(0.5));
    CHECK_THROWS_AS(row_normalize(t.leaf(Tensor::matrix({{1.0, -1.0}}))), NumericError);

    Tensor x = Tensor::matrix({{0.4, 1.7, 0.2}});
    auto build = [&](Tape& tp) {
        Var xv = tp.leaf(x, true);
        GradCheckProblem p;
        p.loss = dot_const(row_normalize(xv), Tensor::row({0.3, -1.0, 2.0}));
        p.param_vars = {xv};
        return p;
    };
    CHECK(check_gradient(build, {&x}) < 1e-6);
}

TEST_CASE("segment_mean pools contiguous row blocks") {
    Tape t;
    Var f = t.leaf(Tensor::matrix({{1, 10}, {3, 30}, {5, 50}, {7, 70}}));
    Var y = segment_mean(f, {{0, 2}, {2, 4}});
    CHECK(t.value(y)(0, 0) == doctest::Approx(2.0));
    CHECK(t.value(y)(0, 1) == doctest::Approx(20.0));
    CHECK(t.value(y)(1, 0) == doctest::Approx(6.0));
    CHECK_THROWS_AS(segment_mean(f, {{0, 5}}), DataError);
    CHECK_THROWS_AS(segment_mean(f, {{2, 2}}), DataError);
}

TEST_CASE("dropout: inverted scaling keeps the mean, inference is identity") {
    Tape t;
    Tensor big = Tensor::full({1000, 1000}, 1.0);
    Var x = t.leaf(big);
    Rng rng(17, 0xd0);
    const Tensor& y = t.value(dropout(x, 0.5, rng, true));
    double mean = 0.0, zeros = 0.0;
    for (double v : y.data()) {
        mean += v;
        if (v == 0.0) zeros += 1.0;
    }
    mean /= static_cast<double>(y.numel());
    zeros /= static_cast<double>(y.numel());
    CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
    CHECK(zeros == doctest::Approx(0.5).epsilon(0.01));

    Rng rng2(17, 0xd0);
    const Tensor& id = t.value(dropout(x, 0.5, rng2, false));
    for (std::size_t i = 0; i < 100; ++i) CHECK(id[i] == 1.0);
    CHECK_THROWS_AS(dropout(x, 1.0, rng2, true), ConfigError);
}

TEST_CASE("backward flags non-finite losses and NaN-producing programs") {
    Tape t;
    CHECK_THROWS_AS(t.leaf(Tensor({1, 1}, {std::nan("")})), NumericError);
    Var x = t.leaf(Tensor::row({1.0, 2.0}), false);
    Var s = dot_const(x, Tensor::row({1.0, 1.0}));
    CHECK_THROWS_AS(t.backward(s), NumericError); // no trainable dependency
    Var y = t.leaf(Tensor::row({1.0, 2.0}), true);
    CHECK_THROWS_AS(t.backward(y), ShapeError); // non-scalar loss
}

TEST_CASE("structural ops: transpose, slice, concat, broadcast, mean") {
    Tape t;
    Var a = t.leaf(Tensor::matrix({{1, 2, 3}, {4, 5, 6}}));
    const Tensor& at = t.value(transpose(a));
    CHECK(at(2, 1) == 6.0);

    const Tensor& sl = t.value(slice_cols(a, 1, 3));
    CHECK(sl(0, 0) == 2.0);
    CHECK(sl(1, 1) == 6.0);

    Var b = t.leaf(Tensor::matrix({{7}, {8}}));
    const Tensor& cc = t.value(concat_cols({a, b}));
    CHECK(cc.cols() == 4);
    CHECK(cc(1, 3) == 8.0);

    const Tensor& mr = t.value(mean_rows(a));
    CHECK(mr(0, 0) == doctest::Approx(2.5));
    CHECK(mr(0, 2) == doctest::Approx(4.5));

    Var r = t.leaf(Tensor::row({1, 2}));
    const Tensor& br = t.value(broadcast_rows(r, 3));
    CHECK(br.rows() == 3);
    CHECK(br(2, 1) == 2.0);
}
