#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <doctest.h>

#include "scenedet/autodiff.h"
#include "scenedet/error.h"
#include "scenedet/rng.h"
#include "testutil.h"

using namespace scenedet;
using ad::Tape;
using testutil::probe_loss;
using testutil::random_tensor;

namespace {

// Runs a finite-difference check over every parameter the graph binds.
double fd_max_err(ad::ParamStore& ps,
                  const std::function<Tape::VarId(Tape&, ad::Binder&)>& build) {
    auto r = ad::finite_difference_check(ps, build);
    INFO("worst entry ", r.where, " analytic=", r.analytic, " numeric=", r.numeric);
    return r.max_rel_err;
}

}  // namespace

TEST_CASE("linear layer value matches the naive loop") {
    Rng rng(11);
    Tensor X = random_tensor(4, 3, rng), W = random_tensor(5, 3, rng), b = random_tensor(1, 5, rng);
    Tape tp;
    auto y = tp.linear(tp.constant(X), tp.constant(W), tp.constant(b));
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j) {
            double want = b.v[j];
            for (int k = 0; k < 3; ++k) want += X.at(i, k) * W.at(j, k);
            CHECK(tp.val(y).at(i, j) == doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("gradients of dense ops match finite differences") {
    Rng rng(42);
    ad::ParamStore ps;
    int x = ps.add("x", random_tensor(4, 6, rng));
    int w = ps.add("w", random_tensor(5, 6, rng));
    int b = ps.add("b", random_tensor(1, 5, rng));
    int g = ps.add("g", random_tensor(1, 6, rng, 0.5, 1.5));
    int be = ps.add("be", random_tensor(1, 6, rng));

    SUBCASE("linear + relu + tanh") {
        CHECK(fd_max_err(ps, [&](Tape& tp, ad::Binder& p) {
                  return probe_loss(tp, tp.tanh(tp.relu(tp.linear(p(x), p(w), p(b)))));
              }) < 1e-7);
    }
    SUBCASE("matmul pair and elementwise chain") {
        const Tensor mixer = random_tensor(5, 3, rng);
        CHECK(fd_max_err(ps, [&](Tape& tp, ad::Binder& p) {
                  auto prod = tp.matmul_nt(p(x), p(w));            // 4x5
                  auto sq = tp.mul(prod, prod);
                  auto shifted = tp.add_row(sq, p(b));
                  auto scaled = tp.affine(tp.sigmoid(shifted), 1.7, -0.2);
                  return probe_loss(tp, tp.matmul_nn(scaled, tp.constant(mixer)));
              }) < 1e-7);
    }
    SUBCASE("layer norm") {
        CHECK(fd_max_err(ps, [&](Tape& tp, ad::Binder& p) {
                  return probe_loss(tp, tp.layer_norm(p(x), p(g), p(be)));
              }) < 1e-6);
    }
    SUBCASE("softmax rows, exp, rsqrt, row ops") {
        CHECK(fd_max_err(ps, [&](Tape& tp, ad::Binder& p) {
                  auto sm = tp.softmax_rows(p(x));
                  auto e = tp.exp(tp.scale(p(x), 0.3));
                  auto rs = tp.rsqrt(tp.affine(tp.mul(p(x), p(x)), 1.0, 0.5));
                  auto joined = tp.mul(tp.mul(sm, e), rs);
                  auto per_row = tp.row_sum(joined);               // 4x1
                  return probe_loss(tp, tp.mul_col(joined, per_row));
              }) < 1e-6);
    }
    SUBCASE("slice, concat, reshape, tile") {
        CHECK(fd_max_err(ps, [&](Tape& tp, ad::Binder& p) {
                  auto left = tp.slice_cols(p(x), 0, 2);
                  auto right = tp.slice_cols(p(x), 3, 6);
                  auto cc = tp.concat_cols(left, right);           // 4x5
                  auto rr = tp.concat_rows(cc, tp.mul(cc, cc));    // 8x5
                  auto rsh = tp.reshape(rr, 5, 8);
                  return probe_loss(tp, tp.tile(rsh, 2, 3));
              }) < 1e-7);
    }
    SUBCASE("sub and sum_all") {
        const Tensor anchor = random_tensor(4, 6, rng);
        CHECK(fd_max_err(ps, [&](Tape& tp, ad::Binder& p) {
                  auto d = tp.sub(p(x), tp.constant(anchor));
                  return tp.sum_all(tp.mul(d, d));
              }) < 1e-7);
    }
}

TEST_CASE("gradients of gather, interpolation, and segment max") {
    Rng rng(5);
    ad::ParamStore ps;
    int f = ps.add("f", random_tensor(6, 4, rng));

    SUBCASE("gather with repeated rows") {
        CHECK(fd_max_err(ps, [&](Tape& tp, ad::Binder& p) {
                  return probe_loss(tp, tp.gather_rows(p(f), {0, 2, 2, 5, 1}));
              }) < 1e-7);
    }
    SUBCASE("three-point interpolation") {
        CHECK(fd_max_err(ps, [&](Tape& tp, ad::Binder& p) {
                  return probe_loss(tp, tp.interp3(p(f), {0, 1, 2, 3, 4, 5, 1, 1, 4},
                                                   {0.5, 0.3, 0.2, 0.2, 0.2, 0.6, 1.0, 0.5, 0.25}));
              }) < 1e-7);
    }
    SUBCASE("group max routes gradients to the argmax rows") {
        // Entries are generic uniforms: ties have probability zero.
        CHECK(fd_max_err(ps, [&](Tape& tp, ad::Binder& p) {
                  return probe_loss(tp, tp.group_max(p(f), {0, 2, 3, 6}));
              }) < 1e-7);
    }
}

TEST_CASE("loss op values and gradients") {
    Rng rng(19);
    ad::ParamStore ps;
    int z = ps.add("z", random_tensor(5, 3, rng, -2.0, 2.0));

    SUBCASE("bce with logits equals the direct formula") {
        Tensor t(5, 3);
        for (double& x : t.v) x = rng.uniform() < 0.5 ? 0.0 : 1.0;
        Tape tp;
        auto loss = tp.bce_logits_mean(tp.constant(ps.entries[0].value), tp.constant(t));
        double want = 0.0;
        for (int i = 0; i < 15; ++i) {
            const double zz = ps.entries[0].value.v[i];
            const double pr = 1.0 / (1.0 + std::exp(-zz));
            want += -(t.v[i] * std::log(pr) + (1 - t.v[i]) * std::log(1 - pr));
        }
        CHECK(tp.val(loss).v[0] == doctest::Approx(want / 15.0).epsilon(1e-10));
        CHECK(fd_max_err(ps, [&](Tape& tp2, ad::Binder& p) {
                  return tp2.bce_logits_mean(p(z), tp2.constant(t));
              }) < 1e-8);
    }
    SUBCASE("softmax cross entropy") {
        std::vector<int> labels{2, 0, 1, 1, 0};
        Tape tp;
        auto loss = tp.softmax_xent_mean(tp.constant(ps.entries[0].value), labels);
        double want = 0.0;
        for (int i = 0; i < 5; ++i) {
            double s = 0.0;
            for (int j = 0; j < 3; ++j) s += std::exp(ps.entries[0].value.at(i, j));
            want += std::log(s) - ps.entries[0].value.at(i, labels[i]);
        }
        CHECK(tp.val(loss).v[0] == doctest::Approx(want / 5.0).epsilon(1e-10));
        CHECK(fd_max_err(ps, [&](Tape& tp2, ad::Binder& p) {
                  return tp2.softmax_xent_mean(p(z), labels);
              }) < 1e-8);
    }
    SUBCASE("smooth l1 covers both branches") {
        Tensor t(5, 3);  // zero targets; z spans [-2,2] so |d| straddles delta
        CHECK(fd_max_err(ps, [&](Tape& tp2, ad::Binder& p) {
                  return tp2.smooth_l1_sum(p(z), tp2.constant(t), 0.4);
              }) < 1e-6);
    }
}

TEST_CASE("binder maps one parameter to one leaf even when bound twice") {
    Rng rng(3);
    ad::ParamStore ps;
    int a = ps.add("a", random_tensor(3, 3, rng));
    Tape tp;
    ad::Binder bind(tp, ps);
    auto v1 = bind(a);
    auto v2 = bind(a);
    CHECK(v1 == v2);
    // Parameter used on both sides of a product: d(x*x) = 2x must come out
    // of a single accumulated leaf gradient.
    auto loss = tp.sum_all(tp.mul(v1, v2));
    tp.backward(loss);
    std::vector<Tensor> grads(1);
    bind.add_grads(grads);
    for (int i = 0; i < 9; ++i)
        CHECK(grads[0].v[i] == doctest::Approx(2.0 * ps.entries[0].value.v[i]).epsilon(1e-12));
}

TEST_CASE("tape validation errors") {
    Tape tp;
    auto a = tp.constant(Tensor(2, 3));
    auto b = tp.constant(Tensor(3, 2));
    CHECK_THROWS_AS(tp.add(a, b), ConfigError);
    CHECK_THROWS_AS(tp.mul_col(a, b), ConfigError);
    CHECK_THROWS_AS(tp.slice_cols(a, 2, 2), ConfigError);
    CHECK_THROWS_AS(tp.backward(a), ConfigError);  // root not scalar
    CHECK_THROWS_AS(tp.group_max(a, {0, 0, 2}), ConfigError);
    CHECK_THROWS_AS(tp.rsqrt(tp.constant(Tensor::full(1, 1, -1.0))), ConfigError);
    CHECK_THROWS_AS(tp.gather_rows(a, {0, 5}), ConfigError);
}

TEST_CASE("matmul kernels agree with each other on transposed operands") {
    Rng rng(23);
    Tensor A = random_tensor(7, 4, rng), B = random_tensor(4, 6, rng);
    Tensor At(4, 7), Bt(6, 4);
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 4; ++j) At.at(j, i) = A.at(i, j);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 6; ++j) Bt.at(j, i) = B.at(i, j);
    Tensor C1(7, 6), C2(7, 6), C3(7, 6);
    matmul_nn(A, B, C1, false);
    matmul_nt(A, Bt, C2, false);
    matmul_tn(At, B, C3, false);
    for (std::size_t i = 0; i < C1.size(); ++i) {
        CHECK(C1.v[i] == doctest::Approx(C2.v[i]).epsilon(1e-12));
        CHECK(C1.v[i] == doctest::Approx(C3.v[i]).epsilon(1e-12));
    }
}
