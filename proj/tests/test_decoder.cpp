#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <doctest.h>

#include "scenedet/decoder.h"
#include "scenedet/error.h"
#include "testutil.h"

using namespace scenedet;
using ad::Tape;
using decoder::DecoderConfig;
using testutil::probe_loss;
using testutil::random_tensor;

namespace {

DecoderConfig tiny_config() {
    DecoderConfig cfg;
    cfg.num_layers = 2;
    cfg.width = 8;
    cfg.heads = 2;
    cfg.ffn_width = 8;
    return cfg;
}

// Hypernetwork sized so the generated weight is square at the decoder width.
hyper::HyperConfig tiny_hyper(int width, bool multi) {
    hyper::HyperConfig cfg;
    cfg.shape = hyper::make_layer_shape(width, width, 4, 4, multi);
    cfg.c_a = 4;
    cfg.c_s = 3;
    cfg.c_h = 4;
    cfg.c_n = 1;
    cfg.n_d = 4;
    return cfg;
}

decoder::AttnVars random_attn(Tape& tp, int width, Rng& rng) {
    decoder::AttnVars v;
    v.qw = tp.constant(random_tensor(width, width, rng));
    v.qb = tp.constant(random_tensor(1, width, rng));
    v.kw = tp.constant(random_tensor(width, width, rng));
    v.kb = tp.constant(random_tensor(1, width, rng));
    v.vw = tp.constant(random_tensor(width, width, rng));
    v.vb = tp.constant(random_tensor(1, width, rng));
    v.ow = tp.constant(random_tensor(width, width, rng));
    v.ob = tp.constant(random_tensor(1, width, rng));
    return v;
}

struct StackFixture {
    ad::ParamStore ps;
    hyper::HyperParams hp;
    decoder::DecoderParams dp;
    Tensor positions, features, memory, query;

    StackFixture(bool multi, uint64_t seed) {
        Rng rng(seed);
        auto cfg = tiny_config();
        hp = hyper::create_params(tiny_hyper(cfg.width, multi), ps, rng, "hyper");
        dp = decoder::create_params(cfg, ps, rng, "dec");
        positions = random_tensor(5, 3, rng);
        features = random_tensor(5, cfg.width, rng);
        memory = random_tensor(7, cfg.width, rng);
        query = random_tensor(4, 3, rng);
        // Jitter to a generic point; fresh init leaves ReLU units exactly at zero.
        for (auto& e : ps.entries)
            for (double& x : e.value.v) x += rng.uniform(-0.05, 0.05);
    }

    Tensor run(const Tensor& q, bool fuse = true) {
        Tape tp;
        ad::Binder bind(tp, ps);
        auto gen = hyper::generate(tp, bind, hp, tp.constant(q));
        auto out = decoder::run_stack(tp, bind, dp, tp.constant(positions),
                                      tp.constant(features), tp.constant(memory),
                                      fuse ? &gen : nullptr);
        return tp.val(out);
    }
};

}  // namespace

TEST_CASE("decoder config validation") {
    auto good = tiny_config();
    CHECK_NOTHROW(good.validate());
    CHECK(good.head_dim() == 4);

    auto bad = good;
    bad.num_layers = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = good;
    bad.width = 7;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = good;
    bad.heads = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = good;
    bad.ffn_width = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("attention weight rows sum to one") {
    Rng rng(11);
    Tape tp;
    auto q = tp.constant(random_tensor(6, 8, rng));
    auto k = tp.constant(random_tensor(9, 8, rng));
    auto weights = decoder::attention_weights(tp, q, k, 4);
    REQUIRE(weights.size() == 4);
    for (auto w : weights) {
        const Tensor& m = tp.val(w);
        CHECK(m.rows == 6);
        CHECK(m.cols == 9);
        for (int r = 0; r < m.rows; ++r) {
            double s = 0.0;
            for (int c = 0; c < m.cols; ++c) {
                s += m.at(r, c);
                CHECK(m.at(r, c) >= 0.0);
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("attention weights are uniform for identical keys") {
    Rng rng(12);
    Tape tp;
    auto q = tp.constant(random_tensor(3, 4, rng));
    Tensor one_key = random_tensor(1, 4, rng);
    Tensor keys(5, 4);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 4; ++c) keys.at(r, c) = one_key.at(0, c);
    auto weights = decoder::attention_weights(tp, q, tp.constant(keys), 2);
    for (auto w : weights) {
        const Tensor& m = tp.val(w);
        for (double x : m.v) CHECK(x == doctest::Approx(0.2).epsilon(1e-12));
    }
}

TEST_CASE("attention with a single key returns the projected value") {
    Rng rng(13);
    Tape tp;
    auto attn = random_attn(tp, 4, rng);
    auto value = tp.constant(random_tensor(1, 4, rng));
    auto key = tp.constant(random_tensor(1, 4, rng));
    auto queries_a = tp.constant(random_tensor(3, 4, rng));
    auto queries_b = tp.constant(random_tensor(3, 4, rng));
    const Tensor out_a = tp.val(decoder::attention(tp, queries_a, key, value, 2, attn));
    const Tensor out_b = tp.val(decoder::attention(tp, queries_b, key, value, 2, attn));
    // Softmax over one element is 1, so the query cannot matter.
    for (size_t i = 0; i < out_a.v.size(); ++i)
        CHECK(out_a.v[i] == doctest::Approx(out_b.v[i]).epsilon(1e-12));
    // Every candidate row receives the same single value row.
    const Tensor expected = tp.val(tp.linear(tp.linear(value, attn.vw, attn.vb), attn.ow, attn.ob));
    for (int r = 0; r < out_a.rows; ++r)
        for (int c = 0; c < out_a.cols; ++c)
            CHECK(out_a.at(r, c) == doctest::Approx(expected.at(0, c)).epsilon(1e-9));
}

TEST_CASE("attention rejects indivisible head counts") {
    Rng rng(14);
    Tape tp;
    auto q = tp.constant(random_tensor(2, 6, rng));
    auto k = tp.constant(random_tensor(2, 6, rng));
    CHECK_THROWS_AS(decoder::attention_weights(tp, q, k, 4), ConfigError);
    CHECK_THROWS_AS(decoder::attention_weights(tp, q, k, 0), ConfigError);
}

TEST_CASE("zero generated weight collapses fused features to the bias") {
    StackFixture fx(false, 21);
    Rng rng(22);
    Tape tp;
    ad::Binder bind(tp, fx.ps);
    const Tensor bias = random_tensor(1, fx.dp.cfg.width, rng);
    hyper::GeneratedVars gen;
    gen.w = tp.constant(Tensor(fx.dp.cfg.width, fx.dp.cfg.width));
    gen.b = tp.constant(bias);
    auto out = decoder::run_stack(tp, bind, fx.dp, tp.constant(fx.positions),
                                  tp.constant(fx.features), tp.constant(fx.memory), &gen);
    const Tensor& o = tp.val(out);
    // W = 0 makes the last fusion o.W^T + b = b; earlier layers renormalize it away.
    for (int r = 0; r < o.rows; ++r)
        for (int c = 0; c < o.cols; ++c)
            CHECK(o.at(r, c) == doctest::Approx(bias.at(0, c)).epsilon(1e-12));
}

TEST_CASE("identity generated weight matches the disabled bypass") {
    StackFixture fx(false, 23);
    Tape tp;
    ad::Binder bind(tp, fx.ps);
    Tensor eye(fx.dp.cfg.width, fx.dp.cfg.width);
    for (int i = 0; i < eye.rows; ++i) eye.at(i, i) = 1.0;
    hyper::GeneratedVars gen;
    gen.w = tp.constant(eye);
    gen.b = tp.constant(Tensor(1, fx.dp.cfg.width));
    auto fused = decoder::run_stack(tp, bind, fx.dp, tp.constant(fx.positions),
                                    tp.constant(fx.features), tp.constant(fx.memory), &gen);
    const Tensor fused_val = tp.val(fused);
    const Tensor plain = fx.run(fx.query, false);
    for (size_t i = 0; i < plain.v.size(); ++i)
        CHECK(fused_val.v[i] == doctest::Approx(plain.v[i]).epsilon(1e-12));
}

TEST_CASE("decoder stack is deterministic") {
    StackFixture a(true, 31);
    StackFixture b(true, 31);
    const Tensor oa = a.run(a.query);
    const Tensor ob = b.run(b.query);
    REQUIRE(oa.v.size() == ob.v.size());
    for (size_t i = 0; i < oa.v.size(); ++i) CHECK(oa.v[i] == ob.v[i]);
}

TEST_CASE("candidate permutation permutes outputs identically") {
    StackFixture fx(true, 37);
    const Tensor base = fx.run(fx.query);

    const std::vector<int> perm = {3, 0, 4, 1, 2};
    Tensor pp(5, 3), pf(5, fx.dp.cfg.width);
    for (int r = 0; r < 5; ++r) {
        for (int c = 0; c < 3; ++c) pp.at(r, c) = fx.positions.at(perm[r], c);
        for (int c = 0; c < pf.cols; ++c) pf.at(r, c) = fx.features.at(perm[r], c);
    }
    Tape tp;
    ad::Binder bind(tp, fx.ps);
    auto gen = hyper::generate(tp, bind, fx.hp, tp.constant(fx.query));
    auto out = decoder::run_stack(tp, bind, fx.dp, tp.constant(pp), tp.constant(pf),
                                  tp.constant(fx.memory), &gen);
    const Tensor& permuted = tp.val(out);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < base.cols; ++c)
            CHECK(permuted.at(r, c) == doctest::Approx(base.at(perm[r], c)).epsilon(1e-12));
}

TEST_CASE("scene query steers fused outputs unless the specific branch is off") {
    StackFixture fx(true, 41);
    Rng rng(42);
    const Tensor other_query = random_tensor(4, 3, rng);
    const Tensor a = fx.run(fx.query);
    const Tensor b = fx.run(other_query);
    double diff = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) diff = std::max(diff, std::abs(a.v[i] - b.v[i]));
    CHECK(diff > 1e-6);

    ad::ParamStore ps2;
    Rng rng2(41);
    auto hcfg = tiny_hyper(fx.dp.cfg.width, true);
    hcfg.specific_enabled = false;
    auto hp2 = hyper::create_params(hcfg, ps2, rng2, "hyper");
    auto dp2 = decoder::create_params(tiny_config(), ps2, rng2, "dec");
    auto run2 = [&](const Tensor& q) {
        Tape tp;
        ad::Binder bind(tp, ps2);
        auto gen = hyper::generate(tp, bind, hp2, tp.constant(q));
        return tp.val(decoder::run_stack(tp, bind, dp2, tp.constant(fx.positions),
                                         tp.constant(fx.features), tp.constant(fx.memory),
                                         &gen));
    };
    const Tensor c = run2(fx.query);
    const Tensor d = run2(other_query);
    for (size_t i = 0; i < c.v.size(); ++i) CHECK(c.v[i] == d.v[i]);
}

TEST_CASE("stack rejects incompatible generated shapes") {
    StackFixture fx(false, 51);
    Tape tp;
    ad::Binder bind(tp, fx.ps);
    hyper::GeneratedVars gen;
    gen.w = tp.constant(Tensor(fx.dp.cfg.width, fx.dp.cfg.width + 1));
    gen.b = tp.constant(Tensor(1, fx.dp.cfg.width));
    CHECK_THROWS_AS(decoder::run_stack(tp, bind, fx.dp, tp.constant(fx.positions),
                                       tp.constant(fx.features), tp.constant(fx.memory), &gen),
                    std::invalid_argument);
    hyper::GeneratedVars tall;
    tall.w = tp.constant(Tensor(fx.dp.cfg.width + 2, fx.dp.cfg.width));
    tall.b = tp.constant(Tensor(1, fx.dp.cfg.width + 2));
    CHECK_THROWS_AS(decoder::run_stack(tp, bind, fx.dp, tp.constant(fx.positions),
                                       tp.constant(fx.features), tp.constant(fx.memory), &tall),
                    std::invalid_argument);
}

TEST_CASE("decoder gradients match finite differences") {
    StackFixture fx(true, 61);
    auto res = ad::finite_difference_check(fx.ps, [&](Tape& tp, ad::Binder& bind) {
        auto gen = hyper::generate(tp, bind, fx.hp, tp.constant(fx.query));
        auto out = decoder::run_stack(tp, bind, fx.dp, tp.constant(fx.positions),
                                      tp.constant(fx.features), tp.constant(fx.memory), &gen);
        return probe_loss(tp, out, 71);
    });
    INFO("worst ", res.where, " analytic=", res.analytic, " numeric=", res.numeric);
    CHECK(res.max_rel_err < 1e-4);
}
