#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <doctest.h>

#include "scenedet/error.h"
#include "scenedet/head.h"
#include "testutil.h"

using namespace scenedet;
using ad::Tape;
using testutil::probe_loss;
using testutil::random_tensor;

namespace {

head::HeadVars constant_head(Tape& tp, int width, int categories, Rng& rng, double fill_scale) {
    auto mat = [&](int r, int c) {
        Tensor t = random_tensor(r, c, rng);
        for (double& x : t.v) x *= fill_scale;
        return tp.constant(std::move(t));
    };
    head::HeadVars v;
    v.wc = mat(3, width);
    v.r_w = mat(1, width);
    v.r_b = mat(1, 1);
    v.q_w = mat(4, width);
    v.q_b = mat(1, 4);
    v.size_w = mat(3, width);
    v.size_b = mat(1, 3);
    v.cls_w = mat(categories, width);
    v.cls_b = mat(1, categories);
    v.obj_w = mat(1, width);
    v.obj_b = mat(1, 1);
    return v;
}

geom::Box3D make_box(double cx, double cy, double cz, double dx, double dy, double dz,
                     int category) {
    geom::Box3D b;
    b.center = {cx, cy, cz};
    b.size = {dx, dy, dz};
    b.category = category;
    return b;
}

double row_norm(const Tensor& t, int r) {
    double s = 0.0;
    for (int c = 0; c < t.cols; ++c) s += t.at(r, c) * t.at(r, c);
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("base offset is the plain linear map") {
    Rng rng(3);
    Tape tp;
    const Tensor wc_val = random_tensor(3, 5, rng);
    auto wc = tp.constant(wc_val);

    auto zero_dq = tp.val(head::regress_base_offset(tp, tp.constant(Tensor(2, 5)), wc));
    for (double x : zero_dq.v) CHECK(x == 0.0);

    Tensor e1(1, 5);
    e1.at(0, 0) = 1.0;
    auto dq = tp.val(head::regress_base_offset(tp, tp.constant(e1), wc));
    for (int a = 0; a < 3; ++a) CHECK(dq.at(0, a) == wc_val.at(a, 0));

    const Tensor f = random_tensor(4, 5, rng);
    Tensor f2 = f;
    for (double& x : f2.v) x *= 2.0;
    auto once = tp.val(head::regress_base_offset(tp, tp.constant(f), wc));
    auto twice = tp.val(head::regress_base_offset(tp, tp.constant(f2), wc));
    for (size_t i = 0; i < once.v.size(); ++i)
        CHECK(twice.v[i] == doctest::Approx(2.0 * once.v[i]).epsilon(1e-12));
}

TEST_CASE("length scalar stays inside (0.9, 1.1) and hits 1 at zero") {
    Tape tp;
    auto zero_w = tp.constant(Tensor(1, 4));
    auto scan = [&](double bias) {
        auto b = tp.constant(Tensor::full(1, 1, bias));
        return tp.val(head::r_head(tp, tp.constant(Tensor(1, 4)), zero_w, b)).at(0, 0);
    };
    CHECK(scan(0.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(scan(60.0) == doctest::Approx(1.1).epsilon(1e-12));
    CHECK(scan(-60.0) == doctest::Approx(0.9).epsilon(1e-12));
    double prev = 0.0;
    for (int i = 0; i <= 20; ++i) {
        const double r = scan(-5.0 + 0.5 * i);
        CHECK(r > 0.9);
        CHECK(r < 1.1);
        if (i > 0) CHECK(r > prev);
        prev = r;
    }
}

TEST_CASE("rotation quaternions add the identity") {
    Rng rng(5);
    Tape tp;
    const int width = 4;
    auto feats = tp.constant(random_tensor(2, width, rng));

    auto zero_raw = tp.val(head::rotation_quaternions(tp, feats, tp.constant(Tensor(4, width)),
                                                      tp.constant(Tensor(1, 4))));
    for (int r = 0; r < 2; ++r) {
        CHECK(zero_raw.at(r, 0) == 1.0);
        for (int c = 1; c < 4; ++c) CHECK(zero_raw.at(r, c) == 0.0);
    }

    Tensor bias(1, 4);
    bias.at(0, 0) = 1.0;  // raw (1,0,0,0) shifts w to 2: still the identity rotation
    auto shifted = tp.val(head::rotation_quaternions(tp, feats, tp.constant(Tensor(4, width)),
                                                     tp.constant(bias)));
    CHECK(shifted.at(0, 0) == 2.0);
    // (2,0,0,0) normalizes back to the identity, so vectors pass through.
    const Tensor vec = random_tensor(2, 3, rng);
    auto rotated = tp.val(head::rotate_by_quaternion(tp, tp.constant(shifted), tp.constant(vec)));
    for (size_t i = 0; i < vec.v.size(); ++i)
        CHECK(rotated.v[i] == doctest::Approx(vec.v[i]).epsilon(1e-12));
}

TEST_CASE("quaternion rotation matches the matrix conversion") {
    Rng rng(7);
    const int n = 40;
    Tensor quat = random_tensor(n, 4, rng);
    Tensor vec = random_tensor(n, 3, rng);
    Tape tp;
    auto out = tp.val(head::rotate_by_quaternion(tp, tp.constant(quat), tp.constant(vec)));
    for (int r = 0; r < n; ++r) {
        geom::Quaternion q{quat.at(r, 0), quat.at(r, 1), quat.at(r, 2), quat.at(r, 3)};
        const auto m = geom::quaternion_to_rotation(q);
        for (int a = 0; a < 3; ++a) {
            const double want = m[a * 3 + 0] * vec.at(r, 0) + m[a * 3 + 1] * vec.at(r, 1) +
                                m[a * 3 + 2] * vec.at(r, 2);
            CHECK(out.at(r, a) == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("disentangled offset on analytic cases") {
    Tape tp;
    Tensor dq(2, 3);
    dq.at(0, 0) = 1.0;
    dq.at(1, 1) = 2.0;
    Tensor r = Tensor::full(2, 1, 1.0);
    Tensor quat(2, 4);
    quat.at(0, 0) = 1.0;            // identity: offset unchanged
    quat.at(1, 3) = 1.0;            // 180 degrees about z: (x,y) negate
    auto out = tp.val(head::disentangled_offset(tp, tp.constant(dq), tp.constant(r),
                                                tp.constant(quat)));
    CHECK(out.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.at(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(out.at(1, 1) == doctest::Approx(-2.0).epsilon(1e-12));
}

TEST_CASE("disentangled offset preserves the scaled norm") {
    Rng rng(9);
    const int n = 60;
    Tensor dq = random_tensor(n, 3, rng);
    Tensor quat = random_tensor(n, 4, rng);
    Tensor r(n, 1);
    for (int i = 0; i < n; ++i) r.at(i, 0) = rng.uniform(0.9, 1.1);
    Tape tp;
    auto out = tp.val(head::disentangled_offset(tp, tp.constant(dq), tp.constant(r),
                                                tp.constant(quat)));
    for (int i = 0; i < n; ++i)
        CHECK(std::abs(row_norm(out, i) - r.at(i, 0) * row_norm(dq, i)) < 1e-7);
}

TEST_CASE("zero quaternion row is rejected") {
    Tape tp;
    Tensor quat(2, 4);
    quat.at(0, 0) = 1.0;  // second row stays all zero
    CHECK_THROWS_AS(head::rotate_by_quaternion(tp, tp.constant(quat),
                                               tp.constant(Tensor(2, 3))),
                    std::domain_error);
}

TEST_CASE("zeroed head nets decode boxes at the candidates with unit size") {
    Rng rng(11);
    Tape tp;
    auto nets = constant_head(tp, 5, 4, rng, 0.0);
    const Tensor pos = random_tensor(3, 3, rng);
    auto boxes = head::predict_boxes(tp, tp.constant(pos), tp.constant(random_tensor(3, 5, rng)),
                                     nets, true);
    const Tensor& center = tp.val(boxes.center);
    const Tensor& size = tp.val(boxes.size);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            CHECK(center.at(r, c) == doctest::Approx(pos.at(r, c)).epsilon(1e-12));
            CHECK(size.at(r, c) == doctest::Approx(1.0).epsilon(1e-12));
        }
    // Zero objectness logits sit exactly at score 0.5.
    const Tensor score = tp.val(tp.sigmoid(boxes.objectness));
    for (double s : score.v) CHECK(s == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("neutral length and rotation reduce to the plain offset head") {
    Rng rng(13);
    Tape tp;
    auto nets = constant_head(tp, 6, 4, rng, 0.4);
    // Force r = 1 exactly (sigmoid(0) = 0.5) and the identity quaternion.
    nets.r_w = tp.constant(Tensor(1, 6));
    nets.r_b = tp.constant(Tensor(1, 1));
    nets.q_w = tp.constant(Tensor(4, 6));
    nets.q_b = tp.constant(Tensor(1, 4));
    const Tensor pos = random_tensor(4, 3, rng);
    const Tensor feats = random_tensor(4, 6, rng);
    auto ddh = head::predict_boxes(tp, tp.constant(pos), tp.constant(feats), nets, true);
    auto plain = head::predict_boxes(tp, tp.constant(pos), tp.constant(feats), nets, false);
    const Tensor& a = tp.val(ddh.center);
    const Tensor& b = tp.val(plain.center);
    for (size_t i = 0; i < a.v.size(); ++i) CHECK(a.v[i] == doctest::Approx(b.v[i]).epsilon(1e-12));
}

TEST_CASE("detection loss vanishes on perfect positives") {
    const std::vector<geom::Box3D> gt = {make_box(0.3, 0.3, 0.2, 0.2, 0.2, 0.2, 1),
                                         make_box(0.7, 0.7, 0.2, 0.2, 0.2, 0.2, 3)};
    Tensor cand(2, 3);
    cand.at(0, 0) = 0.32;
    cand.at(0, 1) = 0.28;
    cand.at(0, 2) = 0.22;
    cand.at(1, 0) = 0.69;
    cand.at(1, 1) = 0.71;
    cand.at(1, 2) = 0.18;
    Tape tp;
    head::BoxVars boxes;
    Tensor centers(2, 3), sizes(2, 3), logits(2, 4);
    for (int i = 0; i < 2; ++i) {
        for (int a = 0; a < 3; ++a) {
            centers.at(i, a) = gt[i].center[a];
            sizes.at(i, a) = std::log(gt[i].size[a]);
        }
        for (int c = 0; c < 4; ++c) logits.at(i, c) = c == gt[i].category ? 60.0 : -60.0;
    }
    boxes.center = tp.constant(centers);
    boxes.size_raw = tp.constant(sizes);
    boxes.size = tp.exp(boxes.size_raw);
    boxes.logits = tp.constant(logits);
    boxes.objectness = tp.constant(Tensor::full(2, 1, 40.0));
    Tensor mem(1, 3);
    mem.at(0, 0) = 0.31;
    mem.at(0, 1) = 0.29;
    mem.at(0, 2) = 0.21;
    auto terms = head::detection_loss(tp, cand, boxes, tp.constant(Tensor::full(1, 1, 40.0)),
                                      mem, gt, head::LossWeights{});
    CHECK(terms.num_positive == 2);
    CHECK(terms.assignment == std::vector<int>{0, 1});
    CHECK(tp.val(terms.center).at(0, 0) == 0.0);
    CHECK(tp.val(terms.size).at(0, 0) == 0.0);
    CHECK(tp.val(terms.category).at(0, 0) < 1e-9);
    CHECK(tp.val(terms.total).at(0, 0) < 1e-6);
}

TEST_CASE("assignment picks nearest containing box, ties to the smaller index") {
    // Two overlapping boxes; the first candidate sits inside only the second.
    const std::vector<geom::Box3D> overlap = {make_box(0.40, 0.5, 0.2, 0.3, 0.3, 0.3, 0),
                                              make_box(0.60, 0.5, 0.2, 0.3, 0.3, 0.3, 1)};
    Tensor cand(1, 3);
    cand.at(0, 0) = 0.56;
    cand.at(0, 1) = 0.5;
    cand.at(0, 2) = 0.2;
    Tape tp;
    head::BoxVars boxes;
    boxes.center = tp.constant(Tensor(1, 3));
    boxes.size_raw = tp.constant(Tensor(1, 3));
    boxes.size = tp.exp(boxes.size_raw);
    boxes.logits = tp.constant(Tensor(1, 2));
    boxes.objectness = tp.constant(Tensor(1, 1));
    Tensor mem(1, 3);
    auto run = [&](const Tensor& c) {
        return head::detection_loss(tp, c, boxes, tp.constant(Tensor(1, 1)), mem, overlap,
                                    head::LossWeights{});
    };
    CHECK(run(cand).assignment == std::vector<int>{1});

    Tensor tie(1, 3);
    tie.at(0, 0) = 0.5;  // equidistant from both centers, inside both boxes
    tie.at(0, 1) = 0.5;
    tie.at(0, 2) = 0.2;
    CHECK(run(tie).assignment == std::vector<int>{0});
}

TEST_CASE("loss with no positives keeps only the negative terms") {
    const std::vector<geom::Box3D> gt = {make_box(0.8, 0.8, 0.1, 0.1, 0.1, 0.1, 0)};
    Tensor cand = Tensor::full(2, 3, 0.2);
    Tape tp;
    head::BoxVars boxes;
    boxes.center = tp.constant(Tensor(2, 3));
    boxes.size_raw = tp.constant(Tensor(2, 3));
    boxes.size = tp.exp(boxes.size_raw);
    boxes.logits = tp.constant(Tensor(2, 3));
    boxes.objectness = tp.constant(Tensor(2, 1));
    Tensor mem = Tensor::full(3, 3, 0.2);
    auto terms = head::detection_loss(tp, cand, boxes, tp.constant(Tensor(3, 1)), mem, gt,
                                      head::LossWeights{});
    CHECK(terms.num_positive == 0);
    CHECK(terms.center == -1);
    CHECK(terms.size == -1);
    CHECK(terms.category == -1);
    // Both remaining terms are BCE at logit 0 against target 0: ln 2 each.
    const double ln2 = std::log(2.0);
    CHECK(tp.val(terms.objectness).at(0, 0) == doctest::Approx(ln2).epsilon(1e-12));
    CHECK(tp.val(terms.total).at(0, 0) == doctest::Approx(3.0 * ln2).epsilon(1e-12));

    auto empty = head::detection_loss(tp, cand, boxes, tp.constant(Tensor(3, 1)), mem, {},
                                      head::LossWeights{});
    CHECK(empty.num_positive == 0);
    CHECK(tp.val(empty.total).at(0, 0) == doctest::Approx(3.0 * ln2).epsilon(1e-12));
}

TEST_CASE("loss is non-negative and rejects bad categories") {
    Rng rng(17);
    Tape tp;
    auto nets = constant_head(tp, 5, 3, rng, 0.8);
    const Tensor cand = random_tensor(6, 3, rng, 0.0, 1.0);
    auto boxes = head::predict_boxes(tp, tp.constant(cand), tp.constant(random_tensor(6, 5, rng)),
                                     nets, true);
    const Tensor mem = random_tensor(4, 3, rng, 0.0, 1.0);
    const std::vector<geom::Box3D> gt = {make_box(0.5, 0.5, 0.5, 0.6, 0.6, 0.6, 2)};
    auto terms = head::detection_loss(tp, cand, boxes, tp.constant(random_tensor(4, 1, rng)),
                                      mem, gt, head::LossWeights{});
    CHECK(tp.val(terms.total).at(0, 0) >= 0.0);

    const std::vector<geom::Box3D> bad = {make_box(0.5, 0.5, 0.5, 0.6, 0.6, 0.6, 7)};
    CHECK_THROWS_AS(head::detection_loss(tp, cand, boxes, tp.constant(random_tensor(4, 1, rng)),
                                         mem, bad, head::LossWeights{}),
                    std::out_of_range);
}

TEST_CASE("head gradients match finite differences") {
    Rng rng(19);
    ad::ParamStore ps;
    Rng prng(23);
    head::HeadConfig cfg;
    cfg.width = 6;
    cfg.num_categories = 3;
    auto params = head::create_params(cfg, ps, prng, "head");
    const int feat_id = ps.add("feat", random_tensor(8, cfg.width, prng));
    const int kps_id = ps.add("kps", random_tensor(10, 1, prng));

    // Candidates sit well inside or outside the boxes so the assignment is
    // stable under the finite-difference step.
    const std::vector<geom::Box3D> gt = {make_box(0.3, 0.3, 0.15, 0.24, 0.24, 0.3, 0),
                                         make_box(0.7, 0.6, 0.15, 0.2, 0.3, 0.3, 2)};
    Tensor cand(8, 3);
    const double spots[8][3] = {{0.30, 0.30, 0.10}, {0.35, 0.28, 0.20}, {0.26, 0.33, 0.05},
                                {0.70, 0.60, 0.12}, {0.66, 0.55, 0.22}, {0.95, 0.95, 0.40},
                                {0.05, 0.90, 0.30}, {0.50, 0.05, 0.10}};
    for (int i = 0; i < 8; ++i)
        for (int a = 0; a < 3; ++a) cand.at(i, a) = spots[i][a];
    const Tensor mem = random_tensor(10, 3, rng, 0.0, 1.0);

    auto res = ad::finite_difference_check(ps, [&](Tape& tp, ad::Binder& bind) {
        auto nets = head::bind_head(bind, params);
        auto boxes = head::predict_boxes(tp, tp.constant(cand), bind(feat_id), nets, true);
        auto terms = head::detection_loss(tp, cand, boxes, bind(kps_id), mem, gt,
                                          head::LossWeights{});
        return terms.total;
    });
    INFO("worst ", res.where, " analytic=", res.analytic, " numeric=", res.numeric);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("prediction lines carry nine significant digits") {
    geom::Box3D b;
    b.center = {0.123456789123, 0.5, 0.25};
    b.size = {1.0 / 3.0, 0.2, 0.1};
    b.category = 3;
    b.score = 0.875;
    CHECK(head::prediction_line("scene_0042", b) ==
          "scene_0042 3 0.875 0.123456789 0.5 0.25 0.333333333 0.2 0.1");
}
