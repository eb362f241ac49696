#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <doctest.h>
#include <set>
#include <stdexcept>

#include "oracles.h"
#include "scenedet/error.h"
#include "scenedet/geometry.h"
#include "scenedet/rng.h"
#include "testutil.h"

using namespace scenedet;
using geom::Box3D;
using geom::PointSet;
using geom::Quaternion;

namespace {

PointSet make_points(std::vector<double> flat) {
    const int n = int(flat.size() / 3);
    return PointSet(Tensor(n, 3, std::move(flat)));
}

PointSet random_points(int n, Rng& rng) {
    Tensor t(n, 3);
    for (double& x : t.v) x = rng.uniform(-1.0, 1.0);
    return PointSet(std::move(t));
}

}  // namespace

TEST_CASE("farthest point sampling basics") {
    auto pts = make_points({0, 0, 0, 1, 0, 0, 0.1, 0, 0});
    CHECK(geom::farthest_point_sample(pts, 2, 0) == std::vector<int>{0, 1});

    auto spread = make_points({0, 0, 0, 2, 0, 0, 1, 0, 0});
    CHECK(geom::farthest_point_sample(spread, 3, 0) == std::vector<int>{0, 1, 2});

    // k = N returns a permutation of all indices.
    Rng rng(1);
    auto cloud = random_points(17, rng);
    auto all = geom::farthest_point_sample(cloud, 17, 5);
    std::set<int> uniq(all.begin(), all.end());
    CHECK(uniq.size() == 17);
    CHECK(all.front() == 5);

    CHECK_THROWS_AS(geom::farthest_point_sample(pts, 4, 0), std::out_of_range);
    CHECK_THROWS_AS(geom::farthest_point_sample(pts, 2, 3), std::out_of_range);
}

TEST_CASE("farthest point sampling agrees with the exhaustive oracle") {
    Rng rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 2 + int(rng.index(48));
        auto pts = random_points(n, rng);
        const int k = 1 + int(rng.index(n));
        const int start = int(rng.index(n));
        CAPTURE(trial);
        CHECK(geom::farthest_point_sample(pts, k, start) == oracles::fps_exhaustive(pts, k, start));
    }
}

TEST_CASE("fps tie break picks the smallest index") {
    // Two points duplicate the far location; both are equally far from 0.
    auto pts = make_points({0, 0, 0, 3, 0, 0, 3, 0, 0, 1, 0, 0});
    auto sel = geom::farthest_point_sample(pts, 2, 0);
    CHECK(sel == std::vector<int>{0, 1});
}

TEST_CASE("ball query") {
    auto pts = make_points({0.5, 0, 0, 2, 0, 0});
    auto centers = make_points({0, 0, 0});
    auto groups = geom::ball_query(pts, centers, 1.0, 8);
    REQUIRE(groups.size() == 1);
    CHECK(groups[0] == std::vector<int>{0});

    // Center sits on a point: that index must appear.
    auto on_point = geom::ball_query(pts, make_points({2, 0, 0}), 0.5, 4);
    CHECK(on_point[0] == std::vector<int>{1});

    // Nothing in range: nearest index repeated max_samples times.
    auto fallback = geom::ball_query(make_points({1, 0, 0, 4, 0, 0}), centers, 0.1, 3);
    CHECK(fallback[0] == std::vector<int>{0, 0, 0});

    // Membership property on random data: distances within radius, ascending
    // order, truncation at max_samples.
    Rng rng(7);
    auto cloud = random_points(60, rng);
    auto ctrs = random_points(10, rng);
    auto gs = geom::ball_query(cloud, ctrs, 0.4, 6);
    for (int c = 0; c < 10; ++c) {
        REQUIRE(!gs[c].empty());
        CHECK(gs[c].size() <= 6);
        const bool fallback =
            geom::squared_distance(cloud.point(gs[c][0]), ctrs.point(c)) > 0.16;
        if (fallback) {
            CHECK(gs[c].size() == 6);
            for (int j : gs[c]) CHECK(j == gs[c][0]);
            continue;
        }
        for (std::size_t j = 0; j < gs[c].size(); ++j) {
            if (j > 0) CHECK(gs[c][j] > gs[c][j - 1]);
            CHECK(geom::squared_distance(cloud.point(gs[c][j]), ctrs.point(c)) <= 0.16 + 1e-12);
        }
    }
    CHECK_THROWS_AS(geom::ball_query(cloud, ctrs, -1.0, 4), ConfigError);
}

TEST_CASE("quaternion conversion hits the analytic rotations") {
    auto ident = geom::quaternion_to_rotation({1, 0, 0, 0});
    auto scaled = geom::quaternion_to_rotation({2, 0, 0, 0});
    for (int i = 0; i < 9; ++i) {
        const double want = (i % 4 == 0) ? 1.0 : 0.0;
        CHECK(ident[i] == doctest::Approx(want).epsilon(1e-15));
        CHECK(scaled[i] == doctest::Approx(want).epsilon(1e-15));
    }
    auto zrot = geom::quaternion_to_rotation({0, 0, 0, 1});  // 180 degrees about z
    const double want_z[9] = {-1, 0, 0, 0, -1, 0, 0, 0, 1};
    for (int i = 0; i < 9; ++i) CHECK(zrot[i] == doctest::Approx(want_z[i]).epsilon(1e-15));

    CHECK_THROWS_AS(geom::quaternion_to_rotation({0, 0, 0, 0}), std::domain_error);
}

TEST_CASE("random quaternions give orthonormal right-handed matrices") {
    Rng rng(13);
    for (int t = 0; t < 300; ++t) {
        Quaternion q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        if (std::abs(q.w) + std::abs(q.x) + std::abs(q.y) + std::abs(q.z) < 1e-6) continue;
        auto R = geom::quaternion_to_rotation(q);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double dot = 0.0;
                for (int k = 0; k < 3; ++k) dot += R[k * 3 + i] * R[k * 3 + j];
                CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-9);
            }
        const double det = R[0] * (R[4] * R[8] - R[5] * R[7]) -
                           R[1] * (R[3] * R[8] - R[5] * R[6]) +
                           R[2] * (R[3] * R[7] - R[4] * R[6]);
        CHECK(std::abs(det - 1.0) < 1e-9);
        // Norm preservation on a random vector.
        double v[3] = {rng.normal(), rng.normal(), rng.normal()};
        double rv[3] = {0, 0, 0};
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 3; ++k) rv[i] += R[i * 3 + k] * v[k];
        const double n0 = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        const double n1 = std::sqrt(rv[0] * rv[0] + rv[1] * rv[1] + rv[2] * rv[2]);
        CHECK(std::abs(n0 - n1) < 1e-9);
    }
}

TEST_CASE("box iou analytic cases") {
    Box3D unit{{0, 0, 0}, {1, 1, 1}, 0, 0};
    CHECK(geom::box_iou(unit, unit) == doctest::Approx(1.0));

    Box3D shifted = unit;
    shifted.center[0] = 0.5;
    CHECK(geom::box_iou(unit, shifted) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    Box3D far_away{{10, 0, 0}, {1, 1, 1}, 0, 0};
    CHECK(geom::box_iou(unit, far_away) == 0.0);

    // Touching faces count as zero intersection volume.
    Box3D touching{{1, 0, 0}, {1, 1, 1}, 0, 0};
    CHECK(geom::box_iou(unit, touching) == 0.0);

    // Integer-grid boxes: volumes are exact in double arithmetic.
    Box3D a{{2, 2, 2}, {4, 4, 4}, 0, 0};   // [0,4]^3, vol 64
    Box3D b{{3, 3, 3}, {2, 2, 2}, 0, 0};   // [2,4]^3, vol 8, fully inside
    CHECK(geom::box_iou(a, b) == doctest::Approx(8.0 / 64.0).epsilon(1e-15));

    Box3D c{{4, 2, 2}, {4, 4, 4}, 0, 0};   // overlap [2,4]x[0,4]x[0,4] = 32
    CHECK(geom::box_iou(a, c) == doctest::Approx(32.0 / 96.0).epsilon(1e-15));

    CHECK(geom::box_iou(a, b) == geom::box_iou(b, a));
    Box3D flat{{0, 0, 0}, {1, 0.0, 1}, 0, 0};
    CHECK_THROWS_AS(geom::box_iou(unit, flat), ConfigError);
}

TEST_CASE("box iou symmetry and range on random boxes") {
    Rng rng(31);
    for (int t = 0; t < 200; ++t) {
        auto rnd_box = [&]() {
            Box3D b;
            for (int i = 0; i < 3; ++i) {
                b.center[i] = rng.uniform(-1, 1);
                b.size[i] = rng.uniform(0.1, 1.5);
            }
            return b;
        };
        Box3D a = rnd_box(), b = rnd_box();
        const double ab = geom::box_iou(a, b);
        CHECK(ab == geom::box_iou(b, a));
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0);
        CHECK(geom::box_iou(a, a) == doctest::Approx(1.0));
    }
}

TEST_CASE("nms") {
    std::vector<Box3D> one{{{0, 0, 0}, {1, 1, 1}, 0, 0.5}};
    CHECK(geom::nms_3d(one, 0.5) == std::vector<int>{0});

    std::vector<Box3D> dup{{{0, 0, 0}, {1, 1, 1}, 0, 0.8}, {{0, 0, 0}, {1, 1, 1}, 0, 0.9}};
    CHECK(geom::nms_3d(dup, 0.5) == std::vector<int>{1});

    std::vector<Box3D> disjoint{{{0, 0, 0}, {1, 1, 1}, 0, 0.8}, {{5, 0, 0}, {1, 1, 1}, 0, 0.9}};
    auto kept = geom::nms_3d(disjoint, 0.5);
    CHECK(kept.size() == 2);
    CHECK(kept[0] == 1);  // accepted in descending score order

    // Same geometry, different categories: both survive.
    std::vector<Box3D> cats{{{0, 0, 0}, {1, 1, 1}, 0, 0.8}, {{0, 0, 0}, {1, 1, 1}, 1, 0.9}};
    CHECK(geom::nms_3d(cats, 0.5).size() == 2);

    // Equal scores: smaller index wins.
    std::vector<Box3D> tie{{{0, 0, 0}, {1, 1, 1}, 0, 0.7}, {{0, 0, 0}, {1, 1, 1}, 0, 0.7}};
    CHECK(geom::nms_3d(tie, 0.5) == std::vector<int>{0});

    // Property: survivors of one category never overlap above the threshold.
    Rng rng(77);
    std::vector<Box3D> crowd;
    for (int i = 0; i < 40; ++i) {
        Box3D b;
        for (int k = 0; k < 3; ++k) {
            b.center[k] = rng.uniform(0, 2);
            b.size[k] = rng.uniform(0.3, 1.0);
        }
        b.category = int(rng.index(3));
        b.score = rng.uniform();
        crowd.push_back(b);
    }
    auto survivors = geom::nms_3d(crowd, 0.3);
    for (std::size_t i = 0; i < survivors.size(); ++i)
        for (std::size_t j = i + 1; j < survivors.size(); ++j) {
            if (crowd[survivors[i]].category != crowd[survivors[j]].category) continue;
            CHECK(geom::box_iou(crowd[survivors[i]], crowd[survivors[j]]) <= 0.3 + 1e-12);
        }
}
