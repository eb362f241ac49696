#include "scenedet/geometry.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "scenedet/error.h"

namespace scenedet::geom {

PointSet::PointSet(Tensor c) : coords(std::move(c)) {
    if (coords.cols != 3) throw ConfigError("point set: expected 3 columns");
    if (coords.rows < 1) throw std::out_of_range("point set: at least one point required");
    for (double x : coords.v)
        if (!std::isfinite(x)) throw ConfigError("point set: non-finite coordinate");
}

void Box3D::validate() const {
    for (double s : size)
        if (!(s > 0.0)) throw ConfigError("box: extents must be strictly positive");
    for (double c : center)
        if (!std::isfinite(c)) throw ConfigError("box: non-finite center");
}

double squared_distance(const double* a, const double* b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

std::vector<int> farthest_point_sample(const PointSet& points, int k, int start_index) {
    const int n = points.count();
    if (k < 1 || k > n) throw std::out_of_range("fps: k out of range");
    if (start_index < 0 || start_index >= n) throw std::out_of_range("fps: bad start index");

    std::vector<int> selected;
    selected.reserve(k);
    selected.push_back(start_index);
    std::vector<char> taken(n, 0);
    taken[start_index] = 1;
    std::vector<double> min_d2(n);
    for (int i = 0; i < n; ++i)
        min_d2[i] = squared_distance(points.point(i), points.point(start_index));

    while (int(selected.size()) < k) {
        int best = -1;
        double best_d2 = -1.0;
        for (int i = 0; i < n; ++i) {
            if (taken[i]) continue;
            if (min_d2[i] > best_d2) {  // strict: ties keep the smallest index
                best_d2 = min_d2[i];
                best = i;
            }
        }
        selected.push_back(best);
        taken[best] = 1;
        for (int i = 0; i < n; ++i) {
            if (taken[i]) continue;
            min_d2[i] = std::min(min_d2[i], squared_distance(points.point(i), points.point(best)));
        }
    }
    return selected;
}

std::vector<std::vector<int>> ball_query(const PointSet& points, const PointSet& centers,
                                         double radius, int max_samples) {
    if (points.count() < 1) throw std::out_of_range("ball query: empty point set");
    if (!(radius > 0.0)) throw ConfigError("ball query: radius must be positive");
    if (max_samples < 1) throw ConfigError("ball query: max_samples must be >= 1");

    const double r2 = radius * radius;
    std::vector<std::vector<int>> groups(centers.count());
    for (int c = 0; c < centers.count(); ++c) {
        auto& g = groups[c];
        int nearest = 0;
        double nearest_d2 = std::numeric_limits<double>::infinity();
        for (int i = 0; i < points.count(); ++i) {
            const double d2 = squared_distance(points.point(i), centers.point(c));
            if (d2 < nearest_d2) {
                nearest_d2 = d2;
                nearest = i;
            }
            if (d2 <= r2 && int(g.size()) < max_samples) g.push_back(i);
        }
        if (g.empty()) g.assign(max_samples, nearest);
    }
    return groups;
}

std::array<double, 9> quaternion_to_rotation(const Quaternion& q) {
    const double norm2 = q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z;
    if (!(norm2 > 0.0) || !std::isfinite(norm2))
        throw std::domain_error("quaternion: zero or non-finite norm");
    const double inv = 1.0 / std::sqrt(norm2);
    const double w = q.w * inv, x = q.x * inv, y = q.y * inv, z = q.z * inv;
    return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
            2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

double box_iou(const Box3D& a, const Box3D& b) {
    a.validate();
    b.validate();
    double inter = 1.0;
    double va = 1.0, vb = 1.0;
    for (int ax = 0; ax < 3; ++ax) {
        const double lo = std::max(a.center[ax] - a.size[ax] / 2, b.center[ax] - b.size[ax] / 2);
        const double hi = std::min(a.center[ax] + a.size[ax] / 2, b.center[ax] + b.size[ax] / 2);
        inter *= std::max(0.0, hi - lo);
        va *= a.size[ax];
        vb *= b.size[ax];
    }
    const double uni = va + vb - inter;
    return inter > 0.0 ? inter / uni : 0.0;
}

std::vector<int> nms_3d(const std::vector<Box3D>& boxes, double iou_threshold) {
    if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0))
        throw ConfigError("nms: threshold outside [0,1]");
    std::vector<int> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
        return boxes[i].score > boxes[j].score;  // stable keeps ties index-ascending
    });
    std::vector<char> dead(boxes.size(), 0);
    std::vector<int> kept;
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
        const int i = order[oi];
        if (dead[i]) continue;
        kept.push_back(i);
        for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
            const int j = order[oj];
            if (dead[j] || boxes[j].category != boxes[i].category) continue;
            if (box_iou(boxes[i], boxes[j]) > iou_threshold) dead[j] = 1;
        }
    }
    return kept;
}

}  // namespace scenedet::geom
