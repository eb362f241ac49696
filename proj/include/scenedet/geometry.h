#pragma once

#include <array>
#include <vector>

#include "scenedet/tensor.h"

namespace scenedet::geom {

// N x 3 point coordinates in meters.
struct PointSet {
    Tensor coords;

    PointSet() = default;
    explicit PointSet(Tensor c);
    int count() const { return coords.rows; }
    const double* point(int i) const { return coords.rowptr(i); }
};

// (w, x, y, z); callers may pass unnormalized values, conversion normalizes.
struct Quaternion {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;
};

struct Box3D {
    std::array<double, 3> center{};
    std::array<double, 3> size{};  // strictly positive extents
    int category = 0;
    double score = 0.0;  // predictions only; ignored on ground truth

    void validate() const;
};

double squared_distance(const double* a, const double* b);

// Greedy farthest-point sampling: first index is start_index, each next index
// maximizes the minimum squared distance to the selected set, ties to the
// smallest index. Returned indices are distinct.
std::vector<int> farthest_point_sample(const PointSet& points, int k, int start_index = 0);

// Per-center neighbor lists: up to max_samples indices with distance <= radius
// in ascending index order. A center with no neighbor in range gets its
// nearest point's index repeated max_samples times.
std::vector<std::vector<int>> ball_query(const PointSet& points, const PointSet& centers,
                                         double radius, int max_samples);

// Shoemake quaternion-to-matrix conversion; q is L2-normalized first.
std::array<double, 9> quaternion_to_rotation(const Quaternion& q);

// Axis-aligned intersection-over-union of two boxes.
double box_iou(const Box3D& a, const Box3D& b);

// Greedy score-descending suppression, run per category independently.
// Ties in score keep the smaller index. Returns kept indices in the order
// they were accepted (descending score, ties ascending index).
std::vector<int> nms_3d(const std::vector<Box3D>& boxes, double iou_threshold);

}  // namespace scenedet::geom
