#include "scenedet/head.h"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "scenedet/error.h"

namespace scenedet::head {

void HeadConfig::validate() const {
    if (width < 1) throw ConfigError("head: width must be positive");
    if (num_categories < 1) throw ConfigError("head: num_categories must be positive");
}

namespace {

Tensor xavier(int rows, int cols, Rng& rng) {
    Tensor t(rows, cols);
    const double limit = std::sqrt(6.0 / double(rows + cols));
    for (double& x : t.v) x = rng.uniform(-limit, limit);
    return t;
}

bool inside_box(const double* p, const geom::Box3D& box) {
    // Points sampled exactly on a face land a rounding error outside the
    // half-extent; the pad keeps their labels stable.
    for (int a = 0; a < 3; ++a)
        if (std::abs(p[a] - box.center[a]) > 0.5 * box.size[a] + 1e-9) return false;
    return true;
}

}  // namespace

HeadParams create_params(const HeadConfig& cfg, ad::ParamStore& store, Rng& rng,
                         const std::string& prefix) {
    cfg.validate();
    HeadParams p;
    p.cfg = cfg;
    // Regression maps start damped so initial centers sit at the candidate
    // position and initial sizes at a decimeter-scale prior; large random
    // outputs here swamp the early loss and destabilize the shared backbone.
    Tensor wc = xavier(3, cfg.width, rng);
    for (double& x : wc.v) x *= 0.1;
    p.wc = store.add(prefix + ".wc", std::move(wc));
    p.r_w = store.add(prefix + ".r.w", xavier(1, cfg.width, rng));
    p.r_b = store.add(prefix + ".r.b", Tensor(1, 1));
    Tensor qw = xavier(4, cfg.width, rng);
    for (double& x : qw.v) x *= 0.1;
    p.q_w = store.add(prefix + ".quat.w", std::move(qw));
    p.q_b = store.add(prefix + ".quat.b", Tensor(1, 4));
    Tensor sw = xavier(3, cfg.width, rng);
    for (double& x : sw.v) x *= 0.1;
    p.size_w = store.add(prefix + ".size.w", std::move(sw));
    p.size_b = store.add(prefix + ".size.b", Tensor::full(1, 3, std::log(0.18)));
    p.cls_w = store.add(prefix + ".cls.w", xavier(cfg.num_categories, cfg.width, rng));
    p.cls_b = store.add(prefix + ".cls.b", Tensor(1, cfg.num_categories));
    p.obj_w = store.add(prefix + ".obj.w", xavier(1, cfg.width, rng));
    p.obj_b = store.add(prefix + ".obj.b", Tensor(1, 1));
    return p;
}

HeadVars bind_head(ad::Binder& bind, const HeadParams& params) {
    HeadVars v;
    v.wc = bind(params.wc);
    v.r_w = bind(params.r_w);
    v.r_b = bind(params.r_b);
    v.q_w = bind(params.q_w);
    v.q_b = bind(params.q_b);
    v.size_w = bind(params.size_w);
    v.size_b = bind(params.size_b);
    v.cls_w = bind(params.cls_w);
    v.cls_b = bind(params.cls_b);
    v.obj_w = bind(params.obj_w);
    v.obj_b = bind(params.obj_b);
    return v;
}

Tape::VarId regress_base_offset(Tape& tp, Tape::VarId features, Tape::VarId wc) {
    return tp.matmul_nt(features, wc);
}

Tape::VarId r_head(Tape& tp, Tape::VarId features, Tape::VarId r_w, Tape::VarId r_b) {
    return tp.affine(tp.sigmoid(tp.linear(features, r_w, r_b)), 0.2, 0.9);
}

Tape::VarId rotation_quaternions(Tape& tp, Tape::VarId features, Tape::VarId q_w,
                                 Tape::VarId q_b) {
    Tensor identity(1, 4);
    identity.at(0, 0) = 1.0;
    return tp.add_row(tp.linear(features, q_w, q_b), tp.constant(identity));
}

Tape::VarId rotate_by_quaternion(Tape& tp, Tape::VarId quat, Tape::VarId vec) {
    const Tensor& qv = tp.val(quat);
    const Tensor& vv = tp.val(vec);
    if (qv.cols != 4 || vv.cols != 3 || qv.rows != vv.rows)
        throw std::invalid_argument("rotate: want matching N x 4 and N x 3");
    for (int r = 0; r < qv.rows; ++r) {
        double n2 = 0.0;
        for (int c = 0; c < 4; ++c) n2 += qv.at(r, c) * qv.at(r, c);
        if (!(n2 > 0.0) || !std::isfinite(n2))
            throw std::domain_error("rotate: zero or non-finite quaternion");
    }
    const auto inv = tp.rsqrt(tp.row_sum(tp.mul(quat, quat)));
    const auto qn = tp.mul_col(quat, inv);
    const auto w = tp.slice_cols(qn, 0, 1);
    const auto ux = tp.slice_cols(qn, 1, 2);
    const auto uy = tp.slice_cols(qn, 2, 3);
    const auto uz = tp.slice_cols(qn, 3, 4);
    const auto vx = tp.slice_cols(vec, 0, 1);
    const auto vy = tp.slice_cols(vec, 1, 2);
    const auto vz = tp.slice_cols(vec, 2, 3);
    // v' = v + w t + u x t with t = 2 (u x v); equivalent to the matrix form.
    const auto tx = tp.scale(tp.sub(tp.mul(uy, vz), tp.mul(uz, vy)), 2.0);
    const auto ty = tp.scale(tp.sub(tp.mul(uz, vx), tp.mul(ux, vz)), 2.0);
    const auto tz = tp.scale(tp.sub(tp.mul(ux, vy), tp.mul(uy, vx)), 2.0);
    const auto rx = tp.add(vx, tp.add(tp.mul(w, tx), tp.sub(tp.mul(uy, tz), tp.mul(uz, ty))));
    const auto ry = tp.add(vy, tp.add(tp.mul(w, ty), tp.sub(tp.mul(uz, tx), tp.mul(ux, tz))));
    const auto rz = tp.add(vz, tp.add(tp.mul(w, tz), tp.sub(tp.mul(ux, ty), tp.mul(uy, tx))));
    return tp.concat_cols(tp.concat_cols(rx, ry), rz);
}

Tape::VarId disentangled_offset(Tape& tp, Tape::VarId delta_q, Tape::VarId r,
                                Tape::VarId quat) {
    return rotate_by_quaternion(tp, quat, tp.mul_col(delta_q, r));
}

BoxVars predict_boxes(Tape& tp, Tape::VarId positions, Tape::VarId features,
                      const HeadVars& nets, bool use_ddh) {
    BoxVars out;
    const auto dq = regress_base_offset(tp, features, nets.wc);
    Tape::VarId offset = dq;
    if (use_ddh) {
        out.delta_q = dq;
        out.r = r_head(tp, features, nets.r_w, nets.r_b);
        out.quat = rotation_quaternions(tp, features, nets.q_w, nets.q_b);
        offset = disentangled_offset(tp, dq, out.r, out.quat);
    }
    out.center = tp.add(positions, offset);
    out.size_raw = tp.linear(features, nets.size_w, nets.size_b);
    out.size = tp.exp(out.size_raw);
    out.logits = tp.linear(features, nets.cls_w, nets.cls_b);
    out.objectness = tp.linear(features, nets.obj_w, nets.obj_b);
    return out;
}

LossTerms detection_loss(Tape& tp, const Tensor& candidate_positions, const BoxVars& boxes,
                         Tape::VarId sampling_logits, const Tensor& memory_positions,
                         const std::vector<geom::Box3D>& gt, const LossWeights& weights) {
    const int n = candidate_positions.rows;
    const int m = memory_positions.rows;
    if (candidate_positions.cols != 3 || memory_positions.cols != 3)
        throw std::invalid_argument("detection_loss: positions must be N x 3");
    if (tp.val(boxes.center).rows != n || tp.val(sampling_logits).rows != m)
        throw std::invalid_argument("detection_loss: prediction row counts disagree");
    const int num_categories = tp.val(boxes.logits).cols;
    for (const auto& box : gt) {
        box.validate();
        if (box.category < 0 || box.category >= num_categories)
            throw std::out_of_range("detection_loss: GT category outside the class range");
    }

    LossTerms terms;
    terms.assignment.assign(n, -1);
    Tensor obj_targets(n, 1);
    for (int i = 0; i < n; ++i) {
        const double* p = candidate_positions.rowptr(i);
        double best = std::numeric_limits<double>::infinity();
        for (size_t g = 0; g < gt.size(); ++g) {
            if (!inside_box(p, gt[g])) continue;
            const double d = geom::squared_distance(p, gt[g].center.data());
            if (d < best) {
                best = d;
                terms.assignment[i] = int(g);
            }
        }
        if (terms.assignment[i] >= 0) {
            ++terms.num_positive;
            obj_targets.at(i, 0) = 1.0;
        }
    }

    Tensor kps_targets(m, 1);
    for (int i = 0; i < m; ++i)
        for (const auto& box : gt)
            if (inside_box(memory_positions.rowptr(i), box)) {
                kps_targets.at(i, 0) = 1.0;
                break;
            }

    terms.objectness = tp.bce_logits_mean(boxes.objectness, tp.constant(std::move(obj_targets)));
    terms.sampling = tp.bce_logits_mean(sampling_logits, tp.constant(std::move(kps_targets)));
    auto total = tp.add(tp.scale(terms.objectness, weights.objectness),
                        tp.scale(terms.sampling, weights.sampling));

    if (terms.num_positive > 0) {
        std::vector<int> pos;
        std::vector<int> labels;
        Tensor center_targets(terms.num_positive, 3);
        Tensor size_targets(terms.num_positive, 3);
        for (int i = 0; i < n; ++i) {
            const int g = terms.assignment[i];
            if (g < 0) continue;
            const int r = int(pos.size());
            for (int a = 0; a < 3; ++a) {
                center_targets.at(r, a) = gt[g].center[a];
                size_targets.at(r, a) = std::log(gt[g].size[a]);
            }
            pos.push_back(i);
            labels.push_back(gt[g].category);
        }
        const double inv_p = 1.0 / double(terms.num_positive);
        terms.center = tp.scale(tp.smooth_l1_sum(tp.gather_rows(boxes.center, pos),
                                                 tp.constant(std::move(center_targets)), 0.05),
                                inv_p);
        terms.size = tp.scale(tp.smooth_l1_sum(tp.gather_rows(boxes.size_raw, pos),
                                               tp.constant(std::move(size_targets)), 0.1),
                              inv_p);
        terms.category = tp.softmax_xent_mean(tp.gather_rows(boxes.logits, pos), labels);
        total = tp.add(total, tp.scale(terms.center, weights.center));
        total = tp.add(total, tp.scale(terms.size, weights.size));
        total = tp.add(total, tp.scale(terms.category, weights.category));
    }
    terms.total = total;
    return terms;
}

std::string prediction_line(const std::string& scene_id, const geom::Box3D& box) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s %d %.9g %.9g %.9g %.9g %.9g %.9g %.9g",
                  scene_id.c_str(), box.category, box.score, box.center[0], box.center[1],
                  box.center[2], box.size[0], box.size[1], box.size[2]);
    return std::string(buf);
}

}  // namespace scenedet::head
