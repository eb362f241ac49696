#pragma once

#include <string>
#include <vector>

#include "scenedet/autodiff.h"
#include "scenedet/geometry.h"
#include "scenedet/rng.h"

namespace scenedet::head {

using ad::Tape;

struct HeadConfig {
    int width = 32;       // fused candidate feature width
    int num_categories = 6;

    void validate() const;
};

struct HeadParams {
    HeadConfig cfg;
    int wc = -1;                    // base offset map, no bias
    int r_w = -1, r_b = -1;         // length scalar
    int q_w = -1, q_b = -1;         // orientation quaternion
    int size_w = -1, size_b = -1;   // log-size regression
    int cls_w = -1, cls_b = -1;
    int obj_w = -1, obj_b = -1;

    void validate() const { cfg.validate(); }
};

HeadParams create_params(const HeadConfig& cfg, ad::ParamStore& store, Rng& rng,
                         const std::string& prefix);

struct HeadVars {
    Tape::VarId wc;
    Tape::VarId r_w, r_b;
    Tape::VarId q_w, q_b;
    Tape::VarId size_w, size_b;
    Tape::VarId cls_w, cls_b;
    Tape::VarId obj_w, obj_b;
};

HeadVars bind_head(ad::Binder& bind, const HeadParams& params);

// Delta q = features . W_c^T, one 3-vector per candidate. No bias: a zero
// feature must map to a zero offset.
Tape::VarId regress_base_offset(Tape& tp, Tape::VarId features, Tape::VarId wc);

// Length scalar per candidate, 0.9 + 0.2 * sigmoid(affine), inside (0.9, 1.1).
Tape::VarId r_head(Tape& tp, Tape::VarId features, Tape::VarId r_w, Tape::VarId r_b);

// Raw affine 4-vector plus the identity quaternion (1,0,0,0), one row per
// candidate, (w,x,y,z) order. Normalization happens during rotation.
Tape::VarId rotation_quaternions(Tape& tp, Tape::VarId features, Tape::VarId q_w,
                                 Tape::VarId q_b);

// Rotates each row of vec (N x 3) by the matching row of quat (N x 4),
// normalizing the quaternion first. A zero row is a degenerate input.
Tape::VarId rotate_by_quaternion(Tape& tp, Tape::VarId quat, Tape::VarId vec);

// delta_q_final = R(quat) . (r * delta_q); |delta_q_final| = r * |delta_q|.
Tape::VarId disentangled_offset(Tape& tp, Tape::VarId delta_q, Tape::VarId r,
                                Tape::VarId quat);

struct BoxVars {
    Tape::VarId center;      // N x 3
    Tape::VarId size_raw;    // N x 3 log-space regression
    Tape::VarId size;        // N x 3, exp of size_raw
    Tape::VarId logits;      // N x num_categories
    Tape::VarId objectness;  // N x 1 logits
    Tape::VarId delta_q = -1, r = -1, quat = -1;  // unset when use_ddh is false
};

// Full box decoding from candidate positions and fused features. With use_ddh
// false the offset is the plain linear map (r = 1, identity rotation).
BoxVars predict_boxes(Tape& tp, Tape::VarId positions, Tape::VarId features,
                      const HeadVars& nets, bool use_ddh);

struct LossWeights {
    double objectness = 2.0;
    double center = 10.0;
    double size = 2.0;
    double category = 2.0;
    double sampling = 1.0;
};

struct LossTerms {
    Tape::VarId total = -1;
    Tape::VarId objectness = -1, center = -1, size = -1, category = -1, sampling = -1;
    std::vector<int> assignment;  // per candidate: GT index, -1 = negative
    int num_positive = 0;
};

// Candidates inside at least one GT box are positives, assigned to the
// containing box with the nearest center (ties to the smaller GT index).
// Positive terms are smooth-L1 on center (delta 0.05) and log-size (delta
// 0.1) plus class cross-entropy; objectness and sampling-score BCE cover all
// candidates / memory points. With no GT the positive terms are skipped.
LossTerms detection_loss(Tape& tp, const Tensor& candidate_positions, const BoxVars& boxes,
                         Tape::VarId sampling_logits, const Tensor& memory_positions,
                         const std::vector<geom::Box3D>& gt, const LossWeights& weights);

// "scene_id category score cx cy cz dx dy dz", 9 significant digits.
std::string prediction_line(const std::string& scene_id, const geom::Box3D& box);

}  // namespace scenedet::head
