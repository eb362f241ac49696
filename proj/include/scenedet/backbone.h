#pragma once

#include <string>
#include <vector>

#include "scenedet/autodiff.h"
#include "scenedet/geometry.h"
#include "scenedet/rng.h"

namespace scenedet::backbone {

using ad::Tape;

struct EncoderConfig {
    std::vector<int> downsample_sizes;  // strictly decreasing, one per stage
    std::vector<double> radii;          // strictly increasing, one per stage
    std::vector<int> widths;            // per-stage pooled feature width
    int max_samples = 8;
    int fp_width = 32;       // interpolation stack output width (memory width)
    int score_hidden = 16;   // sampling-score net hidden width
    int num_candidates = 0;
    int n_d = 0;             // scene query size

    // At least three stages so the two propagation steps land on an
    // intermediate level with more points than candidates.
    void validate() const;
    int stages() const { return int(downsample_sizes.size()); }
    int memory_points() const { return downsample_sizes[stages() - 3]; }
};

// Two affine+ReLU layers applied per point (shared weights).
struct StageNetIds {
    int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};

struct EncoderParams {
    EncoderConfig cfg;
    std::vector<StageNetIds> sa;
    StageNetIds fp1, fp2;
    StageNetIds score;  // second layer regresses a single sampling score
};

EncoderParams create_params(const EncoderConfig& cfg, ad::ParamStore& store, Rng& rng,
                            const std::string& prefix);

struct StageNetVars {
    Tape::VarId w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};
StageNetVars bind_net(ad::Binder& bind, const StageNetIds& ids);

// Farthest-point downsampling to k centers plus grouped local encoding:
// per-group rows are [neighbor - center | neighbor features], passed through
// the shared stack and max-pooled. features = -1 means coordinates only.
struct SaResult {
    geom::PointSet sub_points;
    std::vector<int> sub_index;  // into the input point set
    Tape::VarId sub_feats = -1;  // k x width
};
SaResult set_abstraction(Tape& tp, const geom::PointSet& points, Tape::VarId features, int k,
                         double radius, int max_samples, const StageNetVars& net);

// 3-nearest inverse-squared-distance interpolation weights; fewer than three
// coarse points repeat the available ones.
void interpolation_weights(const geom::PointSet& coarse, const geom::PointSet& fine,
                           std::vector<int>& idx, std::vector<double>& w);

// Interpolates coarse features onto fine points, concatenates skip features
// (skip = -1 when the fine level has none), applies the shared stack.
Tape::VarId feature_propagation(Tape& tp, const geom::PointSet& coarse_points,
                                Tape::VarId coarse_feats, const geom::PointSet& fine_points,
                                Tape::VarId fine_feats, const StageNetVars& net);

// Learned-score top-k: candidates keep their original positions and features.
// Selection order is descending score, ties ascending index.
struct CandidateSet {
    std::vector<int> index;   // into the given point set
    Tensor positions;         // num_candidates x 3
    Tape::VarId features = -1;
    Tape::VarId scores = -1;  // all points' raw scores (M x 1), for supervision
};
CandidateSet sample_candidates(Tape& tp, const geom::PointSet& points,
                               Tape::VarId point_features, int num_candidates,
                               const StageNetVars& net);

struct EncodeResult {
    Tensor memory_points;   // M x 3, the propagation output level
    Tape::VarId memory = -1;
    Tape::VarId scores = -1;
    CandidateSet candidates;
    Tensor scene_query;     // n_d x 3: first candidates, cyclically padded
};

EncodeResult encode_scene(Tape& tp, ad::Binder& bind, const EncoderParams& params,
                          const geom::PointSet& scene);

}  // namespace scenedet::backbone
