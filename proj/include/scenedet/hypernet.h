#pragma once

#include <string>
#include <vector>

#include "scenedet/autodiff.h"
#include "scenedet/rng.h"
#include "scenedet/tensor.h"

namespace scenedet::hyper {

using ad::Tape;

// Shape contract for one generated fusion layer. The generated weight is
// C_out x C_in, assembled from n x C_ui unit blocks; multi selects the
// multi-headed assembly (independent banks per block) over the shared one.
struct LayerShape {
    int c_out = 0;
    int c_in = 0;
    int n = 0;
    int c_ui = 0;
    int heads = 0;
    bool multi = false;

    int block_rows() const { return c_out / n; }
    int block_cols() const { return c_in / c_ui; }
};

// Checks positivity, the two divisibility constraints, and head-count
// consistency; throws ConfigError naming the violated constraint.
LayerShape validate_shape(const LayerShape& shape);
LayerShape make_layer_shape(int c_out, int c_in, int n, int c_ui, bool multi);

struct HyperConfig {
    LayerShape shape;
    int c_a = 0;   // agnostic embedding width
    int c_s = 0;   // specific embedding width
    int c_h = 0;   // hidden width of the two-layer agnostic net
    int c_n = 1;   // scene projection rows; scene code is 3*c_n wide
    int n_d = 0;   // scene query point count
    bool agnostic_enabled = true;
    bool specific_enabled = true;
};

// Parameter-store ids for one head. Ids are -1 when the owning path is
// disabled by configuration.
struct HeadParams {
    int z_a = -1, z_s = -1;
    int a1_w = -1, a1_b = -1, a2_w = -1, a2_b = -1;  // agnostic: two affine maps
    int f_w = -1, f_b = -1;                          // specific fuse, Tanh
    int ba_w = -1, ba_b = -1;                        // bias-path agnostic, one affine map
    int bf_w = -1, bf_b = -1;                        // bias-path specific fuse, Tanh
};

struct HyperParams {
    HyperConfig cfg;
    int scene_proj = -1;  // W_p, shared across heads and with the bias path
    std::vector<HeadParams> heads;
};

// Registers all live parameters (Xavier-uniform weights, zero biases) in a
// fixed order under the given name prefix.
HyperParams create_params(const HyperConfig& cfg, ad::ParamStore& store, Rng& rng,
                          const std::string& prefix);

// --- graph builders -------------------------------------------------------
// All builders are pure tape constructions; shapes are validated eagerly.

// Two-affine-map agnostic net applied rowwise to the bank: n x c_ui.
Tape::VarId scene_agnostic_weights(Tape& tp, Tape::VarId z_a, Tape::VarId a1_w, Tape::VarId a1_b,
                                   Tape::VarId a2_w, Tape::VarId a2_b);

// Flattened scene code (1 x 3*c_n) from the projection of the query points.
Tape::VarId scene_code(Tape& tp, Tape::VarId w_p, Tape::VarId query);

// Tanh(W_f . concat(z_s_k, code)) per row: n x c_ui, entries in (-1, 1).
Tape::VarId scene_specific_scores(Tape& tp, Tape::VarId z_s, Tape::VarId code, Tape::VarId f_w,
                                  Tape::VarId f_b);

// Elementwise product of the two unit matrices.
Tape::VarId fuse_unit(Tape& tp, Tape::VarId w_s, Tape::VarId w_a);

// Tiles one unit block over the full block grid.
Tape::VarId assemble_ssa(Tape& tp, Tape::VarId w_u, const LayerShape& shape);

// Places heads blocks row-major over the block grid.
Tape::VarId assemble_msa(Tape& tp, const std::vector<Tape::VarId>& blocks,
                         const LayerShape& shape);

// ô = o W^T + b for every candidate row; W is c_out x c_in, b is 1 x c_out.
Tape::VarId apply_scene_params(Tape& tp, Tape::VarId o, Tape::VarId w, Tape::VarId b);

struct GeneratedVars {
    Tape::VarId w = -1;  // c_out x c_in
    Tape::VarId b = -1;  // 1 x c_out
};

// Full generation pass: weight and bias from banks, nets, and the query
// (an N_d x 3 tape value). One result is shared by all decoder layers.
GeneratedVars generate(Tape& tp, ad::Binder& bind, const HyperParams& params,
                       Tape::VarId query);

}  // namespace scenedet::hyper
