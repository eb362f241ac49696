#include "scenedet/hypernet.h"

#include <cmath>

#include "scenedet/error.h"

namespace scenedet::hyper {

LayerShape validate_shape(const LayerShape& shape) {
    if (shape.c_out <= 0 || shape.c_in <= 0 || shape.n <= 0 || shape.c_ui <= 0 ||
        shape.heads <= 0)
        throw ConfigError("layer shape: all fields must be positive");
    if (shape.c_out % shape.n != 0)
        throw ConfigError("layer shape: C_out mod n != 0");
    if (shape.c_in % shape.c_ui != 0)
        throw ConfigError("layer shape: C_in mod C_ui != 0");
    const int grid = shape.block_rows() * shape.block_cols();
    if (shape.multi && shape.heads != grid)
        throw ConfigError("layer shape: head count must equal the block grid size");
    if (!shape.multi && shape.heads != 1)
        throw ConfigError("layer shape: shared assembly uses exactly one head");
    return shape;
}

LayerShape make_layer_shape(int c_out, int c_in, int n, int c_ui, bool multi) {
    LayerShape s;
    s.c_out = c_out;
    s.c_in = c_in;
    s.n = n;
    s.c_ui = c_ui;
    s.multi = multi;
    if (n <= 0 || c_ui <= 0) throw ConfigError("layer shape: all fields must be positive");
    s.heads = multi ? (c_out / n) * (c_in / c_ui) : 1;
    return validate_shape(s);
}

namespace {

Tensor xavier(int rows, int cols, Rng& rng) {
    Tensor t(rows, cols);
    const double limit = std::sqrt(6.0 / double(rows + cols));
    for (double& x : t.v) x = rng.uniform(-limit, limit);
    return t;
}

Tensor scaled(Tensor t, double s) {
    for (double& x : t.v) x *= s;
    return t;
}

// Leading square of the matrix carries an identity; the rest stays zero.
Tensor eye_pattern(int rows, int cols) {
    Tensor t(rows, cols);
    for (int i = 0; i < std::min(rows, cols); ++i) t.at(i, i) = 1.0;
    return t;
}

void check(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

}  // namespace

HyperParams create_params(const HyperConfig& cfg, ad::ParamStore& store, Rng& rng,
                          const std::string& prefix) {
    validate_shape(cfg.shape);
    check(cfg.agnostic_enabled || cfg.specific_enabled,
          "hypernet: at least one path must be enabled");
    if (cfg.agnostic_enabled) check(cfg.c_a > 0 && cfg.c_h > 0, "hypernet: bad agnostic widths");
    if (cfg.specific_enabled)
        check(cfg.c_s > 0 && cfg.c_n > 0 && cfg.n_d > 0, "hypernet: bad specific widths");

    HyperParams p;
    p.cfg = cfg;
    const int n = cfg.shape.n, c_ui = cfg.shape.c_ui;
    if (cfg.specific_enabled)
        p.scene_proj = store.add(prefix + ".scene_proj", xavier(cfg.c_n, cfg.n_d, rng));
    const int fused_in = cfg.c_s + 3 * cfg.c_n;

    // When the block grid is square the assembled matrix can start as a
    // near-identity map: diagonal banks emit an exact identity block through
    // the agnostic net and an almost-saturated positive gate through the
    // specific net, off-diagonal banks emit near-zero. Generation then barely
    // perturbs the features it fuses into, so enabling it mid-training does
    // not knock the already-trained detector over. Both branches keep live
    // gradients everywhere: the gate never reaches 1 and the off-diagonal
    // scales are small, not zero.
    const bool eye_form = n == c_ui && cfg.shape.c_out == cfg.shape.c_in &&
                          cfg.c_a >= n && cfg.c_h >= n && cfg.agnostic_enabled;
    const double kSmall = 0.05;
    for (int h = 0; h < cfg.shape.heads; ++h) {
        HeadParams hp;
        const std::string hp_prefix = prefix + ".h" + std::to_string(h);
        const bool diag = eye_form && (!cfg.shape.multi ||
                                       h / cfg.shape.block_cols() == h % cfg.shape.block_cols());
        // A shared-assembly block tiles across every grid cell, so the best
        // identity-like start it supports is stride-group averaging.
        const double gain = cfg.shape.multi ? 1.0 : 1.0 / double(cfg.shape.block_cols());
        if (cfg.agnostic_enabled) {
            hp.z_a = store.add(hp_prefix + ".z_a",
                               diag ? eye_pattern(n, cfg.c_a) : xavier(n, cfg.c_a, rng));
            hp.a1_w = store.add(hp_prefix + ".a1_w", diag ? eye_pattern(cfg.c_h, cfg.c_a)
                                                          : xavier(cfg.c_h, cfg.c_a, rng));
            hp.a1_b = store.add(hp_prefix + ".a1_b", Tensor(1, cfg.c_h));
            hp.a2_w = store.add(hp_prefix + ".a2_w",
                                diag ? scaled(eye_pattern(c_ui, cfg.c_h), gain)
                                     : scaled(xavier(c_ui, cfg.c_h, rng), eye_form ? kSmall : 1.0));
            hp.a2_b = store.add(hp_prefix + ".a2_b", Tensor(1, c_ui));
            hp.ba_w = store.add(hp_prefix + ".ba_w", scaled(xavier(c_ui, cfg.c_a, rng), kSmall));
            hp.ba_b = store.add(hp_prefix + ".ba_b", Tensor(1, c_ui));
        }
        if (cfg.specific_enabled) {
            hp.z_s = store.add(hp_prefix + ".z_s", xavier(n, cfg.c_s, rng));
            hp.f_w = store.add(hp_prefix + ".f_w", scaled(xavier(c_ui, fused_in, rng), kSmall));
            hp.f_b = store.add(hp_prefix + ".f_b",
                               diag ? Tensor::full(1, c_ui, 3.0) : Tensor(1, c_ui));
            hp.bf_w = store.add(hp_prefix + ".bf_w", scaled(xavier(c_ui, fused_in, rng), kSmall));
            hp.bf_b = store.add(hp_prefix + ".bf_b", Tensor(1, c_ui));
        }
        p.heads.push_back(hp);
    }
    return p;
}

Tape::VarId scene_agnostic_weights(Tape& tp, Tape::VarId z_a, Tape::VarId a1_w,
                                   Tape::VarId a1_b, Tape::VarId a2_w, Tape::VarId a2_b) {
    return tp.linear(tp.linear(z_a, a1_w, a1_b), a2_w, a2_b);
}

Tape::VarId scene_code(Tape& tp, Tape::VarId w_p, Tape::VarId query) {
    const Tensor& q = tp.val(query);
    check(q.cols == 3, "scene code: query must be N_d x 3");
    check(tp.val(w_p).cols == q.rows, "scene code: query size does not match projection");
    auto proj = tp.matmul_nn(w_p, query);  // c_n x 3
    return tp.reshape(proj, 1, tp.val(proj).rows * 3);
}

Tape::VarId scene_specific_scores(Tape& tp, Tape::VarId z_s, Tape::VarId code, Tape::VarId f_w,
                                  Tape::VarId f_b) {
    const int n = tp.val(z_s).rows;
    auto fused = tp.concat_cols(z_s, tp.tile(code, n, 1));
    return tp.tanh(tp.linear(fused, f_w, f_b));
}

Tape::VarId fuse_unit(Tape& tp, Tape::VarId w_s, Tape::VarId w_a) {
    return tp.mul(w_s, w_a);
}

Tape::VarId assemble_ssa(Tape& tp, Tape::VarId w_u, const LayerShape& shape) {
    validate_shape(shape);
    const Tensor& u = tp.val(w_u);
    check(u.rows == shape.n && u.cols == shape.c_ui, "assemble: unit block shape mismatch");
    return tp.tile(w_u, shape.block_rows(), shape.block_cols());
}

Tape::VarId assemble_msa(Tape& tp, const std::vector<Tape::VarId>& blocks,
                         const LayerShape& shape) {
    validate_shape(shape);
    const int grid = shape.block_rows() * shape.block_cols();
    check(int(blocks.size()) == grid, "assemble: expected one block per grid cell");
    for (auto b : blocks)
        check(tp.val(b).rows == shape.n && tp.val(b).cols == shape.c_ui,
              "assemble: unit block shape mismatch");
    Tape::VarId out = -1;
    for (int r = 0; r < shape.block_rows(); ++r) {
        Tape::VarId row = blocks[std::size_t(r) * shape.block_cols()];
        for (int c = 1; c < shape.block_cols(); ++c)
            row = tp.concat_cols(row, blocks[std::size_t(r) * shape.block_cols() + c]);
        out = r == 0 ? row : tp.concat_rows(out, row);
    }
    return out;
}

Tape::VarId apply_scene_params(Tape& tp, Tape::VarId o, Tape::VarId w, Tape::VarId b) {
    return tp.linear(o, w, b);
}

namespace {

// Mean along the feature dimension: n x c -> n x 1.
Tape::VarId feature_mean(Tape& tp, Tape::VarId m) {
    return tp.scale(tp.row_sum(m), 1.0 / tp.val(m).cols);
}

Tape::VarId head_unit_weight(Tape& tp, ad::Binder& bind, const HyperParams& p, int h,
                             Tape::VarId code) {
    const HeadParams& hp = p.heads[h];
    Tape::VarId w_a = -1, w_s = -1;
    if (p.cfg.agnostic_enabled)
        w_a = scene_agnostic_weights(tp, bind(hp.z_a), bind(hp.a1_w), bind(hp.a1_b),
                                     bind(hp.a2_w), bind(hp.a2_b));
    if (p.cfg.specific_enabled)
        w_s = scene_specific_scores(tp, bind(hp.z_s), code, bind(hp.f_w), bind(hp.f_b));
    if (w_a >= 0 && w_s >= 0) return fuse_unit(tp, w_s, w_a);
    return w_a >= 0 ? w_a : w_s;
}

Tape::VarId head_unit_bias(Tape& tp, ad::Binder& bind, const HyperParams& p, int h,
                           Tape::VarId code) {
    const HeadParams& hp = p.heads[h];
    Tape::VarId beta_a = -1, beta_s = -1;
    if (p.cfg.agnostic_enabled)
        beta_a = feature_mean(tp, tp.linear(bind(hp.z_a), bind(hp.ba_w), bind(hp.ba_b)));
    if (p.cfg.specific_enabled)
        beta_s = feature_mean(
            tp, scene_specific_scores(tp, bind(hp.z_s), code, bind(hp.bf_w), bind(hp.bf_b)));
    if (beta_a >= 0 && beta_s >= 0) return tp.mul(beta_s, beta_a);
    return beta_a >= 0 ? beta_a : beta_s;
}

}  // namespace

GeneratedVars generate(Tape& tp, ad::Binder& bind, const HyperParams& p, Tape::VarId query) {
    const LayerShape& shape = p.cfg.shape;
    Tape::VarId code = -1;
    if (p.cfg.specific_enabled) {
        const Tensor& q = tp.val(query);
        check(q.rows == p.cfg.n_d && q.cols == 3, "generate: query must be N_d x 3");
        code = scene_code(tp, bind(p.scene_proj), query);
    }

    GeneratedVars out;
    if (shape.multi) {
        std::vector<Tape::VarId> blocks;
        blocks.reserve(shape.heads);
        for (int h = 0; h < shape.heads; ++h)
            blocks.push_back(head_unit_weight(tp, bind, p, h, code));
        out.w = assemble_msa(tp, blocks, shape);
        // Bias block-row r reuses the bank of that row's leftmost weight block.
        Tape::VarId col = -1;
        for (int r = 0; r < shape.block_rows(); ++r) {
            auto unit = head_unit_bias(tp, bind, p, r * shape.block_cols(), code);
            col = r == 0 ? unit : tp.concat_rows(col, unit);
        }
        out.b = tp.reshape(col, 1, shape.c_out);
    } else {
        out.w = assemble_ssa(tp, head_unit_weight(tp, bind, p, 0, code), shape);
        auto unit = head_unit_bias(tp, bind, p, 0, code);
        out.b = tp.reshape(tp.tile(unit, shape.block_rows(), 1), 1, shape.c_out);
    }
    return out;
}

}  // namespace scenedet::hyper
