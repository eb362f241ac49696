#include "scenedet/decoder.h"

#include <cmath>
#include <stdexcept>

#include "scenedet/error.h"

namespace scenedet::decoder {

void DecoderConfig::validate() const {
    if (num_layers < 1) throw ConfigError("decoder: num_layers must be >= 1");
    if (width < 1 || ffn_width < 1) throw ConfigError("decoder: widths must be positive");
    if (heads < 1) throw ConfigError("decoder: heads must be >= 1");
    if (width % heads != 0) throw ConfigError("decoder: width mod heads != 0");
}

namespace {

Tensor xavier(int rows, int cols, Rng& rng) {
    Tensor t(rows, cols);
    const double limit = std::sqrt(6.0 / double(rows + cols));
    for (double& x : t.v) x = rng.uniform(-limit, limit);
    return t;
}

AttnIds add_attn(ad::ParamStore& store, Rng& rng, const std::string& prefix, int width) {
    AttnIds ids;
    ids.qw = store.add(prefix + ".qw", xavier(width, width, rng));
    ids.qb = store.add(prefix + ".qb", Tensor(1, width));
    ids.kw = store.add(prefix + ".kw", xavier(width, width, rng));
    ids.kb = store.add(prefix + ".kb", Tensor(1, width));
    ids.vw = store.add(prefix + ".vw", xavier(width, width, rng));
    ids.vb = store.add(prefix + ".vb", Tensor(1, width));
    ids.ow = store.add(prefix + ".ow", xavier(width, width, rng));
    ids.ob = store.add(prefix + ".ob", Tensor(1, width));
    return ids;
}

NormIds add_norm(ad::ParamStore& store, const std::string& prefix, int width) {
    NormIds ids;
    ids.gain = store.add(prefix + ".g", Tensor::full(1, width, 1.0));
    ids.bias = store.add(prefix + ".b", Tensor(1, width));
    return ids;
}

NormVars bind_norm(ad::Binder& bind, const NormIds& ids) {
    return NormVars{bind(ids.gain), bind(ids.bias)};
}

}  // namespace

DecoderParams create_params(const DecoderConfig& cfg, ad::ParamStore& store, Rng& rng,
                            const std::string& prefix) {
    cfg.validate();
    DecoderParams p;
    p.cfg = cfg;
    p.pos_w = store.add(prefix + ".pos.w", xavier(cfg.width, 3, rng));
    p.pos_b = store.add(prefix + ".pos.b", Tensor(1, cfg.width));
    for (int l = 0; l < cfg.num_layers; ++l) {
        const std::string lp = prefix + ".l" + std::to_string(l);
        LayerIds ids;
        ids.self_attn = add_attn(store, rng, lp + ".sa", cfg.width);
        ids.norm1 = add_norm(store, lp + ".ln1", cfg.width);
        ids.cross_attn = add_attn(store, rng, lp + ".ca", cfg.width);
        ids.norm2 = add_norm(store, lp + ".ln2", cfg.width);
        ids.ffn_w1 = store.add(lp + ".ffn.w1", xavier(cfg.ffn_width, cfg.width, rng));
        // Hidden bias starts slightly positive so ReLU units are alive at init.
        ids.ffn_b1 = store.add(lp + ".ffn.b1", Tensor::full(1, cfg.ffn_width, 0.1));
        ids.ffn_w2 = store.add(lp + ".ffn.w2", xavier(cfg.width, cfg.ffn_width, rng));
        ids.ffn_b2 = store.add(lp + ".ffn.b2", Tensor(1, cfg.width));
        ids.norm3 = add_norm(store, lp + ".ln3", cfg.width);
        p.layers.push_back(ids);
    }
    return p;
}

AttnVars bind_attn(ad::Binder& bind, const AttnIds& ids) {
    AttnVars v;
    v.qw = bind(ids.qw);
    v.qb = bind(ids.qb);
    v.kw = bind(ids.kw);
    v.kb = bind(ids.kb);
    v.vw = bind(ids.vw);
    v.vb = bind(ids.vb);
    v.ow = bind(ids.ow);
    v.ob = bind(ids.ob);
    return v;
}

LayerVars bind_layer(ad::Binder& bind, const LayerIds& ids) {
    LayerVars v;
    v.self_attn = bind_attn(bind, ids.self_attn);
    v.cross_attn = bind_attn(bind, ids.cross_attn);
    v.ffn_w1 = bind(ids.ffn_w1);
    v.ffn_b1 = bind(ids.ffn_b1);
    v.ffn_w2 = bind(ids.ffn_w2);
    v.ffn_b2 = bind(ids.ffn_b2);
    v.norm1 = bind_norm(bind, ids.norm1);
    v.norm2 = bind_norm(bind, ids.norm2);
    v.norm3 = bind_norm(bind, ids.norm3);
    return v;
}

std::vector<Tape::VarId> attention_weights(Tape& tp, Tape::VarId q_proj, Tape::VarId k_proj,
                                           int heads) {
    const int width = tp.val(q_proj).cols;
    if (heads < 1 || width % heads != 0)
        throw ConfigError("attention: projected width not divisible by head count");
    const int dh = width / heads;
    const double s = 1.0 / std::sqrt(double(dh));
    std::vector<Tape::VarId> weights;
    for (int h = 0; h < heads; ++h) {
        const auto qh = tp.slice_cols(q_proj, h * dh, (h + 1) * dh);
        const auto kh = tp.slice_cols(k_proj, h * dh, (h + 1) * dh);
        weights.push_back(tp.softmax_rows(tp.scale(tp.matmul_nt(qh, kh), s)));
    }
    return weights;
}

Tape::VarId attention(Tape& tp, Tape::VarId queries, Tape::VarId keys, Tape::VarId values,
                      int heads, const AttnVars& nets) {
    const auto q_proj = tp.linear(queries, nets.qw, nets.qb);
    const auto k_proj = tp.linear(keys, nets.kw, nets.kb);
    const auto v_proj = tp.linear(values, nets.vw, nets.vb);
    const auto weights = attention_weights(tp, q_proj, k_proj, heads);
    const int dh = tp.val(q_proj).cols / heads;
    Tape::VarId merged = -1;
    for (int h = 0; h < heads; ++h) {
        const auto vh = tp.slice_cols(v_proj, h * dh, (h + 1) * dh);
        const auto out = tp.matmul_nn(weights[h], vh);
        merged = h == 0 ? out : tp.concat_cols(merged, out);
    }
    return tp.linear(merged, nets.ow, nets.ob);
}

Tape::VarId decoder_layer(Tape& tp, Tape::VarId x, Tape::VarId memory, int heads,
                          const LayerVars& nets, const hyper::GeneratedVars* generated) {
    const auto sa = attention(tp, x, x, x, heads, nets.self_attn);
    x = tp.layer_norm(tp.add(x, sa), nets.norm1.gain, nets.norm1.bias);
    const auto ca = attention(tp, x, memory, memory, heads, nets.cross_attn);
    x = tp.layer_norm(tp.add(x, ca), nets.norm2.gain, nets.norm2.bias);
    const auto ff = tp.linear(tp.relu(tp.linear(x, nets.ffn_w1, nets.ffn_b1)), nets.ffn_w2,
                              nets.ffn_b2);
    x = tp.layer_norm(tp.add(x, ff), nets.norm3.gain, nets.norm3.bias);
    if (generated != nullptr)
        x = hyper::apply_scene_params(tp, x, generated->w, generated->b);
    return x;
}

Tape::VarId run_stack(Tape& tp, ad::Binder& bind, const DecoderParams& params,
                      Tape::VarId positions, Tape::VarId features, Tape::VarId memory,
                      const hyper::GeneratedVars* generated) {
    params.cfg.validate();
    if (generated != nullptr) {
        const Tensor& w = tp.val(generated->w);
        if (w.cols != params.cfg.width)
            throw std::invalid_argument("run_stack: generated weight input width mismatch");
        // The fused output feeds the next layer, so stacking needs a square map.
        if (params.cfg.num_layers > 1 && w.rows != params.cfg.width)
            throw std::invalid_argument("run_stack: stacked fusion requires square generated weight");
    }
    auto x = tp.add(features, tp.linear(positions, bind(params.pos_w), bind(params.pos_b)));
    for (const LayerIds& ids : params.layers)
        x = decoder_layer(tp, x, memory, params.cfg.heads, bind_layer(bind, ids), generated);
    return x;
}

}  // namespace scenedet::decoder
