#pragma once

#include <string>
#include <vector>

#include "scenedet/autodiff.h"
#include "scenedet/hypernet.h"
#include "scenedet/rng.h"

namespace scenedet::decoder {

using ad::Tape;

struct DecoderConfig {
    int num_layers = 3;
    int width = 32;
    int heads = 4;
    int ffn_width = 64;

    void validate() const;
    int head_dim() const { return width / heads; }
};

struct AttnIds {
    int qw = -1, qb = -1;
    int kw = -1, kb = -1;
    int vw = -1, vb = -1;
    int ow = -1, ob = -1;
};

struct NormIds {
    int gain = -1, bias = -1;
};

struct LayerIds {
    AttnIds self_attn, cross_attn;
    int ffn_w1 = -1, ffn_b1 = -1, ffn_w2 = -1, ffn_b2 = -1;
    NormIds norm1, norm2, norm3;
};

struct DecoderParams {
    DecoderConfig cfg;
    int pos_w = -1, pos_b = -1;  // linear embedding of candidate coordinates
    std::vector<LayerIds> layers;
};

DecoderParams create_params(const DecoderConfig& cfg, ad::ParamStore& store, Rng& rng,
                            const std::string& prefix);

struct AttnVars {
    Tape::VarId qw, qb, kw, kb, vw, vb, ow, ob;
};

struct NormVars {
    Tape::VarId gain, bias;
};

struct LayerVars {
    AttnVars self_attn, cross_attn;
    Tape::VarId ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    NormVars norm1, norm2, norm3;
};

AttnVars bind_attn(ad::Binder& bind, const AttnIds& ids);
LayerVars bind_layer(ad::Binder& bind, const LayerIds& ids);

// Per-head attention matrices for already-projected queries/keys: rowwise
// softmax of the scaled dot products, so every row sums to 1.
std::vector<Tape::VarId> attention_weights(Tape& tp, Tape::VarId q_proj, Tape::VarId k_proj,
                                           int heads);

// Scaled dot-product attention over `heads` column slices of the projected
// inputs, concatenated and projected back.
Tape::VarId attention(Tape& tp, Tape::VarId queries, Tape::VarId keys, Tape::VarId values,
                      int heads, const AttnVars& nets);

// One refinement layer: self-attention among candidates, cross-attention to
// the point memory, feed-forward, each wrapped as norm(x + sublayer(x)).
// `generated` fuses the hypernetwork output into the layer result; nullptr
// bypasses fusion and returns the plain transformer output.
Tape::VarId decoder_layer(Tape& tp, Tape::VarId x, Tape::VarId memory, int heads,
                          const LayerVars& nets, const hyper::GeneratedVars* generated);

// Full stack. Candidate coordinates are linearly embedded and added to the
// features once, before the first layer; the memory gets no positional term.
// All layers share the same `generated` pair.
Tape::VarId run_stack(Tape& tp, ad::Binder& bind, const DecoderParams& params,
                      Tape::VarId positions, Tape::VarId features, Tape::VarId memory,
                      const hyper::GeneratedVars* generated);

}  // namespace scenedet::decoder
