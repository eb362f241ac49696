#pragma once

#include <cstdint>
#include <vector>

#include "scenedet/autodiff.h"
#include "scenedet/backbone.h"
#include "scenedet/decoder.h"
#include "scenedet/head.h"
#include "scenedet/hypernet.h"

namespace scenedet::model {

using ad::Tape;

enum class FusionMode { kNone, kSsa, kMsa };

struct ModelConfig {
    backbone::EncoderConfig enc;
    decoder::DecoderConfig dec;
    hyper::HyperConfig hyp;
    head::HeadConfig hd;
    FusionMode fusion = FusionMode::kMsa;
    bool use_ddh = true;

    // Fusion needs a live branch to generate anything; with both branches
    // switched off the architecture degrades to the plain detector.
    bool fusion_active() const {
        return fusion != FusionMode::kNone &&
               (hyp.agnostic_enabled || hyp.specific_enabled);
    }

    // Cross-module consistency on top of the per-module checks: one feature
    // width flows encoder -> decoder -> generated layer -> head, the
    // generated weight is square (all decoder layers share it), and the
    // scene query sizes agree.
    void validate() const;
};

struct Model {
    ModelConfig cfg;
    ad::ParamStore store;
    backbone::EncoderParams enc;
    decoder::DecoderParams dec;
    hyper::HyperParams hyp;  // parameter ids live only when fusion is active
    head::HeadParams hd;
};

Model build_model(const ModelConfig& cfg, std::uint64_t seed);

struct Forward {
    backbone::EncodeResult enc;
    Tape::VarId refined = -1;  // candidate features after the decoder stack
    head::BoxVars boxes;
};

// Full detection pass. `fuse` gates the generated layer at run time (the
// warmup schedule runs with it off); hypernet parameters stay unbound on a
// bypassed pass, so no gradient flows into them.
Forward forward(Tape& tp, ad::Binder& bind, const Model& m,
                const geom::PointSet& scene, bool fuse);

// Forward plus the detection loss against the scene's ground truth.
head::LossTerms scene_loss(Tape& tp, ad::Binder& bind, const Model& m,
                           const geom::PointSet& scene,
                           const std::vector<geom::Box3D>& gt, bool fuse,
                           const head::LossWeights& weights);

// Reads boxes out of a finished forward pass: argmax category, sigmoid
// objectness as the score, then per-category suppression at the given IoU.
std::vector<geom::Box3D> extract_boxes(const Tape& tp, const Forward& f,
                                       double nms_iou);

}  // namespace scenedet::model
