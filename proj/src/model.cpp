#include "scenedet/model.h"

#include <algorithm>
#include <cmath>

#include "scenedet/error.h"
#include "scenedet/rng.h"

namespace scenedet::model {

void ModelConfig::validate() const {
    enc.validate();
    dec.validate();
    hd.validate();
    if (enc.fp_width != dec.width) {
        throw ConfigError("model: encoder output width must match decoder width");
    }
    if (hd.width != dec.width) {
        throw ConfigError("model: head width must match decoder width");
    }
    if (!fusion_active()) return;

    hyper::LayerShape shape = hyper::validate_shape(hyp.shape);
    if (shape.c_out != dec.width || shape.c_in != dec.width) {
        throw ConfigError("model: generated layer must be decoder-width square");
    }
    bool want_multi = fusion == FusionMode::kMsa;
    if (shape.multi != want_multi) {
        throw ConfigError("model: fusion mode disagrees with the layer shape");
    }
    if (hyp.specific_enabled && hyp.n_d != enc.n_d) {
        throw ConfigError("model: scene query sizes disagree");
    }
}

Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng(seed);
    m.enc = backbone::create_params(cfg.enc, m.store, rng, "enc");
    m.dec = decoder::create_params(cfg.dec, m.store, rng, "dec");
    if (cfg.fusion_active()) {
        m.hyp = hyper::create_params(cfg.hyp, m.store, rng, "hyp");
    }
    m.hd = head::create_params(cfg.hd, m.store, rng, "head");
    return m;
}

Forward forward(Tape& tp, ad::Binder& bind, const Model& m,
                const geom::PointSet& scene, bool fuse) {
    Forward f;
    f.enc = backbone::encode_scene(tp, bind, m.enc, scene);

    hyper::GeneratedVars generated;
    const hyper::GeneratedVars* generated_ptr = nullptr;
    if (fuse && m.cfg.fusion_active()) {
        Tape::VarId query = tp.constant(f.enc.scene_query);
        generated = hyper::generate(tp, bind, m.hyp, query);
        generated_ptr = &generated;
    }

    Tape::VarId positions = tp.constant(f.enc.candidates.positions);
    f.refined = decoder::run_stack(tp, bind, m.dec, positions,
                                   f.enc.candidates.features, f.enc.memory,
                                   generated_ptr);
    head::HeadVars head_vars = head::bind_head(bind, m.hd);
    f.boxes = head::predict_boxes(tp, positions, f.refined, head_vars, m.cfg.use_ddh);
    return f;
}

head::LossTerms scene_loss(Tape& tp, ad::Binder& bind, const Model& m,
                           const geom::PointSet& scene,
                           const std::vector<geom::Box3D>& gt, bool fuse,
                           const head::LossWeights& weights) {
    Forward f = forward(tp, bind, m, scene, fuse);
    return head::detection_loss(tp, f.enc.candidates.positions, f.boxes,
                                f.enc.scores, f.enc.memory_points, gt, weights);
}

std::vector<geom::Box3D> extract_boxes(const Tape& tp, const Forward& f,
                                       double nms_iou) {
    const Tensor& center = tp.val(f.boxes.center);
    const Tensor& size = tp.val(f.boxes.size);
    const Tensor& logits = tp.val(f.boxes.logits);
    const Tensor& objectness = tp.val(f.boxes.objectness);

    std::vector<geom::Box3D> boxes;
    boxes.reserve(center.rows);
    for (int i = 0; i < center.rows; ++i) {
        geom::Box3D b;
        for (int a = 0; a < 3; ++a) {
            b.center[a] = center.at(i, a);
            b.size[a] = size.at(i, a);
        }
        const double* row = logits.rowptr(i);
        b.category = int(std::max_element(row, row + logits.cols) - row);
        b.score = 1.0 / (1.0 + std::exp(-objectness.at(i, 0)));
        boxes.push_back(b);
    }

    std::vector<int> kept = geom::nms_3d(boxes, nms_iou);
    std::vector<geom::Box3D> out;
    out.reserve(kept.size());
    for (int idx : kept) out.push_back(boxes[idx]);
    return out;
}

}  // namespace scenedet::model
