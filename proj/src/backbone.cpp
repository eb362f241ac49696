#include "scenedet/backbone.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scenedet/error.h"

namespace scenedet::backbone {

void EncoderConfig::validate() const {
    if (stages() < 3) throw ConfigError("encoder: at least three stages required");
    if (radii.size() != downsample_sizes.size() || widths.size() != downsample_sizes.size())
        throw ConfigError("encoder: per-stage sequences must have equal length");
    for (int s = 0; s < stages(); ++s) {
        if (downsample_sizes[s] <= 0 || widths[s] <= 0 || radii[s] <= 0.0)
            throw ConfigError("encoder: stage values must be positive");
        if (s > 0 && downsample_sizes[s] >= downsample_sizes[s - 1])
            throw ConfigError("encoder: downsample sizes must be strictly decreasing");
        if (s > 0 && radii[s] <= radii[s - 1])
            throw ConfigError("encoder: radii must be strictly increasing");
    }
    if (max_samples < 1) throw ConfigError("encoder: max_samples must be >= 1");
    if (fp_width < 1 || score_hidden < 1) throw ConfigError("encoder: net widths must be >= 1");
    if (num_candidates < 1 || num_candidates > memory_points())
        throw ConfigError("encoder: candidate count must be in [1, memory size]");
    if (n_d < 1) throw ConfigError("encoder: scene query size must be >= 1");
}

namespace {

Tensor xavier(int rows, int cols, Rng& rng) {
    Tensor t(rows, cols);
    const double limit = std::sqrt(6.0 / double(rows + cols));
    for (double& x : t.v) x = rng.uniform(-limit, limit);
    return t;
}

// Hidden biases start slightly positive so ReLU units are alive at init.
StageNetIds add_net(ad::ParamStore& store, Rng& rng, const std::string& prefix, int in,
                    int hidden, int out, double out_bias) {
    StageNetIds ids;
    ids.w1 = store.add(prefix + ".w1", xavier(hidden, in, rng));
    ids.b1 = store.add(prefix + ".b1", Tensor::full(1, hidden, 0.1));
    ids.w2 = store.add(prefix + ".w2", xavier(out, hidden, rng));
    ids.b2 = store.add(prefix + ".b2", Tensor::full(1, out, out_bias));
    return ids;
}

}  // namespace

EncoderParams create_params(const EncoderConfig& cfg, ad::ParamStore& store, Rng& rng,
                            const std::string& prefix) {
    cfg.validate();
    EncoderParams p;
    p.cfg = cfg;
    int in_width = 0;
    for (int s = 0; s < cfg.stages(); ++s) {
        p.sa.push_back(add_net(store, rng, prefix + ".sa" + std::to_string(s), 3 + in_width,
                               cfg.widths[s], cfg.widths[s], 0.1));
        in_width = cfg.widths[s];
    }
    const int top = cfg.stages() - 1;
    p.fp1 = add_net(store, rng, prefix + ".fp1", cfg.widths[top] + cfg.widths[top - 1],
                    cfg.fp_width, cfg.fp_width, 0.1);
    p.fp2 = add_net(store, rng, prefix + ".fp2", cfg.fp_width + cfg.widths[top - 2],
                    cfg.fp_width, cfg.fp_width, 0.1);
    // Score output bias stays zero: scores should start near the sigmoid midpoint.
    p.score = add_net(store, rng, prefix + ".score", cfg.fp_width, cfg.score_hidden, 1, 0.0);
    return p;
}

StageNetVars bind_net(ad::Binder& bind, const StageNetIds& ids) {
    return {bind(ids.w1), bind(ids.b1), bind(ids.w2), bind(ids.b2)};
}

namespace {

Tape::VarId run_net(Tape& tp, Tape::VarId x, const StageNetVars& net, bool relu_out) {
    auto h = tp.relu(tp.linear(x, net.w1, net.b1));
    auto y = tp.linear(h, net.w2, net.b2);
    return relu_out ? tp.relu(y) : y;
}

}  // namespace

SaResult set_abstraction(Tape& tp, const geom::PointSet& points, Tape::VarId features, int k,
                         double radius, int max_samples, const StageNetVars& net) {
    if (k > points.count()) throw ConfigError("set abstraction: k exceeds point count");
    SaResult res;
    res.sub_index = geom::farthest_point_sample(points, k, 0);
    Tensor centers(k, 3);
    for (int i = 0; i < k; ++i)
        std::copy(points.point(res.sub_index[i]), points.point(res.sub_index[i]) + 3,
                  centers.rowptr(i));
    res.sub_points = geom::PointSet(centers);

    auto groups = geom::ball_query(points, res.sub_points, radius, max_samples);
    std::vector<int> offsets{0};
    std::vector<int> flat;
    for (const auto& g : groups) {
        flat.insert(flat.end(), g.begin(), g.end());
        offsets.push_back(int(flat.size()));
    }
    Tensor rel(int(flat.size()), 3);
    for (std::size_t r = 0; r < flat.size(); ++r) {
        const int center = int(std::upper_bound(offsets.begin(), offsets.end(), int(r)) -
                               offsets.begin()) - 1;
        for (int a = 0; a < 3; ++a)
            rel.at(int(r), a) = points.point(flat[r])[a] - res.sub_points.point(center)[a];
    }
    Tape::VarId x = tp.constant(std::move(rel));
    if (features >= 0) x = tp.concat_cols(x, tp.gather_rows(features, flat));
    res.sub_feats = tp.group_max(run_net(tp, x, net, true), offsets);
    return res;
}

void interpolation_weights(const geom::PointSet& coarse, const geom::PointSet& fine,
                           std::vector<int>& idx, std::vector<double>& w) {
    if (coarse.count() < 1) throw ConfigError("interpolation: no coarse points");
    idx.clear();
    w.clear();
    idx.reserve(std::size_t(fine.count()) * 3);
    w.reserve(std::size_t(fine.count()) * 3);
    const int take = std::min(3, coarse.count());
    std::vector<std::pair<double, int>> dist(coarse.count());
    for (int i = 0; i < fine.count(); ++i) {
        for (int c = 0; c < coarse.count(); ++c)
            dist[c] = {geom::squared_distance(fine.point(i), coarse.point(c)), c};
        // Pair order resolves distance ties toward the smaller index.
        std::partial_sort(dist.begin(), dist.begin() + take, dist.end());
        double wt[3], sum = 0.0;
        for (int t = 0; t < 3; ++t) {
            wt[t] = 1.0 / (dist[t % take].first + 1e-8);
            sum += wt[t];
        }
        for (int t = 0; t < 3; ++t) {
            idx.push_back(dist[t % take].second);
            w.push_back(wt[t] / sum);
        }
    }
}

Tape::VarId feature_propagation(Tape& tp, const geom::PointSet& coarse_points,
                                Tape::VarId coarse_feats, const geom::PointSet& fine_points,
                                Tape::VarId fine_feats, const StageNetVars& net) {
    std::vector<int> idx;
    std::vector<double> w;
    interpolation_weights(coarse_points, fine_points, idx, w);
    Tape::VarId x = tp.interp3(coarse_feats, std::move(idx), std::move(w));
    if (fine_feats >= 0) x = tp.concat_cols(x, fine_feats);
    return run_net(tp, x, net, true);
}

CandidateSet sample_candidates(Tape& tp, const geom::PointSet& points,
                               Tape::VarId point_features, int num_candidates,
                               const StageNetVars& net) {
    if (num_candidates > points.count())
        throw ConfigError("sample candidates: more candidates than points");
    CandidateSet cs;
    cs.scores = run_net(tp, point_features, net, false);
    const Tensor& s = tp.val(cs.scores);
    std::vector<int> order(points.count());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return s.v[a] > s.v[b]; });
    cs.index.assign(order.begin(), order.begin() + num_candidates);
    cs.positions = Tensor(num_candidates, 3);
    for (int i = 0; i < num_candidates; ++i)
        std::copy(points.point(cs.index[i]), points.point(cs.index[i]) + 3,
                  cs.positions.rowptr(i));
    cs.features = tp.gather_rows(point_features, cs.index);
    return cs;
}

EncodeResult encode_scene(Tape& tp, ad::Binder& bind, const EncoderParams& params,
                          const geom::PointSet& scene) {
    const EncoderConfig& cfg = params.cfg;
    cfg.validate();
    if (scene.count() < cfg.downsample_sizes[0])
        throw ConfigError("encode: scene smaller than the first downsample size");

    std::vector<geom::PointSet> level_points{scene};
    std::vector<Tape::VarId> level_feats{-1};
    for (int s = 0; s < cfg.stages(); ++s) {
        auto sa = set_abstraction(tp, level_points.back(), level_feats.back(),
                                  cfg.downsample_sizes[s], cfg.radii[s], cfg.max_samples,
                                  bind_net(bind, params.sa[s]));
        level_points.push_back(sa.sub_points);
        level_feats.push_back(sa.sub_feats);
    }

    const int top = cfg.stages();  // index into level arrays (level 0 = input)
    auto up1 = feature_propagation(tp, level_points[top], level_feats[top],
                                   level_points[top - 1], level_feats[top - 1],
                                   bind_net(bind, params.fp1));
    auto memory = feature_propagation(tp, level_points[top - 1], up1, level_points[top - 2],
                                      level_feats[top - 2], bind_net(bind, params.fp2));

    EncodeResult res;
    res.memory_points = level_points[top - 2].coords;
    res.memory = memory;
    res.candidates = sample_candidates(tp, level_points[top - 2], memory, cfg.num_candidates,
                                       bind_net(bind, params.score));
    res.scores = res.candidates.scores;
    res.scene_query = Tensor(cfg.n_d, 3);
    for (int i = 0; i < cfg.n_d; ++i)
        std::copy(res.candidates.positions.rowptr(i % cfg.num_candidates),
                  res.candidates.positions.rowptr(i % cfg.num_candidates) + 3,
                  res.scene_query.rowptr(i));
    return res;
}

}  // namespace scenedet::backbone
