#include "scenedet/harness.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "scenedet/data.h"
#include "scenedet/error.h"
#include "scenedet/rng.h"

namespace scenedet::harness {

namespace {

namespace fs = std::filesystem;

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", x);
    return buf;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

long long to_int(const std::string& s) {
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(s, &used);
    } catch (const std::logic_error&) {
        throw std::runtime_error("not an integer: '" + s + "'");
    }
    if (used != s.size()) throw std::runtime_error("not an integer: '" + s + "'");
    return v;
}

double to_double(const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::logic_error&) {
        throw std::runtime_error("not a number: '" + s + "'");
    }
    if (used != s.size()) throw std::runtime_error("not a number: '" + s + "'");
    return v;
}

bool to_switch(const std::string& s) {
    if (s == "on") return true;
    if (s == "off") return false;
    throw std::runtime_error("expected on or off, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            parts.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    parts.push_back(trim(cur));
    return parts;
}

std::vector<int> to_int_list(const std::string& s) {
    std::vector<int> out;
    for (const auto& p : split_list(s)) out.push_back(int(to_int(p)));
    return out;
}

std::vector<double> to_double_list(const std::string& s) {
    std::vector<double> out;
    for (const auto& p : split_list(s)) out.push_back(to_double(p));
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i)
        out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
    return out;
}

using Setter = std::function<void(TrainConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"seed", [](TrainConfig& c, const std::string& v) { c.seed = std::uint64_t(to_int(v)); }},
        {"attention",
         [](TrainConfig& c, const std::string& v) {
             if (v != "none" && v != "ssa" && v != "msa")
                 throw std::runtime_error("expected none, ssa or msa, got '" + v + "'");
             c.attention = v;
         }},
        {"agnostic", [](TrainConfig& c, const std::string& v) { c.agnostic = to_switch(v); }},
        {"specific", [](TrainConfig& c, const std::string& v) { c.specific = to_switch(v); }},
        {"ddh", [](TrainConfig& c, const std::string& v) { c.ddh = to_switch(v); }},
        {"warmup_epochs", [](TrainConfig& c, const std::string& v) { c.warmup_epochs = int(to_int(v)); }},
        {"finetune_epochs", [](TrainConfig& c, const std::string& v) { c.finetune_epochs = int(to_int(v)); }},
        {"learning_rate", [](TrainConfig& c, const std::string& v) { c.learning_rate = to_double(v); }},
        {"batch_size", [](TrainConfig& c, const std::string& v) { c.batch_size = int(to_int(v)); }},
        {"width", [](TrainConfig& c, const std::string& v) { c.width = int(to_int(v)); }},
        {"heads", [](TrainConfig& c, const std::string& v) { c.heads = int(to_int(v)); }},
        {"ffn_width", [](TrainConfig& c, const std::string& v) { c.ffn_width = int(to_int(v)); }},
        {"num_layers", [](TrainConfig& c, const std::string& v) { c.num_layers = int(to_int(v)); }},
        {"num_candidates", [](TrainConfig& c, const std::string& v) { c.num_candidates = int(to_int(v)); }},
        {"n_d", [](TrainConfig& c, const std::string& v) { c.n_d = int(to_int(v)); }},
        {"categories", [](TrainConfig& c, const std::string& v) { c.categories = int(to_int(v)); }},
        {"enc_sizes", [](TrainConfig& c, const std::string& v) { c.enc_sizes = to_int_list(v); }},
        {"enc_radii", [](TrainConfig& c, const std::string& v) { c.enc_radii = to_double_list(v); }},
        {"enc_widths", [](TrainConfig& c, const std::string& v) { c.enc_widths = to_int_list(v); }},
        {"enc_max_samples", [](TrainConfig& c, const std::string& v) { c.enc_max_samples = int(to_int(v)); }},
        {"score_hidden", [](TrainConfig& c, const std::string& v) { c.score_hidden = int(to_int(v)); }},
        {"hyper_n", [](TrainConfig& c, const std::string& v) { c.hyper_n = int(to_int(v)); }},
        {"hyper_cui", [](TrainConfig& c, const std::string& v) { c.hyper_cui = int(to_int(v)); }},
        {"hyper_ca", [](TrainConfig& c, const std::string& v) { c.hyper_ca = int(to_int(v)); }},
        {"hyper_cs", [](TrainConfig& c, const std::string& v) { c.hyper_cs = int(to_int(v)); }},
        {"hyper_ch", [](TrainConfig& c, const std::string& v) { c.hyper_ch = int(to_int(v)); }},
        {"hyper_cn", [](TrainConfig& c, const std::string& v) { c.hyper_cn = int(to_int(v)); }},
    };
    return table;
}

std::vector<Tensor> zero_grads(const ad::ParamStore& store) {
    std::vector<Tensor> grads;
    grads.reserve(store.entries.size());
    for (const auto& e : store.entries)
        grads.emplace_back(e.value.rows, e.value.cols);
    return grads;
}

struct Dataset {
    std::vector<data::PointScene> train, val;
};

Dataset load_dataset(const std::string& dir, bool need_train) {
    data::DatasetManifest man = data::read_manifest(dir);
    std::map<std::string, std::string> path_of;
    for (const auto& e : man.entries) path_of[e.scene_id] = e.path;
    auto load = [&](const std::vector<std::string>& ids) {
        std::vector<data::PointScene> scenes;
        scenes.reserve(ids.size());
        for (const auto& id : ids) {
            auto it = path_of.find(id);
            if (it == path_of.end())
                throw ParseError(dir + ": split references unknown scene " + id);
            scenes.push_back(data::read_scene(dir + "/" + it->second));
        }
        return scenes;
    };
    Dataset ds;
    if (need_train) ds.train = load(man.train_ids);
    ds.val = load(man.val_ids);
    return ds;
}

// Scores the current parameters over the val split with the given fusion
// state; suppression at IoU 0.25 as everywhere else.
void score_val(const model::Model& m, const std::vector<data::PointScene>& val,
               bool fuse, eval::SceneBoxes& preds, eval::SceneBoxes& gts) {
    preds.clear();
    gts.clear();
    for (const auto& scene : val) {
        ad::Tape tp;
        ad::Binder bind(tp, m.store);
        model::Forward f = model::forward(tp, bind, m, scene.points, fuse);
        preds[scene.scene_id] = model::extract_boxes(tp, f, 0.25);
        gts[scene.scene_id] = scene.boxes;
    }
}

// Ambiguity categories from the spec file `gen` drops into the dataset
// directory; empty when the dataset has none.
std::vector<int> ambiguous_categories(const std::string& data_dir) {
    std::string path = data_dir + "/specs.txt";
    if (!fs::exists(path)) return {};
    data::BenchmarkSpec spec = data::read_spec_file(path);
    std::set<int> cats;
    for (const auto& group : spec.ambiguity_groups) cats.insert(group.begin(), group.end());
    return {cats.begin(), cats.end()};
}

}  // namespace

TrainConfig parse_train_config(const std::string& text, const std::string& origin) {
    TrainConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string where = origin + " line " + std::to_string(line_no);
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(where + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        auto it = setters().find(key);
        if (it == setters().end())
            throw ConfigError(where + ": unknown key '" + key + "'");
        if (!seen.insert(key).second)
            throw ConfigError(where + ": duplicate key '" + key + "'");
        try {
            it->second(cfg, value);
        } catch (const std::runtime_error& e) {
            throw ConfigError(where + ": " + key + ": " + e.what());
        }
    }
    return cfg;
}

TrainConfig read_train_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream text;
    text << in.rdbuf();
    return parse_train_config(text.str(), path);
}

std::string canonical_text(const TrainConfig& c) {
    std::ostringstream out;
    out << "seed = " << c.seed << "\n";
    out << "attention = " << c.attention << "\n";
    out << "agnostic = " << (c.agnostic ? "on" : "off") << "\n";
    out << "specific = " << (c.specific ? "on" : "off") << "\n";
    out << "ddh = " << (c.ddh ? "on" : "off") << "\n";
    out << "warmup_epochs = " << c.warmup_epochs << "\n";
    out << "finetune_epochs = " << c.finetune_epochs << "\n";
    out << "learning_rate = " << fmt(c.learning_rate) << "\n";
    out << "batch_size = " << c.batch_size << "\n";
    out << "width = " << c.width << "\n";
    out << "heads = " << c.heads << "\n";
    out << "ffn_width = " << c.ffn_width << "\n";
    out << "num_layers = " << c.num_layers << "\n";
    out << "num_candidates = " << c.num_candidates << "\n";
    out << "n_d = " << c.n_d << "\n";
    out << "categories = " << c.categories << "\n";
    out << "enc_sizes = " << join_ints(c.enc_sizes) << "\n";
    out << "enc_radii = " << join_doubles(c.enc_radii) << "\n";
    out << "enc_widths = " << join_ints(c.enc_widths) << "\n";
    out << "enc_max_samples = " << c.enc_max_samples << "\n";
    out << "score_hidden = " << c.score_hidden << "\n";
    out << "hyper_n = " << c.hyper_n << "\n";
    out << "hyper_cui = " << c.hyper_cui << "\n";
    out << "hyper_ca = " << c.hyper_ca << "\n";
    out << "hyper_cs = " << c.hyper_cs << "\n";
    out << "hyper_ch = " << c.hyper_ch << "\n";
    out << "hyper_cn = " << c.hyper_cn << "\n";
    return out.str();
}

model::ModelConfig to_model_config(const TrainConfig& c) {
    model::ModelConfig mc;
    mc.enc.downsample_sizes = c.enc_sizes;
    mc.enc.radii = c.enc_radii;
    mc.enc.widths = c.enc_widths;
    mc.enc.max_samples = c.enc_max_samples;
    mc.enc.fp_width = c.width;
    mc.enc.score_hidden = c.score_hidden;
    mc.enc.num_candidates = c.num_candidates;
    mc.enc.n_d = c.n_d;

    mc.dec.num_layers = c.num_layers;
    mc.dec.width = c.width;
    mc.dec.heads = c.heads;
    mc.dec.ffn_width = c.ffn_width;

    mc.hd.width = c.width;
    mc.hd.num_categories = c.categories;

    if (c.attention == "none") mc.fusion = model::FusionMode::kNone;
    else if (c.attention == "ssa") mc.fusion = model::FusionMode::kSsa;
    else mc.fusion = model::FusionMode::kMsa;
    mc.use_ddh = c.ddh;

    mc.hyp.agnostic_enabled = c.agnostic;
    mc.hyp.specific_enabled = c.specific;
    if (mc.fusion_active()) {
        mc.hyp.shape = hyper::make_layer_shape(c.width, c.width, c.hyper_n,
                                               c.hyper_cui,
                                               mc.fusion == model::FusionMode::kMsa);
        mc.hyp.c_a = c.hyper_ca;
        mc.hyp.c_s = c.hyper_cs;
        mc.hyp.c_h = c.hyper_ch;
        mc.hyp.c_n = c.hyper_cn;
        mc.hyp.n_d = c.n_d;
    }
    return mc;
}

std::string metrics_line(const EpochMetrics& m) {
    return std::to_string(m.epoch) + " " + fmt(m.train_loss) + " " +
           fmt(m.val_map25) + " " + fmt(m.val_map50);
}

double cosine_lr(double base, int epoch, int total) {
    if (total <= 0) return base;
    double t = double(epoch) / double(total);
    return base * std::max(0.05, 0.5 * (1.0 + std::cos(3.14159265358979323846 * t)));
}

void adam_step(ad::ParamStore& store, const std::vector<Tensor>& grads, double lr,
               int step, double beta1, double beta2, double eps) {
    if (grads.size() != store.entries.size())
        throw ConfigError("adam_step: gradient list does not match the store");
    double bc1 = 1.0 - std::pow(beta1, step);
    double bc2 = 1.0 - std::pow(beta2, step);
    for (std::size_t i = 0; i < store.entries.size(); ++i) {
        auto& e = store.entries[i];
        const Tensor& g = grads[i];
        for (std::size_t k = 0; k < e.value.v.size(); ++k) {
            e.m.v[k] = beta1 * e.m.v[k] + (1.0 - beta1) * g.v[k];
            e.v.v[k] = beta2 * e.v.v[k] + (1.0 - beta2) * g.v[k] * g.v[k];
            double m_hat = e.m.v[k] / bc1;
            double v_hat = e.v.v[k] / bc2;
            e.value.v[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

TrainResult train(const TrainConfig& cfg, const std::string& data_dir,
                  const std::string& out_dir) {
    const int total_epochs = cfg.warmup_epochs + cfg.finetune_epochs;
    if (cfg.warmup_epochs < 0 || cfg.finetune_epochs < 0 || total_epochs == 0)
        throw ConfigError("train: epoch counts must be non-negative and total > 0");
    if (cfg.batch_size <= 0) throw ConfigError("train: batch_size must be positive");
    if (!(cfg.learning_rate > 0.0)) throw ConfigError("train: learning rate must be positive");

    model::ModelConfig mc = to_model_config(cfg);
    mc.validate();
    Dataset ds = load_dataset(data_dir, true);
    if (ds.train.empty()) throw ConfigError("train: empty training split");
    if (ds.val.empty()) throw ConfigError("train: empty validation split");

    model::Model m = model::build_model(mc, cfg.seed);
    const std::string config_text = canonical_text(cfg);
    const head::LossWeights weights;

    fs::create_directories(out_dir);
    std::ofstream metrics_out(out_dir + "/metrics.txt", std::ios::binary);
    if (!metrics_out) throw IoError("cannot open " + out_dir + "/metrics.txt");

    TrainResult result;
    double best_map = -1.0;
    std::vector<Tensor> grads = zero_grads(m.store);
    int adam_t = 0;

    for (int epoch = 0; epoch < total_epochs; ++epoch) {
        const bool finetune = epoch >= cfg.warmup_epochs;
        const bool fuse = finetune && mc.fusion_active();
        const int stage_epoch = finetune ? epoch - cfg.warmup_epochs : epoch;
        const int stage_total = finetune ? cfg.finetune_epochs : cfg.warmup_epochs;
        const double lr = cosine_lr(cfg.learning_rate, stage_epoch, stage_total);

        std::vector<int> order(ds.train.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle(derive_seed(cfg.seed, 1000 + std::uint64_t(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle.index(i)]);

        double loss_sum = 0.0;
        int in_batch = 0;
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            const auto& scene = ds.train[order[pos]];
            ad::Tape tp;
            ad::Binder bind(tp, m.store);
            head::LossTerms terms = model::scene_loss(tp, bind, m, scene.points,
                                                      scene.boxes, fuse, weights);
            tp.backward(terms.total);
            bind.add_grads(grads);
            loss_sum += tp.val(terms.total).at(0, 0);
            ++in_batch;
            if (in_batch == cfg.batch_size || pos + 1 == order.size()) {
                double inv = 1.0 / double(in_batch);
                for (auto& g : grads)
                    for (double& x : g.v) x *= inv;
                adam_step(m.store, grads, lr, ++adam_t);
                for (auto& g : grads) g.zero();
                in_batch = 0;
            }
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = loss_sum / double(ds.train.size());
        eval::SceneBoxes preds, gts;
        score_val(m, ds.val, fuse, preds, gts);
        eval::DetectionReport rep = eval::mean_ap(preds, gts, {0.25, 0.5});
        em.val_map25 = rep.thresholds[0].map;
        em.val_map50 = rep.thresholds[1].map;
        metrics_out << metrics_line(em) << "\n";
        metrics_out.flush();
        result.metrics.push_back(em);

        if (em.val_map25 > best_map) {
            best_map = em.val_map25;
            result.best = ckpt::snapshot(m.store, config_text, epoch, best_map);
        }
    }

    ckpt::save_checkpoint(out_dir + "/checkpoint.ckpt", result.best);
    return result;
}

std::string EvalResult::text() const {
    std::string out = report.text();
    out += "label_accuracy@0.25: " + fmt(label_accuracy.value) + "\n";
    out += "label_matched: " + std::to_string(label_accuracy.considered) + "\n";
    out += "label_correct: " + std::to_string(label_accuracy.correct) + "\n";
    return out;
}

EvalResult evaluate(const ckpt::Checkpoint& c, const std::string& data_dir,
                    const std::vector<double>& thresholds,
                    const std::string& dump_path) {
    TrainConfig cfg = parse_train_config(c.config_text, "checkpoint config");
    model::ModelConfig mc = to_model_config(cfg);
    mc.validate();
    model::Model m = model::build_model(mc, cfg.seed);
    ckpt::restore(c, m.store);

    Dataset ds = load_dataset(data_dir, false);
    if (ds.val.empty()) throw ConfigError("evaluate: empty validation split");

    const bool fuse = mc.fusion_active() && c.epoch >= cfg.warmup_epochs;
    EvalResult r;
    score_val(m, ds.val, fuse, r.predictions, r.ground_truth);
    r.report = eval::mean_ap(r.predictions, r.ground_truth, thresholds);
    r.label_accuracy = eval::matched_category_accuracy(
        r.predictions, r.ground_truth, 0.25, ambiguous_categories(data_dir));
    if (!dump_path.empty()) eval::write_prediction_dump(dump_path, r.predictions);
    return r;
}

namespace {

Tensor random_tensor(int rows, int cols, Rng& rng, double half_range) {
    Tensor t(rows, cols);
    for (double& x : t.v) x = rng.uniform(-half_range, half_range);
    return t;
}

hyper::HyperConfig tiny_hyper_config() {
    hyper::HyperConfig hc;
    hc.shape = hyper::make_layer_shape(8, 8, 4, 4, true);
    hc.c_a = 4;
    hc.c_s = 3;
    hc.c_h = 4;
    hc.c_n = 1;
    hc.n_d = 4;
    return hc;
}

using BuildFn = std::function<ad::Tape::VarId(ad::Tape&, ad::Binder&)>;

BuildFn hypernet_check(ad::ParamStore& store, Rng& rng) {
    hyper::HyperParams hp = hyper::create_params(tiny_hyper_config(), store, rng, "hyp");
    Tensor query = random_tensor(4, 3, rng, 0.5);
    Tensor o = random_tensor(5, 8, rng, 0.5);
    return [hp, query, o](ad::Tape& tp, ad::Binder& bind) {
        hyper::GeneratedVars gen = hyper::generate(tp, bind, hp, tp.constant(query));
        ad::Tape::VarId out =
            hyper::apply_scene_params(tp, tp.constant(o), gen.w, gen.b);
        return tp.sum_all(tp.mul(out, out));
    };
}

BuildFn decoder_check(ad::ParamStore& store, Rng& rng) {
    decoder::DecoderConfig dc;
    dc.num_layers = 2;
    dc.width = 8;
    dc.heads = 2;
    dc.ffn_width = 8;
    decoder::DecoderParams dp = decoder::create_params(dc, store, rng, "dec");
    hyper::HyperParams hp = hyper::create_params(tiny_hyper_config(), store, rng, "hyp");
    Tensor positions = random_tensor(5, 3, rng, 0.5);
    Tensor features = random_tensor(5, 8, rng, 0.5);
    Tensor memory = random_tensor(7, 8, rng, 0.5);
    Tensor query = random_tensor(4, 3, rng, 0.5);
    return [dp, hp, positions, features, memory, query](ad::Tape& tp, ad::Binder& bind) {
        hyper::GeneratedVars gen = hyper::generate(tp, bind, hp, tp.constant(query));
        ad::Tape::VarId out =
            decoder::run_stack(tp, bind, dp, tp.constant(positions),
                               tp.constant(features), tp.constant(memory), &gen);
        return tp.sum_all(tp.mul(out, out));
    };
}

BuildFn backbone_check(ad::ParamStore& store, Rng& rng) {
    backbone::EncoderConfig ec;
    ec.downsample_sizes = {12, 8, 6};
    ec.radii = {0.25, 0.45, 0.8};
    ec.widths = {6, 6, 6};
    ec.max_samples = 4;
    ec.fp_width = 8;
    ec.score_hidden = 5;
    ec.num_candidates = 4;
    ec.n_d = 4;
    backbone::EncoderParams ep = backbone::create_params(ec, store, rng, "enc");
    geom::PointSet scene(random_tensor(20, 3, rng, 0.5));
    return [ep, scene](ad::Tape& tp, ad::Binder& bind) {
        backbone::EncodeResult enc = backbone::encode_scene(tp, bind, ep, scene);
        ad::Tape::VarId feats = tp.sum_all(tp.mul(enc.candidates.features,
                                                  enc.candidates.features));
        ad::Tape::VarId scores = tp.sum_all(tp.mul(enc.scores, enc.scores));
        return tp.add(feats, scores);
    };
}

BuildFn head_check(ad::ParamStore& store, Rng& rng) {
    head::HeadConfig hc;
    hc.width = 6;
    hc.num_categories = 3;
    head::HeadParams hp = head::create_params(hc, store, rng, "head");
    int feat_id = store.add("probe.feat", random_tensor(8, 6, rng, 0.5));
    int kps_id = store.add("probe.kps", random_tensor(10, 1, rng, 0.5));

    // Candidates sit well inside or well outside the boxes so the positive
    // assignment cannot flip under the finite-difference step.
    Tensor positions(8, 3);
    double spots[8][3] = {{0.30, 0.30, 0.10}, {0.33, 0.28, 0.12}, {0.27, 0.33, 0.08},
                          {0.70, 0.70, 0.10}, {0.68, 0.72, 0.12}, {0.73, 0.67, 0.08},
                          {0.50, 0.10, 0.50}, {0.10, 0.55, 0.60}};
    for (int i = 0; i < 8; ++i)
        for (int a = 0; a < 3; ++a) positions.at(i, a) = spots[i][a];
    Tensor memory(10, 3);
    for (int i = 0; i < 10; ++i) {
        double base = i < 5 ? 0.3 : 0.9;
        memory.at(i, 0) = base + 0.01 * i;
        memory.at(i, 1) = base;
        memory.at(i, 2) = 0.1;
    }
    std::vector<geom::Box3D> gt(2);
    gt[0].center = {0.3, 0.3, 0.1};
    gt[0].size = {0.2, 0.2, 0.2};
    gt[0].category = 0;
    gt[1].center = {0.7, 0.7, 0.1};
    gt[1].size = {0.2, 0.2, 0.2};
    gt[1].category = 2;
    return [hp, feat_id, kps_id, positions, memory, gt](ad::Tape& tp, ad::Binder& bind) {
        head::HeadVars hv = head::bind_head(bind, hp);
        head::BoxVars boxes =
            head::predict_boxes(tp, tp.constant(positions), bind(feat_id), hv, true);
        head::LossTerms terms = head::detection_loss(tp, positions, boxes,
                                                     bind(kps_id), memory, gt,
                                                     head::LossWeights{});
        return terms.total;
    };
}

}  // namespace

ad::GradCheckResult gradcheck(const std::string& component, std::uint64_t seed) {
    ad::ParamStore store;
    Rng rng(seed);
    BuildFn build;
    if (component == "hypernet") build = hypernet_check(store, rng);
    else if (component == "decoder") build = decoder_check(store, rng);
    else if (component == "backbone") build = backbone_check(store, rng);
    else if (component == "head") build = head_check(store, rng);
    else throw ConfigError("gradcheck: unknown component '" + component + "'");

    // Fresh inits put ReLU and top-k kinks exactly at zero; a small jitter
    // moves every parameter to a generic point first.
    Rng jitter(derive_seed(seed, 7));
    for (auto& e : store.entries)
        for (double& x : e.value.v) x += jitter.uniform(-0.05, 0.05);
    return ad::finite_difference_check(store, build);
}

}  // namespace scenedet::harness
