#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scenedet/autodiff.h"
#include "scenedet/checkpoint.h"
#include "scenedet/eval.h"
#include "scenedet/model.h"

namespace scenedet::harness {

// Line-oriented "key = value" run configuration. Every key has a default;
// unknown and duplicated keys are hard errors so ablation files cannot
// silently drift.
struct TrainConfig {
    std::uint64_t seed = 1;
    std::string attention = "msa";  // none | ssa | msa
    bool agnostic = true;
    bool specific = true;
    bool ddh = true;
    int warmup_epochs = 20;
    int finetune_epochs = 60;
    double learning_rate = 3e-3;
    int batch_size = 8;

    int width = 32;
    int heads = 4;
    int ffn_width = 64;
    int num_layers = 3;
    int num_candidates = 32;
    int n_d = 8;
    int categories = 6;

    std::vector<int> enc_sizes = {256, 128, 64, 32};
    std::vector<double> enc_radii = {0.1, 0.2, 0.4, 0.6};
    std::vector<int> enc_widths = {32, 32, 32, 32};
    int enc_max_samples = 8;
    int score_hidden = 16;

    int hyper_n = 8;
    int hyper_cui = 8;
    int hyper_ca = 16;
    int hyper_cs = 16;
    int hyper_ch = 16;
    int hyper_cn = 2;
};

// `origin` names the source in error messages ("path line N: ...").
TrainConfig parse_train_config(const std::string& text, const std::string& origin);
TrainConfig read_train_config(const std::string& path);

// Every key in a fixed order with resolved values; parsing it back yields
// the same config, and its FNV-1a hash identifies the run setup.
std::string canonical_text(const TrainConfig& cfg);

model::ModelConfig to_model_config(const TrainConfig& cfg);

struct EpochMetrics {
    int epoch = 0;  // global index across both stages
    double train_loss = 0.0;
    double val_map25 = 0.0;
    double val_map50 = 0.0;
};

// "epoch train_loss val_map25 val_map50", 9 significant digits.
std::string metrics_line(const EpochMetrics& m);

struct TrainResult {
    ckpt::Checkpoint best;  // highest val mAP@0.25, earlier epoch on ties
    std::vector<EpochMetrics> metrics;
};

// Two-stage optimization: warmup epochs run with the generated layer
// bypassed (its parameters stay frozen), finetune epochs run fused. Adam
// with a per-stage cosine schedule; batching order is derived from the
// seed. Writes metrics.txt and checkpoint.ckpt under out_dir.
TrainResult train(const TrainConfig& cfg, const std::string& data_dir,
                  const std::string& out_dir);

struct EvalResult {
    eval::DetectionReport report;
    eval::SceneBoxes predictions;
    eval::SceneBoxes ground_truth;
    eval::CategoryAccuracy label_accuracy;  // category-blind match, label check

    // Report text plus label-accuracy lines.
    std::string text() const;
};

// Rebuilds the model from the checkpoint's embedded config, runs inference
// with per-category suppression at IoU 0.25 over the val split, and scores
// it. A checkpoint taken during warmup is evaluated with fusion bypassed,
// matching the forward pass that produced its val metric. label_accuracy
// covers the categories in the dataset's ambiguity groups when the dataset
// directory carries its generating spec, all categories otherwise.
// `dump_path` non-empty writes the prediction dump.
EvalResult evaluate(const ckpt::Checkpoint& c, const std::string& data_dir,
                    const std::vector<double>& thresholds,
                    const std::string& dump_path = "");

// Central-difference check of one component's full parameter set at a
// jittered generic point: "hypernet", "decoder", "backbone" or "head".
// Unknown names raise ConfigError.
ad::GradCheckResult gradcheck(const std::string& component, std::uint64_t seed);

// Reads metrics.txt (and report.txt when present) from each run directory;
// writes loss_curves.svg, map_curves.svg, ap_bars.svg and summary.txt.
void report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

// One optimizer step; grads holds one tensor per store entry. `step` counts
// from 1 for bias correction.
void adam_step(ad::ParamStore& store, const std::vector<Tensor>& grads, double lr,
               int step, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

// Cosine decay from base to a 5% floor over `total` epochs.
double cosine_lr(double base, int epoch, int total);

}  // namespace scenedet::harness
