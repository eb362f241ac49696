#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scenedet/data.h"
#include "scenedet/error.h"
#include "scenedet/harness.h"

namespace {

using namespace scenedet;

std::vector<double> parse_thresholds(const std::string& csv) {
    std::vector<double> out;
    std::string cur;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(std::stod(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    return out;
}

int run_gen(const std::string& specs, int scenes, std::uint64_t seed,
            const std::string& out) {
    data::BenchmarkSpec spec = data::read_spec_file(specs);
    data::DatasetManifest man = data::build_dataset(spec, scenes, seed, out);
    std::filesystem::copy_file(specs, out + "/specs.txt",
                               std::filesystem::copy_options::overwrite_existing);
    std::printf("wrote %zu scenes (%zu train / %zu val) to %s\n",
                man.entries.size(), man.train_ids.size(), man.val_ids.size(),
                out.c_str());
    return 0;
}

int run_train(const std::string& config, const std::string& data_dir,
              const std::string& out) {
    harness::TrainConfig cfg = harness::read_train_config(config);
    harness::TrainResult result = harness::train(cfg, data_dir, out);
    std::printf("best val mAP@0.25 %.9g at epoch %d; checkpoint %s/checkpoint.ckpt\n",
                result.best.best_map25, result.best.epoch, out.c_str());
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& iou, const std::string& dump,
             const std::string& report_path) {
    ckpt::Checkpoint c = ckpt::load_checkpoint(ckpt_path);
    std::vector<double> thresholds = parse_thresholds(iou);
    harness::EvalResult r = harness::evaluate(c, data_dir, thresholds, dump);
    std::string text = r.text();
    std::fputs(text.c_str(), stdout);
    if (!report_path.empty()) {
        std::ofstream out(report_path, std::ios::binary);
        if (!out) throw IoError("cannot open " + report_path + " for writing");
        out << text;
    }
    return 0;
}

int run_gradcheck(const std::string& component, std::uint64_t seed) {
    ad::GradCheckResult r = harness::gradcheck(component, seed);
    std::printf("%s max_rel_err %.3g worst %s\n", component.c_str(), r.max_rel_err,
                r.where.c_str());
    if (r.max_rel_err > 1e-4) {
        std::fprintf(stderr, "error: gradient check failed for %s (%.3g > 1e-4)\n",
                     component.c_str(), r.max_rel_err);
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"scene-conditioned point-cloud detector"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen", "generate a synthetic benchmark dataset");
    std::string gen_specs, gen_out;
    int gen_scenes = 1000;
    std::uint64_t gen_seed = 1;
    gen->add_option("--specs", gen_specs, "scene-type spec file")->required();
    gen->add_option("--scenes", gen_scenes, "number of scenes");
    gen->add_option("--seed", gen_seed, "generation seed");
    gen->add_option("--out", gen_out, "output dataset directory")->required();

    auto* train = app.add_subcommand("train", "train a detector");
    std::string train_config, train_data, train_out;
    train->add_option("--config", train_config, "run configuration file")->required();
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "run output directory")->required();

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_ckpt, eval_data, eval_iou = "0.25,0.5", eval_dump, eval_report;
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
    eval_cmd->add_option("--iou", eval_iou, "comma-separated IoU thresholds");
    eval_cmd->add_option("--dump", eval_dump, "prediction dump path");
    eval_cmd->add_option("--report", eval_report, "also write the report here");

    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient check");
    std::string grad_component;
    std::uint64_t grad_seed = 1;
    grad->add_option("--component", grad_component,
                     "hypernet | decoder | backbone | head")->required();
    grad->add_option("--seed", grad_seed, "instance seed");

    auto* rep = app.add_subcommand("report", "figures and summary from run dirs");
    std::vector<std::string> rep_runs;
    std::string rep_out;
    rep->add_option("--runs", rep_runs, "run directories")->required()->expected(-1);
    rep->add_option("--out", rep_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }

    try {
        if (gen->parsed()) return run_gen(gen_specs, gen_scenes, gen_seed, gen_out);
        if (train->parsed()) return run_train(train_config, train_data, train_out);
        if (eval_cmd->parsed())
            return run_eval(eval_ckpt, eval_data, eval_iou, eval_dump, eval_report);
        if (grad->parsed()) return run_gradcheck(grad_component, grad_seed);
        if (rep->parsed()) {
            scenedet::harness::report(rep_runs, rep_out);
            std::printf("report written to %s\n", rep_out.c_str());
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
