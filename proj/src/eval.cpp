#include "scenedet/eval.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "scenedet/error.h"
#include "scenedet/head.h"

namespace scenedet::eval {

namespace {

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", x);
    return buf;
}

// Indices of `boxes` in descending-score order, equal scores by position.
std::vector<int> score_order(const std::vector<geom::Box3D>& boxes) {
    std::vector<int> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return boxes[a].score > boxes[b].score;
    });
    return order;
}

}  // namespace

std::vector<bool> match_predictions(const std::vector<geom::Box3D>& preds,
                                    const std::vector<geom::Box3D>& gts,
                                    double iou_threshold) {
    std::vector<bool> flags(preds.size(), false);
    std::vector<bool> taken(gts.size(), false);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        int best = -1;
        double best_iou = 0.0;
        for (std::size_t j = 0; j < gts.size(); ++j) {
            if (taken[j] || gts[j].category != preds[i].category) continue;
            double iou = geom::box_iou(preds[i], gts[j]);
            if (iou > best_iou) {
                best_iou = iou;
                best = static_cast<int>(j);
            }
        }
        if (best >= 0 && best_iou >= iou_threshold) {
            taken[best] = true;
            flags[i] = true;
        }
    }
    return flags;
}

double average_precision(const std::vector<bool>& flags,
                         const std::vector<double>& scores, int num_gt) {
    if (flags.size() != scores.size()) {
        throw std::invalid_argument("average_precision: flags/scores size mismatch");
    }
    if (num_gt <= 0 || flags.empty()) return 0.0;

    std::vector<int> order(flags.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return scores[a] > scores[b];
    });

    std::size_t n = order.size();
    std::vector<double> precision(n);
    int tp = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (flags[order[k]]) ++tp;
        precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    }

    // Recall only moves at matched ranks, each worth 1/num_gt, so the area
    // under the envelope is the sum of suffix-max precision at those ranks.
    double ap = 0.0;
    double envelope = 0.0;
    for (std::size_t k = n; k-- > 0;) {
        envelope = std::max(envelope, precision[k]);
        if (flags[order[k]]) ap += envelope;
    }
    return ap / static_cast<double>(num_gt);
}

DetectionReport mean_ap(const SceneBoxes& predictions,
                        const SceneBoxes& ground_truth,
                        const std::vector<double>& thresholds) {
    if (thresholds.empty()) {
        throw std::invalid_argument("mean_ap: no IoU thresholds given");
    }
    for (double t : thresholds) {
        if (!(t > 0.0 && t <= 1.0)) {
            throw std::invalid_argument("mean_ap: IoU threshold outside (0, 1]");
        }
    }

    DetectionReport report;
    std::map<int, int> gt_per_category;
    for (const auto& [scene_id, boxes] : ground_truth) {
        for (const auto& box : boxes) ++gt_per_category[box.category];
        report.num_ground_truth += static_cast<int>(boxes.size());
    }
    if (report.num_ground_truth == 0) {
        throw std::invalid_argument("mean_ap: ground truth contains no boxes");
    }

    std::map<std::string, int> scene_ids;
    for (const auto& [scene_id, boxes] : ground_truth) scene_ids[scene_id] = 1;
    for (const auto& [scene_id, boxes] : predictions) {
        scene_ids[scene_id] = 1;
        report.num_predictions += static_cast<int>(boxes.size());
    }
    report.num_scenes = static_cast<int>(scene_ids.size());

    static const std::vector<geom::Box3D> no_boxes;
    for (double threshold : thresholds) {
        struct Pool {
            std::vector<bool> flags;
            std::vector<double> scores;
        };
        std::map<int, Pool> pools;
        for (const auto& [scene_id, preds] : predictions) {
            auto it = ground_truth.find(scene_id);
            const auto& gts = it == ground_truth.end() ? no_boxes : it->second;
            std::vector<int> order = score_order(preds);
            std::vector<geom::Box3D> sorted;
            sorted.reserve(preds.size());
            for (int idx : order) sorted.push_back(preds[idx]);
            std::vector<bool> flags = match_predictions(sorted, gts, threshold);
            for (std::size_t k = 0; k < sorted.size(); ++k) {
                Pool& pool = pools[sorted[k].category];
                pool.flags.push_back(flags[k]);
                pool.scores.push_back(sorted[k].score);
            }
        }

        ThresholdResult result;
        result.iou_threshold = threshold;
        double ap_sum = 0.0;
        for (const auto& [category, num_gt] : gt_per_category) {
            CategoryResult cat;
            cat.category = category;
            cat.num_gt = num_gt;
            auto it = pools.find(category);
            if (it != pools.end()) {
                const Pool& pool = it->second;
                for (bool f : pool.flags) (f ? cat.true_positives : cat.false_positives)++;
                cat.ap = average_precision(pool.flags, pool.scores, num_gt);
            }
            ap_sum += cat.ap;
            result.categories.push_back(cat);
        }
        result.map = ap_sum / static_cast<double>(result.categories.size());
        report.thresholds.push_back(std::move(result));
    }
    return report;
}

std::string DetectionReport::text() const {
    std::ostringstream out;
    out << "scenes: " << num_scenes << "\n";
    out << "predictions: " << num_predictions << "\n";
    out << "ground_truth: " << num_ground_truth << "\n";
    for (const auto& result : thresholds) {
        std::string tag = fmt(result.iou_threshold);
        out << "map@" << tag << ": " << fmt(result.map) << "\n";
        for (const auto& cat : result.categories) {
            out << "ap@" << tag << "/cat" << cat.category << ": " << fmt(cat.ap) << "\n";
            out << "counts@" << tag << "/cat" << cat.category << ": "
                << cat.true_positives << " " << cat.false_positives << " "
                << cat.num_gt << "\n";
        }
    }
    return out.str();
}

CategoryAccuracy matched_category_accuracy(const SceneBoxes& predictions,
                                           const SceneBoxes& ground_truth,
                                           double iou_threshold,
                                           const std::vector<int>& categories) {
    CategoryAccuracy acc;
    for (const auto& [scene_id, gts] : ground_truth) {
        auto it = predictions.find(scene_id);
        if (it == predictions.end()) continue;
        const auto& preds = it->second;
        std::vector<int> order = score_order(preds);
        std::vector<int> match(gts.size(), -1);
        for (int idx : order) {
            int best = -1;
            double best_iou = 0.0;
            for (std::size_t j = 0; j < gts.size(); ++j) {
                if (match[j] >= 0) continue;
                double iou = geom::box_iou(preds[idx], gts[j]);
                if (iou > best_iou) {
                    best_iou = iou;
                    best = static_cast<int>(j);
                }
            }
            if (best >= 0 && best_iou >= iou_threshold) match[best] = idx;
        }
        for (std::size_t j = 0; j < gts.size(); ++j) {
            if (match[j] < 0) continue;
            if (!categories.empty() &&
                std::find(categories.begin(), categories.end(), gts[j].category) ==
                    categories.end()) {
                continue;
            }
            ++acc.considered;
            if (preds[match[j]].category == gts[j].category) ++acc.correct;
        }
    }
    if (acc.considered > 0) {
        acc.value = static_cast<double>(acc.correct) / static_cast<double>(acc.considered);
    }
    return acc;
}

void write_prediction_dump(const std::string& path, const SceneBoxes& preds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    for (const auto& [scene_id, boxes] : preds) {
        for (const auto& box : boxes) out << head::prediction_line(scene_id, box) << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

SceneBoxes read_prediction_dump(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    SceneBoxes boxes;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string scene_id;
        geom::Box3D box;
        ls >> scene_id >> box.category >> box.score >> box.center[0] >>
            box.center[1] >> box.center[2] >> box.size[0] >> box.size[1] >>
            box.size[2];
        std::string extra;
        if (!ls || (ls >> extra)) {
            throw ParseError(path + " line " + std::to_string(line_no) +
                             ": expected 9 prediction fields");
        }
        try {
            box.validate();
        } catch (const std::exception& e) {
            throw ParseError(path + " line " + std::to_string(line_no) + ": " +
                             e.what());
        }
        boxes[scene_id].push_back(box);
    }
    return boxes;
}

}  // namespace scenedet::eval
