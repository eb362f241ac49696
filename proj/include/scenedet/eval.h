#pragma once

#include <map>
#include <string>
#include <vector>

#include "scenedet/geometry.h"

namespace scenedet::eval {

// Boxes keyed by scene id; used for both predictions and ground truth.
using SceneBoxes = std::map<std::string, std::vector<geom::Box3D>>;

// Greedy matching for one scene at one IoU threshold. Predictions must
// already be in descending-score order (ties keep input order); each one
// claims the unmatched same-category ground-truth box with the highest IoU
// when that IoU reaches the threshold, ties to the smallest box index.
// Returns one flag per prediction: true = matched, false = unmatched.
std::vector<bool> match_predictions(const std::vector<geom::Box3D>& preds,
                                    const std::vector<geom::Box3D>& gts,
                                    double iou_threshold);

// All-point interpolated average precision: area under the precision
// envelope as a function of recall. Entries are ordered by descending score
// internally (stable, so equal scores keep input order); flags and scores
// are parallel arrays. num_gt == 0 or an empty input yields 0.
double average_precision(const std::vector<bool>& flags,
                         const std::vector<double>& scores, int num_gt);

struct CategoryResult {
    int category = 0;
    int num_gt = 0;
    int true_positives = 0;
    int false_positives = 0;
    double ap = 0.0;
};

struct ThresholdResult {
    double iou_threshold = 0.0;
    std::vector<CategoryResult> categories;  // ascending id, only num_gt >= 1
    double map = 0.0;                        // unweighted mean over categories
};

struct DetectionReport {
    int num_scenes = 0;
    int num_predictions = 0;
    int num_ground_truth = 0;
    std::vector<ThresholdResult> thresholds;

    // "key: value" lines; doubles carry 9 significant digits.
    std::string text() const;
};

// Matches per scene, pools the outcomes per category across scenes, and
// computes AP per category and its mean at every threshold. Categories with
// no ground truth anywhere are left out of both the report and the mean.
// Throws std::invalid_argument when thresholds are empty or outside (0, 1],
// or when the ground truth contains no boxes at all.
DetectionReport mean_ap(const SceneBoxes& predictions,
                        const SceneBoxes& ground_truth,
                        const std::vector<double>& thresholds);

struct CategoryAccuracy {
    int considered = 0;  // ground-truth boxes localized by some prediction
    int correct = 0;     // of those, the prediction carried the right label
    double value = 0.0;  // correct / considered, 0 when nothing matched
};

// How often a localized object carries the right label: matching here
// ignores categories entirely (greedy highest-IoU per scene, descending
// score), then each matched ground-truth box scores 1 when its prediction's
// category agrees. `categories` restricts which ground-truth boxes count;
// empty means all.
CategoryAccuracy matched_category_accuracy(const SceneBoxes& predictions,
                                           const SceneBoxes& ground_truth,
                                           double iou_threshold,
                                           const std::vector<int>& categories = {});

// Prediction dump: one "scene_id category score cx cy cz dx dy dz" line per
// box, scenes in map order. Reading tolerates blank lines and preserves
// per-scene box order; malformed lines raise ParseError naming the line.
void write_prediction_dump(const std::string& path, const SceneBoxes& preds);
SceneBoxes read_prediction_dump(const std::string& path);

}  // namespace scenedet::eval
