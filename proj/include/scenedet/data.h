#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "scenedet/geometry.h"

namespace scenedet::data {

// Uniform per-axis size draw: mean + spread * U(-1, 1).
struct SizeDist {
    std::array<double, 3> mean{};
    std::array<double, 3> spread{};

    friend bool operator==(const SizeDist& a, const SizeDist& b) {
        return a.mean == b.mean && a.spread == b.spread;
    }
};

struct CategoryPrior {
    int category = 0;
    double prob = 0.0;
    SizeDist size;
};

// Constraint on how the object centers of one scene sit relative to each
// other. `param` is the cluster diameter, the maximum perpendicular offset
// from the shared line, or the minimum pairwise distance, respectively.
enum class Arrangement { kAny, kCluster, kLine, kSpread };

struct SceneTypeSpec {
    std::string name;
    int min_objects = 1, max_objects = 1;
    std::array<double, 4> region{0.0, 1.0, 0.0, 1.0};  // x0 x1 y0 y1, box centers
    Arrangement arrange = Arrangement::kAny;
    double arrange_param = 0.0;
    std::vector<CategoryPrior> categories;
};

struct BenchmarkSpec {
    int num_categories = 0;
    int points_per_box = 0;
    int clutter_points = 0;
    std::vector<SceneTypeSpec> types;
    // Category sets whose size distributions are forced identical, so object
    // geometry alone cannot tell the members apart.
    std::vector<std::vector<int>> ambiguity_groups;

    void validate() const;
};

struct PointScene {
    std::string scene_id;
    std::string scene_type;  // metadata only, never a model input
    geom::PointSet points;
    std::vector<geom::Box3D> boxes;
};

BenchmarkSpec read_spec_file(const std::string& path);
void write_spec_file(const std::string& path, const BenchmarkSpec& spec);

// Rejection-samples non-overlapping on-floor boxes inside the type's
// placement region (min 0.02 gap in x or y, at most 1000 draws per scene),
// honoring the type's center arrangement, then emits uniform surface points
// per box and uniform floor/wall clutter. Fully determined by seed.
PointScene generate_scene(const BenchmarkSpec& spec, int type_index,
                          const std::string& scene_id, uint64_t seed);

void write_scene(const std::string& path, const PointScene& scene);
PointScene read_scene(const std::string& path);

struct ManifestEntry {
    std::string scene_id;
    std::string path;  // relative to the dataset directory
    std::string scene_type;
    int box_count = 0;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::vector<std::string> train_ids, val_ids;
};

// Writes scenes/, manifest.txt, train.txt, val.txt under out_dir. The split
// is a deterministic hash of the scene id, roughly 80/20.
DatasetManifest build_dataset(const BenchmarkSpec& spec, int num_scenes, uint64_t seed,
                              const std::string& out_dir);

DatasetManifest read_manifest(const std::string& dataset_dir);

}  // namespace scenedet::data
