#include "scenedet/data.h"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "scenedet/error.h"
#include "scenedet/rng.h"

namespace scenedet::data {

namespace {

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", x);
    return std::string(buf);
}

[[noreturn]] void fail(const std::string& path, int line, const std::string& what) {
    throw ParseError(path + " line " + std::to_string(line) + ": " + what);
}

// Splits on single spaces; the formats never emit tabs or double spaces.
std::vector<std::string> tokens(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string t;
    while (ss >> t) out.push_back(t);
    return out;
}

double parse_double(const std::string& s, const std::string& path, int line) {
    size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(s, &used);
    } catch (const std::exception&) {
        fail(path, line, "bad number '" + s + "'");
    }
    if (used != s.size() || !std::isfinite(x)) fail(path, line, "bad number '" + s + "'");
    return x;
}

int parse_int(const std::string& s, const std::string& path, int line) {
    size_t used = 0;
    int x = 0;
    try {
        x = std::stoi(s, &used);
    } catch (const std::exception&) {
        fail(path, line, "bad integer '" + s + "'");
    }
    if (used != s.size()) fail(path, line, "bad integer '" + s + "'");
    return x;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    return out;
}

bool boxes_conflict(const geom::Box3D& a, const geom::Box3D& b, double gap) {
    const bool near_x = std::abs(a.center[0] - b.center[0]) < 0.5 * (a.size[0] + b.size[0]) + gap;
    const bool near_y = std::abs(a.center[1] - b.center[1]) < 0.5 * (a.size[1] + b.size[1]) + gap;
    return near_x && near_y;
}

}  // namespace

void BenchmarkSpec::validate() const {
    if (num_categories < 1) throw ConfigError("spec: categories must be >= 1");
    if (points_per_box < 1) throw ConfigError("spec: points_per_box must be >= 1");
    if (clutter_points < 0) throw ConfigError("spec: clutter_points must be >= 0");
    if (types.empty()) throw ConfigError("spec: at least one scene type");
    for (const auto& ty : types) {
        if (ty.name.empty()) throw ConfigError("spec: scene type needs a name");
        if (ty.min_objects < 0 || ty.max_objects < ty.min_objects)
            throw ConfigError("spec: bad object-count range for " + ty.name);
        if (!(ty.region[0] < ty.region[1]) || !(ty.region[2] < ty.region[3]) ||
            ty.region[0] < 0.0 || ty.region[1] > 1.0 || ty.region[2] < 0.0 || ty.region[3] > 1.0)
            throw ConfigError("spec: bad placement region for " + ty.name);
        if (ty.arrange != Arrangement::kAny &&
            !(ty.arrange_param > 0.0 && ty.arrange_param < 1.5))
            throw ConfigError("spec: arrangement parameter out of range for " + ty.name);
        if (ty.categories.empty()) throw ConfigError("spec: no categories for " + ty.name);
        double total = 0.0;
        for (const auto& cp : ty.categories) {
            if (cp.category < 0 || cp.category >= num_categories)
                throw ConfigError("spec: category id out of range in " + ty.name);
            if (cp.prob < 0.0) throw ConfigError("spec: negative probability in " + ty.name);
            total += cp.prob;
            for (int a = 0; a < 3; ++a) {
                if (!(cp.size.mean[a] > 0.0))
                    throw ConfigError("spec: size mean must be positive in " + ty.name);
                if (cp.size.spread[a] < 0.0 || cp.size.spread[a] >= cp.size.mean[a])
                    throw ConfigError("spec: size spread must be in [0, mean) in " + ty.name);
            }
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw ConfigError("spec: category probabilities must sum to 1 in " + ty.name);
    }
    for (const auto& group : ambiguity_groups) {
        if (group.size() < 2) throw ConfigError("spec: ambiguity group needs >= 2 categories");
        bool have = false;
        SizeDist shared;
        for (int cat : group) {
            if (cat < 0 || cat >= num_categories)
                throw ConfigError("spec: ambiguity category out of range");
            for (const auto& ty : types)
                for (const auto& cp : ty.categories) {
                    if (cp.category != cat) continue;
                    if (!have) {
                        shared = cp.size;
                        have = true;
                    } else if (!(cp.size == shared)) {
                        throw ConfigError(
                            "spec: ambiguity group members must share one size distribution");
                    }
                }
        }
        if (!have) throw ConfigError("spec: ambiguity group references unused categories");
    }
}

BenchmarkSpec read_spec_file(const std::string& path) {
    auto in = open_in(path);
    std::string line;
    int ln = 0;
    auto next = [&](const char* expect) {
        if (!std::getline(in, line)) fail(path, ln + 1, std::string("expected ") + expect);
        ++ln;
        return tokens(line);
    };
    auto header = next("header");
    if (header.size() != 2 || header[0] != "HD3DSPECS" || header[1] != "v1")
        fail(path, ln, "expected header 'HD3DSPECS v1'");

    BenchmarkSpec spec;
    auto scalar = [&](const char* key) {
        auto t = next(key);
        if (t.size() != 2 || t[0] != key) fail(path, ln, std::string("expected '") + key + " <n>'");
        return parse_int(t[1], path, ln);
    };
    spec.num_categories = scalar("categories");
    spec.points_per_box = scalar("points_per_box");
    spec.clutter_points = scalar("clutter_points");

    while (std::getline(in, line)) {
        ++ln;
        auto t = tokens(line);
        if (t.empty()) continue;
        if (t[0] == "type") {
            if (t.size() != 10 || t[1].empty() || t[2] != "objects" || t[5] != "region")
                fail(path, ln, "expected 'type <name> objects <min> <max> region <x0> <x1> <y0> <y1>'");
            SceneTypeSpec ty;
            ty.name = t[1];
            ty.min_objects = parse_int(t[3], path, ln);
            ty.max_objects = parse_int(t[4], path, ln);
            for (int a = 0; a < 4; ++a) ty.region[a] = parse_double(t[6 + a], path, ln);
            spec.types.push_back(std::move(ty));
        } else if (t[0] == "arrange") {
            if (spec.types.empty()) fail(path, ln, "'arrange' before any 'type'");
            if (t.size() != 3) fail(path, ln, "expected 'arrange <cluster|line|spread> <param>'");
            SceneTypeSpec& ty = spec.types.back();
            if (t[1] == "cluster")
                ty.arrange = Arrangement::kCluster;
            else if (t[1] == "line")
                ty.arrange = Arrangement::kLine;
            else if (t[1] == "spread")
                ty.arrange = Arrangement::kSpread;
            else
                fail(path, ln, "unknown arrangement '" + t[1] + "'");
            ty.arrange_param = parse_double(t[2], path, ln);
        } else if (t[0] == "cat") {
            if (spec.types.empty()) fail(path, ln, "'cat' before any 'type'");
            if (t.size() != 12 || t[2] != "p" || t[4] != "size" || t[8] != "spread")
                fail(path, ln, "expected 'cat <id> p <prob> size <mx> <my> <mz> spread <sx> <sy> <sz>'");
            CategoryPrior cp;
            cp.category = parse_int(t[1], path, ln);
            cp.prob = parse_double(t[3], path, ln);
            for (int a = 0; a < 3; ++a) {
                cp.size.mean[a] = parse_double(t[5 + a], path, ln);
                cp.size.spread[a] = parse_double(t[9 + a], path, ln);
            }
            spec.types.back().categories.push_back(cp);
        } else if (t[0] == "ambiguity") {
            if (t.size() < 3) fail(path, ln, "expected 'ambiguity <cat> <cat> ...'");
            std::vector<int> group;
            for (size_t i = 1; i < t.size(); ++i) group.push_back(parse_int(t[i], path, ln));
            spec.ambiguity_groups.push_back(std::move(group));
        } else {
            fail(path, ln, "unknown keyword '" + t[0] + "'");
        }
    }
    spec.validate();
    return spec;
}

void write_spec_file(const std::string& path, const BenchmarkSpec& spec) {
    spec.validate();
    auto out = open_out(path);
    out << "HD3DSPECS v1\n";
    out << "categories " << spec.num_categories << "\n";
    out << "points_per_box " << spec.points_per_box << "\n";
    out << "clutter_points " << spec.clutter_points << "\n";
    for (const auto& ty : spec.types) {
        out << "type " << ty.name << " objects " << ty.min_objects << " " << ty.max_objects
            << " region " << fmt(ty.region[0]) << " " << fmt(ty.region[1]) << " "
            << fmt(ty.region[2]) << " " << fmt(ty.region[3]) << "\n";
        if (ty.arrange != Arrangement::kAny) {
            const char* kind = ty.arrange == Arrangement::kCluster ? "cluster"
                               : ty.arrange == Arrangement::kLine  ? "line"
                                                                   : "spread";
            out << "arrange " << kind << " " << fmt(ty.arrange_param) << "\n";
        }
        for (const auto& cp : ty.categories) {
            out << "cat " << cp.category << " p " << fmt(cp.prob) << " size";
            for (int a = 0; a < 3; ++a) out << " " << fmt(cp.size.mean[a]);
            out << " spread";
            for (int a = 0; a < 3; ++a) out << " " << fmt(cp.size.spread[a]);
            out << "\n";
        }
    }
    for (const auto& group : spec.ambiguity_groups) {
        out << "ambiguity";
        for (int cat : group) out << " " << cat;
        out << "\n";
    }
}

PointScene generate_scene(const BenchmarkSpec& spec, int type_index,
                          const std::string& scene_id, uint64_t seed) {
    spec.validate();
    if (type_index < 0 || type_index >= int(spec.types.size()))
        throw std::out_of_range("generate_scene: type index out of range");
    const SceneTypeSpec& ty = spec.types[type_index];
    Rng rng(seed);

    const int count = ty.min_objects + int(rng.index(uint64_t(ty.max_objects - ty.min_objects + 1)));
    std::vector<geom::Box3D> boxes;
    int draws = 0;
    auto spend = [&]() {
        if (++draws > 1000)
            throw GenerationError("scene " + scene_id + ": placement failed after 1000 attempts");
    };
    // Sequential placement can paint itself into a corner, so after too many
    // rejected draws for one object the whole layout is discarded and redrawn
    // against the shared 1000-draw budget.
    while (int(boxes.size()) < count) {
        boxes.clear();
        // Frame for the center arrangement: a cluster anchor or a line.
        double cx = 0.0, cy = 0.0, dir_x = 1.0, dir_y = 0.0;
        if (ty.arrange == Arrangement::kCluster || ty.arrange == Arrangement::kLine) {
            cx = rng.uniform(ty.region[0], ty.region[1]);
            cy = rng.uniform(ty.region[2], ty.region[3]);
        }
        if (ty.arrange == Arrangement::kLine) {
            const double theta = rng.uniform(0.0, 3.14159265358979323846);
            dir_x = std::cos(theta);
            dir_y = std::sin(theta);
        }
        bool layout_ok = true;
        for (int i = 0; i < count && layout_ok; ++i) {
            bool placed = false;
            for (int attempt = 0; attempt < 120 && !placed; ++attempt) {
                spend();
                const double u = rng.uniform();
                const CategoryPrior* pick = &ty.categories.back();
                double cum = 0.0;
                for (const auto& cp : ty.categories) {
                    cum += cp.prob;
                    if (u < cum) {
                        pick = &cp;
                        break;
                    }
                }
                geom::Box3D box;
                box.category = pick->category;
                for (int a = 0; a < 3; ++a)
                    box.size[a] = pick->size.mean[a] + pick->size.spread[a] * rng.uniform(-1.0, 1.0);
                const double x_lo = std::max(ty.region[0], 0.5 * box.size[0]);
                const double x_hi = std::min(ty.region[1], 1.0 - 0.5 * box.size[0]);
                const double y_lo = std::max(ty.region[2], 0.5 * box.size[1]);
                const double y_hi = std::min(ty.region[3], 1.0 - 0.5 * box.size[1]);
                if (!(x_lo <= x_hi) || !(y_lo <= y_hi)) continue;
                switch (ty.arrange) {
                    case Arrangement::kCluster: {
                        // Uniform in the disc of radius param/2 around the
                        // anchor, so pairwise center distances stay <= param.
                        const double r = 0.5 * ty.arrange_param * std::sqrt(rng.uniform());
                        const double phi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
                        box.center[0] = cx + r * std::cos(phi);
                        box.center[1] = cy + r * std::sin(phi);
                        break;
                    }
                    case Arrangement::kLine: {
                        const double t = rng.uniform(-0.45, 0.45);
                        const double s = rng.uniform(-ty.arrange_param, ty.arrange_param);
                        box.center[0] = cx + t * dir_x - s * dir_y;
                        box.center[1] = cy + t * dir_y + s * dir_x;
                        break;
                    }
                    default:
                        box.center[0] = rng.uniform(x_lo, x_hi);
                        box.center[1] = rng.uniform(y_lo, y_hi);
                        break;
                }
                if (box.center[0] < x_lo || box.center[0] > x_hi || box.center[1] < y_lo ||
                    box.center[1] > y_hi)
                    continue;
                box.center[2] = 0.5 * box.size[2];  // boxes stand on the floor
                bool conflict = false;
                for (const auto& other : boxes) {
                    if (boxes_conflict(box, other, 0.02)) {
                        conflict = true;
                        break;
                    }
                    if (ty.arrange == Arrangement::kSpread) {
                        const double dx = box.center[0] - other.center[0];
                        const double dy = box.center[1] - other.center[1];
                        if (dx * dx + dy * dy < ty.arrange_param * ty.arrange_param)
                            conflict = true;
                    }
                    if (conflict) break;
                }
                if (conflict) continue;
                boxes.push_back(box);
                placed = true;
            }
            layout_ok = placed;
        }
    }

    const int total = count * spec.points_per_box + spec.clutter_points;
    if (total < 1)
        throw GenerationError("scene " + scene_id + ": no points (empty scene and no clutter)");
    Tensor pts(total, 3);
    int row = 0;
    for (const auto& box : boxes) {
        // Face picked proportional to area, then uniform inside the face.
        const double ax = box.size[1] * box.size[2];
        const double ay = box.size[0] * box.size[2];
        const double az = box.size[0] * box.size[1];
        const double area = 2.0 * (ax + ay + az);
        for (int p = 0; p < spec.points_per_box; ++p) {
            double pickf = rng.uniform(0.0, area);
            int axis = 2;
            double side = 1.0;
            for (int a = 0; a < 3; ++a) {
                const double fa = a == 0 ? ax : a == 1 ? ay : az;
                if (pickf < 2.0 * fa) {
                    axis = a;
                    side = pickf < fa ? -1.0 : 1.0;
                    break;
                }
                pickf -= 2.0 * fa;
            }
            double* q = pts.rowptr(row++);
            for (int a = 0; a < 3; ++a) {
                if (a == axis)
                    q[a] = box.center[a] + side * 0.5 * box.size[a];
                else
                    q[a] = box.center[a] + 0.5 * box.size[a] * rng.uniform(-1.0, 1.0);
            }
        }
    }
    for (int p = 0; p < spec.clutter_points; ++p) {
        const int surface = int(rng.index(5));  // floor plus four walls
        const double a = rng.uniform();
        const double b = rng.uniform();
        double* q = pts.rowptr(row++);
        switch (surface) {
            case 0: q[0] = a; q[1] = b; q[2] = 0.0; break;
            case 1: q[0] = 0.0; q[1] = a; q[2] = b; break;
            case 2: q[0] = 1.0; q[1] = a; q[2] = b; break;
            case 3: q[0] = a; q[1] = 0.0; q[2] = b; break;
            default: q[0] = a; q[1] = 1.0; q[2] = b; break;
        }
    }

    PointScene scene;
    scene.scene_id = scene_id;
    scene.scene_type = ty.name;
    scene.points = geom::PointSet(std::move(pts));
    scene.boxes = std::move(boxes);
    return scene;
}

void write_scene(const std::string& path, const PointScene& scene) {
    auto out = open_out(path);
    out << "HD3D v1\n";
    out << scene.scene_id << " " << scene.scene_type << " " << scene.points.count() << " "
        << scene.boxes.size() << "\n";
    for (int i = 0; i < scene.points.count(); ++i) {
        const double* p = scene.points.point(i);
        out << fmt(p[0]) << " " << fmt(p[1]) << " " << fmt(p[2]) << "\n";
    }
    for (const auto& box : scene.boxes) {
        out << fmt(box.center[0]) << " " << fmt(box.center[1]) << " " << fmt(box.center[2]) << " "
            << fmt(box.size[0]) << " " << fmt(box.size[1]) << " " << fmt(box.size[2]) << " "
            << box.category << "\n";
    }
}

PointScene read_scene(const std::string& path) {
    auto in = open_in(path);
    std::string line;
    int ln = 0;
    auto next = [&](const char* expect) {
        if (!std::getline(in, line)) fail(path, ln + 1, std::string("expected ") + expect);
        ++ln;
        return tokens(line);
    };
    auto header = next("header");
    if (header.size() != 2 || header[0] != "HD3D" || header[1] != "v1")
        fail(path, ln, "expected header 'HD3D v1'");
    auto meta = next("scene_id scene_type N M");
    if (meta.size() != 4) fail(path, ln, "expected 'scene_id scene_type N M'");
    PointScene scene;
    scene.scene_id = meta[0];
    scene.scene_type = meta[1];
    const int n = parse_int(meta[2], path, ln);
    const int m = parse_int(meta[3], path, ln);
    if (n < 1) fail(path, ln, "point count must be >= 1");
    if (m < 0) fail(path, ln, "negative box count");
    Tensor pts(n, 3);
    for (int i = 0; i < n; ++i) {
        auto t = next("point");
        if (t.size() != 3) fail(path, ln, "expected point 'x y z'");
        for (int a = 0; a < 3; ++a) pts.at(i, a) = parse_double(t[a], path, ln);
    }
    scene.points = geom::PointSet(std::move(pts));
    for (int i = 0; i < m; ++i) {
        auto t = next("box");
        if (t.size() != 7) fail(path, ln, "expected box 'cx cy cz dx dy dz category'");
        geom::Box3D box;
        for (int a = 0; a < 3; ++a) box.center[a] = parse_double(t[a], path, ln);
        for (int a = 0; a < 3; ++a) box.size[a] = parse_double(t[3 + a], path, ln);
        box.category = parse_int(t[6], path, ln);
        if (box.category < 0) fail(path, ln, "negative category");
        try {
            box.validate();
        } catch (const std::exception& e) {
            fail(path, ln, e.what());
        }
        scene.boxes.push_back(box);
    }
    return scene;
}

DatasetManifest build_dataset(const BenchmarkSpec& spec, int num_scenes, uint64_t seed,
                              const std::string& out_dir) {
    spec.validate();
    if (num_scenes < 1) throw ConfigError("build_dataset: num_scenes must be >= 1");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "scenes", ec);
    if (ec) throw IoError("cannot create " + out_dir + "/scenes: " + ec.message());

    DatasetManifest manifest;
    auto man_out = open_out(out_dir + "/manifest.txt");
    for (int i = 0; i < num_scenes; ++i) {
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "scene_%05d", i);
        const std::string id = idbuf;
        const uint64_t s = derive_seed(seed, uint64_t(i));
        const int type_index = int(s % spec.types.size());
        PointScene scene = generate_scene(spec, type_index, id, derive_seed(s, 1));
        const std::string rel = "scenes/" + id + ".txt";
        write_scene(out_dir + "/" + rel, scene);
        ManifestEntry entry{id, rel, scene.scene_type, int(scene.boxes.size())};
        man_out << entry.scene_id << " " << entry.path << " " << entry.scene_type << " "
                << entry.box_count << "\n";
        if (fnv1a(id) % 5 == 0)
            manifest.val_ids.push_back(id);
        else
            manifest.train_ids.push_back(id);
        manifest.entries.push_back(std::move(entry));
    }
    auto train_out = open_out(out_dir + "/train.txt");
    for (const auto& id : manifest.train_ids) train_out << id << "\n";
    auto val_out = open_out(out_dir + "/val.txt");
    for (const auto& id : manifest.val_ids) val_out << id << "\n";
    return manifest;
}

DatasetManifest read_manifest(const std::string& dataset_dir) {
    DatasetManifest manifest;
    {
        const std::string path = dataset_dir + "/manifest.txt";
        auto in = open_in(path);
        std::string line;
        int ln = 0;
        while (std::getline(in, line)) {
            ++ln;
            auto t = tokens(line);
            if (t.empty()) continue;
            if (t.size() != 4) fail(path, ln, "expected 'scene_id path scene_type box_count'");
            manifest.entries.push_back({t[0], t[1], t[2], parse_int(t[3], path, ln)});
        }
        if (manifest.entries.empty()) fail(path, 1, "empty manifest");
    }
    auto read_ids = [&](const std::string& name, std::vector<std::string>& out) {
        auto in = open_in(dataset_dir + "/" + name);
        std::string line;
        while (std::getline(in, line)) {
            auto t = tokens(line);
            if (t.size() == 1) out.push_back(t[0]);
        }
    };
    read_ids("train.txt", manifest.train_ids);
    read_ids("val.txt", manifest.val_ids);
    return manifest;
}

}  // namespace scenedet::data
