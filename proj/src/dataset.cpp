#include "t2m/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace t2m {

IndexedFaceSet make_box(const Vec3& lo, const Vec3& hi) {
    IndexedFaceSet m;
    for (int i = 0; i < 8; ++i)
        m.vertices.push_back({i & 1 ? hi.x : lo.x, i & 2 ? hi.y : lo.y, i & 4 ? hi.z : lo.z});
    // Two triangles per face, outward orientation.
    const int quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4},
                             {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
    for (const auto& q : quads) {
        m.faces.push_back({q[0], q[1], q[2]});
        m.faces.push_back({q[0], q[2], q[3]});
    }
    return m;
}

namespace {

void append(IndexedFaceSet& dst, const IndexedFaceSet& src) {
    const int off = dst.vertex_count();
    dst.vertices.insert(dst.vertices.end(), src.vertices.begin(), src.vertices.end());
    for (const auto& f : src.faces) dst.faces.push_back({f[0] + off, f[1] + off, f[2] + off});
}

}  // namespace

IndexedFaceSet make_lbracket(double arm_a, double arm_b, double thickness, double depth) {
    IndexedFaceSet m = make_box({0, 0, 0}, {arm_a, thickness, depth});
    append(m, make_box({0, thickness, 0}, {thickness, arm_b, depth}));
    return m;
}

IndexedFaceSet make_table(double width, double depth, double height, double top_thickness,
                          double leg_thickness) {
    IndexedFaceSet m =
        make_box({0, 0, height - top_thickness}, {width, depth, height});
    const double lt = leg_thickness;
    const double legs[4][2] = {{0, 0}, {width - lt, 0}, {0, depth - lt}, {width - lt, depth - lt}};
    for (const auto& l : legs)
        append(m, make_box({l[0], l[1], 0}, {l[0] + lt, l[1] + lt, height - top_thickness}));
    return m;
}

IndexedFaceSet make_cylinder(double radius, double height, int segments) {
    IndexedFaceSet m;
    for (int ring = 0; ring < 2; ++ring) {
        const double z = ring ? height : 0.0;
        for (int i = 0; i < segments; ++i) {
            const double a = 2.0 * M_PI * i / segments;
            m.vertices.push_back({radius * std::cos(a), radius * std::sin(a), z});
        }
    }
    for (int i = 0; i < segments; ++i) {
        const int j = (i + 1) % segments;
        m.faces.push_back({i, j, segments + j});
        m.faces.push_back({i, segments + j, segments + i});
    }
    for (int i = 1; i + 1 < segments; ++i) {
        m.faces.push_back({0, i + 1, i});                              // bottom cap
        m.faces.push_back({segments, segments + i, segments + i + 1});  // top cap
    }
    return m;
}

IndexedFaceSet make_icosphere(int subdivisions) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    IndexedFaceSet m;
    m.vertices = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0}, {0, -1, t},  {0, 1, t},
                  {0, -1, -t}, {0, 1, -t}, {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
    for (Vec3& v : m.vertices) v = v.normalized();
    m.faces = {{0, 11, 5},  {0, 5, 1},   {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
               {1, 5, 9},   {5, 11, 4},  {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
               {3, 9, 4},   {3, 4, 2},   {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
               {4, 9, 5},   {2, 4, 11},  {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};

    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            const int idx = m.vertex_count();
            m.vertices.push_back(((m.vertices[a] + m.vertices[b]) * 0.5).normalized());
            midpoint[key] = idx;
            return idx;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(m.faces.size() * 4);
        for (const auto& f : m.faces) {
            const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        m.faces = std::move(next);
    }
    return m;
}

IndexedFaceSet normalize_unit_cube(const IndexedFaceSet& mesh) {
    const Aabb box = mesh.bounds();
    if (mesh.empty() || box.max_extent() <= 0.0)
        throw std::runtime_error("normalize_unit_cube: mesh has zero extent");
    const double s = 1.0 / box.max_extent();
    const Vec3 c = box.center();
    IndexedFaceSet out = mesh;
    for (Vec3& v : out.vertices) v = (v - c) * s + Vec3{0.5, 0.5, 0.5};
    return out;
}

std::vector<CorpusShape> builtin_corpus(int count, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<CorpusShape> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        CorpusShape s;
        switch (i % 4) {
            case 0: {
                s.cls = "box";
                const Vec3 e{0.5 + uni(rng), 0.5 + uni(rng), 0.5 + uni(rng)};
                s.mesh = make_box({0, 0, 0}, e);
                break;
            }
            case 1: {
                s.cls = "lbracket";
                const double a = 0.8 + 0.6 * uni(rng), b = 0.8 + 0.6 * uni(rng);
                const double th = 0.2 + 0.15 * uni(rng);
                s.mesh = make_lbracket(a, b, th, 0.3 + 0.4 * uni(rng));
                break;
            }
            case 2: {
                s.cls = "table";
                const double w = 0.9 + 0.5 * uni(rng), d = 0.7 + 0.5 * uni(rng);
                const double h = 0.6 + 0.4 * uni(rng);
                s.mesh = make_table(w, d, h, 0.08 + 0.06 * uni(rng), 0.08 + 0.06 * uni(rng));
                break;
            }
            default: {
                s.cls = "cylinder";
                const int segs = 8 + static_cast<int>(uni(rng) * 8.0);
                s.mesh = make_cylinder(0.3 + 0.25 * uni(rng), 0.8 + 0.6 * uni(rng), segs);
                break;
            }
        }
        s.mesh = normalize_unit_cube(s.mesh);
        s.name = s.cls + std::to_string(i);
        out.push_back(std::move(s));
    }
    return out;
}

// ---- dataset index -----------------------------------------------------------

void DatasetIndex::save(const std::string& path) const {
    json j;
    j["version"] = 1;
    j["entries"] = json::array();
    for (const DatasetEntry& e : entries)
        j["entries"].push_back({{"tsdf", e.tsdf},
                                {"target", e.target},
                                {"class", e.cls},
                                {"split", e.split},
                                {"name", e.name}});
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write dataset index: " + path);
    out << j.dump(1) << "\n";
}

DatasetIndex DatasetIndex::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset index: " + path);
    json j;
    in >> j;
    DatasetIndex idx;
    for (const auto& e : j.at("entries"))
        idx.entries.push_back({e.at("tsdf"), e.at("target"), e.at("class"), e.at("split"),
                               e.value("name", std::string{})});
    idx.validate();
    return idx;
}

void DatasetIndex::validate() const {
    std::map<std::string, std::string> seen;
    for (const DatasetEntry& e : entries) {
        const auto [it, inserted] = seen.emplace(e.tsdf, e.split);
        if (!inserted && it->second != e.split)
            throw std::runtime_error("dataset file in two splits: " + e.tsdf);
    }
}

std::vector<int> DatasetIndex::split_indices(const std::string& split) const {
    std::vector<int> out;
    for (size_t i = 0; i < entries.size(); ++i)
        if (entries[i].split == split) out.push_back(static_cast<int>(i));
    return out;
}

GenDataResult generate_dataset(const GenDataOptions& opt) {
    if (opt.out_dir.empty()) throw std::runtime_error("generate_dataset: no output directory");
    fs::create_directories(fs::path(opt.out_dir) / "shapes");
    fs::create_directories(fs::path(opt.out_dir) / "tsdf");

    std::vector<CorpusShape> shapes;
    GenDataResult result;
    if (opt.shapes_dir.empty()) {
        shapes = builtin_corpus(opt.builtin_count, opt.seed);
    } else {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(opt.shapes_dir))
            if (entry.path().extension() == ".obj") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const fs::path& f : files) {
            try {
                CorpusShape s;
                s.mesh = normalize_unit_cube(read_obj_file(f.string()));
                s.cls = "external";
                s.name = f.stem().string();
                shapes.push_back(std::move(s));
            } catch (const std::exception& e) {
                std::cerr << "warning: skipping " << f << ": " << e.what() << "\n";
                ++result.skipped;
            }
        }
    }

    const CameraIntrinsics intr = CameraIntrinsics::from_fov(128, 128, 60.0 * M_PI / 180.0);
    std::mt19937_64 split_rng(opt.seed ^ 0x5eedULL);
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    for (size_t si = 0; si < shapes.size(); ++si) {
        const CorpusShape& shape = shapes[si];
        const std::string target_rel = "shapes/" + shape.name + ".obj";
        const IndexedFaceSet target = decimate(shape.mesh, opt.target_vertices);
        write_obj_file((fs::path(opt.out_dir) / target_rel).string(), target);

        const double u = uni(split_rng);
        const std::string split = u < opt.train_frac              ? "train"
                                  : u < opt.train_frac + opt.val_frac ? "val"
                                                                      : "test";

        auto [grid_mesh, tf] = normalize_to_grid(shape.mesh);
        (void)grid_mesh;
        for (int traj = 0; traj < opt.trajectories; ++traj) {
            const uint64_t cam_seed = opt.seed * 1000003ULL + si * 31ULL + traj;
            const std::vector<RigidPose> poses = synthesize_cameras(shape.mesh, opt.views, cam_seed);
            std::vector<DepthImage> depths;
            depths.reserve(poses.size());
            for (const RigidPose& pose : poses)
                depths.push_back(render_depth(shape.mesh, intr, pose));
            const TsdfVolume vol = fuse_tsdf(depths, tf);

            const std::string tsdf_rel =
                "tsdf/" + shape.name + "_t" + std::to_string(traj) + ".tsdf";
            write_tsdf_file((fs::path(opt.out_dir) / tsdf_rel).string(), vol);
            result.index.entries.push_back({tsdf_rel, target_rel, shape.cls, split, shape.name});
        }
        ++result.shapes_written;
    }

    result.index.validate();
    result.index.save((fs::path(opt.out_dir) / "index.json").string());
    return result;
}

std::vector<LoadedSample> load_split(const DatasetIndex& index, const std::string& base_dir,
                                     const std::string& split) {
    std::vector<LoadedSample> out;
    for (int i : index.split_indices(split)) {
        const DatasetEntry& e = index.entries[i];
        LoadedSample s;
        s.tsdf = read_tsdf_file((fs::path(base_dir) / e.tsdf).string());
        s.target = read_obj_file((fs::path(base_dir) / e.target).string());
        s.cls = e.cls;
        s.name = e.name + "_" + fs::path(e.tsdf).stem().string();
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace t2m
