#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "t2m/mesh.hpp"
#include "t2m/scan.hpp"

namespace t2m {

// ---- procedural shapes ------------------------------------------------------

IndexedFaceSet make_box(const Vec3& lo, const Vec3& hi);
IndexedFaceSet make_lbracket(double arm_a, double arm_b, double thickness, double depth);
IndexedFaceSet make_table(double width, double depth, double height, double top_thickness,
                          double leg_thickness);
IndexedFaceSet make_cylinder(double radius, double height, int segments);
IndexedFaceSet make_icosphere(int subdivisions);  // 12 * 4^s - ... verts (642 at s=3)

// Largest extent scaled to 1, centered at (0.5, 0.5, 0.5).
IndexedFaceSet normalize_unit_cube(const IndexedFaceSet& mesh);

struct CorpusShape {
    IndexedFaceSet mesh;  // unit-cube frame
    std::string cls;
    std::string name;
};

// Seeded procedural corpus cycling box / lbracket / table / cylinder with
// jittered dimensions.
std::vector<CorpusShape> builtin_corpus(int count, uint64_t seed);

// ---- dataset on disk ---------------------------------------------------------

struct DatasetEntry {
    std::string tsdf;    // relative to the dataset directory
    std::string target;  // relative OBJ path
    std::string cls;
    std::string split;   // train / val / test
    std::string name;
};

struct DatasetIndex {
    std::vector<DatasetEntry> entries;

    void save(const std::string& path) const;
    static DatasetIndex load(const std::string& path);
    // Throws if a file appears in two splits.
    void validate() const;
    std::vector<int> split_indices(const std::string& split) const;
};

struct GenDataOptions {
    std::string shapes_dir;   // empty -> builtin corpus
    int builtin_count = 50;
    std::string out_dir;
    int views = 1;            // depth images per trajectory
    int trajectories = 2;     // scan augmentation per shape
    int target_vertices = 100;
    uint64_t seed = 7;
    double train_frac = 0.7;
    double val_frac = 0.15;   // remainder is test
};

struct GenDataResult {
    DatasetIndex index;
    int shapes_written = 0;
    int skipped = 0;
};

GenDataResult generate_dataset(const GenDataOptions& opt);

struct LoadedSample {
    TsdfVolume tsdf;
    IndexedFaceSet target;
    std::string cls;
    std::string name;
};

std::vector<LoadedSample> load_split(const DatasetIndex& index, const std::string& base_dir,
                                     const std::string& split);

}  // namespace t2m
