#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "t2m/mesh.hpp"

namespace t2m {

// Symmetric mean unsquared nearest-neighbor distance between k area-uniform
// samples of each mesh (0.5 * (mean_a->b + mean_b->a)), in mesh units.
double eval_mesh_distance(const IndexedFaceSet& a, const IndexedFaceSet& b, int k, uint64_t seed);

// Bidirectional normal similarity in [0,1]: for each sample, the best |cos|
// of normal angle among the other mesh's samples within `window` of the
// nearest point; averaged and symmetrized (0.5 rule).
double eval_normal_similarity(const IndexedFaceSet& a, const IndexedFaceSet& b, int k,
                              uint64_t seed, double window = 0.03);

struct EvalRow {
    std::string name;
    std::string cls;
    double dist = 0.0;
    double nsim = 0.0;
};

// Per-sample rows plus per-class and overall Dist/NSim aggregates.
struct EvalReport {
    std::vector<EvalRow> rows;

    struct Aggregate {
        std::string cls;
        int count = 0;
        double dist = 0.0;
        double nsim = 0.0;
    };
    std::vector<Aggregate> per_class() const;
    Aggregate average() const;

    // CSV: header `name,class,dist,nsim`, one row per sample, then summary
    // rows (`class:<c>` / `average`).
    void write_csv(std::ostream& out) const;
};

}  // namespace t2m
