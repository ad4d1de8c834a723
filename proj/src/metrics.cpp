#include "t2m/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>

#include "t2m/point_grid.hpp"

namespace t2m {

namespace {

std::vector<Vec3> sample_positions(const std::vector<SurfaceSample>& s) {
    std::vector<Vec3> out(s.size());
    for (size_t i = 0; i < s.size(); ++i) out[i] = s[i].position;
    return out;
}

double directed_mean_distance(const std::vector<Vec3>& from, const PointGrid& to_grid) {
    double acc = 0.0;
    for (const Vec3& p : from) acc += (p - to_grid.points()[to_grid.nearest(p)]).norm();
    return acc / static_cast<double>(from.size());
}

double directed_normal_similarity(const std::vector<SurfaceSample>& from,
                                  const std::vector<SurfaceSample>& to, const PointGrid& to_grid,
                                  double window) {
    double acc = 0.0;
    for (const auto& s : from) {
        const int nn = to_grid.nearest(s.position);
        const Vec3& anchor = to[nn].position;
        double best = std::abs(s.normal.dot(to[nn].normal));
        for (int idx : to_grid.within(anchor, window))
            best = std::max(best, std::abs(s.normal.dot(to[idx].normal)));
        acc += std::min(best, 1.0);
    }
    return acc / static_cast<double>(from.size());
}

}  // namespace

// Both meshes draw with the same seed: comparing a mesh against itself pins
// the two sample sets together and the score reports 0 / 1 exactly, instead
// of the O(sqrt(area/k)) spacing noise of independent samplings.
double eval_mesh_distance(const IndexedFaceSet& a, const IndexedFaceSet& b, int k, uint64_t seed) {
    if (a.faces.empty() || b.faces.empty())
        throw std::runtime_error("eval_mesh_distance: empty mesh");
    const std::vector<Vec3> pa = sample_positions(sample_surface(a, k, seed));
    const std::vector<Vec3> pb = sample_positions(sample_surface(b, k, seed));
    const PointGrid ga(pa), gb(pb);
    return 0.5 * (directed_mean_distance(pa, gb) + directed_mean_distance(pb, ga));
}

double eval_normal_similarity(const IndexedFaceSet& a, const IndexedFaceSet& b, int k,
                              uint64_t seed, double window) {
    if (a.faces.empty() || b.faces.empty())
        throw std::runtime_error("eval_normal_similarity: empty mesh");
    const std::vector<SurfaceSample> sa = sample_surface(a, k, seed);
    const std::vector<SurfaceSample> sb = sample_surface(b, k, seed);
    const PointGrid ga(sample_positions(sa)), gb(sample_positions(sb));
    return 0.5 * (directed_normal_similarity(sa, sb, gb, window) +
                  directed_normal_similarity(sb, sa, ga, window));
}

std::vector<EvalReport::Aggregate> EvalReport::per_class() const {
    std::map<std::string, Aggregate> by_class;
    for (const EvalRow& r : rows) {
        Aggregate& a = by_class[r.cls];
        a.cls = r.cls;
        ++a.count;
        a.dist += r.dist;
        a.nsim += r.nsim;
    }
    std::vector<Aggregate> out;
    for (auto& [cls, a] : by_class) {
        a.dist /= a.count;
        a.nsim /= a.count;
        out.push_back(a);
    }
    return out;
}

EvalReport::Aggregate EvalReport::average() const {
    Aggregate a;
    a.cls = "average";
    for (const EvalRow& r : rows) {
        ++a.count;
        a.dist += r.dist;
        a.nsim += r.nsim;
    }
    if (a.count > 0) {
        a.dist /= a.count;
        a.nsim /= a.count;
    }
    return a;
}

void EvalReport::write_csv(std::ostream& out) const {
    out << "name,class,dist,nsim\n";
    char buf[64];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.6g", v);
        return std::string(buf);
    };
    for (const EvalRow& r : rows)
        out << r.name << ',' << r.cls << ',' << fmt(r.dist) << ',' << fmt(r.nsim) << '\n';
    for (const Aggregate& a : per_class())
        out << "class:" << a.cls << ',' << a.cls << ',' << fmt(a.dist) << ',' << fmt(a.nsim)
            << '\n';
    const Aggregate avg = average();
    out << "average,all," << fmt(avg.dist) << ',' << fmt(avg.nsim) << '\n';
}

}  // namespace t2m
