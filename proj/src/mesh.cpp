#include "t2m/mesh.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace t2m {

Aabb IndexedFaceSet::bounds() const {
    Aabb box;
    for (const Vec3& v : vertices) box.extend(v);
    return box;
}

double IndexedFaceSet::total_area() const {
    double area = 0.0;
    for (const auto& f : faces) {
        const Vec3& a = vertices[f[0]];
        const Vec3& b = vertices[f[1]];
        const Vec3& c = vertices[f[2]];
        area += 0.5 * (b - a).cross(c - a).norm();
    }
    return area;
}

std::vector<std::pair<int, int>> IndexedFaceSet::edge_set() const {
    std::set<std::pair<int, int>> edges;
    for (const auto& f : faces) {
        for (int e = 0; e < 3; ++e) {
            int i = f[e], j = f[(e + 1) % 3];
            edges.emplace(std::min(i, j), std::max(i, j));
        }
    }
    return {edges.begin(), edges.end()};
}

void IndexedFaceSet::validate() const {
    const int n = vertex_count();
    for (size_t fi = 0; fi < faces.size(); ++fi) {
        const auto& f = faces[fi];
        for (int k = 0; k < 3; ++k) {
            if (f[k] < 0 || f[k] >= n)
                throw std::runtime_error("face " + std::to_string(fi) + " references vertex " +
                                         std::to_string(f[k]) + " out of range [0," +
                                         std::to_string(n) + ")");
        }
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
            throw std::runtime_error("face " + std::to_string(fi) + " repeats a vertex index");
    }
}

FaceFeatures face_features(const Vec3& p0, const Vec3& p1, const Vec3& p2) {
    // Cyclic rotation to put the lexicographically smallest vertex first.
    std::array<Vec3, 3> v{p0, p1, p2};
    int s = 0;
    if (lex_less(v[1], v[s])) s = 1;
    if (lex_less(v[2], v[s])) s = 2;
    const Vec3 a = v[s], b = v[(s + 1) % 3], c = v[(s + 2) % 3];

    FaceFeatures out;
    out.centroid = {ordered_sum3(a.x, b.x, c.x) / 3.0, ordered_sum3(a.y, b.y, c.y) / 3.0,
                    ordered_sum3(a.z, b.z, c.z) / 3.0};

    const Vec3 cr = (b - a).cross(c - a);
    const double cr_norm = cr.norm();
    out.area = 0.5 * cr_norm;
    if (cr_norm > 0.0) {
        out.normal = cr / cr_norm;
        // Side lengths multiplied in sorted order: the radius is bitwise
        // invariant under any vertex permutation.
        std::array<double, 3> sides{(b - a).norm(), (c - b).norm(), (a - c).norm()};
        std::sort(sides.begin(), sides.end());
        out.radius =
            std::min(sides[0] * sides[1] * sides[2] / (4.0 * out.area), kDegenerateRadiusCap);
    } else {
        out.degenerate = true;
        out.normal = Vec3{};
        out.radius = kDegenerateRadiusCap;
    }
    return out;
}

namespace {

std::vector<double> face_area_cdf(const IndexedFaceSet& mesh, double* total_out) {
    std::vector<double> cdf(mesh.faces.size());
    double acc = 0.0;
    for (size_t i = 0; i < mesh.faces.size(); ++i) {
        const auto& f = mesh.faces[i];
        const Vec3& a = mesh.vertices[f[0]];
        const Vec3& b = mesh.vertices[f[1]];
        const Vec3& c = mesh.vertices[f[2]];
        acc += 0.5 * (b - a).cross(c - a).norm();
        cdf[i] = acc;
    }
    *total_out = acc;
    return cdf;
}

std::array<double, 3> uniform_barycentric(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double r1 = std::sqrt(uni(rng));
    const double r2 = uni(rng);
    return {1.0 - r1, r1 * (1.0 - r2), r1 * r2};
}

}  // namespace

std::vector<BarycentricSample> sample_surface_barycentric(const IndexedFaceSet& mesh, int k,
                                                          uint64_t seed) {
    double total = 0.0;
    std::vector<double> cdf = face_area_cdf(mesh, &total);
    if (total <= 0.0) throw std::runtime_error("sample_surface: mesh has zero total area");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, total);
    std::vector<BarycentricSample> out(k);
    for (int i = 0; i < k; ++i) {
        const double u = uni(rng);
        const int face =
            static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        out[i].face = std::min(face, static_cast<int>(cdf.size()) - 1);
        out[i].bary = uniform_barycentric(rng);
    }
    return out;
}

std::vector<BarycentricSample> sample_faces_weighted(const IndexedFaceSet& mesh,
                                                     const std::vector<double>& face_weights,
                                                     int k, uint64_t seed) {
    if (face_weights.size() != mesh.faces.size())
        throw std::runtime_error("sample_faces_weighted: weight count mismatch");
    std::vector<double> cdf(face_weights.size());
    double acc = 0.0;
    for (size_t i = 0; i < face_weights.size(); ++i) {
        acc += std::max(0.0, face_weights[i]);
        cdf[i] = acc;
    }
    if (acc <= 0.0) throw std::runtime_error("sample_faces_weighted: all weights zero");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, acc);
    std::vector<BarycentricSample> out(k);
    for (int i = 0; i < k; ++i) {
        const double u = uni(rng);
        const int face =
            static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        out[i].face = std::min(face, static_cast<int>(cdf.size()) - 1);
        out[i].bary = uniform_barycentric(rng);
    }
    return out;
}

std::vector<SurfaceSample> sample_surface(const IndexedFaceSet& mesh, int k, uint64_t seed) {
    std::vector<BarycentricSample> draws = sample_surface_barycentric(mesh, k, seed);
    std::vector<SurfaceSample> out(draws.size());
    for (size_t i = 0; i < draws.size(); ++i) {
        const auto& f = mesh.faces[draws[i].face];
        const Vec3& a = mesh.vertices[f[0]];
        const Vec3& b = mesh.vertices[f[1]];
        const Vec3& c = mesh.vertices[f[2]];
        const auto& w = draws[i].bary;
        out[i].position = a * w[0] + b * w[1] + c * w[2];
        out[i].normal = (b - a).cross(c - a).normalized();
        out[i].face = draws[i].face;
    }
    return out;
}

namespace {

// Plane quadric accumulator (Garland–Heckbert style, 3x3 system only).
struct Quadric {
    double a[6] = {0, 0, 0, 0, 0, 0};  // symmetric upper triangle of A
    Vec3 b;
    double count = 0.0;
    Vec3 mean;

    void add_plane(const Vec3& n, double d) {
        a[0] += n.x * n.x; a[1] += n.x * n.y; a[2] += n.x * n.z;
        a[3] += n.y * n.y; a[4] += n.y * n.z; a[5] += n.z * n.z;
        b += n * (-d);
    }
    void add_point(const Vec3& p) {
        mean += p;
        count += 1.0;
    }

    // Solve A x = b; fall back to the cluster mean when near-singular.
    Vec3 solve() const {
        const Vec3 fallback = count > 0 ? mean / count : Vec3{};
        const double m[9] = {a[0], a[1], a[2], a[1], a[3], a[4], a[2], a[4], a[5]};
        const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) -
                           m[1] * (m[3] * m[8] - m[5] * m[6]) +
                           m[2] * (m[3] * m[7] - m[4] * m[6]);
        const double trace = a[0] + a[3] + a[5];
        if (std::abs(det) < 1e-9 * std::max(1.0, trace * trace * trace)) return fallback;
        const double inv = 1.0 / det;
        Vec3 x;
        x.x = inv * (b.x * (m[4] * m[8] - m[5] * m[7]) - m[1] * (b.y * m[8] - m[5] * b.z) +
                     m[2] * (b.y * m[7] - m[4] * b.z));
        x.y = inv * (m[0] * (b.y * m[8] - m[5] * b.z) - b.x * (m[3] * m[8] - m[5] * m[6]) +
                     m[2] * (m[3] * b.z - b.y * m[6]));
        x.z = inv * (m[0] * (m[4] * b.z - b.y * m[7]) - m[1] * (m[3] * b.z - b.y * m[6]) +
                     b.x * (m[3] * m[7] - m[4] * m[6]));
        // Reject solutions that fly far from the cluster (ill-conditioned planes).
        if ((x - fallback).norm() > 1.0 * std::max(1.0, fallback.norm())) return fallback;
        return x;
    }
};

struct CellKey {
    int64_t x, y, z;
    bool operator<(const CellKey& o) const {
        if (x != o.x) return x < o.x;
        if (y != o.y) return y < o.y;
        return z < o.z;
    }
};

int cluster_count(const IndexedFaceSet& mesh, const Aabb& box, double cell, bool used_only,
                  const std::vector<char>& used) {
    std::set<CellKey> cells;
    for (int i = 0; i < mesh.vertex_count(); ++i) {
        if (used_only && !used[i]) continue;
        const Vec3 g = (mesh.vertices[i] - box.lo) / cell;
        cells.insert({static_cast<int64_t>(std::floor(g.x)), static_cast<int64_t>(std::floor(g.y)),
                      static_cast<int64_t>(std::floor(g.z))});
    }
    return static_cast<int>(cells.size());
}

}  // namespace

IndexedFaceSet decimate(const IndexedFaceSet& mesh, int target_vertices) {
    if (target_vertices < 4) throw std::runtime_error("decimate: target must be >= 4");
    if (mesh.vertex_count() <= target_vertices) return mesh;

    // Isolated vertices don't count toward the budget.
    std::vector<char> used(mesh.vertex_count(), 0);
    for (const auto& f : mesh.faces)
        for (int k = 0; k < 3; ++k) used[f[k]] = 1;

    const Aabb box = mesh.bounds();
    const double diag = std::max(box.diagonal(), 1e-12);

    // Binary search the finest cell size whose cluster count fits the budget.
    double lo = diag / (8.0 * std::cbrt(static_cast<double>(target_vertices)));
    double hi = diag;
    while (cluster_count(mesh, box, lo, true, used) > target_vertices && lo < hi) lo *= 1.3;
    double cell = lo;
    for (int iter = 0; iter < 40; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (cluster_count(mesh, box, mid, true, used) <= target_vertices) {
            hi = mid;
            cell = mid;
        } else {
            lo = mid;
        }
    }

    std::map<CellKey, int> cell_to_cluster;
    std::vector<int> vertex_cluster(mesh.vertex_count(), -1);
    std::vector<Quadric> quadrics;
    for (int i = 0; i < mesh.vertex_count(); ++i) {
        if (!used[i]) continue;
        const Vec3 g = (mesh.vertices[i] - box.lo) / cell;
        const CellKey key{static_cast<int64_t>(std::floor(g.x)),
                          static_cast<int64_t>(std::floor(g.y)),
                          static_cast<int64_t>(std::floor(g.z))};
        auto [it, inserted] = cell_to_cluster.emplace(key, static_cast<int>(quadrics.size()));
        if (inserted) quadrics.emplace_back();
        vertex_cluster[i] = it->second;
        quadrics[it->second].add_point(mesh.vertices[i]);
    }

    for (const auto& f : mesh.faces) {
        const Vec3& a = mesh.vertices[f[0]];
        const Vec3& b = mesh.vertices[f[1]];
        const Vec3& c = mesh.vertices[f[2]];
        const Vec3 n = (b - a).cross(c - a);
        const double area = 0.5 * n.norm();
        if (area <= 0.0) continue;
        const Vec3 un = n.normalized();
        const double d = -un.dot(a);
        for (int k = 0; k < 3; ++k) quadrics[vertex_cluster[f[k]]].add_plane(un * area, d * area);
    }

    IndexedFaceSet out;
    out.vertices.reserve(quadrics.size());
    for (const Quadric& q : quadrics) out.vertices.push_back(q.solve());

    std::set<std::array<int, 3>> seen;
    for (const auto& f : mesh.faces) {
        std::array<int, 3> g{vertex_cluster[f[0]], vertex_cluster[f[1]], vertex_cluster[f[2]]};
        if (g[0] == g[1] || g[1] == g[2] || g[0] == g[2]) continue;
        std::array<int, 3> key = g;
        std::sort(key.begin(), key.end());
        if (seen.insert(key).second) out.faces.push_back(g);
    }
    return out;
}

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    // Ericson, Real-Time Collision Detection, closest point on triangle.
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return (p - a).norm();

    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return (p - b).norm();

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const double v = d1 / (d1 - d3);
        return (p - (a + ab * v)).norm();
    }

    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return (p - c).norm();

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        const double w = d2 / (d2 - d6);
        return (p - (a + ac * w)).norm();
    }

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm();
    }

    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom, w = vc * denom;
    return (p - (a + ab * v + ac * w)).norm();
}

double point_mesh_distance(const Vec3& p, const IndexedFaceSet& mesh) {
    double best = std::numeric_limits<double>::max();
    for (const auto& f : mesh.faces) {
        best = std::min(best, point_triangle_distance(p, mesh.vertices[f[0]],
                                                      mesh.vertices[f[1]], mesh.vertices[f[2]]));
    }
    return best;
}

IndexedFaceSet read_obj(std::istream& in) {
    IndexedFaceSet mesh;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            Vec3 v;
            if (!(ss >> v.x >> v.y >> v.z))
                throw ObjParseError(line_no, "malformed vertex line " + std::to_string(line_no));
            mesh.vertices.push_back(v);
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string tok;
            while (ss >> tok) {
                // Accept v, v/vt, v//vn, v/vt/vn references; only v is kept.
                const size_t slash = tok.find('/');
                const std::string head = slash == std::string::npos ? tok : tok.substr(0, slash);
                int v = 0;
                try {
                    v = std::stoi(head);
                } catch (const std::exception&) {
                    throw ObjParseError(line_no,
                                        "malformed face index on line " + std::to_string(line_no));
                }
                // OBJ is 1-based; negatives reference from the end.
                const int n = mesh.vertex_count();
                const int resolved = v > 0 ? v - 1 : n + v;
                if (resolved < 0 || resolved >= n)
                    throw ObjParseError(line_no, "face index " + std::to_string(v) +
                                                     " out of range on line " +
                                                     std::to_string(line_no));
                idx.push_back(resolved);
            }
            if (idx.size() < 3)
                throw ObjParseError(line_no,
                                    "face with fewer than 3 vertices on line " +
                                        std::to_string(line_no));
            // Fan-triangulate polygons.
            for (size_t k = 2; k < idx.size(); ++k)
                mesh.faces.push_back({idx[0], idx[k - 1], idx[k]});
        }
        // Other tags (vn, vt, usemtl, ...) ignored.
    }
    return mesh;
}

IndexedFaceSet read_obj_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open OBJ file: " + path);
    return read_obj(in);
}

void write_obj(std::ostream& out, const IndexedFaceSet& mesh) {
    char buf[160];
    for (const Vec3& v : mesh.vertices) {
        std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", v.x, v.y, v.z);
        out << buf;
    }
    for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

void write_obj_file(const std::string& path, const IndexedFaceSet& mesh) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open OBJ file for writing: " + path);
    write_obj(out, mesh);
}

}  // namespace t2m
