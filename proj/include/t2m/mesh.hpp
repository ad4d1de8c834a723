#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "t2m/geometry.hpp"

namespace t2m {

struct IndexedFaceSet {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;

    int vertex_count() const { return static_cast<int>(vertices.size()); }
    int face_count() const { return static_cast<int>(faces.size()); }
    bool empty() const { return vertices.empty(); }

    Aabb bounds() const;
    double total_area() const;
    // Unordered (i<j) edge list derived from the faces.
    std::vector<std::pair<int, int>> edge_set() const;
    // Throws if a face index is out of range or a face repeats an index.
    void validate() const;
};

// 8-dim dual-node descriptor of a candidate triangle.
struct FaceFeatures {
    Vec3 centroid;
    Vec3 normal;      // zero vector when degenerate
    double area = 0.0;
    double radius = 0.0;  // circumradius, capped for degenerate triangles
    bool degenerate = false;

    std::array<double, 8> as_array() const {
        return {centroid.x, centroid.y, centroid.z, normal.x, normal.y, normal.z, area, radius};
    }
};

// Radius cap for collinear/degenerate triangles so features stay finite.
inline constexpr double kDegenerateRadiusCap = 1e3;

// Rotates the triangle so the lexicographically smallest vertex comes first,
// preserving the stored cyclic orientation, then computes centroid / unit
// normal / area / circumradius. Arithmetic is order-canonical: any cyclic
// permutation of the inputs produces bitwise identical output.
FaceFeatures face_features(const Vec3& p0, const Vec3& p1, const Vec3& p2);

struct SurfaceSample {
    Vec3 position;
    Vec3 normal;  // face normal of the sampled triangle
    int face = 0;
};

// k points drawn area-proportionally across faces, uniform barycentric within
// each face. Throws on zero total area.
std::vector<SurfaceSample> sample_surface(const IndexedFaceSet& mesh, int k, uint64_t seed);

// Same draw, but also records the barycentric coordinates (differentiable
// sampling needs them fixed per call).
struct BarycentricSample {
    int face = 0;
    std::array<double, 3> bary{};
};
std::vector<BarycentricSample> sample_surface_barycentric(const IndexedFaceSet& mesh, int k,
                                                          uint64_t seed);
// Face selection with externally supplied per-face weights (e.g. keep
// probability times area); weights must be non-negative with a positive sum.
std::vector<BarycentricSample> sample_faces_weighted(const IndexedFaceSet& mesh,
                                                     const std::vector<double>& face_weights,
                                                     int k, uint64_t seed);

// Vertex-clustering decimation with quadric position snapping. Output has at
// most target_vertices vertices; meshes already at or under target are
// returned unchanged. Isolated vertices are dropped.
IndexedFaceSet decimate(const IndexedFaceSet& mesh, int target_vertices);

// Exact point-to-triangle Euclidean distance.
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);
// Min over all faces; brute force, used for label generation on small meshes.
double point_mesh_distance(const Vec3& p, const IndexedFaceSet& mesh);

struct ObjParseError : std::runtime_error {
    int line;
    ObjParseError(int line_, const std::string& what) : std::runtime_error(what), line(line_) {}
};

IndexedFaceSet read_obj(std::istream& in);
IndexedFaceSet read_obj_file(const std::string& path);
void write_obj(std::ostream& out, const IndexedFaceSet& mesh);
void write_obj_file(const std::string& path, const IndexedFaceSet& mesh);

}  // namespace t2m
