#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "t2m/mesh.hpp"

namespace t2m {

struct CameraIntrinsics {
    int width = 128, height = 128;
    double fx = 0.0, fy = 0.0;  // focal lengths in pixels
    double cx = 0.0, cy = 0.0;  // principal point

    // Square image with the given vertical field of view (radians).
    static CameraIntrinsics from_fov(int width, int height, double vertical_fov);
};

struct DepthImage {
    CameraIntrinsics intrinsics;
    RigidPose pose;               // camera-to-world
    std::vector<double> depth;    // row-major, range along the viewing ray; 0 = no hit

    double at(int x, int y) const { return depth[y * intrinsics.width + x]; }
    // World-space ray through pixel center (origin, unit direction).
    std::pair<Vec3, Vec3> pixel_ray(int x, int y) const;
};

struct RenderStats {
    int degenerate_faces_skipped = 0;
};

// Per-pixel nearest two-sided ray-triangle intersection distance along the
// viewing ray. Degenerate triangles are skipped and counted.
DepthImage render_depth(const IndexedFaceSet& mesh, const CameraIntrinsics& intr,
                        const RigidPose& pose, RenderStats* stats = nullptr);

inline constexpr int kGridResolution = 32;
inline constexpr double kTruncationVoxels = 3.0;

// Maps the largest bounding-box extent to resolution - 2*truncation voxels
// (26 for the 32^3 default) and centers the mesh, leaving truncation-wide
// padding per side. Returns the grid-frame mesh and the transform.
std::pair<IndexedFaceSet, GridTransform> normalize_to_grid(const IndexedFaceSet& mesh,
                                                           int resolution = kGridResolution,
                                                           double truncation = kTruncationVoxels);

// 5-channel 32^3 grid: truncated unsigned distance (voxels), known mask, and
// per-voxel x,y,z mesh-space coordinates of the voxel centers.
struct TsdfVolume {
    int resolution = kGridResolution;
    double truncation = kTruncationVoxels;
    GridTransform world_to_grid;
    std::vector<float> distance;   // res^3, in [0, truncation]
    std::vector<float> known;      // res^3, 0/1
    std::vector<float> coord_x, coord_y, coord_z;  // res^3, mesh units
    bool fully_unknown = false;

    size_t voxel_count() const {
        return static_cast<size_t>(resolution) * resolution * resolution;
    }
    size_t index(int ix, int iy, int iz) const {
        return (static_cast<size_t>(iz) * resolution + iy) * resolution + ix;
    }
    // Voxel center in grid coordinates.
    Vec3 voxel_center_grid(int ix, int iy, int iz) const {
        return {ix + 0.5, iy + 0.5, iz + 0.5};
    }
};

// Averages per-view truncated unsigned along-ray distances over all views that
// observe each voxel. Rays that miss the mesh count as observed free space.
TsdfVolume fuse_tsdf(const std::vector<DepthImage>& depths, const GridTransform& world_to_grid,
                     int resolution = kGridResolution, double truncation = kTruncationVoxels);

// Cameras on a sphere of radius 2.5 x bbox diagonal looking at the centroid.
std::vector<RigidPose> synthesize_cameras(const IndexedFaceSet& mesh, int views, uint64_t seed);

// Little-endian binary container (see docs/formats.md).
void write_tsdf_file(const std::string& path, const TsdfVolume& vol);
TsdfVolume read_tsdf_file(const std::string& path);

void write_depth_file(const std::string& path, const DepthImage& img);
DepthImage read_depth_file(const std::string& path);

}  // namespace t2m
