#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "t2m/dataset.hpp"
#include "t2m/scan.hpp"

using namespace t2m;

namespace {

// Camera at `eye` looking along +axis toward the target.
RigidPose look_at(const Vec3& eye, const Vec3& target) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 up_hint{0, 0, 1};
    if (std::abs(forward.dot(up_hint)) > 0.98) up_hint = {0, 1, 0};
    const Vec3 right = up_hint.cross(forward).normalized();
    RigidPose p;
    p.rotation = Mat3::from_cols(right, forward.cross(right), forward);
    p.translation = eye;
    return p;
}

IndexedFaceSet unit_square_at_z(double z, double half = 0.5) {
    IndexedFaceSet m;
    m.vertices = {{-half, -half, z}, {half, -half, z}, {half, half, z}, {-half, half, z}};
    m.faces = {{0, 1, 2}, {0, 2, 3}};
    return m;
}

// Independent intersection oracle: plane hit + barycentric sign test.
double plane_bary_intersect(const Vec3& orig, const Vec3& dir, const Vec3& a, const Vec3& b,
                            const Vec3& c) {
    const Vec3 n = (b - a).cross(c - a);
    const double denom = n.dot(dir);
    if (std::abs(denom) < 1e-14) return -1.0;
    const double t = n.dot(a - orig) / denom;
    if (t <= 1e-12) return -1.0;
    const Vec3 p = orig + dir * t;
    const double area2 = n.norm2();
    const double u = (c - b).cross(p - b).dot(n) / area2;
    const double v = (a - c).cross(p - c).dot(n) / area2;
    const double w = 1.0 - u - v;
    const double eps = -1e-10;
    return (u >= eps && v >= eps && w >= eps) ? t : -1.0;
}

}  // namespace

TEST_CASE("unit square facing the camera: center pixel depth equals the range") {
    const IndexedFaceSet sq = unit_square_at_z(0.0);
    const CameraIntrinsics intr = CameraIntrinsics::from_fov(64, 64, 60.0 * M_PI / 180.0);
    const RigidPose pose = look_at({0, 0, -2}, {0, 0, 0});
    const DepthImage img = render_depth(sq, intr, pose);
    CHECK(img.at(32, 32) == doctest::Approx(2.0).epsilon(1e-4));
    // Corner rays miss the square entirely at this FOV.
    CHECK(img.at(0, 0) == 0.0);
}

TEST_CASE("two-sided intersection: camera behind the face still registers") {
    const IndexedFaceSet sq = unit_square_at_z(0.0);
    const CameraIntrinsics intr = CameraIntrinsics::from_fov(32, 32, 60.0 * M_PI / 180.0);
    const RigidPose pose = look_at({0, 0, 2}, {0, 0, 0});  // from the +z side
    const DepthImage img = render_depth(sq, intr, pose);
    // half-pixel offset from the optical axis tilts the ray slightly
    CHECK(img.at(16, 16) == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("degenerate triangles are skipped and counted") {
    IndexedFaceSet m = unit_square_at_z(0.0);
    m.vertices.push_back({0, 0, 0});
    m.vertices.push_back({1, 1, 1});
    m.vertices.push_back({2, 2, 2});
    m.faces.push_back({4, 5, 6});  // collinear
    const CameraIntrinsics intr = CameraIntrinsics::from_fov(16, 16, 1.0);
    RenderStats stats;
    render_depth(m, intr, look_at({0, 0, -2}, {0, 0, 0}), &stats);
    CHECK(stats.degenerate_faces_skipped == 1);
}

TEST_CASE("rendered depth equals the brute-force oracle with an independent test") {
    const IndexedFaceSet sphere = make_icosphere(1);
    const CameraIntrinsics intr = CameraIntrinsics::from_fov(48, 48, 60.0 * M_PI / 180.0);
    const RigidPose pose = look_at({0.3, -2.5, 0.4}, {0, 0, 0});
    const DepthImage img = render_depth(sphere, intr, pose);
    for (int y = 0; y < intr.height; y += 3) {
        for (int x = 0; x < intr.width; x += 3) {
            const auto [orig, dir] = img.pixel_ray(x, y);
            double best = -1.0;
            for (const auto& f : sphere.faces) {
                const double t = plane_bary_intersect(orig, dir, sphere.vertices[f[0]],
                                                      sphere.vertices[f[1]], sphere.vertices[f[2]]);
                if (t > 0.0 && (best < 0.0 || t < best)) best = t;
            }
            const double expected = best > 0.0 ? best : 0.0;
            CHECK(img.at(x, y) == doctest::Approx(expected).epsilon(1e-6));
        }
    }
}

TEST_CASE("normalize_to_grid: bbox (2,1,1) maps at 13 voxels per unit") {
    IndexedFaceSet m;
    m.vertices = {{0, 0, 0}, {2, 1, 1}, {1, 0.5, 0.5}};
    m.faces = {{0, 1, 2}};
    const auto [grid_mesh, tf] = normalize_to_grid(m);
    CHECK(tf.scale == doctest::Approx(13.0));  // 26 / 2
    const Aabb box = grid_mesh.bounds();
    CHECK(box.extent().x == doctest::Approx(26.0));
}

TEST_CASE("normalize_to_grid: unit cube occupies voxels [3, 29)") {
    const IndexedFaceSet cube = make_box({10, 10, 10}, {11, 11, 11});
    const auto [grid_mesh, tf] = normalize_to_grid(cube);
    (void)tf;
    const Aabb box = grid_mesh.bounds();
    for (int c = 0; c < 3; ++c) {
        CHECK(box.lo[c] == doctest::Approx(3.0).epsilon(1e-9));
        CHECK(box.hi[c] == doctest::Approx(29.0).epsilon(1e-9));
    }
}

TEST_CASE("grid transform round trip is identity") {
    const IndexedFaceSet cube = make_box({-1, 2, 0.5}, {4, 3, 2});
    const auto [grid_mesh, tf] = normalize_to_grid(cube);
    (void)grid_mesh;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> uni(0.0, 32.0);
    for (int i = 0; i < 100; ++i) {
        const Vec3 g{uni(rng), uni(rng), uni(rng)};
        const Vec3 back = tf.world_to_grid(tf.grid_to_world(g));
        CHECK((back - g).norm() < 1e-6);
    }
}

TEST_CASE("normalize_to_grid rejects zero extent") {
    IndexedFaceSet m;
    m.vertices = {{1, 1, 1}, {1, 1, 1}, {1, 1, 1}};
    m.faces = {{0, 1, 2}};
    CHECK_THROWS_AS(normalize_to_grid(m), std::runtime_error);
}

TEST_CASE("flat wall: near-axis voxels in front carry the perpendicular distance") {
    // Large wall in the grid frame, camera on its normal axis.
    IndexedFaceSet wall;
    wall.vertices = {{-40, -40, 0}, {40, -40, 0}, {40, 40, 0}, {-40, 40, 0}};
    wall.faces = {{0, 1, 2}, {0, 2, 3}};

    GridTransform tf;  // grid == world here: wall at z-grid plane 16
    tf.scale = 1.0;
    tf.offset = {16.0, 16.0, 16.0};

    const CameraIntrinsics intr = CameraIntrinsics::from_fov(256, 256, 60.0 * M_PI / 180.0);
    const RigidPose pose = look_at({0, 0, -60}, {0, 0, 0});
    const DepthImage img = render_depth(wall, intr, pose);
    const TsdfVolume vol = fuse_tsdf({img}, tf);

    int checked = 0;
    for (int iz = 0; iz < 16; ++iz) {
        for (int iy = 14; iy <= 17; ++iy) {
            for (int ix = 14; ix <= 17; ++ix) {
                // Near-axis cone only: obliquity error below 0.2%.
                const Vec3 w = tf.grid_to_world(vol.voxel_center_grid(ix, iy, iz));
                if (std::abs(w.x) > 2.0 || std::abs(w.y) > 2.0) continue;
                const double perp = std::abs(w.z);  // distance to the wall plane
                if (perp > vol.truncation - 0.25) continue;
                const size_t vi = vol.index(ix, iy, iz);
                REQUIRE(vol.known[vi] == 1.0f);
                CHECK(vol.distance[vi] == doctest::Approx(perp).epsilon(0.01));
                ++checked;
            }
        }
    }
    CHECK(checked > 10);
}

TEST_CASE("fusion clamps to truncation and marks observed free space") {
    const IndexedFaceSet sphere = normalize_unit_cube(make_icosphere(2));
    const auto [gm, tf] = normalize_to_grid(sphere);
    (void)gm;
    const CameraIntrinsics intr = CameraIntrinsics::from_fov(128, 128, 60.0 * M_PI / 180.0);
    const auto poses = synthesize_cameras(sphere, 1, 5);
    const TsdfVolume vol = fuse_tsdf({render_depth(sphere, intr, poses[0])}, tf);

    int clamped_known = 0, unknown_behind = 0;
    for (size_t i = 0; i < vol.voxel_count(); ++i) {
        CHECK(vol.distance[i] >= 0.0f);
        CHECK(vol.distance[i] <= static_cast<float>(vol.truncation));
        if (vol.known[i] == 1.0f && vol.distance[i] == static_cast<float>(vol.truncation))
            ++clamped_known;
        if (vol.known[i] == 0.0f) ++unknown_behind;
    }
    CHECK(clamped_known > 0);   // far-but-observed voxels clamp to 3
    CHECK(unknown_behind > 0);  // occluded space behind the sphere
    CHECK_FALSE(vol.fully_unknown);
}

TEST_CASE("adding views never flips known voxels to unknown, and is idempotent") {
    const IndexedFaceSet sphere = normalize_unit_cube(make_icosphere(2));
    const auto [gm, tf] = normalize_to_grid(sphere);
    (void)gm;
    const CameraIntrinsics intr = CameraIntrinsics::from_fov(96, 96, 60.0 * M_PI / 180.0);
    const auto poses = synthesize_cameras(sphere, 4, 11);
    std::vector<DepthImage> depths;
    for (const auto& p : poses) depths.push_back(render_depth(sphere, intr, p));

    const TsdfVolume one = fuse_tsdf({depths[0]}, tf);
    const TsdfVolume two = fuse_tsdf({depths[0], depths[1]}, tf);
    for (size_t i = 0; i < one.voxel_count(); ++i)
        if (one.known[i] == 1.0f) CHECK(two.known[i] == 1.0f);

    // Fusing k identical views equals fusing one.
    const TsdfVolume twice = fuse_tsdf({depths[0], depths[0], depths[0]}, tf);
    for (size_t i = 0; i < one.voxel_count(); ++i) {
        CHECK(twice.known[i] == one.known[i]);
        CHECK(std::abs(twice.distance[i] - one.distance[i]) < 1e-6);
    }
}

TEST_CASE("coordinate channels equal voxel centers mapped to mesh space") {
    const IndexedFaceSet box = make_box({0, 0, 0}, {1, 2, 3});
    const auto [gm, tf] = normalize_to_grid(box);
    (void)gm;
    const CameraIntrinsics intr = CameraIntrinsics::from_fov(32, 32, 1.0);
    const auto poses = synthesize_cameras(box, 1, 2);
    const TsdfVolume vol = fuse_tsdf({render_depth(box, intr, poses[0])}, tf);
    std::mt19937_64 rng(9);
    for (int t = 0; t < 50; ++t) {
        const int ix = rng() % 32, iy = rng() % 32, iz = rng() % 32;
        const Vec3 w = tf.grid_to_world(vol.voxel_center_grid(ix, iy, iz));
        const size_t vi = vol.index(ix, iy, iz);
        CHECK(vol.coord_x[vi] == doctest::Approx(w.x).epsilon(1e-6));
        CHECK(vol.coord_y[vi] == doctest::Approx(w.y).epsilon(1e-6));
        CHECK(vol.coord_z[vi] == doctest::Approx(w.z).epsilon(1e-6));
    }
}

TEST_CASE("tsdf and depth binary containers round trip") {
    const IndexedFaceSet box = normalize_unit_cube(make_box({0, 0, 0}, {1, 1, 2}));
    const auto [gm, tf] = normalize_to_grid(box);
    (void)gm;
    const CameraIntrinsics intr = CameraIntrinsics::from_fov(48, 48, 1.0);
    const auto poses = synthesize_cameras(box, 1, 3);
    const DepthImage img = render_depth(box, intr, poses[0]);
    const TsdfVolume vol = fuse_tsdf({img}, tf);

    const std::string tsdf_path = "/tmp/t2m_test_vol.tsdf";
    write_tsdf_file(tsdf_path, vol);
    const TsdfVolume r = read_tsdf_file(tsdf_path);
    CHECK(r.resolution == vol.resolution);
    CHECK(r.truncation == vol.truncation);
    CHECK(r.world_to_grid.scale == vol.world_to_grid.scale);
    CHECK(r.distance == vol.distance);
    CHECK(r.known == vol.known);
    CHECK(r.coord_x == vol.coord_x);

    const std::string depth_path = "/tmp/t2m_test_depth.bin";
    write_depth_file(depth_path, img);
    const DepthImage rd = read_depth_file(depth_path);
    CHECK(rd.depth == img.depth);
    CHECK(rd.intrinsics.fx == img.intrinsics.fx);
    CHECK(rd.pose.rotation.m == img.pose.rotation.m);

    std::remove(tsdf_path.c_str());
    std::remove(depth_path.c_str());
}

TEST_CASE("camera poses are valid rigid transforms") {
    const IndexedFaceSet box = make_box({0, 0, 0}, {1, 1, 1});
    for (const RigidPose& p : synthesize_cameras(box, 8, 21)) {
        const Mat3 rtr = p.rotation.transposed();
        // R^T R == I
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double acc = 0.0;
                for (int k = 0; k < 3; ++k) acc += rtr.m[i * 3 + k] * p.rotation.m[k * 3 + j];
                CHECK(acc == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-9));
            }
        CHECK(p.rotation.det() == doctest::Approx(1.0).epsilon(1e-9));
    }
}
