#include "t2m/scan.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "binary container code assumes a little-endian host");

namespace t2m {

CameraIntrinsics CameraIntrinsics::from_fov(int width, int height, double vertical_fov) {
    CameraIntrinsics in;
    in.width = width;
    in.height = height;
    in.fy = 0.5 * height / std::tan(0.5 * vertical_fov);
    in.fx = in.fy;
    in.cx = 0.5 * width;
    in.cy = 0.5 * height;
    return in;
}

std::pair<Vec3, Vec3> DepthImage::pixel_ray(int x, int y) const {
    const Vec3 cam{(x + 0.5 - intrinsics.cx) / intrinsics.fx,
                   (y + 0.5 - intrinsics.cy) / intrinsics.fy, 1.0};
    return {pose.translation, (pose.rotation * cam).normalized()};
}

namespace {

// Two-sided Moller-Trumbore; returns distance along the unit ray or a
// negative value on miss.
double ray_triangle(const Vec3& orig, const Vec3& dir, const Vec3& a, const Vec3& b,
                    const Vec3& c) {
    constexpr double eps = 1e-12;
    const Vec3 e1 = b - a, e2 = c - a;
    const Vec3 pvec = dir.cross(e2);
    const double det = e1.dot(pvec);
    if (std::abs(det) < eps) return -1.0;
    const double inv_det = 1.0 / det;
    const Vec3 tvec = orig - a;
    const double u = tvec.dot(pvec) * inv_det;
    if (u < 0.0 || u > 1.0) return -1.0;
    const Vec3 qvec = tvec.cross(e1);
    const double v = dir.dot(qvec) * inv_det;
    if (v < 0.0 || u + v > 1.0) return -1.0;
    const double t = e2.dot(qvec) * inv_det;
    return t > eps ? t : -1.0;
}

bool triangle_degenerate(const Vec3& a, const Vec3& b, const Vec3& c) {
    return (b - a).cross(c - a).norm2() <= 0.0;
}

}  // namespace

DepthImage render_depth(const IndexedFaceSet& mesh, const CameraIntrinsics& intr,
                        const RigidPose& pose, RenderStats* stats) {
    if (mesh.empty() || mesh.faces.empty())
        throw std::runtime_error("render_depth: empty mesh");

    DepthImage img;
    img.intrinsics = intr;
    img.pose = pose;
    img.depth.assign(static_cast<size_t>(intr.width) * intr.height, 0.0);

    int skipped = 0;

    // Per-pixel running minimum over each triangle's screen footprint; pixels
    // outside every footprint stay at 0 (no hit). A pixel ray can only hit a
    // triangle whose perspective image contains that pixel, so testing the
    // projected bounding rectangle (with a one-pixel margin) is exhaustive.
    std::vector<double> best(img.depth.size(), -1.0);
    const Mat3 rot_t = pose.rotation.transposed();
    for (const auto& tri : mesh.faces) {
        const Vec3& a = mesh.vertices[tri[0]];
        const Vec3& b = mesh.vertices[tri[1]];
        const Vec3& c = mesh.vertices[tri[2]];
        if (triangle_degenerate(a, b, c)) {
            ++skipped;
            continue;
        }

        int x0 = 0, x1 = intr.width - 1, y0 = 0, y1 = intr.height - 1;
        int behind = 0;
        double px_min = 1e30, px_max = -1e30, py_min = 1e30, py_max = -1e30;
        for (const Vec3* v : {&a, &b, &c}) {
            const Vec3 cam = rot_t * (*v - pose.translation);
            if (cam.z <= 1e-9) {
                ++behind;
                continue;
            }
            const double px = intr.fx * cam.x / cam.z + intr.cx;
            const double py = intr.fy * cam.y / cam.z + intr.cy;
            px_min = std::min(px_min, px);
            px_max = std::max(px_max, px);
            py_min = std::min(py_min, py);
            py_max = std::max(py_max, py);
        }
        if (behind == 3) continue;  // forward rays only reach z > 0
        // Crossing the camera plane: the image is unbounded, test everything.
        const bool full_rect = behind > 0;
        if (!full_rect) {
            x0 = std::max(0, static_cast<int>(std::floor(px_min)) - 1);
            x1 = std::min(intr.width - 1, static_cast<int>(std::ceil(px_max)) + 1);
            y0 = std::max(0, static_cast<int>(std::floor(py_min)) - 1);
            y1 = std::min(intr.height - 1, static_cast<int>(std::ceil(py_max)) + 1);
            if (x0 > x1 || y0 > y1) continue;  // fully off screen
        }

        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const auto [orig, dir] = img.pixel_ray(x, y);
                const double t = ray_triangle(orig, dir, a, b, c);
                if (t > 0.0) {
                    double& slot = best[y * intr.width + x];
                    if (slot < 0.0 || t < slot) slot = t;
                }
            }
        }
    }
    if (stats) stats->degenerate_faces_skipped = skipped;
    for (size_t i = 0; i < best.size(); ++i) img.depth[i] = best[i] > 0.0 ? best[i] : 0.0;
    return img;
}

std::pair<IndexedFaceSet, GridTransform> normalize_to_grid(const IndexedFaceSet& mesh,
                                                           int resolution, double truncation) {
    const Aabb box = mesh.bounds();
    if (mesh.empty() || box.max_extent() <= 0.0)
        throw std::runtime_error("normalize_to_grid: mesh has zero extent");

    GridTransform tf;
    tf.scale = (resolution - 2.0 * truncation) / box.max_extent();
    const Vec3 grid_center{resolution * 0.5, resolution * 0.5, resolution * 0.5};
    tf.offset = grid_center - box.center() * tf.scale;

    IndexedFaceSet out = mesh;
    for (Vec3& v : out.vertices) v = tf.world_to_grid(v);
    return {out, tf};
}

namespace {

// Measurements on depth discontinuities and grazing hits carry along-ray
// distances far off the true surface distance; classic fusion drops them.
// The per-neighbor jump is compared against the lateral pixel footprint at
// the measured range, i.e. the filter bounds tan(incidence angle).
bool depth_sample_reliable(const DepthImage& img, int px, int py, double max_slope = 2.0) {
    const double center = img.at(px, py);
    if (center <= 0.0) return false;
    const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
    int valid = 0;
    for (int k = 0; k < 4; ++k) {
        const int nx = px + dx[k], ny = py + dy[k];
        if (nx < 0 || nx >= img.intrinsics.width || ny < 0 || ny >= img.intrinsics.height)
            continue;
        const double d = img.at(nx, ny);
        if (d <= 0.0) continue;  // silhouette neighbor; the hit itself may be fine
        ++valid;
        const double footprint = center / (k < 2 ? img.intrinsics.fx : img.intrinsics.fy);
        if (std::abs(d - center) > max_slope * footprint) return false;
    }
    return valid > 0;
}

}  // namespace

TsdfVolume fuse_tsdf(const std::vector<DepthImage>& depths, const GridTransform& world_to_grid,
                     int resolution, double truncation) {
    if (depths.empty()) throw std::runtime_error("fuse_tsdf: needs at least one depth image");

    TsdfVolume vol;
    vol.resolution = resolution;
    vol.truncation = truncation;
    vol.world_to_grid = world_to_grid;
    const size_t n = vol.voxel_count();
    vol.distance.assign(n, static_cast<float>(truncation));
    vol.known.assign(n, 0.0f);
    vol.coord_x.resize(n);
    vol.coord_y.resize(n);
    vol.coord_z.resize(n);

    size_t observed_total = 0;
    for (int iz = 0; iz < resolution; ++iz) {
        for (int iy = 0; iy < resolution; ++iy) {
            for (int ix = 0; ix < resolution; ++ix) {
                const size_t vi = vol.index(ix, iy, iz);
                const Vec3 world = world_to_grid.grid_to_world(vol.voxel_center_grid(ix, iy, iz));
                vol.coord_x[vi] = static_cast<float>(world.x);
                vol.coord_y[vi] = static_cast<float>(world.y);
                vol.coord_z[vi] = static_cast<float>(world.z);

                double sum = 0.0, weight_sum = 0.0;
                int count = 0;
                for (const DepthImage& img : depths) {
                    const Vec3 cam = img.pose.to_camera(world);
                    if (cam.z <= 1e-9) continue;  // behind the camera
                    const int px = static_cast<int>(
                        std::floor(img.intrinsics.fx * cam.x / cam.z + img.intrinsics.cx));
                    const int py = static_cast<int>(
                        std::floor(img.intrinsics.fy * cam.y / cam.z + img.intrinsics.cy));
                    if (px < 0 || px >= img.intrinsics.width || py < 0 ||
                        py >= img.intrinsics.height)
                        continue;

                    // Rays that miss every triangle carry no surface
                    // measurement, and discontinuity pixels are unreliable;
                    // either way the voxel stays unobserved by this view.
                    if (!depth_sample_reliable(img, px, py)) continue;
                    const double voxel_range =
                        (world - img.pose.translation).norm() * world_to_grid.scale;
                    const double surf_range = img.at(px, py) * world_to_grid.scale;
                    const double signed_d = surf_range - voxel_range;  // + in front of surface
                    if (signed_d < -truncation) continue;  // occluded beyond the band
                    // Behind-surface projective distances degrade fast near
                    // corners; ramp their weight down across the band.
                    const double w =
                        signed_d >= 0.0 ? 1.0 : 1.0 - std::abs(signed_d) / truncation;
                    if (w <= 0.0) continue;
                    sum += w * std::min(std::abs(signed_d), truncation);
                    weight_sum += w;
                    ++count;
                }
                if (count > 0) {
                    vol.known[vi] = 1.0f;
                    vol.distance[vi] = static_cast<float>(sum / weight_sum);
                    ++observed_total;
                }
            }
        }
    }
    vol.fully_unknown = observed_total == 0;
    return vol;
}

std::vector<RigidPose> synthesize_cameras(const IndexedFaceSet& mesh, int views, uint64_t seed) {
    if (views < 1) throw std::runtime_error("synthesize_cameras: views must be >= 1");
    const Aabb box = mesh.bounds();
    const Vec3 target = box.center();
    const double radius = 2.5 * std::max(box.diagonal(), 1e-9);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double phase = uni(rng) * 2.0 * M_PI;
    const double z_jitter = uni(rng) * 0.4 - 0.2;

    std::vector<RigidPose> poses;
    poses.reserve(views);
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < views; ++i) {
        // Fibonacci sphere direction, avoiding the poles.
        double zc = views == 1 ? 0.3 + z_jitter
                               : std::clamp(1.0 - 2.0 * (i + 0.5) / views, -0.85, 0.85);
        const double r = std::sqrt(std::max(0.0, 1.0 - zc * zc));
        const double ang = phase + golden * i;
        const Vec3 dir{r * std::cos(ang), r * std::sin(ang), zc};

        const Vec3 eye = target + dir * radius;
        const Vec3 forward = (target - eye).normalized();
        Vec3 up_hint{0.0, 0.0, 1.0};
        if (std::abs(forward.dot(up_hint)) > 0.98) up_hint = {0.0, 1.0, 0.0};
        const Vec3 right = up_hint.cross(forward).normalized();
        const Vec3 down = forward.cross(right);  // image y grows downward

        RigidPose pose;
        pose.rotation = Mat3::from_cols(right, down, forward);
        pose.translation = eye;
        poses.push_back(pose);
    }
    return poses;
}

// ---- binary containers -------------------------------------------------------

namespace {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("binary container truncated");
    return v;
}

void write_f32_plane(std::ostream& out, const std::vector<float>& plane) {
    out.write(reinterpret_cast<const char*>(plane.data()),
              static_cast<std::streamsize>(plane.size() * sizeof(float)));
}

void read_f32_plane(std::istream& in, std::vector<float>& plane, size_t n) {
    plane.resize(n);
    in.read(reinterpret_cast<char*>(plane.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw std::runtime_error("binary container truncated");
}

constexpr char kTsdfMagic[8] = {'T', '2', 'M', 'T', 'S', 'D', 'F', '1'};
constexpr char kDepthMagic[8] = {'T', '2', 'M', 'D', 'E', 'P', 'T', 'H'};

}  // namespace

void write_tsdf_file(const std::string& path, const TsdfVolume& vol) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write TSDF file: " + path);
    out.write(kTsdfMagic, 8);
    write_pod<uint32_t>(out, 1);  // version
    write_pod<uint32_t>(out, static_cast<uint32_t>(vol.resolution));
    write_pod<double>(out, vol.truncation);
    write_pod<double>(out, vol.world_to_grid.scale);
    write_pod<double>(out, vol.world_to_grid.offset.x);
    write_pod<double>(out, vol.world_to_grid.offset.y);
    write_pod<double>(out, vol.world_to_grid.offset.z);
    write_pod<uint8_t>(out, vol.fully_unknown ? 1 : 0);
    write_f32_plane(out, vol.distance);
    write_f32_plane(out, vol.known);
    write_f32_plane(out, vol.coord_x);
    write_f32_plane(out, vol.coord_y);
    write_f32_plane(out, vol.coord_z);
    if (!out) throw std::runtime_error("failed writing TSDF file: " + path);
}

TsdfVolume read_tsdf_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open TSDF file: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kTsdfMagic, 8) != 0)
        throw std::runtime_error("not a TSDF container: " + path);
    const uint32_t version = read_pod<uint32_t>(in);
    if (version != 1)
        throw std::runtime_error("unsupported TSDF container version " + std::to_string(version));

    TsdfVolume vol;
    vol.resolution = static_cast<int>(read_pod<uint32_t>(in));
    vol.truncation = read_pod<double>(in);
    vol.world_to_grid.scale = read_pod<double>(in);
    vol.world_to_grid.offset.x = read_pod<double>(in);
    vol.world_to_grid.offset.y = read_pod<double>(in);
    vol.world_to_grid.offset.z = read_pod<double>(in);
    vol.fully_unknown = read_pod<uint8_t>(in) != 0;
    const size_t n = vol.voxel_count();
    read_f32_plane(in, vol.distance, n);
    read_f32_plane(in, vol.known, n);
    read_f32_plane(in, vol.coord_x, n);
    read_f32_plane(in, vol.coord_y, n);
    read_f32_plane(in, vol.coord_z, n);
    return vol;
}

void write_depth_file(const std::string& path, const DepthImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write depth file: " + path);
    out.write(kDepthMagic, 8);
    write_pod<uint32_t>(out, 1);
    write_pod<uint32_t>(out, static_cast<uint32_t>(img.intrinsics.width));
    write_pod<uint32_t>(out, static_cast<uint32_t>(img.intrinsics.height));
    write_pod<double>(out, img.intrinsics.fx);
    write_pod<double>(out, img.intrinsics.fy);
    write_pod<double>(out, img.intrinsics.cx);
    write_pod<double>(out, img.intrinsics.cy);
    for (double m : img.pose.rotation.m) write_pod<double>(out, m);
    write_pod<double>(out, img.pose.translation.x);
    write_pod<double>(out, img.pose.translation.y);
    write_pod<double>(out, img.pose.translation.z);
    out.write(reinterpret_cast<const char*>(img.depth.data()),
              static_cast<std::streamsize>(img.depth.size() * sizeof(double)));
    if (!out) throw std::runtime_error("failed writing depth file: " + path);
}

DepthImage read_depth_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open depth file: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kDepthMagic, 8) != 0)
        throw std::runtime_error("not a depth container: " + path);
    const uint32_t version = read_pod<uint32_t>(in);
    if (version != 1)
        throw std::runtime_error("unsupported depth container version " + std::to_string(version));

    DepthImage img;
    img.intrinsics.width = static_cast<int>(read_pod<uint32_t>(in));
    img.intrinsics.height = static_cast<int>(read_pod<uint32_t>(in));
    img.intrinsics.fx = read_pod<double>(in);
    img.intrinsics.fy = read_pod<double>(in);
    img.intrinsics.cx = read_pod<double>(in);
    img.intrinsics.cy = read_pod<double>(in);
    for (double& m : img.pose.rotation.m) m = read_pod<double>(in);
    img.pose.translation.x = read_pod<double>(in);
    img.pose.translation.y = read_pod<double>(in);
    img.pose.translation.z = read_pod<double>(in);
    const size_t n = static_cast<size_t>(img.intrinsics.width) * img.intrinsics.height;
    img.depth.resize(n);
    in.read(reinterpret_cast<char*>(img.depth.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("depth container truncated: " + path);
    return img;
}

}  // namespace t2m
