#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "t2m/geometry.hpp"

namespace t2m {

// Uniform hash-grid for nearest-neighbor and radius queries over a fixed
// point set. Built per call; safe to query from multiple threads.
class PointGrid {
public:
    explicit PointGrid(const std::vector<Vec3>& points) : points_(points) {
        for (const Vec3& p : points_) box_.extend(p);
        origin_ = box_.empty() ? Vec3{} : box_.lo;
        const double diag = box_.empty() ? 0.0 : box_.diagonal();
        const double n = std::max<size_t>(points_.size(), 1);
        cell_ = diag > 0.0 ? std::max(diag / std::cbrt(n), diag * 1e-6) : 1.0;
        cmin_ = {0, 0, 0};
        cmax_ = {0, 0, 0};
        bool first = true;
        for (size_t i = 0; i < points_.size(); ++i) {
            const auto c = coords_of(points_[i]);
            cells_[pack(std::get<0>(c), std::get<1>(c), std::get<2>(c))].push_back(
                static_cast<int>(i));
            if (first) {
                cmin_ = c;
                cmax_ = c;
                first = false;
            } else {
                std::get<0>(cmin_) = std::min(std::get<0>(cmin_), std::get<0>(c));
                std::get<1>(cmin_) = std::min(std::get<1>(cmin_), std::get<1>(c));
                std::get<2>(cmin_) = std::min(std::get<2>(cmin_), std::get<2>(c));
                std::get<0>(cmax_) = std::max(std::get<0>(cmax_), std::get<0>(c));
                std::get<1>(cmax_) = std::max(std::get<1>(cmax_), std::get<1>(c));
                std::get<2>(cmax_) = std::max(std::get<2>(cmax_), std::get<2>(c));
            }
        }
    }

    bool empty() const { return points_.empty(); }
    const std::vector<Vec3>& points() const { return points_; }

    // Index of the closest point; -1 when the set is empty.
    int nearest(const Vec3& q) const {
        if (points_.empty()) return -1;

        // First Chebyshev ring that can contain a point, from the distance to
        // the bounding box. Distant queries skip the grid entirely.
        const double dist_lo = box_distance(q);
        const int64_t ring0 =
            std::max<int64_t>(0, static_cast<int64_t>(std::floor(dist_lo / cell_)) - 1);
        if (ring0 > 8) return brute_force(q);

        int best = -1;
        double best_d2 = std::numeric_limits<double>::max();
        const auto [cx, cy, cz] = coords_of(q);
        const int64_t ring_cap =
            8 + std::max({std::get<0>(cmax_) - std::get<0>(cmin_),
                          std::get<1>(cmax_) - std::get<1>(cmin_),
                          std::get<2>(cmax_) - std::get<2>(cmin_)});
        for (int64_t ring = ring0; ring <= ring0 + ring_cap; ++ring) {
            // Points in ring r are at least (r-1) cells away.
            if (best >= 0) {
                const double ring_min = (static_cast<double>(ring) - 1.0) * cell_;
                if (ring_min > 0.0 && ring_min * ring_min > best_d2) return best;
            }
            // Clamp the scan to occupied cell bounds.
            const int64_t x0 = std::max(cx - ring, std::get<0>(cmin_));
            const int64_t x1 = std::min(cx + ring, std::get<0>(cmax_));
            const int64_t y0 = std::max(cy - ring, std::get<1>(cmin_));
            const int64_t y1 = std::min(cy + ring, std::get<1>(cmax_));
            const int64_t z0 = std::max(cz - ring, std::get<2>(cmin_));
            const int64_t z1 = std::min(cz + ring, std::get<2>(cmax_));
            for (int64_t x = x0; x <= x1; ++x)
                for (int64_t y = y0; y <= y1; ++y)
                    for (int64_t z = z0; z <= z1; ++z) {
                        if (std::max({std::abs(x - cx), std::abs(y - cy), std::abs(z - cz)}) !=
                            ring)
                            continue;  // shell only
                        const auto it = cells_.find(pack(x, y, z));
                        if (it == cells_.end()) continue;
                        for (int idx : it->second) {
                            const double d2 = (points_[idx] - q).norm2();
                            if (d2 < best_d2) {
                                best_d2 = d2;
                                best = idx;
                            }
                        }
                    }
        }
        return best >= 0 ? best : brute_force(q);
    }

    // Indices of all points within `radius` of q.
    std::vector<int> within(const Vec3& q, double radius) const {
        std::vector<int> out;
        if (points_.empty()) return out;
        const double r2 = radius * radius;
        const auto [cx, cy, cz] = coords_of(q);
        const int64_t span = static_cast<int64_t>(std::ceil(radius / cell_)) + 1;
        const int64_t x0 = std::max(cx - span, std::get<0>(cmin_));
        const int64_t x1 = std::min(cx + span, std::get<0>(cmax_));
        const int64_t y0 = std::max(cy - span, std::get<1>(cmin_));
        const int64_t y1 = std::min(cy + span, std::get<1>(cmax_));
        const int64_t z0 = std::max(cz - span, std::get<2>(cmin_));
        const int64_t z1 = std::min(cz + span, std::get<2>(cmax_));
        for (int64_t x = x0; x <= x1; ++x)
            for (int64_t y = y0; y <= y1; ++y)
                for (int64_t z = z0; z <= z1; ++z) {
                    const auto it = cells_.find(pack(x, y, z));
                    if (it == cells_.end()) continue;
                    for (int idx : it->second)
                        if ((points_[idx] - q).norm2() <= r2) out.push_back(idx);
                }
        return out;
    }

private:
    std::tuple<int64_t, int64_t, int64_t> coords_of(const Vec3& p) const {
        return {static_cast<int64_t>(std::floor((p.x - origin_.x) / cell_)),
                static_cast<int64_t>(std::floor((p.y - origin_.y) / cell_)),
                static_cast<int64_t>(std::floor((p.z - origin_.z) / cell_))};
    }
    static int64_t pack(int64_t x, int64_t y, int64_t z) {
        // 21 bits per axis, offset to keep coordinates positive.
        const int64_t off = 1 << 20;
        return ((x + off) << 42) | ((y + off) << 21) | (z + off);
    }
    double box_distance(const Vec3& q) const {
        const double dx = std::max({box_.lo.x - q.x, 0.0, q.x - box_.hi.x});
        const double dy = std::max({box_.lo.y - q.y, 0.0, q.y - box_.hi.y});
        const double dz = std::max({box_.lo.z - q.z, 0.0, q.z - box_.hi.z});
        return std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    int brute_force(const Vec3& q) const {
        int best = -1;
        double best_d2 = std::numeric_limits<double>::max();
        for (size_t i = 0; i < points_.size(); ++i) {
            const double d2 = (points_[i] - q).norm2();
            if (d2 < best_d2) {
                best_d2 = d2;
                best = static_cast<int>(i);
            }
        }
        return best;
    }

    std::vector<Vec3> points_;
    Aabb box_;
    Vec3 origin_;
    double cell_ = 1.0;
    std::tuple<int64_t, int64_t, int64_t> cmin_, cmax_;
    std::unordered_map<int64_t, std::vector<int>> cells_;
};

}  // namespace t2m
