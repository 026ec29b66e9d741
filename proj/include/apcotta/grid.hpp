#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <unordered_map>
#include <vector>

#include "apcotta/common.hpp"
#include "apcotta/pointcloud.hpp"

namespace apcotta {

namespace detail {

struct CellKey {
    std::int64_t x, y, z;
    bool operator==(const CellKey&) const = default;
};

struct CellKeyHash {
    std::size_t operator()(const CellKey& c) const noexcept {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (std::int64_t v : {c.x, c.y, c.z}) {
            h ^= static_cast<std::uint64_t>(v);
            h *= 0x100000001b3ULL;
        }
        return static_cast<std::size_t>(h);
    }
};

} // namespace detail

// Voxel subsampling on an axis-aligned grid anchored at the cloud's minimum
// corner. Each occupied cell keeps the member point closest to the centroid
// of the cell's members (ties to the lowest index); attributes travel with
// the kept point. Output preserves ascending source order, which makes the
// operation idempotent for a fixed cell size.
inline PointCloud grid_subsample(const PointCloud& cloud, double cell) {
    validate_cloud(cloud);
    if (!(cell > 0.0)) throw ValidationError("grid_subsample: cell size must be positive");

    const std::size_t n = cloud.size();
    Vec3 origin = cloud.positions[0];
    for (const Vec3& p : cloud.positions)
        for (int a = 0; a < 3; ++a) origin[a] = std::min(origin[a], p[a]);

    const auto key_of = [&](const Vec3& p) {
        return detail::CellKey{
            static_cast<std::int64_t>(std::floor((p[0] - origin[0]) / cell)),
            static_cast<std::int64_t>(std::floor((p[1] - origin[1]) / cell)),
            static_cast<std::int64_t>(std::floor((p[2] - origin[2]) / cell))};
    };

    struct Agg {
        Vec3 sum{0.0, 0.0, 0.0};
        std::size_t count = 0;
        std::size_t best = 0;
        double best_d2 = std::numeric_limits<double>::infinity();
    };
    std::unordered_map<detail::CellKey, Agg, detail::CellKeyHash> cells;
    cells.reserve(n);

    for (std::size_t i = 0; i < n; ++i) {
        Agg& a = cells[key_of(cloud.positions[i])];
        for (int d = 0; d < 3; ++d) a.sum[d] += cloud.positions[i][d];
        a.count++;
    }
    for (std::size_t i = 0; i < n; ++i) {
        Agg& a = cells[key_of(cloud.positions[i])];
        const Vec3 centroid{a.sum[0] / static_cast<double>(a.count),
                            a.sum[1] / static_cast<double>(a.count),
                            a.sum[2] / static_cast<double>(a.count)};
        const double d2 = squared_distance(cloud.positions[i], centroid);
        if (d2 < a.best_d2 || (d2 == a.best_d2 && i < a.best)) {
            a.best_d2 = d2;
            a.best = i;
        }
    }

    std::vector<std::size_t> keep;
    keep.reserve(cells.size());
    for (const auto& [key, agg] : cells) {
        (void)key;
        keep.push_back(agg.best);
    }
    std::sort(keep.begin(), keep.end());

    PointCloud out;
    out.feature_count = cloud.feature_count;
    out.class_count = cloud.class_count;
    out.positions.reserve(keep.size());
    out.features.reserve(keep.size() * static_cast<std::size_t>(cloud.feature_count));
    if (cloud.has_labels()) out.labels.reserve(keep.size());
    for (std::size_t i : keep) {
        out.positions.push_back(cloud.positions[i]);
        for (int f = 0; f < cloud.feature_count; ++f)
            out.features.push_back(cloud.feature(i, f));
        if (cloud.has_labels()) out.labels.push_back(cloud.labels[i]);
    }
    return out;
}

} // namespace apcotta
