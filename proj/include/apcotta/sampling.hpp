#pragma once

#include <cstdint>
#include <vector>

#include "apcotta/common.hpp"
#include "apcotta/pointcloud.hpp"
#include "apcotta/rng.hpp"

namespace apcotta {

// Draws a fixed-size spherical sub-cloud around `center`. With enough points
// inside the ball the draw is uniform without replacement; an under-populated
// ball falls back to sampling with replacement so the output shape is always
// n_points. Positions are recentered by subtracting the center.
inline SubCloud sample_sphere(const PointCloud& cloud, const Vec3& center, double radius,
                              std::size_t n_points, RngStream& rng) {
    if (!(radius > 0.0)) throw ValidationError("sample_sphere: radius must be positive");
    if (n_points == 0) throw ValidationError("sample_sphere: n_points must be positive");

    const double r2 = radius * radius;
    std::vector<std::uint32_t> inside;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        if (squared_distance(cloud.positions[i], center) <= r2)
            inside.push_back(static_cast<std::uint32_t>(i));
    if (inside.empty()) throw ValidationError("empty sphere");

    std::vector<std::uint32_t> chosen;
    chosen.reserve(n_points);
    if (inside.size() >= n_points) {
        rng.shuffle(inside);
        chosen.assign(inside.begin(), inside.begin() + static_cast<std::ptrdiff_t>(n_points));
    } else {
        for (std::size_t i = 0; i < n_points; ++i)
            chosen.push_back(inside[rng.bounded(inside.size())]);
    }

    SubCloud sub;
    sub.center = center;
    sub.feature_count = cloud.feature_count;
    sub.positions.reserve(n_points);
    sub.features.reserve(n_points * static_cast<std::size_t>(cloud.feature_count));
    sub.source_indices = chosen;
    for (std::uint32_t idx : chosen) {
        const Vec3& p = cloud.positions[idx];
        sub.positions.push_back({p[0] - center[0], p[1] - center[1], p[2] - center[2]});
        for (int f = 0; f < cloud.feature_count; ++f)
            sub.features.push_back(cloud.feature(idx, f));
    }
    return sub;
}

// B sub-clouds with centers drawn uniformly from the cloud's own points.
inline SubCloudBatch make_batch(const PointCloud& cloud, std::size_t b, std::size_t n_points,
                                double radius, RngStream& rng) {
    if (cloud.size() == 0) throw ValidationError("make_batch: empty cloud");
    SubCloudBatch batch;
    batch.clouds.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
        const std::size_t ci = static_cast<std::size_t>(rng.bounded(cloud.size()));
        batch.clouds.push_back(sample_sphere(cloud, cloud.positions[ci], radius, n_points, rng));
    }
    return batch;
}

// Ground-truth labels for a batch, fetched from the parent cloud. Kept out
// of SubCloudBatch itself so adaptation code cannot touch them.
inline std::vector<std::uint8_t> gather_labels(const PointCloud& cloud, const SubCloudBatch& batch) {
    if (!cloud.has_labels()) throw StateError("gather_labels: cloud has no labels");
    std::vector<std::uint8_t> out;
    out.reserve(batch.total_points());
    for (const SubCloud& sc : batch.clouds)
        for (std::uint32_t idx : sc.source_indices) out.push_back(cloud.labels[idx]);
    return out;
}

} // namespace apcotta
