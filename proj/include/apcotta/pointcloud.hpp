#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "apcotta/common.hpp"

namespace apcotta {

// Universal point carrier. `features` is row-major N x feature_count with
// feature 0 playing the intensity/reflectance role. `labels` is empty for
// unlabeled clouds, otherwise one class id (or kIgnoreLabel) per point.
struct PointCloud {
    std::vector<Vec3> positions;
    std::vector<double> features;
    std::vector<std::uint8_t> labels;
    int feature_count = 1;
    int class_count = 2;

    std::size_t size() const { return positions.size(); }
    bool has_labels() const { return !labels.empty(); }

    double feature(std::size_t point, int f) const {
        return features[point * static_cast<std::size_t>(feature_count) + static_cast<std::size_t>(f)];
    }
};

inline void validate_cloud(const PointCloud& cloud) {
    const std::size_t n = cloud.positions.size();
    if (n == 0) throw ValidationError("no points");
    if (cloud.feature_count < 1) throw ValidationError("feature_count must be >= 1");
    if (cloud.class_count < 2) throw ValidationError("class_count must be >= 2");
    if (cloud.features.size() != n * static_cast<std::size_t>(cloud.feature_count))
        throw ValidationError("feature array size does not match point count");
    if (!cloud.labels.empty() && cloud.labels.size() != n)
        throw ValidationError("label array size does not match point count");
    for (std::size_t i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a)
            if (!std::isfinite(cloud.positions[i][a]))
                throw ValidationError("non-finite coordinate at point " + std::to_string(i));
    }
    for (double f : cloud.features)
        if (!std::isfinite(f)) throw ValidationError("non-finite feature value");
    for (std::size_t i = 0; i < cloud.labels.size(); ++i) {
        const std::uint8_t l = cloud.labels[i];
        if (l != kIgnoreLabel && l >= cloud.class_count)
            throw ValidationError("label " + std::to_string(int(l)) + " at point " +
                                  std::to_string(i) + " exceeds class_count " +
                                  std::to_string(cloud.class_count));
    }
}

// One spherical sub-cloud: positions recentered by subtracting `center`.
// Labels are deliberately absent; gather them from the parent cloud through
// source_indices when (and only when) scoring predictions.
struct SubCloud {
    std::vector<Vec3> positions;
    std::vector<double> features;
    std::vector<std::uint32_t> source_indices;
    Vec3 center{0.0, 0.0, 0.0};
    int feature_count = 1;

    std::size_t size() const { return positions.size(); }
};

struct SubCloudBatch {
    std::vector<SubCloud> clouds;

    std::size_t batch_size() const { return clouds.size(); }
    std::size_t points_per_cloud() const { return clouds.empty() ? 0 : clouds[0].size(); }
    std::size_t total_points() const {
        std::size_t t = 0;
        for (const auto& c : clouds) t += c.size();
        return t;
    }
};

// Exact k-nearest indices per point, self excluded, ties broken toward the
// lower index. Row-major N x k.
struct NeighborIndex {
    std::vector<std::uint32_t> indices;
    int k = 0;

    std::size_t rows() const {
        return k == 0 ? 0 : indices.size() / static_cast<std::size_t>(k);
    }
    const std::uint32_t* row(std::size_t i) const {
        return indices.data() + i * static_cast<std::size_t>(k);
    }
};

} // namespace apcotta
