#pragma once

#include <cmath>

#include "apcotta/pointcloud.hpp"
#include "apcotta/rng.hpp"

namespace apcotta {

struct AugmentParams {
    double rotation_max_rad = 0.0; // about the vertical axis
    double translation_max_m = 0.0;
    double scale_min = 1.0;
    double scale_max = 1.0;
    double jitter_sigma_m = 0.0; // per-point Gaussian
};

// Near-isometric view: small vertical-axis rotation plus small translation.
inline AugmentParams weak_augment_params() {
    return {10.0 * M_PI / 180.0, 0.05, 1.0, 1.0, 0.0};
}

// Aggressive view: free rotation, isotropic rescale and per-point jitter.
inline AugmentParams strong_augment_params() {
    return {M_PI, 0.05, 0.9, 1.1, 0.05};
}

// Applies one rigid-ish transform per sub-cloud: p' = s*R(angle)*p + t, then
// optional per-point jitter. Features, labels and source indices ride along
// untouched. Draw order is fixed (angle, tx, ty, tz, scale, then jitter), so
// a seeded stream reproduces the augmentation bit for bit.
inline SubCloudBatch augment(const SubCloudBatch& batch, const AugmentParams& params, RngStream& rng) {
    SubCloudBatch out = batch;
    for (SubCloud& sc : out.clouds) {
        const double angle = rng.uniform(-params.rotation_max_rad, params.rotation_max_rad);
        const double tx = rng.uniform(-params.translation_max_m, params.translation_max_m);
        const double ty = rng.uniform(-params.translation_max_m, params.translation_max_m);
        const double tz = rng.uniform(-params.translation_max_m, params.translation_max_m);
        const double scale = rng.uniform(params.scale_min, params.scale_max);
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        for (Vec3& p : sc.positions) {
            const double x = p[0];
            const double y = p[1];
            p[0] = scale * (c * x - s * y) + tx;
            p[1] = scale * (s * x + c * y) + ty;
            p[2] = scale * p[2] + tz;
        }
        if (params.jitter_sigma_m > 0.0) {
            for (Vec3& p : sc.positions)
                for (int a = 0; a < 3; ++a) p[a] += rng.normal(0.0, params.jitter_sigma_m);
        }
    }
    return out;
}

inline SubCloudBatch weak_augment(const SubCloudBatch& batch, RngStream& rng) {
    return augment(batch, weak_augment_params(), rng);
}

inline SubCloudBatch strong_augment(const SubCloudBatch& batch, RngStream& rng) {
    return augment(batch, strong_augment_params(), rng);
}

} // namespace apcotta
