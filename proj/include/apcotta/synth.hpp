#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "apcotta/common.hpp"
#include "apcotta/pointcloud.hpp"
#include "apcotta/rng.hpp"

namespace apcotta {

// Labeled synthetic stand-in for a real survey: a jittered ground height
// field with boxes (buildings), ellipsoid-crown trees, cars and poles.
// Class ids: ground 0, building 1, tree 2, car 3, pole 4.
inline constexpr int kSceneClassCount = 5;

inline const char* scene_class_name(int c) {
    switch (c) {
        case 0: return "ground";
        case 1: return "building";
        case 2: return "tree";
        case 3: return "car";
        case 4: return "pole";
    }
    return "?";
}

struct SyntheticSceneSpec {
    double extent = 100.0;          // square footprint in meters
    double ground_density = 12.0;   // points per m^2
    double surface_density = 40.0;  // points per m^2 of object surface
    int buildings = 8;
    int trees = 25;
    int cars = 12;
    int poles = 10;
};

namespace detail {

// smooth deterministic terrain undulation
struct HeightField {
    double extent;
    double a1, a2, f1, f2, p1, p2;

    HeightField(double ext, RngStream& rng)
        : extent(ext),
          a1(rng.uniform(0.15, 0.35)),
          a2(rng.uniform(0.08, 0.2)),
          f1(rng.uniform(1.0, 2.5)),
          f2(rng.uniform(2.0, 4.0)),
          p1(rng.uniform(0.0, 6.283185307179586)),
          p2(rng.uniform(0.0, 6.283185307179586)) {}

    double operator()(double x, double y) const {
        const double u = x / extent, v = y / extent;
        return a1 * std::sin(6.283185307179586 * f1 * u + p1) * std::cos(6.283185307179586 * f1 * v + p1) +
               a2 * std::sin(6.283185307179586 * f2 * (u + v) + p2);
    }
};

inline void push_point(PointCloud& cloud, double x, double y, double z, double intensity, int label) {
    cloud.positions.push_back({x, y, z});
    cloud.features.push_back(intensity);
    cloud.labels.push_back(static_cast<std::uint8_t>(label));
}

// class-dependent intensity, heavily overlapped so geometry has to carry
// most of the signal
inline double intensity_for(int label, RngStream& rng) {
    static constexpr double means[kSceneClassCount] = {0.4, 0.62, 0.68, 0.25, 0.9};
    return means[label] + rng.normal(0.0, 0.12);
}

} // namespace detail

inline PointCloud synth_scene(const SyntheticSceneSpec& spec, std::uint64_t seed) {
    if (!(spec.extent > 0.0)) throw ValidationError("synth_scene: extent must be positive");
    if (!(spec.ground_density > 0.0)) throw ValidationError("synth_scene: ground density must be positive");

    PointCloud cloud;
    cloud.class_count = kSceneClassCount;
    cloud.feature_count = 1;

    RngStream rng(seed);
    const detail::HeightField height(spec.extent, rng);

    // ground: jittered grid at the requested density
    const double spacing = 1.0 / std::sqrt(spec.ground_density);
    const int cells = static_cast<int>(std::floor(spec.extent / spacing));
    for (int ix = 0; ix < cells; ++ix) {
        for (int iy = 0; iy < cells; ++iy) {
            const double x = (static_cast<double>(ix) + 0.5) * spacing + rng.uniform(-0.4, 0.4) * spacing;
            const double y = (static_cast<double>(iy) + 0.5) * spacing + rng.uniform(-0.4, 0.4) * spacing;
            const double z = height(x, y) + rng.uniform(-0.02, 0.02);
            detail::push_point(cloud, x, y, z, detail::intensity_for(0, rng), 0);
        }
    }

    const double margin = 6.0;
    const auto place = [&](double span) {
        if (spec.extent <= 2.0 * margin) return rng.uniform(0.0, spec.extent);
        (void)span;
        return rng.uniform(margin, spec.extent - margin);
    };

    // buildings: axis-aligned boxes, four walls plus roof
    for (int b = 0; b < spec.buildings; ++b) {
        const double cx = place(14.0), cy = place(14.0);
        const double w = rng.uniform(5.0, 10.0), d = rng.uniform(5.0, 10.0), h = rng.uniform(3.0, 7.0);
        const double z0 = height(cx, cy);
        const auto wall_points = [&](double area) {
            return static_cast<int>(std::ceil(area * spec.surface_density));
        };
        for (int side = 0; side < 4; ++side) {
            const bool along_x = side < 2;
            const double len = along_x ? w : d;
            const int n = wall_points(len * h);
            for (int i = 0; i < n; ++i) {
                const double along = rng.uniform(-0.5, 0.5) * len;
                const double up = rng.uniform(0.0, 1.0) * h;
                double x, y;
                if (along_x) {
                    x = cx + along;
                    y = cy + (side == 0 ? -0.5 * d : 0.5 * d);
                } else {
                    x = cx + (side == 2 ? -0.5 * w : 0.5 * w);
                    y = cy + along;
                }
                x += rng.uniform(-0.005, 0.005);
                y += rng.uniform(-0.005, 0.005);
                detail::push_point(cloud, x, y, z0 + up, detail::intensity_for(1, rng), 1);
            }
        }
        const int roof_n = wall_points(w * d);
        for (int i = 0; i < roof_n; ++i) {
            const double x = cx + rng.uniform(-0.5, 0.5) * w;
            const double y = cy + rng.uniform(-0.5, 0.5) * d;
            detail::push_point(cloud, x, y, z0 + h + rng.uniform(-0.03, 0.03), detail::intensity_for(1, rng), 1);
        }
    }

    // trees: trunk cylinder plus ellipsoid crown shell
    for (int t = 0; t < spec.trees; ++t) {
        const double cx = place(5.0), cy = place(5.0);
        const double z0 = height(cx, cy);
        const double trunk_h = rng.uniform(1.5, 3.0);
        const double trunk_r = rng.uniform(0.12, 0.25);
        const double crown_rx = rng.uniform(1.2, 2.5);
        const double crown_rz = rng.uniform(1.5, 3.5);
        const int trunk_n = static_cast<int>(std::ceil(trunk_h * 12.0));
        for (int i = 0; i < trunk_n; ++i) {
            const double ang = rng.uniform(0.0, 6.283185307179586);
            const double up = rng.uniform(0.0, trunk_h);
            detail::push_point(cloud, cx + trunk_r * std::cos(ang), cy + trunk_r * std::sin(ang), z0 + up,
                               0.5 + rng.normal(0.0, 0.12), 2);
        }
        const double crown_area = 4.0 * 3.141592653589793 * crown_rx * crown_rz;
        const int crown_n = static_cast<int>(std::ceil(crown_area * spec.surface_density * 0.5));
        const double crown_cz = z0 + trunk_h + crown_rz * 0.8;
        for (int i = 0; i < crown_n; ++i) {
            // direction on the unit sphere, mildly pulled inside the shell
            const double u = rng.uniform(-1.0, 1.0);
            const double phi = rng.uniform(0.0, 6.283185307179586);
            const double s = std::sqrt(std::max(0.0, 1.0 - u * u));
            const double shell = rng.uniform(0.75, 1.0);
            detail::push_point(cloud, cx + crown_rx * shell * s * std::cos(phi),
                               cy + crown_rx * shell * s * std::sin(phi), crown_cz + crown_rz * shell * u,
                               detail::intensity_for(2, rng), 2);
        }
    }

    // cars: small boxes on the ground, five visible faces
    for (int v = 0; v < spec.cars; ++v) {
        const double cx = place(4.0), cy = place(4.0);
        const double z0 = height(cx, cy) + 0.2;
        const double w = 4.2, d = 1.8, h = 1.5;
        const int n = static_cast<int>(std::ceil((w * d + 2.0 * (w + d) * h) * spec.surface_density * 0.6));
        for (int i = 0; i < n; ++i) {
            const int face = static_cast<int>(rng.bounded(5));
            double x = 0.0, y = 0.0, z = 0.0;
            switch (face) {
                case 0: // roof
                    x = rng.uniform(-0.5, 0.5) * w;
                    y = rng.uniform(-0.5, 0.5) * d;
                    z = h;
                    break;
                case 1:
                case 2:
                    x = rng.uniform(-0.5, 0.5) * w;
                    y = (face == 1 ? -0.5 : 0.5) * d;
                    z = rng.uniform(0.0, h);
                    break;
                default:
                    x = (face == 3 ? -0.5 : 0.5) * w;
                    y = rng.uniform(-0.5, 0.5) * d;
                    z = rng.uniform(0.0, h);
                    break;
            }
            detail::push_point(cloud, cx + x, cy + y, z0 + z, detail::intensity_for(3, rng), 3);
        }
    }

    // poles: thin vertical segments
    for (int p = 0; p < spec.poles; ++p) {
        const double cx = place(1.0), cy = place(1.0);
        const double z0 = height(cx, cy);
        const double h = rng.uniform(4.0, 6.0);
        const int n = static_cast<int>(std::ceil(h * 60.0));
        for (int i = 0; i < n; ++i) {
            const double up = rng.uniform(0.0, h);
            detail::push_point(cloud, cx + rng.uniform(-0.06, 0.06), cy + rng.uniform(-0.06, 0.06), z0 + up,
                               detail::intensity_for(4, rng), 4);
        }
    }

    validate_cloud(cloud);
    return cloud;
}

} // namespace apcotta
