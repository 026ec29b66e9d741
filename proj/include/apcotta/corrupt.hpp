#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "apcotta/cloud_io.hpp"
#include "apcotta/common.hpp"
#include "apcotta/pointcloud.hpp"
#include "apcotta/rng.hpp"

#include "json.hpp"

namespace apcotta {

enum class CorruptionKind { Sunlight, Space, Uniform, Density, Cutout, Impulse, Gaussian };

inline constexpr std::array<CorruptionKind, 7> kDomainOrder = {
    CorruptionKind::Sunlight, CorruptionKind::Space,   CorruptionKind::Uniform,
    CorruptionKind::Density,  CorruptionKind::Cutout,  CorruptionKind::Impulse,
    CorruptionKind::Gaussian};

inline std::string to_string(CorruptionKind kind) {
    switch (kind) {
        case CorruptionKind::Sunlight: return "sunlight";
        case CorruptionKind::Space: return "space";
        case CorruptionKind::Uniform: return "uniform";
        case CorruptionKind::Density: return "density";
        case CorruptionKind::Cutout: return "cutout";
        case CorruptionKind::Impulse: return "impulse";
        case CorruptionKind::Gaussian: return "gaussian";
    }
    throw ValidationError("unknown corruption kind");
}

inline CorruptionKind corruption_from_string(const std::string& name) {
    for (CorruptionKind k : kDomainOrder)
        if (to_string(k) == name) return k;
    throw ValidationError("unknown corruption kind '" + name + "'");
}

// Per-profile severity parameters, five levels each, monotone in severity.
struct SeverityTable {
    std::string profile;
    std::array<double, 5> sunlight_ratio;
    double sunlight_sigma_m;
    std::array<double, 5> density_remove_ratio;
    std::array<int, 5> cutout_groups;
    int cutout_group_divisor;   // group size = floor(divisor_num * N / 100) via numerator below
    int cutout_group_numerator; // group size = floor(numerator * N / 100)
    std::array<double, 5> gaussian_sigma_m;
    std::array<double, 5> uniform_bound_m;
    std::array<double, 5> impulse_fraction;
    double impulse_magnitude_m;
    std::array<int, 5> space_points_per_cell;
};

inline const SeverityTable& isprs_profile() {
    static const SeverityTable t = [] {
        SeverityTable t;
        t.profile = "isprs";
        t.sunlight_ratio = {0.007, 0.014, 0.021, 0.028, 0.035};
        t.sunlight_sigma_m = 2.0;
        t.density_remove_ratio = {0.0602, 0.1204, 0.1806, 0.2408, 0.301};
        t.cutout_groups = {2, 3, 5, 7, 10};
        t.cutout_group_divisor = 100;
        t.cutout_group_numerator = 3;
        t.gaussian_sigma_m = {0.02002, 0.04004, 0.06006, 0.08008, 0.1001};
        t.uniform_bound_m = {0.028, 0.056, 0.084, 0.112, 0.140};
        t.impulse_fraction = {11.0 / 300.0, 11.0 / 250.0, 11.0 / 200.0, 11.0 / 150.0, 11.0 / 100.0};
        t.impulse_magnitude_m = 0.1;
        t.space_points_per_cell = {5, 10, 15, 20, 25};
        return t;
    }();
    return t;
}

inline const SeverityTable& h3d_profile() {
    static const SeverityTable t = [] {
        SeverityTable t;
        t.profile = "h3d";
        t.sunlight_ratio = {0.003, 0.006, 0.009, 0.012, 0.015};
        t.sunlight_sigma_m = 1.0;
        t.density_remove_ratio = {0.182, 0.364, 0.546, 0.728, 0.910};
        t.cutout_groups = {2, 3, 5, 7, 10};
        t.cutout_group_divisor = 100;
        t.cutout_group_numerator = 1;
        t.gaussian_sigma_m = {0.012, 0.024, 0.036, 0.048, 0.060};
        t.uniform_bound_m = {0.028, 0.056, 0.084, 0.112, 0.140};
        t.impulse_fraction = {7.0 / 300.0, 7.0 / 250.0, 7.0 / 200.0, 7.0 / 150.0, 7.0 / 100.0};
        t.impulse_magnitude_m = 0.06;
        t.space_points_per_cell = {100, 200, 300, 400, 500};
        return t;
    }();
    return t;
}

inline const SeverityTable& severity_profile(const std::string& name) {
    if (name == "isprs") return isprs_profile();
    if (name == "h3d") return h3d_profile();
    throw ValidationError("unknown profile '" + name + "' (expected isprs or h3d)");
}

inline void check_severity(int severity) {
    if (severity < 1 || severity > 5)
        throw ValidationError("severity must be in [1,5], got " + std::to_string(severity));
}

// ---- parameter-level generators -------------------------------------------
// The public per-severity operations resolve profile parameters and forward
// here; tests exercise limit cases (ratio 0, sigma 0) through this layer.

// Displace floor(ratio*N) uniformly chosen points by iid per-axis N(0, sigma^2).
inline PointCloud displace_fraction_gaussian(const PointCloud& cloud, double ratio, double sigma,
                                             RngStream& rng) {
    validate_cloud(cloud);
    PointCloud out = cloud;
    const std::size_t count = static_cast<std::size_t>(
        std::floor(ratio * static_cast<double>(cloud.size())));
    if (count == 0) return out;
    const auto chosen = rng.sample_without_replacement(static_cast<std::uint32_t>(cloud.size()),
                                                       static_cast<std::uint32_t>(count));
    for (std::uint32_t idx : chosen)
        for (int a = 0; a < 3; ++a) out.positions[idx][a] += rng.normal(0.0, sigma);
    return out;
}

inline PointCloud remove_fraction(const PointCloud& cloud, double ratio, RngStream& rng) {
    validate_cloud(cloud);
    const std::size_t count = static_cast<std::size_t>(
        std::floor(ratio * static_cast<double>(cloud.size())));
    if (count == 0) return cloud;
    if (count >= cloud.size()) throw ValidationError("density decrease would remove every point");
    const auto doomed = rng.sample_without_replacement(static_cast<std::uint32_t>(cloud.size()),
                                                       static_cast<std::uint32_t>(count));
    std::vector<bool> dead(cloud.size(), false);
    for (std::uint32_t idx : doomed) dead[idx] = true;

    PointCloud out;
    out.feature_count = cloud.feature_count;
    out.class_count = cloud.class_count;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (dead[i]) continue;
        out.positions.push_back(cloud.positions[i]);
        for (int f = 0; f < cloud.feature_count; ++f) out.features.push_back(cloud.feature(i, f));
        if (cloud.has_labels()) out.labels.push_back(cloud.labels[i]);
    }
    return out;
}

// Removes `groups` balls of `group_size` points; each ball is a random
// surviving point plus its nearest surviving neighbors. Group size is fixed
// from the original cloud.
inline PointCloud remove_groups(const PointCloud& cloud, int groups, std::size_t group_size,
                                RngStream& rng) {
    validate_cloud(cloud);
    if (groups < 0) throw ValidationError("cutout: negative group count");
    group_size = std::max<std::size_t>(1, group_size);

    std::vector<std::uint32_t> alive(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) alive[i] = static_cast<std::uint32_t>(i);

    for (int g = 0; g < groups; ++g) {
        if (alive.empty()) throw ValidationError("cutout exhausted the cloud");
        const std::size_t take = std::min(group_size, alive.size());
        const std::size_t center_slot = static_cast<std::size_t>(rng.bounded(alive.size()));
        const Vec3 center = cloud.positions[alive[center_slot]];

        // nearest `take` survivors to the chosen center (the center itself
        // is at distance zero and always included)
        std::vector<std::pair<double, std::uint32_t>> dist;
        dist.reserve(alive.size());
        for (std::uint32_t idx : alive)
            dist.emplace_back(squared_distance(center, cloud.positions[idx]), idx);
        const auto less = [](const auto& a, const auto& b) {
            return a.first < b.first || (a.first == b.first && a.second < b.second);
        };
        std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(take - 1),
                         dist.end(), less);
        std::set<std::uint32_t> doomed;
        for (std::size_t i = 0; i < take; ++i) doomed.insert(dist[i].second);

        std::vector<std::uint32_t> next;
        next.reserve(alive.size() - take);
        for (std::uint32_t idx : alive)
            if (!doomed.count(idx)) next.push_back(idx);
        alive.swap(next);
    }
    if (alive.empty()) throw ValidationError("cutout exhausted the cloud");

    PointCloud out;
    out.feature_count = cloud.feature_count;
    out.class_count = cloud.class_count;
    for (std::uint32_t i : alive) {
        out.positions.push_back(cloud.positions[i]);
        for (int f = 0; f < cloud.feature_count; ++f) out.features.push_back(cloud.feature(i, f));
        if (cloud.has_labels()) out.labels.push_back(cloud.labels[i]);
    }
    return out;
}

inline PointCloud displace_all_gaussian(const PointCloud& cloud, double sigma, RngStream& rng) {
    validate_cloud(cloud);
    PointCloud out = cloud;
    if (sigma == 0.0) return out;
    for (auto& p : out.positions)
        for (int a = 0; a < 3; ++a) p[a] += rng.normal(0.0, sigma);
    return out;
}

inline PointCloud displace_all_uniform(const PointCloud& cloud, double bound, RngStream& rng) {
    validate_cloud(cloud);
    PointCloud out = cloud;
    if (bound == 0.0) return out;
    for (auto& p : out.positions)
        for (int a = 0; a < 3; ++a) p[a] += rng.uniform(-bound, bound);
    return out;
}

// Displaces floor(fraction*N) points by exactly +/-magnitude per axis with
// independent random signs.
inline PointCloud displace_fraction_impulse(const PointCloud& cloud, double fraction,
                                            double magnitude, RngStream& rng) {
    validate_cloud(cloud);
    PointCloud out = cloud;
    const std::size_t count = static_cast<std::size_t>(
        std::floor(fraction * static_cast<double>(cloud.size())));
    if (count == 0) return out;
    const auto chosen = rng.sample_without_replacement(static_cast<std::uint32_t>(cloud.size()),
                                                       static_cast<std::uint32_t>(count));
    for (std::uint32_t idx : chosen)
        for (int a = 0; a < 3; ++a)
            out.positions[idx][a] += rng.bernoulli(0.5) ? magnitude : -magnitude;
    return out;
}

// Splits the bounding box into a 10x10x10 grid and appends `per_cell` points
// uniform inside every cell that already holds at least one original point.
// Injected points carry zero features and, when the cloud is labeled, the
// IGNORE label.
inline PointCloud inject_space_noise(const PointCloud& cloud, int per_cell, RngStream& rng) {
    validate_cloud(cloud);
    PointCloud out = cloud;
    if (per_cell <= 0) return out;

    constexpr int kGrid = 10;
    Vec3 lo = cloud.positions[0];
    Vec3 hi = cloud.positions[0];
    for (const Vec3& p : cloud.positions)
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    Vec3 step;
    for (int a = 0; a < 3; ++a) step[a] = (hi[a] - lo[a]) / kGrid;

    const auto cell_of = [&](const Vec3& p) {
        std::array<int, 3> c;
        for (int a = 0; a < 3; ++a) {
            if (step[a] <= 0.0) {
                c[a] = 0;
                continue;
            }
            c[a] = std::clamp(static_cast<int>(std::floor((p[a] - lo[a]) / step[a])), 0, kGrid - 1);
        }
        return c;
    };

    std::vector<bool> occupied(kGrid * kGrid * kGrid, false);
    for (const Vec3& p : cloud.positions) {
        const auto c = cell_of(p);
        occupied[static_cast<std::size_t>((c[0] * kGrid + c[1]) * kGrid + c[2])] = true;
    }

    for (int cx = 0; cx < kGrid; ++cx)
        for (int cy = 0; cy < kGrid; ++cy)
            for (int cz = 0; cz < kGrid; ++cz) {
                if (!occupied[static_cast<std::size_t>((cx * kGrid + cy) * kGrid + cz)]) continue;
                for (int i = 0; i < per_cell; ++i) {
                    Vec3 p;
                    const std::array<int, 3> c{cx, cy, cz};
                    for (int a = 0; a < 3; ++a)
                        p[a] = lo[a] + step[a] * (static_cast<double>(c[a]) + rng.uniform01());
                    out.positions.push_back(p);
                    for (int f = 0; f < cloud.feature_count; ++f) out.features.push_back(0.0);
                    if (cloud.has_labels()) out.labels.push_back(kIgnoreLabel);
                }
            }
    return out;
}

// ---- severity-level operations ---------------------------------------------

inline std::size_t cutout_group_size(const SeverityTable& t, std::size_t n) {
    const std::size_t g = static_cast<std::size_t>(
        std::floor(static_cast<double>(t.cutout_group_numerator) * static_cast<double>(n) /
                   static_cast<double>(t.cutout_group_divisor)));
    return std::max<std::size_t>(1, g);
}

inline PointCloud sunlight(const PointCloud& cloud, int severity, const SeverityTable& t, RngStream& rng) {
    check_severity(severity);
    return displace_fraction_gaussian(cloud, t.sunlight_ratio[static_cast<std::size_t>(severity - 1)],
                                      t.sunlight_sigma_m, rng);
}

inline PointCloud density_decrease(const PointCloud& cloud, int severity, const SeverityTable& t,
                                   RngStream& rng) {
    check_severity(severity);
    return remove_fraction(cloud, t.density_remove_ratio[static_cast<std::size_t>(severity - 1)], rng);
}

inline PointCloud cutout(const PointCloud& cloud, int severity, const SeverityTable& t, RngStream& rng) {
    check_severity(severity);
    return remove_groups(cloud, t.cutout_groups[static_cast<std::size_t>(severity - 1)],
                         cutout_group_size(t, cloud.size()), rng);
}

inline PointCloud gaussian_noise(const PointCloud& cloud, int severity, const SeverityTable& t,
                                 RngStream& rng) {
    check_severity(severity);
    return displace_all_gaussian(cloud, t.gaussian_sigma_m[static_cast<std::size_t>(severity - 1)], rng);
}

inline PointCloud uniform_noise(const PointCloud& cloud, int severity, const SeverityTable& t,
                                RngStream& rng) {
    check_severity(severity);
    return displace_all_uniform(cloud, t.uniform_bound_m[static_cast<std::size_t>(severity - 1)], rng);
}

inline PointCloud impulse_noise(const PointCloud& cloud, int severity, const SeverityTable& t,
                                RngStream& rng) {
    check_severity(severity);
    return displace_fraction_impulse(cloud, t.impulse_fraction[static_cast<std::size_t>(severity - 1)],
                                     t.impulse_magnitude_m, rng);
}

inline PointCloud space_noise(const PointCloud& cloud, int severity, const SeverityTable& t,
                              RngStream& rng) {
    check_severity(severity);
    return inject_space_noise(cloud, t.space_points_per_cell[static_cast<std::size_t>(severity - 1)], rng);
}

inline PointCloud apply_corruption(const PointCloud& cloud, CorruptionKind kind, int severity,
                                   const SeverityTable& t, RngStream& rng) {
    switch (kind) {
        case CorruptionKind::Sunlight: return sunlight(cloud, severity, t, rng);
        case CorruptionKind::Space: return space_noise(cloud, severity, t, rng);
        case CorruptionKind::Uniform: return uniform_noise(cloud, severity, t, rng);
        case CorruptionKind::Density: return density_decrease(cloud, severity, t, rng);
        case CorruptionKind::Cutout: return cutout(cloud, severity, t, rng);
        case CorruptionKind::Impulse: return impulse_noise(cloud, severity, t, rng);
        case CorruptionKind::Gaussian: return gaussian_noise(cloud, severity, t, rng);
    }
    throw ValidationError("unknown corruption kind");
}

// ---- benchmark construction -------------------------------------------------

struct BenchmarkDomain {
    CorruptionKind kind;
    int severity;
    std::string path;
};

struct BenchmarkManifest {
    std::string profile = "isprs";
    std::string source;
    std::uint64_t seed = 0;
    std::vector<BenchmarkDomain> domains;
};

inline BenchmarkManifest default_manifest(const std::string& source, const std::string& out_dir,
                                          const std::string& profile, int severity,
                                          std::uint64_t seed) {
    check_severity(severity);
    BenchmarkManifest m;
    m.profile = profile;
    m.source = source;
    m.seed = seed;
    for (CorruptionKind kind : kDomainOrder)
        m.domains.push_back({kind, severity,
                             (std::filesystem::path(out_dir) / (to_string(kind) + ".xyzl")).string()});
    return m;
}

inline void validate_manifest(const BenchmarkManifest& m) {
    std::set<std::string> paths;
    for (const auto& d : m.domains) {
        check_severity(d.severity);
        if (!paths.insert(d.path).second)
            throw ValidationError("manifest has duplicate output path " + d.path);
    }
    if (m.domains.empty()) throw ValidationError("manifest has no domains");
}

inline nlohmann::json manifest_to_json(const BenchmarkManifest& m) {
    nlohmann::json j;
    j["profile"] = m.profile;
    j["source"] = m.source;
    j["seed"] = m.seed;
    j["domains"] = nlohmann::json::array();
    for (const auto& d : m.domains)
        j["domains"].push_back({{"kind", to_string(d.kind)}, {"severity", d.severity}, {"path", d.path}});
    return j;
}

inline BenchmarkManifest manifest_from_json(const nlohmann::json& j) {
    BenchmarkManifest m;
    m.profile = j.at("profile").get<std::string>();
    m.source = j.value("source", std::string());
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& d : j.at("domains"))
        m.domains.push_back({corruption_from_string(d.at("kind").get<std::string>()),
                             d.at("severity").get<int>(), d.at("path").get<std::string>()});
    validate_manifest(m);
    return m;
}

inline BenchmarkManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("manifest " + path + ": " + e.what());
    }
    return manifest_from_json(j);
}

// Applies every manifest domain independently to the clean cloud and writes
// the corrupted clouds plus the manifest JSON. Per-domain seeds are split
// from the manifest seed so domain order never affects a domain's bytes.
inline std::vector<PointCloud> build_benchmark(const PointCloud& clean, const BenchmarkManifest& m,
                                               const std::string& manifest_path) {
    validate_cloud(clean);
    validate_manifest(m);
    const SeverityTable& table = severity_profile(m.profile);

    std::vector<PointCloud> outputs;
    outputs.reserve(m.domains.size());
    for (std::size_t i = 0; i < m.domains.size(); ++i) {
        const auto& d = m.domains[i];
        RngStream rng(split_seed(m.seed, i));
        PointCloud corrupted = apply_corruption(clean, d.kind, d.severity, table, rng);
        const auto parent = std::filesystem::path(d.path).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        save_cloud(corrupted, d.path);
        outputs.push_back(std::move(corrupted));
    }

    const auto parent = std::filesystem::path(manifest_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest " + manifest_path);
    out << manifest_to_json(m).dump(2) << "\n";
    return outputs;
}

} // namespace apcotta
