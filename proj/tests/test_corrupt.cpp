#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "apcotta/corrupt.hpp"

using namespace apcotta;

namespace {

PointCloud random_cloud(std::size_t n, std::uint64_t seed, int class_count = 4) {
    RngStream rng(seed);
    PointCloud c;
    c.class_count = class_count;
    for (std::size_t i = 0; i < n; ++i) {
        c.positions.push_back({rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0), rng.uniform(0.0, 20.0)});
        c.features.push_back(rng.uniform01());
        c.labels.push_back(static_cast<std::uint8_t>(rng.bounded(static_cast<std::uint64_t>(class_count))));
    }
    return c;
}

std::size_t count_moved(const PointCloud& before, const PointCloud& after) {
    REQUIRE(before.size() == after.size());
    std::size_t moved = 0;
    for (std::size_t i = 0; i < before.size(); ++i)
        if (before.positions[i] != after.positions[i]) ++moved;
    return moved;
}

void check_survivors_identical(const PointCloud& before, const PointCloud& after) {
    for (std::size_t i = 0; i < after.size(); ++i) {
        if (before.size() == after.size()) {
            CHECK(after.labels[i] == before.labels[i]);
            CHECK(after.feature(i, 0) == before.feature(i, 0));
        }
    }
}

} // namespace

TEST_CASE("severity tables carry the published parameters") {
    const SeverityTable& isprs = isprs_profile();
    CHECK(isprs.sunlight_ratio == std::array<double, 5>{0.007, 0.014, 0.021, 0.028, 0.035});
    CHECK(isprs.sunlight_sigma_m == 2.0);
    CHECK(isprs.density_remove_ratio == std::array<double, 5>{0.0602, 0.1204, 0.1806, 0.2408, 0.301});
    CHECK(isprs.cutout_groups == std::array<int, 5>{2, 3, 5, 7, 10});
    CHECK(isprs.gaussian_sigma_m == std::array<double, 5>{0.02002, 0.04004, 0.06006, 0.08008, 0.1001});
    CHECK(isprs.uniform_bound_m == std::array<double, 5>{0.028, 0.056, 0.084, 0.112, 0.140});
    CHECK(isprs.impulse_fraction[0] == doctest::Approx(11.0 / 300.0).epsilon(1e-12));
    CHECK(isprs.impulse_fraction[4] == doctest::Approx(11.0 / 100.0).epsilon(1e-12));
    CHECK(isprs.space_points_per_cell == std::array<int, 5>{5, 10, 15, 20, 25});

    const SeverityTable& h3d = h3d_profile();
    CHECK(h3d.sunlight_ratio == std::array<double, 5>{0.003, 0.006, 0.009, 0.012, 0.015});
    CHECK(h3d.sunlight_sigma_m == 1.0);
    CHECK(h3d.density_remove_ratio == std::array<double, 5>{0.182, 0.364, 0.546, 0.728, 0.910});
    CHECK(h3d.gaussian_sigma_m == std::array<double, 5>{0.012, 0.024, 0.036, 0.048, 0.060});
    CHECK(h3d.impulse_fraction[0] == doctest::Approx(7.0 / 300.0).epsilon(1e-12));
    CHECK(h3d.space_points_per_cell == std::array<int, 5>{100, 200, 300, 400, 500});
}

TEST_CASE("severity parameters are monotone non-decreasing") {
    for (const SeverityTable* t : {&isprs_profile(), &h3d_profile()}) {
        for (int s = 1; s < 5; ++s) {
            CHECK(t->sunlight_ratio[s] >= t->sunlight_ratio[s - 1]);
            CHECK(t->density_remove_ratio[s] >= t->density_remove_ratio[s - 1]);
            CHECK(t->cutout_groups[s] >= t->cutout_groups[s - 1]);
            CHECK(t->gaussian_sigma_m[s] >= t->gaussian_sigma_m[s - 1]);
            CHECK(t->uniform_bound_m[s] >= t->uniform_bound_m[s - 1]);
            CHECK(t->impulse_fraction[s] >= t->impulse_fraction[s - 1]);
            CHECK(t->space_points_per_cell[s] >= t->space_points_per_cell[s - 1]);
        }
    }
}

TEST_CASE("sunlight displaces exactly the published fraction") {
    const PointCloud c = random_cloud(1000, 1);
    RngStream rng(2);
    const PointCloud out = sunlight(c, 5, isprs_profile(), rng);
    CHECK(out.size() == 1000);
    CHECK(count_moved(c, out) == 35); // floor(0.035 * 1000)
    CHECK(out.labels == c.labels);
    CHECK(out.features == c.features);
}

TEST_CASE("sunlight ratio zero is the identity") {
    const PointCloud c = random_cloud(100, 3);
    RngStream rng(4);
    const PointCloud out = displace_fraction_gaussian(c, 0.0, 2.0, rng);
    CHECK(out.positions == c.positions);
}

TEST_CASE("sunlight displacement sigma matches its distribution") {
    const PointCloud c = random_cloud(40000, 5);
    RngStream rng(6);
    const PointCloud out = displace_fraction_gaussian(c, 1.0, 2.0, rng);
    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < c.size(); ++i)
        for (int a = 0; a < 3; ++a) {
            const double d = out.positions[i][a] - c.positions[i][a];
            sum += d;
            sum2 += d * d;
            ++n;
        }
    const double mean = sum / static_cast<double>(n);
    const double std_dev = std::sqrt(sum2 / static_cast<double>(n) - mean * mean);
    CHECK(std_dev == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("density decrease removes the published counts") {
    const PointCloud c = random_cloud(10000, 7);
    SUBCASE("isprs severity 1 keeps 9398") {
        RngStream rng(8);
        CHECK(density_decrease(c, 1, isprs_profile(), rng).size() == 9398);
    }
    SUBCASE("h3d severity 5 keeps 900") {
        RngStream rng(8);
        CHECK(density_decrease(c, 5, h3d_profile(), rng).size() == 900);
    }
    SUBCASE("fractional removal below one point is the identity") {
        const PointCloud tiny = random_cloud(10, 9);
        RngStream rng(8);
        const PointCloud out = density_decrease(tiny, 1, isprs_profile(), rng);
        CHECK(out.positions == tiny.positions);
    }
}

TEST_CASE("density decrease refuses to empty the cloud") {
    const PointCloud tiny = random_cloud(2, 10);
    RngStream rng(11);
    CHECK_THROWS_AS(remove_fraction(tiny, 1.0, rng), ValidationError);
}

TEST_CASE("cutout removes whole groups") {
    SUBCASE("severity 5 applies ten groups") {
        const PointCloud c = random_cloud(2000, 12);
        RngStream rng(13);
        const std::size_t g = cutout_group_size(isprs_profile(), c.size()); // floor(3*2000/100)=60
        CHECK(g == 60);
        const PointCloud out = cutout(c, 5, isprs_profile(), rng);
        CHECK(out.size() == 2000 - 10 * 60);
    }
    SUBCASE("isprs severity 1 on 1000 points removes exactly 60") {
        const PointCloud c = random_cloud(1000, 14);
        RngStream rng(15);
        const PointCloud out = cutout(c, 1, isprs_profile(), rng);
        CHECK(out.size() == 1000 - 2 * 30);
    }
    SUBCASE("degenerate group size clamps to one point per group") {
        const PointCloud c = random_cloud(20, 16); // floor(3*20/100) = 0 -> 1
        RngStream rng(17);
        const PointCloud out = cutout(c, 1, isprs_profile(), rng);
        CHECK(out.size() == 18);
    }
    SUBCASE("exhausting the cloud errors") {
        const PointCloud c = random_cloud(5, 18);
        RngStream rng(19);
        CHECK_THROWS_AS(remove_groups(c, 6, 1, rng), ValidationError);
    }
}

TEST_CASE("gaussian noise displaces every point with the published sigma") {
    const PointCloud c = random_cloud(34000, 20);
    RngStream rng(21);
    const PointCloud out = gaussian_noise(c, 5, isprs_profile(), rng);
    REQUIRE(out.size() == c.size());
    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < c.size(); ++i)
        for (int a = 0; a < 3; ++a) {
            const double d = out.positions[i][a] - c.positions[i][a];
            sum += d;
            sum2 += d * d;
            ++n;
        }
    const double mean = sum / static_cast<double>(n);
    const double std_dev = std::sqrt(sum2 / static_cast<double>(n) - mean * mean);
    CHECK(std_dev == doctest::Approx(0.1001).epsilon(0.05));
    // CLT bound on the mean: 3 standard errors
    CHECK(std::abs(mean) < 3.0 * 0.1001 / std::sqrt(static_cast<double>(n)));
    CHECK(out.labels == c.labels);
}

TEST_CASE("gaussian noise with sigma zero is the identity") {
    const PointCloud c = random_cloud(50, 22);
    RngStream rng(23);
    CHECK(displace_all_gaussian(c, 0.0, rng).positions == c.positions);
}

TEST_CASE("uniform noise is bounded and has variance s^2/3") {
    const PointCloud c = random_cloud(34000, 24);
    RngStream rng(25);
    const PointCloud out = uniform_noise(c, 3, isprs_profile(), rng);
    const double s = 0.084;
    double sum2 = 0.0;
    std::size_t n = 0;
    double max_abs = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i)
        for (int a = 0; a < 3; ++a) {
            const double d = out.positions[i][a] - c.positions[i][a];
            max_abs = std::max(max_abs, std::abs(d));
            sum2 += d * d;
            ++n;
        }
    CHECK(max_abs <= s);
    CHECK(sum2 / static_cast<double>(n) == doctest::Approx(s * s / 3.0).epsilon(0.05));
    RngStream rng2(25);
    CHECK(displace_all_uniform(c, 0.0, rng2).positions == c.positions);
}

TEST_CASE("impulse noise moves the published count by exactly +-magnitude") {
    const PointCloud c = random_cloud(3000, 26);
    RngStream rng(27);
    const PointCloud out = impulse_noise(c, 5, isprs_profile(), rng);
    REQUIRE(out.size() == c.size());
    std::size_t moved = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        bool any = false;
        for (int a = 0; a < 3; ++a) {
            const double d = out.positions[i][a] - c.positions[i][a];
            if (d != 0.0) {
                any = true;
                CHECK(std::abs(d) == doctest::Approx(0.1).epsilon(1e-12));
            }
        }
        if (any) ++moved;
    }
    CHECK(moved == 330); // floor(11*3000/100)

    SUBCASE("fraction below one point is the identity") {
        const PointCloud tiny = random_cloud(20, 28);
        RngStream r2(29);
        CHECK(displace_fraction_impulse(tiny, 0.01, 0.1, r2).positions == tiny.positions);
    }
}

TEST_CASE("space noise fills only occupied cells with ignore-labeled points") {
    SUBCASE("single occupied cell receives exactly the per-cell quota") {
        PointCloud c;
        c.class_count = 2;
        c.positions = {{1, 2, 3}, {1, 2, 3}, {1, 2, 3}}; // zero-extent bbox = one cell
        c.features = {0.5, 0.6, 0.7};
        c.labels = {0, 1, 0};
        RngStream rng(30);
        const PointCloud out = space_noise(c, 1, isprs_profile(), rng);
        CHECK(out.size() == 3 + 5);
        for (std::size_t i = 3; i < out.size(); ++i) {
            CHECK(out.labels[i] == kIgnoreLabel);
            CHECK(out.feature(i, 0) == 0.0);
        }
        CHECK(out.positions[0] == c.positions[0]);
        CHECK(out.labels[0] == 0);
    }

    SUBCASE("added count is per-cell quota times occupied cells") {
        const PointCloud c = random_cloud(5000, 31);
        // occupancy oracle
        Vec3 lo = c.positions[0], hi = c.positions[0];
        for (const auto& p : c.positions)
            for (int a = 0; a < 3; ++a) {
                lo[a] = std::min(lo[a], p[a]);
                hi[a] = std::max(hi[a], p[a]);
            }
        std::set<std::array<int, 3>> occ;
        for (const auto& p : c.positions) {
            std::array<int, 3> cell;
            for (int a = 0; a < 3; ++a) {
                const double step = (hi[a] - lo[a]) / 10.0;
                cell[a] = std::clamp(static_cast<int>(std::floor((p[a] - lo[a]) / step)), 0, 9);
            }
            occ.insert(cell);
        }
        RngStream rng(32);
        const PointCloud out = space_noise(c, 1, isprs_profile(), rng);
        CHECK(out.size() == c.size() + 5 * occ.size());
    }

    SUBCASE("zero quota is the identity") {
        const PointCloud c = random_cloud(100, 33);
        RngStream rng(34);
        CHECK(inject_space_noise(c, 0, rng).size() == c.size());
    }
}

TEST_CASE("corruptions preserve surviving labels") {
    const PointCloud c = random_cloud(4000, 35);
    for (CorruptionKind kind : kDomainOrder) {
        RngStream rng(36);
        const PointCloud out = apply_corruption(c, kind, 3, isprs_profile(), rng);
        check_survivors_identical(c, out);
    }
}

TEST_CASE("point count ledger per kind") {
    const std::size_t n = 5000;
    const PointCloud c = random_cloud(n, 37);
    for (const SeverityTable* t : {&isprs_profile(), &h3d_profile()}) {
        for (int sev = 1; sev <= 5; ++sev) {
            {
                RngStream rng(38);
                CHECK(sunlight(c, sev, *t, rng).size() == n);
            }
            {
                RngStream rng(38);
                CHECK(gaussian_noise(c, sev, *t, rng).size() == n);
            }
            {
                RngStream rng(38);
                CHECK(uniform_noise(c, sev, *t, rng).size() == n);
            }
            {
                RngStream rng(38);
                CHECK(impulse_noise(c, sev, *t, rng).size() == n);
            }
            {
                RngStream rng(38);
                const std::size_t removed = static_cast<std::size_t>(
                    std::floor(t->density_remove_ratio[static_cast<std::size_t>(sev - 1)] * static_cast<double>(n)));
                CHECK(density_decrease(c, sev, *t, rng).size() == n - removed);
            }
            {
                RngStream rng(38);
                const std::size_t g = cutout_group_size(*t, n);
                const std::size_t expect =
                    n - static_cast<std::size_t>(t->cutout_groups[static_cast<std::size_t>(sev - 1)]) * g;
                CHECK(cutout(c, sev, *t, rng).size() == expect);
            }
        }
    }
}

TEST_CASE("build_benchmark writes the default domain order deterministically") {
    const PointCloud c = random_cloud(800, 39);
    const auto dir = std::filesystem::temp_directory_path() / "apcotta_bench_test";
    std::filesystem::remove_all(dir);

    BenchmarkManifest m = default_manifest("src", (dir / "a").string(), "isprs", 5, 99);
    REQUIRE(m.domains.size() == 7);
    CHECK(m.domains[0].kind == CorruptionKind::Sunlight);
    CHECK(m.domains[1].kind == CorruptionKind::Space);
    CHECK(m.domains[2].kind == CorruptionKind::Uniform);
    CHECK(m.domains[3].kind == CorruptionKind::Density);
    CHECK(m.domains[4].kind == CorruptionKind::Cutout);
    CHECK(m.domains[5].kind == CorruptionKind::Impulse);
    CHECK(m.domains[6].kind == CorruptionKind::Gaussian);

    build_benchmark(c, m, (dir / "a" / "manifest.json").string());

    BenchmarkManifest m2 = default_manifest("src", (dir / "b").string(), "isprs", 5, 99);
    build_benchmark(c, m2, (dir / "b" / "manifest.json").string());

    for (std::size_t i = 0; i < 7; ++i) {
        std::ifstream fa(m.domains[i].path, std::ios::binary);
        std::ifstream fb(m2.domains[i].path, std::ios::binary);
        const std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
        const std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
        CHECK(ba == bb);
        CHECK_FALSE(ba.empty());
    }

    const BenchmarkManifest loaded = load_manifest((dir / "a" / "manifest.json").string());
    CHECK(loaded.domains.size() == 7);
    CHECK(loaded.profile == "isprs");
    CHECK(loaded.seed == 99);
    std::filesystem::remove_all(dir);
}

TEST_CASE("manifests with duplicate paths are rejected") {
    BenchmarkManifest m;
    m.profile = "isprs";
    m.domains.push_back({CorruptionKind::Sunlight, 5, "same.xyzl"});
    m.domains.push_back({CorruptionKind::Gaussian, 5, "same.xyzl"});
    CHECK_THROWS_AS(validate_manifest(m), ValidationError);
}
