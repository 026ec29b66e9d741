#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "apcotta/common.hpp"
#include "apcotta/pointcloud.hpp"

namespace apcotta {

// Exact brute-force k-nearest-neighbor search. Distance ties are broken by
// the lower point index so results are reproducible.
inline NeighborIndex knn(const std::vector<Vec3>& positions, int k) {
    const std::size_t n = positions.size();
    if (k <= 0) throw ValidationError("knn: k must be positive");
    if (static_cast<std::size_t>(k) >= n)
        throw ValidationError("knn: k must be smaller than the point count");

    NeighborIndex out;
    out.k = k;
    out.indices.resize(n * static_cast<std::size_t>(k));

    struct Cand {
        double d2;
        std::uint32_t idx;
    };
    std::vector<Cand> cands;
    cands.reserve(n - 1);

    const auto less = [](const Cand& a, const Cand& b) {
        return a.d2 < b.d2 || (a.d2 == b.d2 && a.idx < b.idx);
    };

    for (std::size_t i = 0; i < n; ++i) {
        cands.clear();
        const Vec3& p = positions[i];
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            cands.push_back({squared_distance(p, positions[j]), static_cast<std::uint32_t>(j)});
        }
        std::nth_element(cands.begin(), cands.begin() + (k - 1), cands.end(), less);
        std::sort(cands.begin(), cands.begin() + k, less);
        for (int m = 0; m < k; ++m)
            out.indices[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(m)] = cands[static_cast<std::size_t>(m)].idx;
    }
    return out;
}

} // namespace apcotta
