// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <set>
#include <vector>

#include "ralhe/geometry.hpp"

namespace ralhe::test {

inline std::mt19937_64 rng(uint64_t seed) { return std::mt19937_64(seed); }

inline double uniform01(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline std::vector<std::array<double, 3>> random_points(size_t n, uint64_t seed) {
    auto g = rng(seed);
    std::vector<std::array<double, 3>> pts(n);
    for (auto& p : pts) p = {uniform01(g), uniform01(g), uniform01(g)};
    return pts;
}

/// Random deduplicated Morton-sorted voxel set at the given depth.
inline std::vector<MortonCode> random_voxel_set(size_t n, int depth, uint64_t seed) {
    auto g = rng(seed);
    const uint64_t side = uint64_t(1) << depth;
    std::set<MortonCode> codes;
    while (codes.size() < n) {
        VoxelCoord v{uint32_t(g() % side), uint32_t(g() % side), uint32_t(g() % side)};
        codes.insert(morton_encode(v, depth));
    }
    return {codes.begin(), codes.end()};
}

/// Reference bit-interleaver: one bit at a time, no magic masks.
inline uint64_t morton_oracle(uint32_t x, uint32_t y, uint32_t z, int depth) {
    uint64_t code = 0;
    for (int b = 0; b < depth; ++b) {
        code |= (uint64_t((x >> b) & 1) << (3 * b + 2));
        code |= (uint64_t((y >> b) & 1) << (3 * b + 1));
        code |= (uint64_t((z >> b) & 1) << (3 * b));
    }
    return code;
}

/// Explicit queue-based breadth-first octree traversal. Children are visited
/// in ascending child-index order ((x<<2)|(y<<1)|z). Returns leaves in visit
/// order.
inline std::vector<MortonCode> bfs_leaf_order(const std::vector<MortonCode>& voxels, int depth) {
    std::set<MortonCode> occupied(voxels.begin(), voxels.end());
    auto has_descendant = [&](MortonCode prefix, int level) {
        // occupied codes with this prefix form a contiguous Morton range
        const int shift = 3 * (depth - level);
        auto it = occupied.lower_bound(prefix << shift);
        return it != occupied.end() && (*it >> shift) == prefix;
    };
    std::vector<std::pair<MortonCode, int>> queue{{0, 0}};
    std::vector<MortonCode> leaves;
    for (size_t head = 0; head < queue.size(); ++head) {
        auto [code, level] = queue[head];
        if (level == depth) {
            leaves.push_back(code);
            continue;
        }
        for (MortonCode child = 0; child < 8; ++child) {
            MortonCode c = (code << 3) | child;
            if (has_descendant(c, level + 1)) queue.emplace_back(c, level + 1);
        }
    }
    return leaves;
}

} // namespace ralhe::test
