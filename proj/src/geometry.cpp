// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#include "ralhe/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace ralhe {

namespace {

// Spreads the low 21 bits of v so bit b lands at position 3b.
uint64_t dilate3(uint64_t x) {
    x &= 0x1fffff;
    x = (x | (x << 32)) & 0x1f00000000ffffULL;
    x = (x | (x << 16)) & 0x1f0000ff0000ffULL;
    x = (x | (x << 8)) & 0x100f00f00f00f00fULL;
    x = (x | (x << 4)) & 0x10c30c30c30c30c3ULL;
    x = (x | (x << 2)) & 0x1249249249249249ULL;
    return x;
}

uint32_t compact3(uint64_t v) {
    v &= 0x1249249249249249ULL;
    v = (v ^ (v >> 2)) & 0x10c30c30c30c30c3ULL;
    v = (v ^ (v >> 4)) & 0x100f00f00f00f00fULL;
    v = (v ^ (v >> 8)) & 0x1f0000ff0000ffULL;
    v = (v ^ (v >> 16)) & 0x1f00000000ffffULL;
    v = (v ^ (v >> 32)) & 0x1fffffULL;
    return static_cast<uint32_t>(v);
}

void check_depth(int depth) {
    if (depth < 0 || depth > kMaxDepth) throw ConfigError("octree depth out of [0, 21]");
}

} // namespace

MortonCode morton_encode(const VoxelCoord& v, int depth) {
    check_depth(depth);
    const uint32_t limit = depth >= 32 ? ~0u : (1u << depth);
    if (v.x >= limit || v.y >= limit || v.z >= limit)
        throw Error("morton_encode: component out of range for depth");
    return (dilate3(v.x) << 2) | (dilate3(v.y) << 1) | dilate3(v.z);
}

VoxelCoord morton_decode(MortonCode code, int depth) {
    check_depth(depth);
    if (depth < kMaxDepth && code >= (uint64_t(1) << (3 * depth)))
        throw Error("morton_decode: code out of range for depth");
    return {compact3(code >> 2), compact3(code >> 1), compact3(code)};
}

VoxelizationResult voxelize(const std::vector<std::array<double, 3>>& positions, int depth) {
    check_depth(depth);
    if (positions.empty()) throw Error("voxelize: empty input");

    std::array<double, 3> lo = {std::numeric_limits<double>::infinity(),
                                std::numeric_limits<double>::infinity(),
                                std::numeric_limits<double>::infinity()};
    std::array<double, 3> hi = {-lo[0], -lo[1], -lo[2]};
    for (const auto& p : positions)
        for (int a = 0; a < 3; ++a) {
            if (!std::isfinite(p[a])) throw DataError("voxelize: non-finite coordinate");
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    double side = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
    if (side <= 0.0) side = 1.0; // degenerate input: all points identical

    const double cells = static_cast<double>(uint64_t(1) << depth);
    const int64_t max_cell = (int64_t(1) << depth) - 1;

    std::vector<std::pair<MortonCode, uint32_t>> coded(positions.size());
    for (size_t i = 0; i < positions.size(); ++i) {
        VoxelCoord v;
        uint32_t* c = &v.x;
        for (int a = 0; a < 3; ++a) {
            int64_t q = static_cast<int64_t>(std::floor((positions[i][a] - lo[a]) / side * cells));
            q = std::clamp<int64_t>(q, 0, max_cell);
            c[a] = static_cast<uint32_t>(q);
        }
        coded[i] = {morton_encode(v, depth), static_cast<uint32_t>(i)};
    }
    std::sort(coded.begin(), coded.end());

    VoxelizationResult res;
    res.octree.depth = depth;
    res.octree.num_levels = 1;
    res.octree.bbox_min = lo;
    res.octree.cube_side = side;
    auto& finest = res.octree.levels.emplace_back();
    for (size_t i = 0; i < coded.size(); ++i) {
        if (finest.empty() || coded[i].first != finest.back()) {
            finest.push_back(coded[i].first);
            res.merge_groups.emplace_back();
        }
        res.merge_groups.back().push_back(coded[i].second);
    }
    auto& identity = res.octree.parent_map.emplace_back(finest.size());
    for (uint32_t i = 0; i < finest.size(); ++i) identity[i] = i;
    return res;
}

VoxelizationResult voxelize(const std::vector<std::array<float, 3>>& positions, int depth) {
    std::vector<std::array<double, 3>> pts(positions.size());
    for (size_t i = 0; i < positions.size(); ++i)
        pts[i] = {positions[i][0], positions[i][1], positions[i][2]};
    return voxelize(pts, depth);
}

OctreeHierarchy build_hierarchy(const std::vector<MortonCode>& finest, int depth, int num_levels,
                                const std::array<double, 3>& bbox_min, double cube_side) {
    check_depth(depth);
    if (num_levels < 1 || num_levels > depth + 1)
        throw ConfigError("build_hierarchy: need 1 <= k <= L+1");
    if (!std::is_sorted(finest.begin(), finest.end()) ||
        std::adjacent_find(finest.begin(), finest.end()) != finest.end())
        throw Error("build_hierarchy: finest list must be Morton-sorted and deduplicated");

    OctreeHierarchy h;
    h.depth = depth;
    h.num_levels = num_levels;
    h.bbox_min = bbox_min;
    h.cube_side = cube_side;
    h.levels.resize(num_levels);
    h.parent_map.resize(num_levels);
    h.levels[0] = finest;
    h.parent_map[0].resize(finest.size());
    for (uint32_t i = 0; i < finest.size(); ++i) h.parent_map[0][i] = i;

    // A component-wise right shift by j is a Morton-code shift by 3j, so the
    // shifted list stays sorted and only needs deduplication.
    for (int j = 1; j < num_levels; ++j) {
        auto& lvl = h.levels[j];
        auto& pmap = h.parent_map[j];
        pmap.resize(finest.size());
        for (size_t i = 0; i < finest.size(); ++i) {
            MortonCode c = finest[i] >> (3 * j);
            if (lvl.empty() || c != lvl.back()) lvl.push_back(c);
            pmap[i] = static_cast<uint32_t>(lvl.size() - 1);
        }
    }
    return h;
}

uint32_t parent_index(size_t fine_idx, int j, const OctreeHierarchy& h) {
    if (j < 0 || j >= h.num_levels) throw ConfigError("parent_index: level offset out of range");
    if (fine_idx >= h.finest_count()) throw Error("parent_index: voxel index out of range");
    return h.parent_map[j][fine_idx];
}

NeighborTable build_neighbor_table(const OctreeHierarchy& h) {
    const auto& finest = h.levels.at(0);
    const int64_t max_cell = (int64_t(1) << h.depth) - 1;
    NeighborTable t;
    t.idx.assign(finest.size() * 27, -1);
    for (size_t i = 0; i < finest.size(); ++i) {
        const VoxelCoord v = morton_decode(finest[i], h.depth);
        for (int o = 0; o < 27; ++o) {
            const int dx = o / 9 - 1, dy = (o / 3) % 3 - 1, dz = o % 3 - 1;
            const int64_t nx = int64_t(v.x) + dx, ny = int64_t(v.y) + dy, nz = int64_t(v.z) + dz;
            if (nx < 0 || ny < 0 || nz < 0 || nx > max_cell || ny > max_cell || nz > max_cell)
                continue;
            const MortonCode c = morton_encode(
                {uint32_t(nx), uint32_t(ny), uint32_t(nz)}, h.depth);
            auto it = std::lower_bound(finest.begin(), finest.end(), c);
            if (it != finest.end() && *it == c)
                t.idx[i * 27 + o] = static_cast<int32_t>(it - finest.begin());
        }
    }
    return t;
}

std::array<double, 3> voxel_center(const OctreeHierarchy& h, MortonCode code) {
    const VoxelCoord v = morton_decode(code, h.depth);
    const double cell = h.cube_side / static_cast<double>(uint64_t(1) << h.depth);
    return {h.bbox_min[0] + (v.x + 0.5) * cell,
            h.bbox_min[1] + (v.y + 0.5) * cell,
            h.bbox_min[2] + (v.z + 0.5) * cell};
}

} // namespace ralhe
