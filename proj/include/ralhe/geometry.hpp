// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ralhe/errors.hpp"

namespace ralhe {

/// Maximum supported octree depth: 3*21 = 63 Morton bits fit in a uint64.
inline constexpr int kMaxDepth = 21;

/// Non-negative integer grid indices, each in [0, 2^L - 1].
struct VoxelCoord {
    uint32_t x = 0;
    uint32_t y = 0;
    uint32_t z = 0;

    friend bool operator==(const VoxelCoord&, const VoxelCoord&) = default;
};

/// Bit-interleaved voxel coordinate. Bit b of x lands at code bit 3b+2,
/// y at 3b+1, z at 3b, so x is most significant within each triple and
/// sorting codes sorts voxels in breadth-first octree order.
using MortonCode = uint64_t;

MortonCode morton_encode(const VoxelCoord& v, int depth);
VoxelCoord morton_decode(MortonCode code, int depth);

/// Occupancy sets for resolutions L down to L-(k-1), all derived from the
/// voxelized positions and shared by every attribute.
struct OctreeHierarchy {
    int depth = 0;      // L
    int num_levels = 1; // k
    std::array<double, 3> bbox_min = {0.0, 0.0, 0.0};
    double cube_side = 1.0; // W, scene units

    /// levels[j]: sorted Morton codes of occupied voxels at resolution L-j.
    std::vector<std::vector<MortonCode>> levels;
    /// parent_map[j][i]: index into levels[j] of the ancestor of finest voxel i.
    std::vector<std::vector<uint32_t>> parent_map;

    size_t finest_count() const { return levels.empty() ? 0 : levels[0].size(); }
};

struct VoxelizationResult {
    OctreeHierarchy octree; // single level (finest only); see build_hierarchy
    /// merge_groups[i]: source point indices mapped into finest voxel i.
    std::vector<std::vector<uint32_t>> merge_groups;
};

/// Quantizes positions onto a 2^L grid inside a cubic bounding box whose side
/// is the largest axis extent, anchored at the per-axis minimum. Points on the
/// upper boundary are clamped into the last cell. All-identical inputs get a
/// unit cube (W = 1).
VoxelizationResult voxelize(const std::vector<std::array<double, 3>>& positions, int depth);
VoxelizationResult voxelize(const std::vector<std::array<float, 3>>& positions, int depth);

/// Derives the k coarser occupancy lists (component-wise right shifts of the
/// finest voxels, deduplicated) and fills parent_map.
OctreeHierarchy build_hierarchy(const std::vector<MortonCode>& finest, int depth, int num_levels,
                                const std::array<double, 3>& bbox_min = {0.0, 0.0, 0.0},
                                double cube_side = 1.0);

/// Index into the level-(L-j) list of the ancestor of finest voxel fine_idx.
uint32_t parent_index(size_t fine_idx, int j, const OctreeHierarchy& h);

/// Per-voxel indices of the 27 neighbours (3x3x3 block centred on each finest
/// voxel), -1 where the neighbour cell is unoccupied or out of bounds.
/// Offset o maps to (dx,dy,dz) = (o/9-1, o/3%3-1, o%3-1).
struct NeighborTable {
    int num_offsets = 27;
    std::vector<int32_t> idx; // finest_count x 27, row-major

    int32_t at(size_t voxel, int offset) const { return idx[voxel * 27 + offset]; }
};

NeighborTable build_neighbor_table(const OctreeHierarchy& h);

/// Scene-space center of a finest-level voxel.
std::array<double, 3> voxel_center(const OctreeHierarchy& h, MortonCode code);

} // namespace ralhe
