// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "ralhe/geometry.hpp"

namespace ralhe {

/// Breadth-first per-node child-occupancy octets. Bit (xb<<2)|(yb<<1)|zb of
/// an octet marks the occupied child; node order within a level is Morton
/// order, which equals breadth-first order.
struct OccupancyStream {
    uint8_t depth = 0;
    std::vector<uint8_t> octets; // empty when depth == 0

    bool operator==(const OccupancyStream&) const = default;
};

OccupancyStream encode_occupancy(const OctreeHierarchy& h);

/// Morton-sorted finest-level voxel set.
std::vector<MortonCode> decode_occupancy(const OccupancyStream& s);

/// Wire form: depth byte, then the octets coded bit by bit with adaptive
/// binary models indexed by the in-octet bit prefix (256 states shared across
/// the whole stream).
std::vector<uint8_t> serialize_occupancy(const OccupancyStream& s);
OccupancyStream parse_occupancy(const std::vector<uint8_t>& bytes);

} // namespace ralhe
