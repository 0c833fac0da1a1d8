// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#include "ralhe/occupancy.hpp"

#include <array>
#include <bit>

#include "ralhe/range_coder.hpp"

namespace ralhe {

OccupancyStream encode_occupancy(const OctreeHierarchy& h) {
    if (h.levels.empty() || h.levels[0].empty())
        throw GeometryError("encode_occupancy: empty hierarchy");
    const int depth = h.depth;
    OccupancyStream s;
    s.depth = static_cast<uint8_t>(depth);

    // parent lists per level, coarse to fine, derived by code shifts
    std::vector<MortonCode> parents{0};
    for (int level = 0; level < depth; ++level) {
        const int shift = 3 * (depth - level - 1);
        std::vector<MortonCode> children;
        for (MortonCode c : h.levels[0]) {
            const MortonCode n = c >> shift;
            if (children.empty() || n != children.back()) children.push_back(n);
        }
        size_t ci = 0;
        for (MortonCode p : parents) {
            uint8_t octet = 0;
            while (ci < children.size() && (children[ci] >> 3) == p) {
                octet = static_cast<uint8_t>(octet | (1u << (children[ci] & 7)));
                ++ci;
            }
            s.octets.push_back(octet);
        }
        if (ci != children.size())
            throw GeometryError("encode_occupancy: child outside any parent");
        parents = std::move(children);
    }
    return s;
}

std::vector<MortonCode> decode_occupancy(const OccupancyStream& s) {
    std::vector<MortonCode> nodes{0};
    size_t oi = 0;
    for (int level = 0; level < s.depth; ++level) {
        std::vector<MortonCode> next;
        for (MortonCode p : nodes) {
            if (oi >= s.octets.size())
                throw BitstreamError("decode_occupancy: octet list truncated");
            const uint8_t octet = s.octets[oi++];
            if (octet == 0)
                throw BitstreamError("decode_occupancy: empty internal node");
            for (int b = 0; b < 8; ++b)
                if (octet & (1u << b)) next.push_back((p << 3) | MortonCode(b));
        }
        nodes = std::move(next);
    }
    if (oi != s.octets.size())
        throw BitstreamError("decode_occupancy: trailing octets");
    return nodes;
}

std::vector<uint8_t> serialize_occupancy(const OccupancyStream& s) {
    RangeEncoder enc;
    std::array<AdaptiveBitModel, 256> models;
    for (uint8_t octet : s.octets) {
        uint32_t state = 1;
        for (int b = 0; b < 8; ++b) {
            const int bit = (octet >> b) & 1;
            encode_bit(enc, models[state], bit);
            state = (state << 1) | uint32_t(bit);
        }
    }
    auto payload = enc.finish();
    std::vector<uint8_t> bytes;
    bytes.reserve(payload.size() + 1);
    bytes.push_back(s.depth);
    bytes.insert(bytes.end(), payload.begin(), payload.end());
    return bytes;
}

OccupancyStream parse_occupancy(const std::vector<uint8_t>& bytes) {
    if (bytes.empty()) throw BitstreamError("parse_occupancy: empty stream");
    OccupancyStream s;
    s.depth = bytes[0];
    if (s.depth > kMaxDepth) throw BitstreamError("parse_occupancy: depth out of range");
    RangeDecoder dec(bytes.data() + 1, bytes.size() - 1);
    std::array<AdaptiveBitModel, 256> models;

    // the octet count is only known as the tree unfolds, so reconstruction
    // and entropy decoding interleave
    size_t nodes = 1;
    for (int level = 0; level < s.depth; ++level) {
        size_t children = 0;
        for (size_t n = 0; n < nodes; ++n) {
            uint32_t state = 1;
            uint8_t octet = 0;
            for (int b = 0; b < 8; ++b) {
                const int bit = decode_bit(dec, models[state]);
                state = (state << 1) | uint32_t(bit);
                octet = static_cast<uint8_t>(octet | (uint32_t(bit) << b));
            }
            if (octet == 0)
                throw BitstreamError("parse_occupancy: empty internal node");
            children += size_t(std::popcount(octet));
            s.octets.push_back(octet);
        }
        nodes = children;
    }
    return s;
}

} // namespace ralhe
