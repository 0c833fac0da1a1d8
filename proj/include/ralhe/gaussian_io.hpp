// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ralhe/geometry.hpp"
#include "ralhe/mat.hpp"

namespace ralhe {

inline constexpr int kNumAttributes = 17; // 16 SH triplets + opacity
inline constexpr int kOpacityAttrId = 17;

/// Channel count of an attribute: 3 for SH ids 1..16, 1 for opacity (17).
inline int attr_channels(int attr_id) { return attr_id == kOpacityAttrId ? 1 : 3; }

/// One splat model in the standard 3DGS layout: positions, log-scales,
/// unit quaternions, 16 SH coefficient triplets and pre-activation opacity.
struct GaussianModel {
    std::vector<std::array<float, 3>> positions;
    std::vector<std::array<float, 3>> scales;    // log-scale axis lengths
    std::vector<std::array<float, 4>> rotations; // unit quaternions
    std::vector<std::array<float, 48>> sh;       // [coef*3 + channel], coef 0..15
    std::vector<float> opacities;                // logits

    size_t size() const { return positions.size(); }
};

/// Parses a binary little-endian PLY with the standard 3DGS vertex properties
/// (x,y,z, f_dc_0..2, f_rest_0..44, opacity, scale_0..2, rot_0..3). Extra
/// float properties are skipped. Quaternions are renormalized when their norm
/// is off by more than 1e-6.
GaussianModel load_ply(const std::vector<uint8_t>& bytes);

/// Inverse of load_ply; stored float32 fields round-trip bit-exactly.
std::vector<uint8_t> save_ply(const GaussianModel& model);

/// M x c matrix of one attribute, rows in Morton order of the finest level.
struct AttributeMatrix {
    int attr_id = 0; // 1..17
    Mat values;
};

struct MergedAttributes {
    std::vector<AttributeMatrix> attributes; // all 17, ids 1..17
    Mat covariances;                         // M x 7: log-scales then quaternion
    std::vector<float> opacities;            // M merged logits
};

/// Reduces co-voxel Gaussians: SH by opacity-weighted mean (weights are
/// sigmoids of the stored logits), opacity by max logit, scale/rotation from
/// the member with maximal opacity. Rows come out in Morton order.
MergedAttributes merge_attributes(const GaussianModel& model, const VoxelizationResult& vres);

/// Rebuilds a model from per-voxel data; positions become voxel centers.
GaussianModel assemble_model(const OctreeHierarchy& h,
                             const std::vector<AttributeMatrix>& attributes,
                             const Mat& covariances);

struct NormalizationParams {
    std::vector<float> offset;
    std::vector<float> scale; // > 0
};

/// Per-channel affine map onto [0,1]. Constant channels map to 0.5 with
/// scale 1 so the inverse is still exact.
AttributeMatrix normalize(const AttributeMatrix& attr, NormalizationParams& params);

Mat denormalize(const Mat& normalized, const NormalizationParams& params);

} // namespace ralhe
