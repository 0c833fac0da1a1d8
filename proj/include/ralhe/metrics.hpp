// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "ralhe/bitstream.hpp"
#include "ralhe/gaussian_io.hpp"

namespace ralhe {

/// Attribute-domain fidelity of one attribute. peak is the value range of the
/// reference (max over channels), floored at 1 for constant references; exact
/// flags a zero-error match, where psnr is infinite.
struct AttributeMetrics {
    int attr_id = 0;
    double mse = 0.0;
    double peak = 0.0;
    double psnr = 0.0;
    bool exact = false;
};

/// Byte accounting of one stream region; section entries use the 4-byte tag,
/// "header" covers everything before the first section.
struct SectionBytes {
    std::string tag;
    size_t bytes = 0;
};

struct Metrics {
    std::vector<AttributeMetrics> attributes;
    size_t total_bytes = 0;
    size_t num_points = 0;
    double bpp = 0.0; // 8 * total_bytes / num_points
    std::vector<SectionBytes> sections;
};

/// PSNR in dB against the given peak; infinity when mse is zero.
double psnr_db(double mse, double peak);

/// Per-attribute comparison of two aligned attribute sets (same voxel order).
/// Throws ShapeError when ids or shapes disagree.
std::vector<AttributeMetrics> compare_attributes(const std::vector<AttributeMatrix>& reference,
                                                 const std::vector<AttributeMatrix>& decoded);

/// All 17 attribute matrices of a model whose rows are already voxel-aligned
/// (positions are ignored); the inverse view of assemble_model.
std::vector<AttributeMatrix> model_attributes(const GaussianModel& model);

/// Section framing (8 bytes each) is charged to its section; the fixed header
/// appears first as "header". Entries always sum to stream size.
std::vector<SectionBytes> section_bytes(const StreamInfo& info);

/// Full evaluation: voxelizes and merges the reference at the given depth,
/// quantizes the decoded model onto the same grid, and compares the two voxel
/// by voxel. The decoded voxel set must equal the reference's (GeometryError
/// otherwise). The stream overload adds byte accounting and bpp.
Metrics evaluate(const GaussianModel& reference, int depth, const GaussianModel& decoded);
Metrics evaluate(const GaussianModel& reference, int depth, const GaussianModel& decoded,
                 const RalheBitstream& stream);

} // namespace ralhe
