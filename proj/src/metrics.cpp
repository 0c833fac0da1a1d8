// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#include "ralhe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ralhe {

namespace {

/// Decoded points quantized onto the reference grid (same mapping as
/// voxelize, but against a caller-fixed bounding box).
VoxelizationResult voxelize_on_grid(const std::vector<std::array<float, 3>>& positions,
                                    const OctreeHierarchy& grid) {
    const double cells = double(uint64_t(1) << grid.depth);
    const int64_t max_cell = (int64_t(1) << grid.depth) - 1;

    std::vector<std::pair<MortonCode, uint32_t>> coded(positions.size());
    for (size_t i = 0; i < positions.size(); ++i) {
        VoxelCoord v;
        uint32_t* c = &v.x;
        for (int a = 0; a < 3; ++a) {
            const double p = double(positions[i][a]);
            if (!std::isfinite(p)) throw DataError("evaluate: non-finite coordinate");
            int64_t q = int64_t(std::floor((p - grid.bbox_min[size_t(a)]) / grid.cube_side * cells));
            q = std::clamp<int64_t>(q, 0, max_cell);
            c[a] = uint32_t(q);
        }
        coded[i] = {morton_encode(v, grid.depth), uint32_t(i)};
    }
    std::sort(coded.begin(), coded.end());

    VoxelizationResult res;
    res.octree.depth = grid.depth;
    res.octree.num_levels = 1;
    res.octree.bbox_min = grid.bbox_min;
    res.octree.cube_side = grid.cube_side;
    auto& finest = res.octree.levels.emplace_back();
    for (const auto& [code, idx] : coded) {
        if (finest.empty() || code != finest.back()) {
            finest.push_back(code);
            res.merge_groups.emplace_back();
        }
        res.merge_groups.back().push_back(idx);
    }
    auto& identity = res.octree.parent_map.emplace_back(finest.size());
    for (uint32_t i = 0; i < finest.size(); ++i) identity[i] = i;
    return res;
}

} // namespace

double psnr_db(double mse, double peak) {
    if (mse <= 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

std::vector<AttributeMetrics> compare_attributes(const std::vector<AttributeMatrix>& reference,
                                                 const std::vector<AttributeMatrix>& decoded) {
    check_shape(reference.size() == decoded.size(), "compare_attributes: attribute count");
    std::vector<AttributeMetrics> out;
    out.reserve(reference.size());
    for (size_t a = 0; a < reference.size(); ++a) {
        const Mat& ref = reference[a].values;
        const Mat& dec = decoded[a].values;
        check_shape(reference[a].attr_id == decoded[a].attr_id, "compare_attributes: id mismatch");
        check_shape(ref.rows == dec.rows && ref.cols == dec.cols,
                    "compare_attributes: shape mismatch");

        AttributeMetrics m;
        m.attr_id = reference[a].attr_id;
        double acc = 0.0;
        for (size_t i = 0; i < ref.v.size(); ++i) {
            const double e = double(ref.v[i]) - double(dec.v[i]);
            acc += e * e;
        }
        m.mse = ref.v.empty() ? 0.0 : acc / double(ref.v.size());
        m.peak = 0.0;
        for (int c = 0; c < ref.cols; ++c) {
            float mn = ref.at(0, c), mx = mn;
            for (int r = 1; r < ref.rows; ++r) {
                mn = std::min(mn, ref.at(r, c));
                mx = std::max(mx, ref.at(r, c));
            }
            m.peak = std::max(m.peak, double(mx) - double(mn));
        }
        if (m.peak <= 0.0) m.peak = 1.0;
        m.exact = m.mse == 0.0;
        m.psnr = psnr_db(m.mse, m.peak);
        out.push_back(m);
    }
    return out;
}

std::vector<AttributeMatrix> model_attributes(const GaussianModel& model) {
    const int m = int(model.size());
    std::vector<AttributeMatrix> out(kNumAttributes);
    for (int n = 0; n < 16; ++n) {
        out[size_t(n)].attr_id = n + 1;
        out[size_t(n)].values = Mat(m, 3);
        for (int i = 0; i < m; ++i)
            for (int c = 0; c < 3; ++c)
                out[size_t(n)].values.at(i, c) = model.sh[size_t(i)][size_t(n * 3 + c)];
    }
    out[16].attr_id = kOpacityAttrId;
    out[16].values = Mat(m, 1);
    for (int i = 0; i < m; ++i) out[16].values.at(i, 0) = model.opacities[size_t(i)];
    return out;
}

std::vector<SectionBytes> section_bytes(const StreamInfo& info) {
    std::vector<SectionBytes> out;
    out.push_back({"header", info.header_bytes});
    for (const auto& s : info.sections) out.push_back({s.tag, s.size + 8});
    return out;
}

Metrics evaluate(const GaussianModel& reference, int depth, const GaussianModel& decoded) {
    if (reference.size() == 0 || decoded.size() == 0) throw DataError("evaluate: empty model");
    const VoxelizationResult ref_vox = voxelize(reference.positions, depth);
    const MergedAttributes ref_merged = merge_attributes(reference, ref_vox);

    const VoxelizationResult dec_vox = voxelize_on_grid(decoded.positions, ref_vox.octree);
    if (dec_vox.octree.levels[0] != ref_vox.octree.levels[0])
        throw GeometryError("evaluate: decoded voxel set differs from the voxelized reference");
    const MergedAttributes dec_merged = merge_attributes(decoded, dec_vox);

    Metrics m;
    m.attributes = compare_attributes(ref_merged.attributes, dec_merged.attributes);
    m.num_points = ref_vox.octree.levels[0].size();
    return m;
}

Metrics evaluate(const GaussianModel& reference, int depth, const GaussianModel& decoded,
                 const RalheBitstream& stream) {
    Metrics m = evaluate(reference, depth, decoded);
    const StreamInfo info = inspect(stream);
    m.total_bytes = stream.bytes.size();
    m.bpp = 8.0 * double(m.total_bytes) / double(m.num_points);
    m.sections = section_bytes(info);
    return m;
}

} // namespace ralhe
