// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#include "ralhe/gaussian_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <string>
#include <unordered_map>

namespace ralhe {

namespace {

std::vector<std::string> required_properties() {
    std::vector<std::string> props = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"};
    for (int i = 0; i < 45; ++i) props.push_back("f_rest_" + std::to_string(i));
    props.insert(props.end(), {"opacity", "scale_0", "scale_1", "scale_2",
                               "rot_0", "rot_1", "rot_2", "rot_3"});
    return props;
}

void check_finite(float v, size_t element, const std::string& prop) {
    if (!std::isfinite(v))
        throw DataError("non-finite value in element " + std::to_string(element) + " property " +
                        prop);
}

} // namespace

GaussianModel load_ply(const std::vector<uint8_t>& bytes) {
    // header is ASCII lines up to and including "end_header"
    const std::string marker = "end_header\n";
    std::string head(reinterpret_cast<const char*>(bytes.data()),
                     std::min<size_t>(bytes.size(), 65536));
    size_t header_end = head.find(marker);
    if (header_end == std::string::npos) throw FormatError("PLY: missing end_header");
    const size_t data_start = header_end + marker.size();

    std::istringstream hs(head.substr(0, header_end));
    std::string line;
    std::getline(hs, line);
    if (line != "ply" && line != "ply\r") throw FormatError("PLY: missing magic");

    size_t count = 0;
    bool binary_le = false;
    bool in_vertex = false;
    std::vector<std::string> props;
    while (std::getline(hs, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "comment" || tok.empty()) continue;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            binary_le = (fmt == "binary_little_endian");
        } else if (tok == "element") {
            std::string name;
            ls >> name >> count;
            if (name != "vertex") throw FormatError("PLY: unsupported element " + name);
            in_vertex = true;
        } else if (tok == "property") {
            if (!in_vertex) throw FormatError("PLY: property outside vertex element");
            std::string type, name;
            ls >> type >> name;
            if (type != "float" && type != "float32")
                throw FormatError("PLY: unsupported property type " + type);
            props.push_back(name);
        }
    }
    if (!binary_le) throw FormatError("PLY: format must be binary_little_endian");
    if (count == 0) throw FormatError("PLY: empty vertex element");

    std::unordered_map<std::string, int> index;
    for (size_t i = 0; i < props.size(); ++i) index[props[i]] = int(i);
    const auto required = required_properties();
    std::vector<int> slot(required.size());
    for (size_t i = 0; i < required.size(); ++i) {
        auto it = index.find(required[i]);
        if (it == index.end()) throw FormatError("PLY: missing property " + required[i]);
        slot[i] = it->second;
    }

    const size_t stride = props.size() * 4;
    if (bytes.size() < data_start + count * stride) throw FormatError("PLY: truncated payload");

    GaussianModel m;
    m.positions.resize(count);
    m.scales.resize(count);
    m.rotations.resize(count);
    m.sh.resize(count);
    m.opacities.resize(count);

    std::vector<float> row(props.size());
    for (size_t n = 0; n < count; ++n) {
        std::memcpy(row.data(), bytes.data() + data_start + n * stride, stride);
        auto get = [&](size_t req_idx) {
            float v = row[slot[req_idx]];
            check_finite(v, n, required[req_idx]);
            return v;
        };
        for (int a = 0; a < 3; ++a) m.positions[n][a] = get(a);
        for (int c = 0; c < 3; ++c) m.sh[n][c] = get(3 + c); // f_dc as coefficient 0
        // f_rest is channel-major: channel c holds coefficients 1..15
        for (int c = 0; c < 3; ++c)
            for (int coef = 1; coef <= 15; ++coef)
                m.sh[n][coef * 3 + c] = get(6 + c * 15 + (coef - 1));
        m.opacities[n] = get(51);
        for (int a = 0; a < 3; ++a) m.scales[n][a] = get(52 + a);
        double norm2 = 0.0;
        for (int a = 0; a < 4; ++a) {
            m.rotations[n][a] = get(55 + a);
            norm2 += double(m.rotations[n][a]) * m.rotations[n][a];
        }
        const double norm = std::sqrt(norm2);
        if (norm < 1e-12)
            throw DataError("zero quaternion in element " + std::to_string(n));
        if (std::abs(norm - 1.0) > 1e-6)
            for (int a = 0; a < 4; ++a)
                m.rotations[n][a] = static_cast<float>(m.rotations[n][a] / norm);
    }
    return m;
}

std::vector<uint8_t> save_ply(const GaussianModel& model) {
    if (model.size() == 0) throw Error("save_ply: model must contain at least one Gaussian");
    std::string header = "ply\nformat binary_little_endian 1.0\nelement vertex " +
                         std::to_string(model.size()) + "\n";
    for (const auto& p : required_properties()) header += "property float " + p + "\n";
    header += "end_header\n";

    std::vector<uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + model.size() * 59 * 4);
    auto put = [&](float v) {
        uint8_t b[4];
        std::memcpy(b, &v, 4);
        out.insert(out.end(), b, b + 4);
    };
    for (size_t n = 0; n < model.size(); ++n) {
        for (int a = 0; a < 3; ++a) put(model.positions[n][a]);
        for (int c = 0; c < 3; ++c) put(model.sh[n][c]);
        for (int c = 0; c < 3; ++c)
            for (int coef = 1; coef <= 15; ++coef) put(model.sh[n][coef * 3 + c]);
        put(model.opacities[n]);
        for (int a = 0; a < 3; ++a) put(model.scales[n][a]);
        for (int a = 0; a < 4; ++a) put(model.rotations[n][a]);
    }
    return out;
}

MergedAttributes merge_attributes(const GaussianModel& model, const VoxelizationResult& vres) {
    const size_t m = vres.merge_groups.size();
    MergedAttributes out;
    out.attributes.resize(kNumAttributes);
    for (int n = 0; n < 16; ++n) {
        out.attributes[n].attr_id = n + 1;
        out.attributes[n].values = Mat(int(m), 3);
    }
    out.attributes[16].attr_id = kOpacityAttrId;
    out.attributes[16].values = Mat(int(m), 1);
    out.covariances = Mat(int(m), 7);
    out.opacities.resize(m);

    for (size_t g = 0; g < m; ++g) {
        const auto& group = vres.merge_groups[g];
        uint32_t best = group[0];
        float best_logit = model.opacities[group[0]];
        double weight_sum = 0.0;
        std::array<double, 48> sh_acc{};
        for (uint32_t src : group) {
            const float logit = model.opacities[src];
            if (logit > best_logit) {
                best_logit = logit;
                best = src;
            }
            const double w = 1.0 / (1.0 + std::exp(-double(logit)));
            weight_sum += w;
            for (int i = 0; i < 48; ++i) sh_acc[i] += w * model.sh[src][i];
        }
        if (group.size() == 1) {
            for (int coef = 0; coef < 16; ++coef)
                for (int c = 0; c < 3; ++c)
                    out.attributes[coef].values.at(int(g), c) = model.sh[group[0]][coef * 3 + c];
        } else {
            for (int coef = 0; coef < 16; ++coef)
                for (int c = 0; c < 3; ++c)
                    out.attributes[coef].values.at(int(g), c) =
                        static_cast<float>(sh_acc[coef * 3 + c] / weight_sum);
        }
        out.attributes[16].values.at(int(g), 0) = best_logit;
        out.opacities[g] = best_logit;
        for (int a = 0; a < 3; ++a) out.covariances.at(int(g), a) = model.scales[best][a];
        for (int a = 0; a < 4; ++a) out.covariances.at(int(g), 3 + a) = model.rotations[best][a];
    }
    return out;
}

GaussianModel assemble_model(const OctreeHierarchy& h,
                             const std::vector<AttributeMatrix>& attributes,
                             const Mat& covariances) {
    const size_t m = h.finest_count();
    check_shape(size_t(covariances.rows) == m && covariances.cols == 7,
                "assemble_model: covariance shape");
    GaussianModel out;
    out.positions.resize(m);
    out.scales.resize(m);
    out.rotations.resize(m);
    out.sh.assign(m, {});
    out.opacities.assign(m, 0.0f);
    for (size_t i = 0; i < m; ++i) {
        const auto c = voxel_center(h, h.levels[0][i]);
        for (int a = 0; a < 3; ++a) out.positions[i][a] = static_cast<float>(c[a]);
        for (int a = 0; a < 3; ++a) out.scales[i][a] = covariances.at(int(i), a);
        for (int a = 0; a < 4; ++a) out.rotations[i][a] = covariances.at(int(i), 3 + a);
    }
    for (const auto& attr : attributes) {
        check_shape(size_t(attr.values.rows) == m, "assemble_model: attribute row count");
        if (attr.attr_id == kOpacityAttrId) {
            for (size_t i = 0; i < m; ++i) out.opacities[i] = attr.values.at(int(i), 0);
        } else {
            const int coef = attr.attr_id - 1;
            for (size_t i = 0; i < m; ++i)
                for (int c = 0; c < 3; ++c) out.sh[i][coef * 3 + c] = attr.values.at(int(i), c);
        }
    }
    return out;
}

AttributeMatrix normalize(const AttributeMatrix& attr, NormalizationParams& params) {
    const int c = attr.values.cols;
    params.offset.assign(c, 0.0f);
    params.scale.assign(c, 1.0f);
    AttributeMatrix out{attr.attr_id, Mat(attr.values.rows, c)};
    for (int ch = 0; ch < c; ++ch) {
        float mn = attr.values.at(0, ch), mx = mn;
        for (int r = 1; r < attr.values.rows; ++r) {
            mn = std::min(mn, attr.values.at(r, ch));
            mx = std::max(mx, attr.values.at(r, ch));
        }
        if (mx > mn) {
            params.offset[ch] = mn;
            params.scale[ch] = mx - mn;
        } else {
            params.offset[ch] = mn - 0.5f; // constant channel maps to 0.5
            params.scale[ch] = 1.0f;
        }
        for (int r = 0; r < attr.values.rows; ++r)
            out.values.at(r, ch) = (attr.values.at(r, ch) - params.offset[ch]) / params.scale[ch];
    }
    return out;
}

Mat denormalize(const Mat& normalized, const NormalizationParams& params) {
    check_shape(size_t(normalized.cols) == params.offset.size(), "denormalize: channel count");
    Mat out(normalized.rows, normalized.cols);
    for (int r = 0; r < normalized.rows; ++r)
        for (int ch = 0; ch < normalized.cols; ++ch)
            out.at(r, ch) = normalized.at(r, ch) * params.scale[ch] + params.offset[ch];
    return out;
}

} // namespace ralhe
