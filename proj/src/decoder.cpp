// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#include "ralhe/decoder.hpp"

#include "ralhe/errors.hpp"

namespace ralhe {

DecoderNet make_decoder_net(int in_width, int c_out, int h1, int h2, int h3) {
    if (in_width < 1 || c_out < 1 || h1 < 1 || h2 < 1 || h3 < 1)
        throw ConfigError("make_decoder_net: widths must be positive");
    DecoderNet net;
    net.w1 = Mat(h1, in_width);
    net.b1 = Mat(1, h1);
    net.w2 = Mat(h2, h1);
    net.b2 = Mat(1, h2);
    net.w3 = Mat(27 * h2, h3);
    net.b3 = Mat(1, h3);
    net.w4 = Mat(27 * h3, c_out);
    net.b4 = Mat(1, c_out);
    return net;
}

int count_params(const DecoderNet& net) {
    return int(net.w1.v.size() + net.b1.v.size() + net.w2.v.size() + net.b2.v.size() +
               net.w3.v.size() + net.b3.v.size() + net.w4.v.size() + net.b4.v.size());
}

Mat upsample_copy(const LatentPyramid& pyramid, const OctreeHierarchy& h) {
    const int k = int(pyramid.levels.size());
    if (k != h.num_levels)
        throw ShapeError("upsample_copy: pyramid level count differs from hierarchy");
    for (int j = 0; j < k; ++j)
        if (pyramid.levels[size_t(j)].size() != h.levels[size_t(j)].size())
            throw ShapeError("upsample_copy: level length mismatch");
    const int m = int(h.finest_count());
    Mat feats(m, k);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j)
            feats.at(i, j) = pyramid.levels[size_t(j)][parent_index(size_t(i), j, h)];
    return feats;
}

Mat sparse_conv3(const Mat& features, const NeighborTable& nbrs, const Mat& weight,
                 const Mat& bias) {
    const int m = features.rows;
    const int c_in = features.cols;
    const int c_out = weight.cols;
    check_shape(weight.rows == 27 * c_in, "sparse_conv3: weight rows must be 27 * c_in");
    check_shape(bias.rows == 1 && bias.cols == c_out, "sparse_conv3: bias shape");
    check_shape(int(nbrs.idx.size()) == m * 27, "sparse_conv3: neighbor table size");

    Mat out(m, c_out);
    std::vector<double> acc(static_cast<size_t>(c_out));
    for (int i = 0; i < m; ++i) {
        for (int co = 0; co < c_out; ++co) acc[size_t(co)] = bias.at(0, co);
        for (int o = 0; o < 27; ++o) {
            const int32_t nb = nbrs.at(size_t(i), o);
            if (nb < 0) continue;
            for (int ci = 0; ci < c_in; ++ci) {
                const double f = features.at(nb, ci);
                if (f == 0.0) continue;
                const float* wrow = &weight.v[size_t(o * c_in + ci) * size_t(c_out)];
                for (int co = 0; co < c_out; ++co) acc[size_t(co)] += f * double(wrow[co]);
            }
        }
        for (int co = 0; co < c_out; ++co) out.at(i, co) = static_cast<float>(acc[size_t(co)]);
    }
    return out;
}

Mat sparse_conv3(const Mat& features, const OctreeHierarchy& h, const Mat& weight,
                 const Mat& bias) {
    return sparse_conv3(features, build_neighbor_table(h), weight, bias);
}

Mat decoder_forward(const Mat& feats, const DecoderNet& net, const NeighborTable& nbrs) {
    check_shape(feats.cols == net.w1.cols, "decoder_forward: feature width != net input width");
    Mat h1, r1, h2, r2, r3;
    affine_forward(feats, net.w1, net.b1, h1);
    relu_forward(h1, r1);
    affine_forward(r1, net.w2, net.b2, h2);
    relu_forward(h2, r2);
    Mat h3 = sparse_conv3(r2, nbrs, net.w3, net.b3);
    relu_forward(h3, r3);
    return sparse_conv3(r3, nbrs, net.w4, net.b4);
}

} // namespace ralhe
