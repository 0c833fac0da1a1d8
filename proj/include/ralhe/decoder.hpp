// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "ralhe/geometry.hpp"
#include "ralhe/mat.hpp"

namespace ralhe {

/// Multi-resolution latents for one attribute. levels[j] follows the Morton
/// order of hierarchy level j (finest at j = 0).
struct LatentPyramid {
    int attr_id = 0;
    std::vector<std::vector<float>> levels;
};

/// Per-attribute decoder: two pointwise affine layers, then two sparse
/// convolutions over the finest voxel set. Rectifier after layers 1 to 3,
/// identity at the output. Conv weights are (27 * c_in) x c_out, offset-major.
struct DecoderNet {
    Mat w1, b1; // pointwise, in_width -> h1
    Mat w2, b2; // pointwise, h1 -> h2
    Mat w3, b3; // conv, h2 -> h3
    Mat w4, b4; // conv, h3 -> c_out
};

/// Zero-initialized net with the default widths (h1 = h2 = 16, h3 = 8).
DecoderNet make_decoder_net(int in_width, int c_out, int h1 = 16, int h2 = 16, int h3 = 8);

int count_params(const DecoderNet& net);

/// M x k feature matrix: column j copies each voxel's level-j ancestor latent,
/// so column 0 is the finest level verbatim.
Mat upsample_copy(const LatentPyramid& pyramid, const OctreeHierarchy& h);

/// out(i) = bias + sum over offsets o (ascending) of kernel[o] . feat(nbr(i, o));
/// absent neighbors contribute zero. weight rows are offset-major: row
/// o * c_in + ci maps input channel ci at offset o to all output channels.
Mat sparse_conv3(const Mat& features, const NeighborTable& nbrs, const Mat& weight,
                 const Mat& bias);
Mat sparse_conv3(const Mat& features, const OctreeHierarchy& h, const Mat& weight,
                 const Mat& bias);

Mat decoder_forward(const Mat& feats, const DecoderNet& net, const NeighborTable& nbrs);

} // namespace ralhe
