// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <map>

#include "helpers.hpp"
#include "ralhe/decoder.hpp"

using namespace ralhe;

namespace {

void randomize(Mat& m, std::mt19937_64& g, float scale = 0.5f) {
    for (auto& x : m.v) x = float((ralhe::test::uniform01(g) * 2.0 - 1.0) * scale);
}

void randomize_net(DecoderNet& net, uint64_t seed) {
    auto g = ralhe::test::rng(seed);
    for (Mat* m : {&net.w1, &net.b1, &net.w2, &net.b2, &net.w3, &net.b3, &net.w4, &net.b4})
        randomize(*m, g);
}

} // namespace

TEST_CASE("upsample_copy: column zero is the finest level, ancestors elsewhere") {
    auto finest = ralhe::test::random_voxel_set(200, 5, 51);
    auto h = build_hierarchy(finest, 5, 3);

    LatentPyramid pyr;
    pyr.levels.resize(3);
    auto g = ralhe::test::rng(52);
    for (int j = 0; j < 3; ++j) {
        pyr.levels[size_t(j)].resize(h.levels[size_t(j)].size());
        for (auto& v : pyr.levels[size_t(j)]) v = float(ralhe::test::uniform01(g));
    }
    auto feats = upsample_copy(pyr, h);
    REQUIRE(feats.rows == 200);
    REQUIRE(feats.cols == 3);

    // brute-force oracle: locate each voxel's ancestor by code shift and search
    for (int i = 0; i < 200; ++i) {
        CHECK(feats.at(i, 0) == pyr.levels[0][size_t(i)]);
        for (int j = 1; j < 3; ++j) {
            const MortonCode anc = finest[size_t(i)] >> (3 * j);
            const auto& lvl = h.levels[size_t(j)];
            const size_t pos =
                size_t(std::lower_bound(lvl.begin(), lvl.end(), anc) - lvl.begin());
            REQUIRE(lvl[pos] == anc);
            CHECK(feats.at(i, j) == pyr.levels[size_t(j)][pos]);
        }
    }

    // block constancy: equal shifted coords share column-j values
    for (int i = 0; i < 200; ++i)
        for (int i2 = i + 1; i2 < 200; ++i2)
            for (int j = 1; j < 3; ++j)
                if ((finest[size_t(i)] >> (3 * j)) == (finest[size_t(i2)] >> (3 * j)))
                    CHECK(feats.at(i, j) == feats.at(i2, j));
}

TEST_CASE("upsample_copy: single-root octree makes the coarse column constant") {
    auto h = build_hierarchy({0, 1, 4, 7}, 1, 2);
    LatentPyramid pyr;
    pyr.levels = {{1.0f, 2.0f, 3.0f, 4.0f}, {9.0f}};
    auto feats = upsample_copy(pyr, h);
    for (int i = 0; i < 4; ++i) {
        CHECK(feats.at(i, 0) == pyr.levels[0][size_t(i)]);
        CHECK(feats.at(i, 1) == 9.0f);
    }

    pyr.levels[1].push_back(1.0f);
    CHECK_THROWS_AS(upsample_copy(pyr, h), ShapeError);
}

TEST_CASE("sparse_conv3: identity kernel returns the input") {
    auto finest = ralhe::test::random_voxel_set(60, 4, 53);
    auto h = build_hierarchy(finest, 4, 1);
    auto nbrs = build_neighbor_table(h);

    const int c = 3;
    Mat feats(60, c);
    auto g = ralhe::test::rng(54);
    randomize(feats, g, 2.0f);

    Mat weight(27 * c, c), bias(1, c);
    for (int ci = 0; ci < c; ++ci) weight.at(13 * c + ci, ci) = 1.0f; // center tap
    auto out = sparse_conv3(feats, nbrs, weight, bias);
    CHECK(out.v == feats.v);
}

TEST_CASE("sparse_conv3: isolated voxel sees only itself") {
    auto h = build_hierarchy({morton_encode({4, 4, 4}, 4)}, 4, 1);
    Mat feats(1, 1);
    feats.at(0, 0) = 1.0f;
    Mat weight(27, 1), bias(1, 1);
    weight.fill(1.0f);
    bias.at(0, 0) = 0.25f;
    auto out = sparse_conv3(feats, h, weight, bias);
    CHECK(out.at(0, 0) == 1.25f);
}

TEST_CASE("sparse_conv3: matches dense convolution on a full 3x3x3 block") {
    // fully occupied 3x3x3 block at depth 2
    std::vector<MortonCode> codes;
    for (uint32_t x = 0; x < 3; ++x)
        for (uint32_t y = 0; y < 3; ++y)
            for (uint32_t z = 0; z < 3; ++z) codes.push_back(morton_encode({x, y, z}, 2));
    std::sort(codes.begin(), codes.end());
    auto h = build_hierarchy(codes, 2, 1);
    auto nbrs = build_neighbor_table(h);

    const int c_in = 2, c_out = 3;
    Mat feats(27, c_in), weight(27 * c_in, c_out), bias(1, c_out);
    auto g = ralhe::test::rng(55);
    randomize(feats, g, 1.0f);
    randomize(weight, g, 1.0f);
    randomize(bias, g, 1.0f);
    auto out = sparse_conv3(feats, nbrs, weight, bias);

    // dense oracle over explicit coordinates
    std::map<std::array<int, 3>, int> where;
    for (size_t i = 0; i < codes.size(); ++i) {
        auto v = morton_decode(codes[i], 2);
        where[{int(v.x), int(v.y), int(v.z)}] = int(i);
    }
    for (auto& [coord, row] : where) {
        for (int co = 0; co < c_out; ++co) {
            double acc = bias.at(0, co);
            for (int dx = -1; dx <= 1; ++dx)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dz = -1; dz <= 1; ++dz) {
                        auto it = where.find({coord[0] + dx, coord[1] + dy, coord[2] + dz});
                        if (it == where.end()) continue;
                        const int o = (dx + 1) * 9 + (dy + 1) * 3 + (dz + 1);
                        for (int ci = 0; ci < c_in; ++ci)
                            acc += double(weight.at(o * c_in + ci, co)) *
                                   feats.at(it->second, ci);
                    }
            CHECK(out.at(row, co) == doctest::Approx(acc).epsilon(1e-5));
        }
    }
}

TEST_CASE("decoder_forward: zero net gives zero output") {
    auto finest = ralhe::test::random_voxel_set(40, 4, 56);
    auto h = build_hierarchy(finest, 4, 2);
    auto nbrs = build_neighbor_table(h);
    auto net = make_decoder_net(2, 3);
    Mat feats(40, 2);
    auto g = ralhe::test::rng(57);
    randomize(feats, g, 1.0f);
    auto out = decoder_forward(feats, net, nbrs);
    REQUIRE(out.rows == 40);
    REQUIRE(out.cols == 3);
    for (float v : out.v) CHECK(v == 0.0f);
}

TEST_CASE("decoder_forward: single voxel equals hand-composed affine chain") {
    auto h = build_hierarchy({morton_encode({2, 1, 3}, 3)}, 3, 1);
    auto nbrs = build_neighbor_table(h);
    auto net = make_decoder_net(2, 1, 4, 4, 4);
    randomize_net(net, 58);
    Mat feats(1, 2);
    feats.at(0, 0) = 0.3f;
    feats.at(0, 1) = -0.8f;
    auto out = decoder_forward(feats, net, nbrs);

    // oracle: the conv layers collapse to their center taps
    auto relu = [](std::vector<double>& v) {
        for (auto& x : v)
            if (x < 0) x = 0;
    };
    std::vector<double> a(4), b(4), c(4), d(1);
    for (int o = 0; o < 4; ++o) {
        a[size_t(o)] = net.b1.at(0, o);
        for (int i = 0; i < 2; ++i) a[size_t(o)] += double(net.w1.at(o, i)) * feats.at(0, i);
    }
    relu(a);
    for (int o = 0; o < 4; ++o) {
        b[size_t(o)] = net.b2.at(0, o);
        for (int i = 0; i < 4; ++i) b[size_t(o)] += double(net.w2.at(o, i)) * a[size_t(i)];
    }
    relu(b);
    for (int o = 0; o < 4; ++o) {
        c[size_t(o)] = net.b3.at(0, o);
        for (int i = 0; i < 4; ++i) c[size_t(o)] += double(net.w3.at(13 * 4 + i, o)) * b[size_t(i)];
    }
    relu(c);
    d[0] = net.b4.at(0, 0);
    for (int i = 0; i < 4; ++i) d[0] += double(net.w4.at(13 * 4 + i, 0)) * c[size_t(i)];
    CHECK(out.at(0, 0) == doctest::Approx(d[0]).epsilon(1e-5));
}

TEST_CASE("decoder_forward: deterministic and shape-checked") {
    auto finest = ralhe::test::random_voxel_set(80, 5, 59);
    auto h = build_hierarchy(finest, 5, 3);
    auto nbrs = build_neighbor_table(h);
    auto net = make_decoder_net(3, 3);
    randomize_net(net, 60);
    LatentPyramid pyr;
    pyr.levels.resize(3);
    auto g = ralhe::test::rng(61);
    for (int j = 0; j < 3; ++j) {
        pyr.levels[size_t(j)].resize(h.levels[size_t(j)].size());
        for (auto& v : pyr.levels[size_t(j)]) v = float(ralhe::test::uniform01(g) * 4 - 2);
    }
    auto feats = upsample_copy(pyr, h);
    auto out1 = decoder_forward(feats, net, nbrs);
    auto out2 = decoder_forward(feats, net, nbrs);
    CHECK(out1.v == out2.v); // bit-identical repeat evaluation
    for (float v : out1.v) CHECK(std::isfinite(v));

    Mat bad(80, 4);
    CHECK_THROWS_AS(decoder_forward(bad, net, nbrs), ShapeError);
}

TEST_CASE("count_params: decoder arithmetic") {
    // affine 5->16 alone
    auto tiny = make_decoder_net(5, 1, 16, 1, 1);
    CHECK(int(tiny.w1.v.size() + tiny.b1.v.size()) == 96);

    // default decoder: k=5 input, 3 channels out
    auto net = make_decoder_net(5, 3);
    const int expect = (5 * 16 + 16) + (16 * 16 + 16) + (27 * 16 * 8 + 8) + (27 * 8 * 3 + 3);
    CHECK(count_params(net) == expect);
}
