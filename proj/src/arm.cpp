// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#include "ralhe/arm.hpp"

#include <algorithm>
#include <cmath>

#include "ralhe/errors.hpp"

namespace ralhe {

ArmNet make_arm_net(int context_width, int h1, int h2) {
    if (context_width < 1 || h1 < 1 || h2 < 1)
        throw ConfigError("make_arm_net: widths must be positive");
    ArmNet net;
    net.w1 = Mat(h1, context_width);
    net.b1 = Mat(1, h1);
    net.w2 = Mat(h2, h1);
    net.b2 = Mat(1, h2);
    net.w3 = Mat(2, h2);
    net.b3 = Mat(1, 2);
    return net;
}

int count_params(const ArmNet& net) {
    return int(net.w1.v.size() + net.b1.v.size() + net.w2.v.size() + net.b2.v.size() +
               net.w3.v.size() + net.b3.v.size());
}

std::vector<float> build_context(const std::vector<float>& level, size_t i, int width) {
    if (width < 1) throw ConfigError("build_context: width must be positive");
    if (i >= level.size() && !(i == 0 && level.empty()))
        throw ShapeError("build_context: index outside level");
    std::vector<float> ctx(size_t(width), 0.0f);
    for (int p = 0; p < width; ++p) {
        if (size_t(p) + 1 > i) break;
        ctx[size_t(p)] = level[i - 1 - size_t(p)];
    }
    return ctx;
}

namespace {

float softplus(float x) {
    // stable: x + log1p(exp(-x)) for positive x
    if (x > 0.0f) return static_cast<float>(x + std::log1p(std::exp(-double(x))));
    return static_cast<float>(std::log1p(std::exp(double(x))));
}

} // namespace

float positive_scale(float raw) { return std::max(softplus(raw), kLaplaceMinScale); }

LaplaceParams arm_forward(const std::vector<float>& ctx, const ArmNet& net) {
    check_shape(int(ctx.size()) == net.w1.cols, "arm_forward: context width mismatch");
    Mat x(1, int(ctx.size()));
    x.v.assign(ctx.begin(), ctx.end());
    Mat h1, r1, h2, r2, out;
    affine_forward(x, net.w1, net.b1, h1);
    relu_forward(h1, r1);
    affine_forward(r1, net.w2, net.b2, h2);
    relu_forward(h2, r2);
    affine_forward(r2, net.w3, net.b3, out);
    LaplaceParams p;
    p.mu = out.at(0, 0);
    p.b = positive_scale(out.at(0, 1));
    return p;
}

namespace {

double laplace_cdf_impl(double x, double mu, double b) {
    const double t = (x - mu) / b;
    return t < 0 ? 0.5 * std::exp(t) : 1.0 - 0.5 * std::exp(-t);
}

} // namespace

double laplace_cdf(double x, const LaplaceParams& p) {
    return laplace_cdf_impl(x, p.mu, p.b);
}

double laplace_bits(double value, const LaplaceParams& p) {
    const double mass = laplace_cdf_impl(value + 0.5, p.mu, p.b) -
                        laplace_cdf_impl(value - 0.5, p.mu, p.b);
    if (!(mass > 0.0)) return kMaxSymbolBits;
    return std::min(-std::log2(mass), kMaxSymbolBits);
}

double estimate_rate(const LatentPyramid& pyramid, const ArmNet& net) {
    const int w = net.w1.cols;
    double bits = 0.0;
    for (const auto& level : pyramid.levels)
        for (size_t i = 0; i < level.size(); ++i)
            bits += laplace_bits(level[i], arm_forward(build_context(level, i, w), net));
    return bits;
}

} // namespace ralhe
