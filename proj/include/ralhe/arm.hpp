// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "ralhe/decoder.hpp"
#include "ralhe/mat.hpp"

namespace ralhe {

inline constexpr float kLaplaceMinScale = 1e-3f;
inline constexpr double kMaxSymbolBits = 32.0;

/// Autoregressive Laplace parameter head: affine w->16, rectifier, 16->16,
/// rectifier, 16->2 (raw mean, raw scale). One net serves all levels of an
/// attribute.
struct ArmNet {
    Mat w1, b1;
    Mat w2, b2;
    Mat w3, b3;
};

ArmNet make_arm_net(int context_width, int h1 = 16, int h2 = 16);

int count_params(const ArmNet& net);

struct LaplaceParams {
    float mu = 0.0f;
    float b = 1.0f;
};

/// Previous w values of the level in reverse order, zero-padded at the level
/// start. Contexts never cross level boundaries.
std::vector<float> build_context(const std::vector<float>& level, size_t i, int width);

/// softplus clamped to >= kLaplaceMinScale; the single mapping shared by
/// arm_forward and the training graph so scales agree bitwise.
float positive_scale(float raw);

/// mu = raw0; b = positive_scale(raw1). Evaluated with the shared fixed-order
/// kernels so encoder and decoder agree bitwise.
LaplaceParams arm_forward(const std::vector<float>& ctx, const ArmNet& net);

/// Laplace CDF F(x) for the given location and scale.
double laplace_cdf(double x, const LaplaceParams& p);

/// -log2(F(v + 0.5) - F(v - 0.5)) for the Laplace CDF F, capped at
/// kMaxSymbolBits.
double laplace_bits(double value, const LaplaceParams& p);

/// Total modeled bits of the pyramid under the net, summed per level with
/// causal contexts.
double estimate_rate(const LatentPyramid& pyramid, const ArmNet& net);

} // namespace ralhe
