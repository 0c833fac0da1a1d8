// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "ralhe/geometry.hpp"
#include "ralhe/mat.hpp"

namespace ralhe {

/// Behaviour of a perturb node. Noise adds an externally filled buffer,
/// Round applies half-to-even rounding with a straight-through gradient.
enum class PerturbMode { Identity, Noise, Round };

float round_half_even(float x);

/// Reverse-mode tape over a closed primitive set. The graph is recorded once;
/// each iteration overwrites leaf values, replays forward() and calls
/// backward(). Evaluation order is the recording order, reductions accumulate
/// in 64-bit, so replays are bit-identical.
class Tape {
public:
    using NodeId = int;

    /// Leaf with fixed shape; contents owned by the caller via val().
    NodeId value(int rows, int cols);

    Mat& val(NodeId id);
    const Mat& val(NodeId id) const;
    const Mat& grad(NodeId id) const;
    double scalar(NodeId id) const;

    NodeId affine(NodeId x, NodeId w, NodeId b);
    NodeId relu(NodeId x);
    NodeId sparse_conv(NodeId x, NodeId w, NodeId b, const NeighborTable* nbrs);
    /// levels are len_j x 1 nodes aligned with h's levels; output is M x k.
    NodeId upsample(const std::vector<NodeId>& levels, const OctreeHierarchy* h);
    /// len x 1 -> len x width causal context matrix (reverse window, zero pad).
    NodeId window_context(NodeId level, int width);
    /// mode and noise are owned by the caller; noise must match the node size
    /// whenever *mode == Noise.
    NodeId perturb(NodeId x, const PerturbMode* mode, const std::vector<float>* noise);
    /// raw is len x 2 (mu, raw scale), vals is len x 1; output 1 x 1 total bits.
    NodeId laplace_rate(NodeId raw, NodeId vals);
    NodeId mse(NodeId pred, NodeId target);
    /// out = sum coeffs[t] * scalar(terms[t]).
    NodeId weighted_sum(std::vector<NodeId> terms, std::vector<double> coeffs);

    void forward();
    /// Zeroes all gradients, seeds d(output) = 1, runs the reverse sweep.
    void backward(NodeId output);

    /// Hash of the current activation pattern: rectifier input signs, rate
    /// cap states, scale clamp states and tail signs. Two evaluations with
    /// equal signatures lie in the same smooth region of the composition.
    uint64_t activation_signature() const;

private:
    struct Op {
        enum class Kind {
            Affine,
            Relu,
            Conv,
            Upsample,
            Window,
            Perturb,
            LaplaceRate,
            Mse,
            WeightedSum
        } kind;
        std::vector<NodeId> in;
        NodeId out = -1;
        const NeighborTable* nbrs = nullptr;
        const OctreeHierarchy* h = nullptr;
        int width = 0;
        const PerturbMode* mode = nullptr;
        const std::vector<float>* noise = nullptr;
        std::vector<double> coeffs;
    };
    struct Node {
        Mat val;
        Mat grad;
        /// Reduction outputs keep the unrounded 64-bit result; val holds the
        /// float32 view. scalar() prefers this so fd probes are not
        /// resolution-limited by the float store.
        double dval = 0.0;
        bool has_dval = false;
    };

    NodeId fresh(int rows, int cols);
    const Mat& checked(NodeId id) const;
    void run(const Op& op);
    void run_backward(const Op& op);

    std::vector<Node> nodes_;
    std::vector<Op> ops_;
};

/// Max over probes of |analytic - central_fd| / (|analytic| + 1e-8) on the
/// given parameter leaves. A probe is scored only when it can say something
/// about the adjoints: both sides must clear 1% of the largest analytic
/// gradient (float32 storage bounds fd resolution to that scale), every
/// evaluation must keep the center's activation signature (central
/// differences are not derivative oracles across kinks), and steps eps and
/// 2*eps must agree within 10%. Throws when no probe is usable.
double fd_check(Tape& tape, Tape::NodeId output, const std::vector<Tape::NodeId>& params,
                double eps, int probes, uint64_t seed);

} // namespace ralhe
