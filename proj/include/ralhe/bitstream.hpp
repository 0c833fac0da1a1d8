// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ralhe/arm.hpp"
#include "ralhe/decoder.hpp"
#include "ralhe/gaussian_io.hpp"
#include "ralhe/geometry.hpp"
#include "ralhe/trainer.hpp"

namespace ralhe {

/// Integer latents of one pyramid level plus its declared symbol range.
struct QuantizedLevel {
    int32_t lo = 0; // declared range, lo <= hi
    int32_t hi = 0;
    std::vector<int32_t> values; // every value within [lo, hi]
};

/// Integer latents of one attribute; levels[0] is the finest, matching
/// LatentPyramid. The wire transmits levels coarse to fine.
struct QuantizedPyramid {
    int attr_id = 0;
    std::vector<QuantizedLevel> levels;
};

/// One tensor on a uniform power-of-two grid: weight = q * step exactly.
struct QuantizedTensor {
    int rows = 0;
    int cols = 0;
    int8_t step_exp = 0; // step = 2^step_exp
    std::vector<int32_t> q;

    float step() const { return std::ldexp(1.0f, step_exp); }
};

/// Tensor list of one network in its fixed declaration order
/// (decoder: w1,b1..w4,b4; ARM: w1,b1..w3,b3).
struct QuantizedNet {
    std::vector<QuantizedTensor> tensors;
};

/// Half-to-even rounding of every latent at unit step; per-level [lo, hi]
/// recorded from the rounded values. A latent whose rounding leaves int16
/// signals a diverged training run (TrainingError).
QuantizedPyramid quantize_latents(const LatentPyramid& pyramid);

LatentPyramid dequantize_latents(const QuantizedPyramid& qp);

/// Half-to-even rounding of m / 2^step_exp.
QuantizedTensor quantize_tensor(const Mat& m, int8_t step_exp);

Mat dequantize_tensor(const QuantizedTensor& t);

/// Modeled code length of a tensor: zero-mean Laplace over the dequantized
/// values with scale max(mean |q| * step, 1e-3), one unit-step mass per
/// integer, each symbol capped at 32 bits. The same scale is transmitted and
/// reused verbatim by the wire coder.
double weight_bits(const QuantizedTensor& t);

float weight_scale(const QuantizedTensor& t);

/// Greedy per-tensor grid search over step exponents kStepExpMin..kStepExpMax:
/// processes tensors in order, scoring each candidate step by
/// (recon_loss(current tensor set) - baseline) + lambda_per_bit * weight_bits.
/// Earlier tensors stay fixed at their chosen quantized values, later ones at
/// the float originals. recon_loss sees the full tensor list.
inline constexpr int8_t kStepExpMin = -12;
inline constexpr int8_t kStepExpMax = -4;
QuantizedNet quantize_net(const std::vector<Mat>& tensors,
                          const std::function<double(const std::vector<Mat>&)>& recon_loss,
                          double lambda_per_bit);

/// Reassembles typed nets from tensor lists (shape-checked).
DecoderNet assemble_decoder(const QuantizedNet& qn);
ArmNet assemble_arm(const QuantizedNet& qn);

/// 16-bit integer CDF over the alphabet [lo, hi] under Laplace params, unit
/// step, tails folded into the extreme symbols, every symbol mass >= 1.
/// Deterministic from (lo, hi, mu, b); both coder sides call exactly this.
std::vector<uint32_t> latent_cdf(int32_t lo, int32_t hi, const LaplaceParams& p);

/// Frozen container. bytes is the entire little-endian file image.
struct RalheBitstream {
    std::vector<uint8_t> bytes;
};

/// Top-level encoder settings. train.num_levels and train.context_width feed
/// the hierarchy and ARM; attrs empty means all 17 attributes.
struct EncodeConfig {
    TrainConfig train;
    int depth = 10;         // voxelization depth L
    uint32_t vq_size = 64;  // covariance codebook rows
    std::vector<int> attrs; // attribute ids, empty = 1..17
};

/// Parsed header plus the section table; powers inspection and byte
/// accounting without decoding payloads.
struct StreamInfo {
    uint16_t version = 0;
    int depth = 0;
    int num_levels = 0;
    int context_width = 0;
    uint32_t finest_count = 0;
    double lambda = 0.0;
    std::array<double, 3> bbox_min = {0.0, 0.0, 0.0};
    double cube_side = 1.0;
    int dec_h1 = 0, dec_h2 = 0, dec_h3 = 0;
    int arm_h1 = 0, arm_h2 = 0;

    struct AttrInfo {
        int attr_id = 0;
        int channels = 0;
        uint32_t dec_params = 0;
        uint32_t arm_params = 0;
        NormalizationParams norm;
    };
    std::vector<AttrInfo> attrs;

    struct Section {
        std::string tag; // 4 ASCII bytes
        size_t offset = 0; // of the payload, from file start
        size_t size = 0;
    };
    std::vector<Section> sections;

    size_t header_bytes = 0;
    size_t total_bytes = 0;
};

/// voxelize + merge + hierarchy, geometry and covariance coding, per-attribute
/// training, quantization and range coding, then container assembly. Two runs
/// with the same inputs produce identical bytes.
RalheBitstream encode(const GaussianModel& model, const EncodeConfig& cfg);

/// Full inverse: geometry, covariances, then per attribute net dequantization,
/// sequential latent decoding, upsampling, decoder evaluation and
/// denormalization. Positions are voxel centers in scene units.
GaussianModel decode(const RalheBitstream& stream);

/// Header + section scan with structural validation; unknown sections are
/// listed but not interpreted.
StreamInfo inspect(const RalheBitstream& stream);

} // namespace ralhe
