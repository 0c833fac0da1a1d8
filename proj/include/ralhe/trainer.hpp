// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ralhe/arm.hpp"
#include "ralhe/decoder.hpp"
#include "ralhe/gaussian_io.hpp"
#include "ralhe/geometry.hpp"

namespace ralhe {

/// Per-attribute rate-distortion training settings. num_levels and
/// context_width are the pipeline defaults consumed when the hierarchy and
/// ARM are built; train_attribute itself follows the hierarchy it is given.
struct TrainConfig {
    double lambda = 1e-3; // rate multiplier, >= 0
    int iterations = 10000;
    double lr_init = 1e-2;
    double lr_floor = 1e-4; // cosine decay target
    uint64_t seed = 1;
    double noise_fraction = 0.9; // leading fraction of iterations with noise
    int num_levels = 5;          // k
    int context_width = 16;      // w
    double beta1 = 0.9;          // adaptive-moment decay rates
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int snapshot_interval = 100; // quantized-loss evaluation cadence
    std::string log_path;        // per-iteration CSV when non-empty
};

struct LossReport {
    double loss = 0.0;
    double distortion = 0.0;
    double bits = 0.0;
};

/// Best quantized-loss snapshot of one attribute codec. The pyramid stays
/// real-valued; report holds the rounded-latent evaluation of exactly this
/// state, reproducible through rd_loss.
struct TrainedAttribute {
    LatentPyramid pyramid;
    DecoderNet dec;
    ArmNet arm;
    NormalizationParams norm;
    LossReport report;
};

/// U(-0.5, 0.5) noise at 24-bit resolution, a pure function of
/// (seed, iteration, level, index). Both bounds are strict.
void fill_noise(std::vector<float>& buf, uint64_t seed, int iteration, int level);

LatentPyramid add_noise(const LatentPyramid& pyramid, uint64_t seed, int iteration);

/// Half-to-even rounding of every latent.
LatentPyramid round_pyramid(const LatentPyramid& pyramid);

/// Rate-distortion evaluation of the pyramid exactly as given (no noise, no
/// rounding): distortion is the mean squared reconstruction error in the
/// normalized domain, bits is estimate_rate, loss = distortion +
/// lambda * bits / finest_count.
LossReport rd_loss(const Mat& attr_values, const LatentPyramid& pyramid, const DecoderNet& dec,
                   const ArmNet& arm, const OctreeHierarchy& h, const NeighborTable& nbrs,
                   double lambda);

/// Jointly fits latents, decoder and ARM for one normalized attribute with
/// adaptive-moment descent under a cosine learning-rate schedule. Latents
/// start at zero, network weights uniform in +-1/sqrt(fan_in). The leading
/// noise_fraction of iterations uses additive uniform noise, the rest rounds
/// with straight-through gradients. Returns the best quantized-loss snapshot.
/// A non-finite loss restarts once at a tenth of the learning rate, then
/// fails with diagnostics.
TrainedAttribute train_attribute(const AttributeMatrix& attr, const NormalizationParams& norm,
                                 const OctreeHierarchy& h, const TrainConfig& cfg);

/// Normalizes and trains each attribute independently under the shared
/// lambda; the joint objective decomposes because distortion and rate have
/// no cross-attribute terms. Failures carry the attribute id.
std::vector<TrainedAttribute> train_model(const std::vector<AttributeMatrix>& attrs,
                                          const OctreeHierarchy& h, const TrainConfig& cfg);

} // namespace ralhe
