// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "ralhe/mat.hpp"

namespace ralhe {

/// Covariance rows are 7-vectors: 3 log-scales then a unit quaternion.
inline constexpr int kCovDim = 7;

/// k-means codebook over covariance rows. k-means++ seeding, at most 50 Lloyd
/// iterations or 1e-6 relative inertia change; the quaternion part of every
/// codeword is renormalized after each update. Asking for more codewords than
/// there are distinct rows yields exactly the distinct rows.
Mat vq_train(const Mat& covariances, uint32_t codebook_size, uint64_t seed);

/// Nearest codeword under Euclidean distance, ties to the lowest index.
std::vector<uint32_t> vq_encode(const Mat& covariances, const Mat& codebook);

Mat vq_decode(const std::vector<uint32_t>& indices, const Mat& codebook);

} // namespace ralhe
