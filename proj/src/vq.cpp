// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#include "ralhe/vq.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <random>
#include <set>

#include "ralhe/errors.hpp"

namespace ralhe {

namespace {

double row_dist2(const Mat& a, int ra, const Mat& b, int rb) {
    double d = 0;
    for (int c = 0; c < kCovDim; ++c) {
        const double diff = double(a.at(ra, c)) - double(b.at(rb, c));
        d += diff * diff;
    }
    return d;
}

void renormalize_quat(Mat& codebook, int row, const Mat& fallback, int fallback_row) {
    double n2 = 0;
    for (int c = 3; c < kCovDim; ++c) n2 += double(codebook.at(row, c)) * codebook.at(row, c);
    if (n2 < 1e-24) {
        for (int c = 3; c < kCovDim; ++c) codebook.at(row, c) = fallback.at(fallback_row, c);
        return;
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (int c = 3; c < kCovDim; ++c)
        codebook.at(row, c) = static_cast<float>(codebook.at(row, c) * inv);
}

uint32_t nearest_codeword(const Mat& covariances, int row, const Mat& codebook) {
    uint32_t best = 0;
    double best_d = row_dist2(covariances, row, codebook, 0);
    for (int k = 1; k < codebook.rows; ++k) {
        const double d = row_dist2(covariances, row, codebook, k);
        if (d < best_d) { // strict: ties keep the lower index
            best_d = d;
            best = static_cast<uint32_t>(k);
        }
    }
    return best;
}

} // namespace

Mat vq_train(const Mat& covariances, uint32_t codebook_size, uint64_t seed) {
    const int m = covariances.rows;
    if (m < 1 || covariances.cols != kCovDim)
        throw ConfigError("vq_train: need an M x 7 matrix with M >= 1");
    if (codebook_size < 1) throw ConfigError("vq_train: codebook size must be >= 1");

    // distinct rows cap the useful codebook size; compare bit patterns
    std::vector<int> distinct;
    std::set<std::array<uint32_t, kCovDim>> seen;
    for (int r = 0; r < m; ++r) {
        std::array<uint32_t, kCovDim> key;
        std::memcpy(key.data(), &covariances.v[size_t(r) * kCovDim], sizeof(key));
        if (seen.insert(key).second) {
            distinct.push_back(r);
            if (distinct.size() > codebook_size) break;
        }
    }
    if (distinct.size() <= codebook_size) {
        Mat codebook(int(distinct.size()), kCovDim);
        for (size_t k = 0; k < distinct.size(); ++k)
            for (int c = 0; c < kCovDim; ++c)
                codebook.at(int(k), c) = covariances.at(distinct[k], c);
        return codebook;
    }

    const int k = static_cast<int>(codebook_size);
    std::mt19937_64 g(seed);
    auto uniform01 = [&g] { return double(g() >> 11) * 0x1.0p-53; };

    // k-means++ seeding
    Mat codebook(k, kCovDim);
    std::vector<double> d2(size_t(m), 0.0);
    {
        const int first = static_cast<int>(g() % uint64_t(m));
        for (int c = 0; c < kCovDim; ++c) codebook.at(0, c) = covariances.at(first, c);
    }
    for (int next = 1; next < k; ++next) {
        double total = 0;
        for (int r = 0; r < m; ++r) {
            double d = row_dist2(covariances, r, codebook, next - 1);
            if (next == 1 || d < d2[r]) d2[r] = d;
            total += d2[r];
        }
        int pick = 0;
        if (total > 0) {
            double u = uniform01() * total;
            for (int r = 0; r < m; ++r) {
                u -= d2[r];
                if (u <= 0) {
                    pick = r;
                    break;
                }
                pick = r;
            }
        } else {
            pick = static_cast<int>(g() % uint64_t(m));
        }
        for (int c = 0; c < kCovDim; ++c) codebook.at(next, c) = covariances.at(pick, c);
    }

    // Lloyd iterations
    std::vector<uint32_t> assign(static_cast<size_t>(m));
    double prev_inertia = -1.0;
    for (int iter = 0; iter < 50; ++iter) {
        double inertia = 0;
        for (int r = 0; r < m; ++r) {
            assign[r] = nearest_codeword(covariances, r, codebook);
            inertia += row_dist2(covariances, r, codebook, int(assign[r]));
        }
        std::vector<std::array<double, kCovDim>> sums(static_cast<size_t>(k));
        for (auto& s : sums) s.fill(0.0);
        std::vector<int> counts(static_cast<size_t>(k), 0);
        for (int r = 0; r < m; ++r) {
            ++counts[assign[r]];
            for (int c = 0; c < kCovDim; ++c) sums[assign[r]][c] += covariances.at(r, c);
        }
        const Mat before = codebook;
        for (int cw = 0; cw < k; ++cw) {
            if (counts[cw] == 0) continue; // empty cluster keeps its codeword
            for (int c = 0; c < kCovDim; ++c)
                codebook.at(cw, c) = static_cast<float>(sums[cw][c] / counts[cw]);
            renormalize_quat(codebook, cw, before, cw);
        }
        if (prev_inertia >= 0 &&
            std::abs(prev_inertia - inertia) <= 1e-6 * std::max(prev_inertia, 1e-300))
            break;
        prev_inertia = inertia;
    }
    return codebook;
}

std::vector<uint32_t> vq_encode(const Mat& covariances, const Mat& codebook) {
    if (covariances.cols != kCovDim || codebook.cols != kCovDim || codebook.rows < 1)
        throw ConfigError("vq_encode: shape mismatch");
    std::vector<uint32_t> indices(size_t(covariances.rows));
    for (int r = 0; r < covariances.rows; ++r) indices[r] = nearest_codeword(covariances, r, codebook);
    return indices;
}

Mat vq_decode(const std::vector<uint32_t>& indices, const Mat& codebook) {
    if (codebook.cols != kCovDim) throw ConfigError("vq_decode: bad codebook");
    Mat out(int(indices.size()), kCovDim);
    for (size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= uint32_t(codebook.rows))
            throw BitstreamError("vq_decode: index outside codebook");
        for (int c = 0; c < kCovDim; ++c) out.at(int(r), c) = codebook.at(int(indices[r]), c);
    }
    return out;
}

} // namespace ralhe
