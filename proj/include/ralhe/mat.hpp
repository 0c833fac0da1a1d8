// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ralhe/errors.hpp"

namespace ralhe {

/// Dense row-major float32 matrix. All network weights, latents and attribute
/// data live in this type. Storage is 32-bit; dot products accumulate in
/// 64-bit and round once on store, in a fixed order, so repeated evaluation
/// of the same graph is bit-identical.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<float> v;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0f) {}

    float& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    float at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }

    void fill(float x) { std::fill(v.begin(), v.end(), x); }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

/// Y = X * W^T + b.  X is n x in, W is out x in, b is 1 x out.
void affine_forward(const Mat& x, const Mat& w, const Mat& b, Mat& y);

/// Accumulates the affine backward pass: dx += dy * W, dw += dy^T * X,
/// db += column sums of dy.
void affine_backward(const Mat& x, const Mat& w, const Mat& dy,
                     Mat& dx, Mat& dw, Mat& db);

void relu_forward(const Mat& x, Mat& y);
void relu_backward(const Mat& x, const Mat& dy, Mat& dx);

inline void check_shape(bool ok, const char* what) {
    if (!ok) throw ShapeError(what);
}

} // namespace ralhe
