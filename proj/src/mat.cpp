// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#include "ralhe/mat.hpp"

namespace ralhe {

void affine_forward(const Mat& x, const Mat& w, const Mat& b, Mat& y) {
    check_shape(x.cols == w.cols, "affine: input width != weight fan-in");
    check_shape(b.rows == 1 && b.cols == w.rows, "affine: bias shape");
    y = Mat(x.rows, w.rows);
    const int in = x.cols;
    const int out = w.rows;
    for (int r = 0; r < x.rows; ++r) {
        const float* xr = &x.v[static_cast<size_t>(r) * in];
        float* yr = &y.v[static_cast<size_t>(r) * out];
        for (int o = 0; o < out; ++o) {
            const float* wo = &w.v[static_cast<size_t>(o) * in];
            double acc = b.v[o];
            for (int i = 0; i < in; ++i) acc += static_cast<double>(xr[i]) * wo[i];
            yr[o] = static_cast<float>(acc);
        }
    }
}

void affine_backward(const Mat& x, const Mat& w, const Mat& dy,
                     Mat& dx, Mat& dw, Mat& db) {
    const int in = x.cols;
    const int out = w.rows;
    for (int r = 0; r < x.rows; ++r) {
        const float* xr = &x.v[static_cast<size_t>(r) * in];
        const float* gr = &dy.v[static_cast<size_t>(r) * out];
        float* dxr = &dx.v[static_cast<size_t>(r) * in];
        for (int o = 0; o < out; ++o) {
            const float g = gr[o];
            if (g == 0.0f) continue;
            const float* wo = &w.v[static_cast<size_t>(o) * in];
            float* dwo = &dw.v[static_cast<size_t>(o) * in];
            for (int i = 0; i < in; ++i) {
                dxr[i] += g * wo[i];
                dwo[i] += g * xr[i];
            }
            db.v[o] += g;
        }
    }
}

void relu_forward(const Mat& x, Mat& y) {
    y = Mat(x.rows, x.cols);
    for (size_t i = 0; i < x.v.size(); ++i) y.v[i] = x.v[i] > 0.0f ? x.v[i] : 0.0f;
}

void relu_backward(const Mat& x, const Mat& dy, Mat& dx) {
    for (size_t i = 0; i < x.v.size(); ++i)
        if (x.v[i] > 0.0f) dx.v[i] += dy.v[i];
}

} // namespace ralhe
