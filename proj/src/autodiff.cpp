// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#include "ralhe/autodiff.hpp"

#include <cmath>
#include <random>

#include "ralhe/arm.hpp"
#include "ralhe/decoder.hpp"

namespace ralhe {

float round_half_even(float x) {
    // default FP environment rounds to nearest even and is never changed here
    return std::nearbyintf(x);
}

Tape::NodeId Tape::value(int rows, int cols) { return fresh(rows, cols); }

Tape::NodeId Tape::fresh(int rows, int cols) {
    if (rows < 0 || cols < 0) throw Error("tape: negative shape");
    nodes_.push_back(Node{Mat(rows, cols), Mat()});
    return static_cast<NodeId>(nodes_.size() - 1);
}

Mat& Tape::val(NodeId id) {
    if (id < 0 || size_t(id) >= nodes_.size()) throw Error("tape: unbound slot");
    return nodes_[size_t(id)].val;
}

const Mat& Tape::val(NodeId id) const { return checked(id); }

const Mat& Tape::checked(NodeId id) const {
    if (id < 0 || size_t(id) >= nodes_.size()) throw Error("tape: unbound slot");
    return nodes_[size_t(id)].val;
}

const Mat& Tape::grad(NodeId id) const {
    if (id < 0 || size_t(id) >= nodes_.size()) throw Error("tape: unbound slot");
    return nodes_[size_t(id)].grad;
}

double Tape::scalar(NodeId id) const {
    const Mat& m = checked(id);
    check_shape(m.rows == 1 && m.cols == 1, "tape: scalar() on non-scalar node");
    const Node& n = nodes_[size_t(id)];
    return n.has_dval ? n.dval : double(m.v[0]);
}

Tape::NodeId Tape::affine(NodeId x, NodeId w, NodeId b) {
    const Mat& xv = checked(x);
    const Mat& wv = checked(w);
    const Mat& bv = checked(b);
    check_shape(xv.cols == wv.cols, "tape affine: fan-in mismatch");
    check_shape(bv.rows == 1 && bv.cols == wv.rows, "tape affine: bias shape");
    Op op;
    op.kind = Op::Kind::Affine;
    op.in = {x, w, b};
    op.out = fresh(xv.rows, wv.rows);
    ops_.push_back(std::move(op));
    return ops_.back().out;
}

Tape::NodeId Tape::relu(NodeId x) {
    const Mat& xv = checked(x);
    Op op;
    op.kind = Op::Kind::Relu;
    op.in = {x};
    op.out = fresh(xv.rows, xv.cols);
    ops_.push_back(std::move(op));
    return ops_.back().out;
}

Tape::NodeId Tape::sparse_conv(NodeId x, NodeId w, NodeId b, const NeighborTable* nbrs) {
    const Mat& xv = checked(x);
    const Mat& wv = checked(w);
    const Mat& bv = checked(b);
    if (nbrs == nullptr) throw Error("tape conv: null neighbor table");
    check_shape(wv.rows == 27 * xv.cols, "tape conv: weight rows != 27 * c_in");
    check_shape(bv.rows == 1 && bv.cols == wv.cols, "tape conv: bias shape");
    check_shape(int(nbrs->idx.size()) == xv.rows * 27, "tape conv: neighbor table size");
    Op op;
    op.kind = Op::Kind::Conv;
    op.in = {x, w, b};
    op.out = fresh(xv.rows, wv.cols);
    op.nbrs = nbrs;
    ops_.push_back(std::move(op));
    return ops_.back().out;
}

Tape::NodeId Tape::upsample(const std::vector<NodeId>& levels, const OctreeHierarchy* h) {
    if (h == nullptr) throw Error("tape upsample: null hierarchy");
    check_shape(int(levels.size()) == h->num_levels, "tape upsample: level count");
    for (int j = 0; j < h->num_levels; ++j) {
        const Mat& lv = checked(levels[size_t(j)]);
        check_shape(lv.cols == 1 && lv.rows == int(h->levels[size_t(j)].size()),
                    "tape upsample: level shape");
    }
    Op op;
    op.kind = Op::Kind::Upsample;
    op.in = levels;
    op.out = fresh(int(h->finest_count()), h->num_levels);
    op.h = h;
    ops_.push_back(std::move(op));
    return ops_.back().out;
}

Tape::NodeId Tape::window_context(NodeId level, int width) {
    const Mat& lv = checked(level);
    check_shape(lv.cols == 1, "tape window: level must be a column");
    if (width < 1) throw Error("tape window: width must be positive");
    Op op;
    op.kind = Op::Kind::Window;
    op.in = {level};
    op.out = fresh(lv.rows, width);
    op.width = width;
    ops_.push_back(std::move(op));
    return ops_.back().out;
}

Tape::NodeId Tape::perturb(NodeId x, const PerturbMode* mode, const std::vector<float>* noise) {
    const Mat& xv = checked(x);
    if (mode == nullptr) throw Error("tape perturb: null mode");
    Op op;
    op.kind = Op::Kind::Perturb;
    op.in = {x};
    op.out = fresh(xv.rows, xv.cols);
    op.mode = mode;
    op.noise = noise;
    ops_.push_back(std::move(op));
    return ops_.back().out;
}

Tape::NodeId Tape::laplace_rate(NodeId raw, NodeId vals) {
    const Mat& rv = checked(raw);
    const Mat& vv = checked(vals);
    check_shape(rv.cols == 2, "tape rate: raw must be len x 2");
    check_shape(vv.cols == 1 && vv.rows == rv.rows, "tape rate: vals must be len x 1");
    Op op;
    op.kind = Op::Kind::LaplaceRate;
    op.in = {raw, vals};
    op.out = fresh(1, 1);
    ops_.push_back(std::move(op));
    return ops_.back().out;
}

Tape::NodeId Tape::mse(NodeId pred, NodeId target) {
    const Mat& pv = checked(pred);
    const Mat& tv = checked(target);
    check_shape(pv.same_shape(tv), "tape mse: shape mismatch");
    check_shape(!pv.empty(), "tape mse: empty input");
    Op op;
    op.kind = Op::Kind::Mse;
    op.in = {pred, target};
    op.out = fresh(1, 1);
    ops_.push_back(std::move(op));
    return ops_.back().out;
}

Tape::NodeId Tape::weighted_sum(std::vector<NodeId> terms, std::vector<double> coeffs) {
    check_shape(terms.size() == coeffs.size() && !terms.empty(),
                "tape weighted_sum: terms/coeffs mismatch");
    for (NodeId t : terms) {
        const Mat& tv = checked(t);
        check_shape(tv.rows == 1 && tv.cols == 1, "tape weighted_sum: non-scalar term");
    }
    Op op;
    op.kind = Op::Kind::WeightedSum;
    op.in = std::move(terms);
    op.out = fresh(1, 1);
    op.coeffs = std::move(coeffs);
    ops_.push_back(std::move(op));
    return ops_.back().out;
}

namespace {

double laplace_pdf(double x, double mu, double b) {
    return std::exp(-std::abs(x - mu) / b) / (2.0 * b);
}

} // namespace

void Tape::run(const Op& op) {
    Node& out = nodes_[size_t(op.out)];
    switch (op.kind) {
        case Op::Kind::Affine:
            affine_forward(nodes_[size_t(op.in[0])].val, nodes_[size_t(op.in[1])].val,
                           nodes_[size_t(op.in[2])].val, out.val);
            break;
        case Op::Kind::Relu:
            relu_forward(nodes_[size_t(op.in[0])].val, out.val);
            break;
        case Op::Kind::Conv:
            out.val = sparse_conv3(nodes_[size_t(op.in[0])].val, *op.nbrs,
                                   nodes_[size_t(op.in[1])].val, nodes_[size_t(op.in[2])].val);
            break;
        case Op::Kind::Upsample: {
            const int m = out.val.rows;
            const int k = out.val.cols;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < k; ++j)
                    out.val.at(i, j) =
                        nodes_[size_t(op.in[size_t(j)])].val.v[parent_index(size_t(i), j, *op.h)];
            break;
        }
        case Op::Kind::Window: {
            const Mat& lv = nodes_[size_t(op.in[0])].val;
            for (int i = 0; i < lv.rows; ++i)
                for (int p = 0; p < op.width; ++p)
                    out.val.at(i, p) = (p < i) ? lv.v[size_t(i - 1 - p)] : 0.0f;
            break;
        }
        case Op::Kind::Perturb: {
            const Mat& xv = nodes_[size_t(op.in[0])].val;
            switch (*op.mode) {
                case PerturbMode::Identity:
                    out.val.v = xv.v;
                    break;
                case PerturbMode::Noise:
                    if (op.noise == nullptr || op.noise->size() != xv.v.size())
                        throw Error("tape perturb: noise buffer size mismatch");
                    for (size_t i = 0; i < xv.v.size(); ++i)
                        out.val.v[i] = xv.v[i] + (*op.noise)[i];
                    break;
                case PerturbMode::Round:
                    for (size_t i = 0; i < xv.v.size(); ++i)
                        out.val.v[i] = round_half_even(xv.v[i]);
                    break;
            }
            break;
        }
        case Op::Kind::LaplaceRate: {
            const Mat& raw = nodes_[size_t(op.in[0])].val;
            const Mat& vals = nodes_[size_t(op.in[1])].val;
            double bits = 0.0;
            for (int i = 0; i < raw.rows; ++i) {
                LaplaceParams p{raw.at(i, 0), positive_scale(raw.at(i, 1))};
                bits += laplace_bits(double(vals.at(i, 0)), p);
            }
            out.dval = bits;
            out.has_dval = true;
            out.val.at(0, 0) = static_cast<float>(bits);
            break;
        }
        case Op::Kind::Mse: {
            const Mat& pv = nodes_[size_t(op.in[0])].val;
            const Mat& tv = nodes_[size_t(op.in[1])].val;
            double acc = 0.0;
            for (size_t i = 0; i < pv.v.size(); ++i) {
                const double d = double(pv.v[i]) - double(tv.v[i]);
                acc += d * d;
            }
            out.dval = acc / double(pv.v.size());
            out.has_dval = true;
            out.val.at(0, 0) = static_cast<float>(out.dval);
            break;
        }
        case Op::Kind::WeightedSum: {
            double acc = 0.0;
            for (size_t t = 0; t < op.in.size(); ++t) {
                const Node& term = nodes_[size_t(op.in[t])];
                acc += op.coeffs[t] * (term.has_dval ? term.dval : double(term.val.v[0]));
            }
            out.dval = acc;
            out.has_dval = true;
            out.val.at(0, 0) = static_cast<float>(acc);
            break;
        }
    }
}

void Tape::run_backward(const Op& op) {
    Node& out = nodes_[size_t(op.out)];
    switch (op.kind) {
        case Op::Kind::Affine:
            affine_backward(nodes_[size_t(op.in[0])].val, nodes_[size_t(op.in[1])].val, out.grad,
                            nodes_[size_t(op.in[0])].grad, nodes_[size_t(op.in[1])].grad,
                            nodes_[size_t(op.in[2])].grad);
            break;
        case Op::Kind::Relu:
            relu_backward(nodes_[size_t(op.in[0])].val, out.grad, nodes_[size_t(op.in[0])].grad);
            break;
        case Op::Kind::Conv: {
            const Mat& x = nodes_[size_t(op.in[0])].val;
            const Mat& w = nodes_[size_t(op.in[1])].val;
            Mat& dx = nodes_[size_t(op.in[0])].grad;
            Mat& dw = nodes_[size_t(op.in[1])].grad;
            Mat& db = nodes_[size_t(op.in[2])].grad;
            const int c_in = x.cols;
            const int c_out = w.cols;
            for (int i = 0; i < x.rows; ++i) {
                const float* g = &out.grad.v[size_t(i) * size_t(c_out)];
                for (int co = 0; co < c_out; ++co) db.v[size_t(co)] += g[co];
                for (int o = 0; o < 27; ++o) {
                    const int32_t nb = op.nbrs->at(size_t(i), o);
                    if (nb < 0) continue;
                    for (int ci = 0; ci < c_in; ++ci) {
                        const float xv = x.at(nb, ci);
                        const float* wrow = &w.v[size_t(o * c_in + ci) * size_t(c_out)];
                        float* dwrow = &dw.v[size_t(o * c_in + ci) * size_t(c_out)];
                        double dxacc = 0.0;
                        for (int co = 0; co < c_out; ++co) {
                            dxacc += double(wrow[co]) * g[co];
                            dwrow[co] += xv * g[co];
                        }
                        dx.at(nb, ci) += static_cast<float>(dxacc);
                    }
                }
            }
            break;
        }
        case Op::Kind::Upsample: {
            const int m = out.val.rows;
            const int k = out.val.cols;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < k; ++j)
                    nodes_[size_t(op.in[size_t(j)])].grad.v[parent_index(size_t(i), j, *op.h)] +=
                        out.grad.at(i, j);
            break;
        }
        case Op::Kind::Window: {
            Mat& dl = nodes_[size_t(op.in[0])].grad;
            for (int i = 0; i < out.val.rows; ++i)
                for (int p = 0; p < op.width && p < i; ++p)
                    dl.v[size_t(i - 1 - p)] += out.grad.at(i, p);
            break;
        }
        case Op::Kind::Perturb:
            // noise shift and round-with-straight-through both pass gradients
            for (size_t i = 0; i < out.grad.v.size(); ++i)
                nodes_[size_t(op.in[0])].grad.v[i] += out.grad.v[i];
            break;
        case Op::Kind::LaplaceRate: {
            const Mat& raw = nodes_[size_t(op.in[0])].val;
            const Mat& vals = nodes_[size_t(op.in[1])].val;
            Mat& draw = nodes_[size_t(op.in[0])].grad;
            Mat& dvals = nodes_[size_t(op.in[1])].grad;
            const double cot = out.grad.v[0];
            if (cot == 0.0) break;
            const double ln2 = std::log(2.0);
            for (int i = 0; i < raw.rows; ++i) {
                const double mu = raw.at(i, 0);
                const float raw_b = raw.at(i, 1);
                const double b = positive_scale(raw_b);
                const double v = vals.at(i, 0);
                LaplaceParams p{float(mu), float(b)};
                const double mass = laplace_cdf(v + 0.5, p) - laplace_cdf(v - 0.5, p);
                const double bits = laplace_bits(v, p);
                if (!(mass > 0.0) || bits >= kMaxSymbolBits) continue; // capped: flat
                const double tp = (v + 0.5 - mu) / b;
                const double tm = (v - 0.5 - mu) / b;
                const double fp = laplace_pdf(v + 0.5, mu, b);
                const double fm = laplace_pdf(v - 0.5, mu, b);
                const double dbits_dmass = -1.0 / (mass * ln2);
                const double dmass_dv = fp - fm;
                const double dmass_dmu = -(fp - fm);
                const double dmass_db = -(tp * fp - tm * fm);
                // softplus clamp: zero slope while the floor binds
                const double sig = (b <= double(kLaplaceMinScale))
                                       ? 0.0
                                       : 1.0 / (1.0 + std::exp(-double(raw_b)));
                draw.at(i, 0) += static_cast<float>(cot * dbits_dmass * dmass_dmu);
                draw.at(i, 1) += static_cast<float>(cot * dbits_dmass * dmass_db * sig);
                dvals.at(i, 0) += static_cast<float>(cot * dbits_dmass * dmass_dv);
            }
            break;
        }
        case Op::Kind::Mse: {
            const Mat& pv = nodes_[size_t(op.in[0])].val;
            const Mat& tv = nodes_[size_t(op.in[1])].val;
            Mat& dp = nodes_[size_t(op.in[0])].grad;
            Mat& dt = nodes_[size_t(op.in[1])].grad;
            const double cot = out.grad.v[0];
            if (cot == 0.0) break;
            const double scale = 2.0 * cot / double(pv.v.size());
            for (size_t i = 0; i < pv.v.size(); ++i) {
                const float g = static_cast<float>(scale * (double(pv.v[i]) - double(tv.v[i])));
                dp.v[i] += g;
                dt.v[i] -= g;
            }
            break;
        }
        case Op::Kind::WeightedSum: {
            const double cot = out.grad.v[0];
            for (size_t t = 0; t < op.in.size(); ++t)
                nodes_[size_t(op.in[t])].grad.v[0] += static_cast<float>(cot * op.coeffs[t]);
            break;
        }
    }
}

void Tape::forward() {
    for (const Op& op : ops_) run(op);
}

uint64_t Tape::activation_signature() const {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](uint64_t bit) {
        h ^= bit;
        h *= 1099511628211ull;
    };
    for (const Op& op : ops_) {
        if (op.kind == Op::Kind::Relu) {
            const Mat& x = nodes_[size_t(op.in[0])].val;
            for (float f : x.v) mix(f > 0.0f ? 1u : 0u);
        } else if (op.kind == Op::Kind::LaplaceRate) {
            const Mat& raw = nodes_[size_t(op.in[0])].val;
            const Mat& vals = nodes_[size_t(op.in[1])].val;
            for (int i = 0; i < raw.rows; ++i) {
                const double mu = raw.at(i, 0);
                const double b = positive_scale(raw.at(i, 1));
                const double v = vals.at(i, 0);
                LaplaceParams p{float(mu), float(b)};
                const double mass = laplace_cdf(v + 0.5, p) - laplace_cdf(v - 0.5, p);
                mix(!(mass > 0.0) || laplace_bits(v, p) >= kMaxSymbolBits ? 1u : 0u);
                mix(b <= double(kLaplaceMinScale) ? 1u : 0u);
                mix(v + 0.5 - mu > 0.0 ? 1u : 0u);
                mix(v - 0.5 - mu > 0.0 ? 1u : 0u);
            }
        }
    }
    return h;
}

void Tape::backward(NodeId output) {
    const Mat& ov = checked(output);
    check_shape(ov.rows == 1 && ov.cols == 1, "tape backward: output must be scalar");
    for (Node& n : nodes_) {
        if (n.grad.same_shape(n.val))
            n.grad.fill(0.0f);
        else
            n.grad = Mat(n.val.rows, n.val.cols);
    }
    nodes_[size_t(output)].grad.at(0, 0) = 1.0f;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) run_backward(*it);
}

double fd_check(Tape& tape, Tape::NodeId output, const std::vector<Tape::NodeId>& params,
                double eps, int probes, uint64_t seed) {
    if (eps < 1e-5 || eps > 1e-2) throw ConfigError("fd_check: eps outside [1e-5, 1e-2]");
    tape.forward();
    tape.backward(output);
    std::vector<Mat> analytic;
    analytic.reserve(params.size());
    for (auto id : params) analytic.push_back(tape.grad(id));

    // float32 intermediates bound fd resolution to a fixed fraction of the
    // graph's gradient scale; below that, fd measures rounding, not adjoints
    double gmax = 0.0;
    for (const Mat& a : analytic)
        for (float g : a.v) gmax = std::max(gmax, double(std::abs(g)));
    const double floor = std::max(1e-4, 0.01 * gmax);

    const uint64_t center_sig = tape.activation_signature();
    bool smooth = true;
    auto eval_at = [&](Mat& leaf, size_t ci, float saved, double delta) {
        leaf.v[ci] = static_cast<float>(double(saved) + delta);
        tape.forward();
        leaf.v[ci] = saved;
        smooth = smooth && tape.activation_signature() == center_sig;
        return tape.scalar(output);
    };

    std::mt19937_64 g(seed);
    double worst = 0.0;
    int done = 0;
    int attempts = 0;
    while (done < probes && attempts < probes * 50) {
        ++attempts;
        const size_t pi = g() % params.size();
        Mat& leaf = tape.val(params[pi]);
        if (leaf.empty()) continue;
        const size_t ci = g() % leaf.v.size();
        const float saved = leaf.v[ci];
        smooth = true;
        const double fd1 =
            (eval_at(leaf, ci, saved, eps) - eval_at(leaf, ci, saved, -eps)) / (2.0 * eps);
        const double a = analytic[pi].v[ci];
        if (std::abs(a) < floor && std::abs(fd1) < floor) continue; // below fd resolution
        const double fd2 = (eval_at(leaf, ci, saved, 2.0 * eps) -
                            eval_at(leaf, ci, saved, -2.0 * eps)) /
                           (4.0 * eps);
        // central differences are gradient oracles only inside one smooth
        // region; a probe whose interval crosses a kink is biased the same
        // way at both steps, so it must be excluded, not averaged
        if (!smooth) continue;
        // float32 intermediates also put a noise floor of O(eps_f32 / eps)
        // on fd; step-size instability marks noise-dominated probes
        if (std::abs(fd1 - fd2) > 0.1 * (std::abs(fd1) + std::abs(a)) + 1e-8) continue;
        worst = std::max(worst, std::abs(a - fd1) / (std::abs(a) + 1e-8));
        ++done;
    }
    tape.forward(); // restore stored values
    if (done == 0) throw Error("fd_check: no usable probes");
    return worst;
}

} // namespace ralhe
