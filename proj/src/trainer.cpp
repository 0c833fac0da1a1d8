// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#include "ralhe/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>

#include "ralhe/autodiff.hpp"

namespace ralhe {

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

} // namespace

void fill_noise(std::vector<float>& buf, uint64_t seed, int iteration, int level) {
    const uint64_t a = splitmix64(seed ^ 0x9e3779b97f4a7c15ull * (uint64_t(iteration) + 1));
    const uint64_t base = splitmix64(a ^ 0xd1b54a32d192ed03ull * (uint64_t(level) + 1));
    for (size_t i = 0; i < buf.size(); ++i) {
        const uint64_t u = splitmix64(base ^ i);
        // (j + 0.5) / 2^24 - 0.5 is exact in float, so both bounds stay strict
        buf[i] = float((double(u >> 40) + 0.5) * 0x1.0p-24 - 0.5);
    }
}

LatentPyramid add_noise(const LatentPyramid& pyramid, uint64_t seed, int iteration) {
    LatentPyramid out = pyramid;
    std::vector<float> buf;
    for (size_t j = 0; j < out.levels.size(); ++j) {
        buf.resize(out.levels[j].size());
        fill_noise(buf, seed, iteration, int(j));
        for (size_t i = 0; i < buf.size(); ++i) out.levels[j][i] += buf[i];
    }
    return out;
}

LatentPyramid round_pyramid(const LatentPyramid& pyramid) {
    LatentPyramid out = pyramid;
    for (auto& level : out.levels)
        for (auto& v : level) v = round_half_even(v);
    return out;
}

LossReport rd_loss(const Mat& attr_values, const LatentPyramid& pyramid, const DecoderNet& dec,
                   const ArmNet& arm, const OctreeHierarchy& h, const NeighborTable& nbrs,
                   double lambda) {
    if (lambda < 0.0) throw ConfigError("rd_loss: negative lambda");
    check_shape(int(pyramid.levels.size()) == h.num_levels, "rd_loss: pyramid level count");
    for (int j = 0; j < h.num_levels; ++j)
        check_shape(pyramid.levels[size_t(j)].size() == h.levels[size_t(j)].size(),
                    "rd_loss: level size");
    check_shape(attr_values.rows == int(h.finest_count()), "rd_loss: attribute rows");

    const Mat feats = upsample_copy(pyramid, h);
    const Mat pred = decoder_forward(feats, dec, nbrs);
    check_shape(pred.same_shape(attr_values), "rd_loss: channel mismatch");

    double acc = 0.0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const double d = double(pred.v[i]) - double(attr_values.v[i]);
        acc += d * d;
    }
    LossReport r;
    r.distortion = acc / double(pred.v.size());
    r.bits = estimate_rate(pyramid, arm);
    r.loss = r.distortion + lambda * r.bits / double(h.finest_count());
    return r;
}

namespace {

struct GraphIds {
    std::vector<Tape::NodeId> latents, rates;
    Tape::NodeId target = -1, dist = -1, loss = -1;
    Tape::NodeId dw1 = -1, db1 = -1, dw2 = -1, db2 = -1;
    Tape::NodeId dw3 = -1, db3 = -1, dw4 = -1, db4 = -1;
    Tape::NodeId aw1 = -1, ab1 = -1, aw2 = -1, ab2 = -1, aw3 = -1, ab3 = -1;
};

/// Records the joint RD graph once; mode, noise, h and nbrs must outlive the
/// tape. Loss = mse + (lambda / M) * sum of per-level bits.
GraphIds record_graph(Tape& t, const OctreeHierarchy& h, const NeighborTable* nbrs,
                      const PerturbMode* mode, std::vector<std::vector<float>>* noise, int c_out,
                      const TrainConfig& cfg) {
    const int k = h.num_levels;
    const int m = int(h.finest_count());
    GraphIds g;

    std::vector<Tape::NodeId> noisy;
    for (int j = 0; j < k; ++j) {
        const int len = int(h.levels[size_t(j)].size());
        (*noise)[size_t(j)].assign(size_t(len), 0.0f);
        auto y = t.value(len, 1);
        g.latents.push_back(y);
        noisy.push_back(t.perturb(y, mode, &(*noise)[size_t(j)]));
    }
    auto u = t.upsample(noisy, &h);

    g.dw1 = t.value(16, k);
    g.db1 = t.value(1, 16);
    g.dw2 = t.value(16, 16);
    g.db2 = t.value(1, 16);
    g.dw3 = t.value(27 * 16, 8);
    g.db3 = t.value(1, 8);
    g.dw4 = t.value(27 * 8, c_out);
    g.db4 = t.value(1, c_out);
    auto r1 = t.relu(t.affine(u, g.dw1, g.db1));
    auto r2 = t.relu(t.affine(r1, g.dw2, g.db2));
    auto r3 = t.relu(t.sparse_conv(r2, g.dw3, g.db3, nbrs));
    auto pred = t.sparse_conv(r3, g.dw4, g.db4, nbrs);

    g.target = t.value(m, c_out);
    g.dist = t.mse(pred, g.target);

    const int w = cfg.context_width;
    g.aw1 = t.value(16, w);
    g.ab1 = t.value(1, 16);
    g.aw2 = t.value(16, 16);
    g.ab2 = t.value(1, 16);
    g.aw3 = t.value(2, 16);
    g.ab3 = t.value(1, 2);

    std::vector<Tape::NodeId> terms = {g.dist};
    std::vector<double> coeffs = {1.0};
    for (int j = 0; j < k; ++j) {
        auto ctx = t.window_context(noisy[size_t(j)], w);
        auto a1 = t.relu(t.affine(ctx, g.aw1, g.ab1));
        auto a2 = t.relu(t.affine(a1, g.aw2, g.ab2));
        auto raw = t.affine(a2, g.aw3, g.ab3);
        g.rates.push_back(t.laplace_rate(raw, noisy[size_t(j)]));
        terms.push_back(g.rates.back());
        coeffs.push_back(cfg.lambda / double(m));
    }
    g.loss = t.weighted_sum(terms, coeffs);
    return g;
}

/// Weights and biases uniform in +-1/sqrt(fan_in), fixed draw order.
void init_nets(Tape& t, const GraphIds& g, uint64_t seed) {
    std::mt19937_64 rg(splitmix64(seed ^ 0xa0761d6478bd642full));
    auto fill = [&](Tape::NodeId id, int fan_in) {
        Mat& m = t.val(id);
        const double a = 1.0 / std::sqrt(double(fan_in));
        for (auto& x : m.v)
            x = float((double(rg() >> 11) * 0x1.0p-53 * 2.0 - 1.0) * a);
    };
    fill(g.dw1, t.val(g.dw1).cols);
    fill(g.db1, t.val(g.dw1).cols);
    fill(g.dw2, t.val(g.dw2).cols);
    fill(g.db2, t.val(g.dw2).cols);
    fill(g.dw3, t.val(g.dw3).rows);
    fill(g.db3, t.val(g.dw3).rows);
    fill(g.dw4, t.val(g.dw4).rows);
    fill(g.db4, t.val(g.dw4).rows);
    fill(g.aw1, t.val(g.aw1).cols);
    fill(g.ab1, t.val(g.aw1).cols);
    fill(g.aw2, t.val(g.aw2).cols);
    fill(g.ab2, t.val(g.aw2).cols);
    fill(g.aw3, t.val(g.aw3).cols);
    fill(g.ab3, t.val(g.aw3).cols);
}

struct Moments {
    std::vector<double> m, v;
};

void adam_step(Mat& p, const Mat& grad, Moments& mo, double lr, const TrainConfig& cfg, int t) {
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (size_t i = 0; i < p.v.size(); ++i) {
        const double g = grad.v[i];
        mo.m[i] = cfg.beta1 * mo.m[i] + (1.0 - cfg.beta1) * g;
        mo.v[i] = cfg.beta2 * mo.v[i] + (1.0 - cfg.beta2) * g * g;
        p.v[i] = float(double(p.v[i]) -
                       lr * (mo.m[i] / c1) / (std::sqrt(mo.v[i] / c2) + cfg.adam_eps));
    }
}

DecoderNet extract_dec(const Tape& t, const GraphIds& g) {
    DecoderNet n;
    n.w1 = t.val(g.dw1);
    n.b1 = t.val(g.db1);
    n.w2 = t.val(g.dw2);
    n.b2 = t.val(g.db2);
    n.w3 = t.val(g.dw3);
    n.b3 = t.val(g.db3);
    n.w4 = t.val(g.dw4);
    n.b4 = t.val(g.db4);
    return n;
}

ArmNet extract_arm(const Tape& t, const GraphIds& g) {
    ArmNet n;
    n.w1 = t.val(g.aw1);
    n.b1 = t.val(g.ab1);
    n.w2 = t.val(g.aw2);
    n.b2 = t.val(g.ab2);
    n.w3 = t.val(g.aw3);
    n.b3 = t.val(g.ab3);
    return n;
}

struct AttemptResult {
    bool diverged = false;
    int diverged_at = 0;
    double bad_loss = 0.0;
    TrainedAttribute best;
};

AttemptResult run_attempt(const AttributeMatrix& attr, const NormalizationParams& norm,
                          const OctreeHierarchy& h, const NeighborTable& nbrs,
                          const TrainConfig& cfg, double lr0, double lrf) {
    const int k = h.num_levels;
    Tape t;
    PerturbMode mode = PerturbMode::Noise;
    std::vector<std::vector<float>> noise(static_cast<size_t>(k));
    GraphIds g = record_graph(t, h, &nbrs, &mode, &noise, attr.values.cols, cfg);
    t.val(g.target) = attr.values;
    init_nets(t, g, cfg.seed); // latents stay zero

    std::vector<Tape::NodeId> trainables = g.latents;
    for (auto id : {g.dw1, g.db1, g.dw2, g.db2, g.dw3, g.db3, g.dw4, g.db4,
                    g.aw1, g.ab1, g.aw2, g.ab2, g.aw3, g.ab3})
        trainables.push_back(id);
    std::vector<Moments> moments(trainables.size());
    for (size_t i = 0; i < trainables.size(); ++i) {
        const size_t n = t.val(trainables[i]).v.size();
        moments[i].m.assign(n, 0.0);
        moments[i].v.assign(n, 0.0);
    }

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path, std::ios::trunc);
        if (!log) throw ConfigError("trainer: cannot open log file " + cfg.log_path);
        log << "iteration,distortion,bits,loss\n";
    }

    AttemptResult res;
    double best_loss = std::numeric_limits<double>::infinity();
    const int noise_iters = int(cfg.noise_fraction * double(cfg.iterations));

    for (int it = 0; it < cfg.iterations; ++it) {
        const bool noisy_phase = it < noise_iters;
        mode = noisy_phase ? PerturbMode::Noise : PerturbMode::Round;
        if (noisy_phase)
            for (int j = 0; j < k; ++j) fill_noise(noise[size_t(j)], cfg.seed, it, j);

        t.forward();
        const double loss = t.scalar(g.loss);
        if (!std::isfinite(loss)) {
            res.diverged = true;
            res.diverged_at = it;
            res.bad_loss = loss;
            return res;
        }
        if (log.is_open()) {
            double bits = 0.0;
            for (auto r : g.rates) bits += t.scalar(r);
            char line[128];
            std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.9g\n", it, t.scalar(g.dist), bits,
                          loss);
            log << line;
        }

        t.backward(g.loss);
        const double prog = cfg.iterations > 1 ? double(it) / double(cfg.iterations - 1) : 1.0;
        const double lr = lrf + 0.5 * (lr0 - lrf) * (1.0 + std::cos(prog * 3.14159265358979323846));
        for (size_t i = 0; i < trainables.size(); ++i)
            adam_step(t.val(trainables[i]), t.grad(trainables[i]), moments[i], lr, cfg, it + 1);

        if ((it + 1) % cfg.snapshot_interval == 0 || it + 1 == cfg.iterations) {
            LatentPyramid cur;
            cur.attr_id = attr.attr_id;
            for (int j = 0; j < k; ++j) cur.levels.push_back(t.val(g.latents[size_t(j)]).v);
            const LossReport rep = rd_loss(attr.values, round_pyramid(cur), extract_dec(t, g),
                                           extract_arm(t, g), h, nbrs, cfg.lambda);
            if (!std::isfinite(rep.loss)) {
                res.diverged = true;
                res.diverged_at = it;
                res.bad_loss = rep.loss;
                return res;
            }
            if (rep.loss < best_loss) {
                best_loss = rep.loss;
                res.best.pyramid = std::move(cur);
                res.best.dec = extract_dec(t, g);
                res.best.arm = extract_arm(t, g);
                res.best.norm = norm;
                res.best.report = rep;
            }
        }
    }
    return res;
}

void validate(const TrainConfig& cfg) {
    if (cfg.lambda < 0.0) throw ConfigError("trainer: lambda must be >= 0");
    if (cfg.iterations < 1) throw ConfigError("trainer: iterations must be >= 1");
    if (!(cfg.noise_fraction >= 0.0 && cfg.noise_fraction <= 1.0))
        throw ConfigError("trainer: noise_fraction outside [0, 1]");
    if (!(cfg.lr_init > 0.0) || !(cfg.lr_floor >= 0.0) || cfg.lr_floor > cfg.lr_init)
        throw ConfigError("trainer: need 0 <= lr_floor <= lr_init, lr_init > 0");
    if (cfg.context_width < 1) throw ConfigError("trainer: context_width must be >= 1");
    if (cfg.snapshot_interval < 1) throw ConfigError("trainer: snapshot_interval must be >= 1");
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
        throw ConfigError("trainer: betas outside [0, 1)");
    if (!(cfg.adam_eps > 0.0)) throw ConfigError("trainer: adam_eps must be > 0");
}

} // namespace

TrainedAttribute train_attribute(const AttributeMatrix& attr, const NormalizationParams& norm,
                                 const OctreeHierarchy& h, const TrainConfig& cfg) {
    validate(cfg);
    check_shape(attr.values.rows == int(h.finest_count()), "trainer: attribute rows");
    check_shape(attr.values.cols >= 1, "trainer: attribute channels");
    const NeighborTable nbrs = build_neighbor_table(h);

    AttemptResult first = run_attempt(attr, norm, h, nbrs, cfg, cfg.lr_init, cfg.lr_floor);
    if (!first.diverged) return first.best;
    AttemptResult second =
        run_attempt(attr, norm, h, nbrs, cfg, cfg.lr_init / 10.0, cfg.lr_floor / 10.0);
    if (!second.diverged) return second.best;
    throw TrainingError("training diverged twice: loss " + std::to_string(first.bad_loss) +
                        " at iteration " + std::to_string(first.diverged_at) + " with lr " +
                        std::to_string(cfg.lr_init) + ", retry loss " +
                        std::to_string(second.bad_loss) + " at iteration " +
                        std::to_string(second.diverged_at) + " with lr " +
                        std::to_string(cfg.lr_init / 10.0));
}

std::vector<TrainedAttribute> train_model(const std::vector<AttributeMatrix>& attrs,
                                          const OctreeHierarchy& h, const TrainConfig& cfg) {
    std::vector<TrainedAttribute> out;
    out.reserve(attrs.size());
    for (const auto& a : attrs) {
        NormalizationParams params;
        const AttributeMatrix normalized = normalize(a, params);
        TrainConfig per = cfg;
        if (!cfg.log_path.empty())
            per.log_path = cfg.log_path + ".attr" + std::to_string(a.attr_id);
        try {
            out.push_back(train_attribute(normalized, params, h, per));
        } catch (const TrainingError& e) {
            throw TrainingError("attribute " + std::to_string(a.attr_id) + ": " + e.what());
        }
    }
    return out;
}

} // namespace ralhe
