// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate: one line per criterion, nonzero exit on any failure.
// Thresholds and time limits are pinned; the toy scenes are sized so every
// criterion fits its budget on a single core.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ralhe/autodiff.hpp"
#include "ralhe/bitstream.hpp"
#include "ralhe/metrics.hpp"
#include "ralhe/occupancy.hpp"
#include "ralhe/trainer.hpp"

#include "helpers.hpp"

using namespace ralhe;

namespace {

struct Result {
    int id = 0;
    std::string name;
    bool pass = false;
    double secs = 0.0;
    double limit = 0.0;
    std::string detail;
};

template <typename F>
Result run_criterion(int id, const std::string& name, double limit, F&& body) {
    Result r;
    r.id = id;
    r.name = name;
    r.limit = limit;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        r.detail = body(r.pass);
    } catch (const std::exception& e) {
        r.pass = false;
        r.detail = std::string("exception: ") + e.what();
    }
    r.secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (r.secs >= limit) {
        r.pass = false;
        r.detail += " [over time budget]";
    }
    return r;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

uint64_t interleave_oracle(uint32_t x, uint32_t y, uint32_t z, int depth) {
    uint64_t code = 0;
    for (int b = 0; b < depth; ++b) {
        code |= uint64_t((x >> b) & 1u) << (3 * b + 2);
        code |= uint64_t((y >> b) & 1u) << (3 * b + 1);
        code |= uint64_t((z >> b) & 1u) << (3 * b);
    }
    return code;
}

void fill_mat(Mat& m, std::mt19937_64& g, float lo, float hi) {
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c)
            m.at(r, c) = lo + float(test::uniform01(g)) * (hi - lo);
}

/// Fibonacci lattice on the unit sphere. Opacity is either a smooth field of
/// position or iid uniform noise of the same span; all other attributes are
/// small random values.
GaussianModel sphere_model(size_t n, bool noisy_opacity, uint64_t seed) {
    GaussianModel m;
    auto g = test::rng(seed);
    const double ga = 3.14159265358979323846 * (3.0 - std::sqrt(5.0));
    auto u = [&] { return float(test::uniform01(g)); };
    for (size_t i = 0; i < n; ++i) {
        const double z = 1.0 - 2.0 * (double(i) + 0.5) / double(n);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double th = ga * double(i);
        const float x = float(r * std::cos(th));
        const float y = float(r * std::sin(th));
        m.positions.push_back({x, y, float(z)});
        m.scales.push_back({-4.0f + (u() - 0.5f) * 0.6f, -4.0f + (u() - 0.5f) * 0.6f,
                            -4.0f + (u() - 0.5f) * 0.6f});
        std::array<float, 4> q{u() - 0.5f, u() - 0.5f, u() - 0.5f, u() - 0.5f};
        const float qn = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
        for (auto& c : q) c /= std::max(qn, 1e-6f);
        m.rotations.push_back(q);
        std::array<float, 48> sh{};
        for (auto& c : sh) c = (u() - 0.5f) * 0.6f;
        m.sh.push_back(sh);
        const float smooth = 1.2f * std::sin(3.14159265f * x) * std::cos(3.14159265f * y) +
                             0.8f * float(z);
        m.opacities.push_back(noisy_opacity ? (u() - 0.5f) * 4.0f : smooth);
    }
    return m;
}

EncodeConfig sphere_config(double lambda) {
    EncodeConfig cfg;
    cfg.depth = 5;
    cfg.vq_size = 32;
    cfg.attrs = {kOpacityAttrId};
    cfg.train.lambda = lambda;
    cfg.train.iterations = 10000;
    cfg.train.num_levels = 5;
    cfg.train.context_width = 16;
    cfg.train.seed = 1;
    return cfg;
}

size_t latent_payload_bytes(const RalheBitstream& bs, int num_levels) {
    size_t bytes = 0;
    for (const auto& s : inspect(bs).sections)
        if (s.tag == "ALAT") bytes += s.size - 12 * size_t(num_levels);
    return bytes;
}

struct SweepPoint {
    double lambda = 0.0;
    RalheBitstream bs;
    size_t bytes = 0;
    double mse = 0.0;
    double psnr = 0.0;
    bool exact = false;
};

// criterion 1: morton codes, hierarchy levels and neighbor table

std::string criterion_morton(bool& pass) {
    if (morton_encode({3, 1, 2}, 2) != 46) {
        pass = false;
        return "morton_encode((3,1,2), 2) != 46";
    }
    auto g = test::rng(1001);
    const int kRounds = 100000;
    for (int i = 0; i < kRounds; ++i) {
        const int depth = 1 + int(g() % 21);
        const uint64_t side = uint64_t(1) << depth;
        const VoxelCoord v{uint32_t(g() % side), uint32_t(g() % side), uint32_t(g() % side)};
        const MortonCode code = morton_encode(v, depth);
        if (code != interleave_oracle(v.x, v.y, v.z, depth) || !(morton_decode(code, depth) == v)) {
            pass = false;
            return fmt("roundtrip mismatch at depth %d", depth);
        }
    }

    const int depth = 7, k = 5;
    const auto finest = test::random_voxel_set(3000, depth, 1002);
    const auto h = build_hierarchy(finest, depth, k);
    if (h.levels[0] != finest) {
        pass = false;
        return "finest level differs from the sorted input set";
    }
    for (int j = 1; j < k; ++j) {
        std::set<MortonCode> parents;
        for (const MortonCode c : h.levels[size_t(j - 1)]) parents.insert(c >> 3);
        const std::vector<MortonCode> expect(parents.begin(), parents.end());
        if (h.levels[size_t(j)] != expect) {
            pass = false;
            return fmt("level %d is not the sorted parent set", j);
        }
    }
    for (size_t i = 0; i < h.finest_count(); i += 7) {
        for (int j = 1; j < k; ++j) {
            const MortonCode want = h.levels[0][i] >> (3 * j);
            if (h.levels[size_t(j)][parent_index(i, j, h)] != want) {
                pass = false;
                return "parent_map disagrees with shifted codes";
            }
        }
    }

    const auto nbrs = build_neighbor_table(h);
    const int64_t side = int64_t(1) << depth;
    for (size_t i = 0; i < h.finest_count(); i += 15) {
        const VoxelCoord v = morton_decode(h.levels[0][i], depth);
        for (int o = 0; o < 27; ++o) {
            const int64_t nx = int64_t(v.x) + o / 9 - 1;
            const int64_t ny = int64_t(v.y) + o / 3 % 3 - 1;
            const int64_t nz = int64_t(v.z) + o % 3 - 1;
            int32_t want = -1;
            if (nx >= 0 && ny >= 0 && nz >= 0 && nx < side && ny < side && nz < side) {
                const MortonCode nc =
                    morton_encode({uint32_t(nx), uint32_t(ny), uint32_t(nz)}, depth);
                const auto it = std::lower_bound(h.levels[0].begin(), h.levels[0].end(), nc);
                if (it != h.levels[0].end() && *it == nc)
                    want = int32_t(it - h.levels[0].begin());
            }
            if (nbrs.at(i, o) != want) {
                pass = false;
                return fmt("neighbor (%zu, %d) disagrees with the brute-force grid", i, o);
            }
        }
    }
    pass = true;
    return fmt("%d roundtrips, hierarchy depth %d with %d levels, neighbor oracle sampled",
               kRounds, depth, k);
}

// criterion 2: full training graph gradients against central differences

std::string criterion_gradients(bool& pass) {
    const auto codes = test::random_voxel_set(36, 3, 121);
    const auto h = build_hierarchy(codes, 3, 3);
    const auto nbrs = build_neighbor_table(h);
    const int m = int(h.finest_count());
    const int w = 6;
    auto g = test::rng(2001);

    Tape t;
    PerturbMode mode = PerturbMode::Noise;
    std::vector<Tape::NodeId> latents, noisy;
    std::vector<std::vector<float>> noise(3);
    for (int j = 0; j < 3; ++j) {
        const int len = int(h.levels[size_t(j)].size());
        const auto y = t.value(len, 1);
        noise[size_t(j)].resize(size_t(len));
        for (auto& x : noise[size_t(j)]) x = float(test::uniform01(g)) - 0.5f;
        latents.push_back(y);
        noisy.push_back(t.perturb(y, &mode, &noise[size_t(j)]));
    }
    const auto up = t.upsample(noisy, &h);

    DecoderNet dn = make_decoder_net(3, 2, 8, 8, 6);
    ArmNet an = make_arm_net(w, 10, 10);
    for (Mat* mm : {&dn.w1, &dn.b1, &dn.w2, &dn.b2, &dn.w3, &dn.b3, &dn.w4, &dn.b4})
        fill_mat(*mm, g, -0.4f, 0.4f);
    for (Mat* mm : {&an.w1, &an.b1, &an.w2, &an.b2, &an.w3, &an.b3}) fill_mat(*mm, g, -0.3f, 0.3f);

    auto leaf = [&](const Mat& src) {
        const auto id = t.value(src.rows, src.cols);
        t.val(id) = src;
        return id;
    };
    const auto dw1 = leaf(dn.w1), db1 = leaf(dn.b1), dw2 = leaf(dn.w2), db2 = leaf(dn.b2);
    const auto dw3 = leaf(dn.w3), db3 = leaf(dn.b3), dw4 = leaf(dn.w4), db4 = leaf(dn.b4);
    auto x = t.relu(t.affine(up, dw1, db1));
    x = t.relu(t.affine(x, dw2, db2));
    x = t.relu(t.sparse_conv(x, dw3, db3, &nbrs));
    const auto pred = t.sparse_conv(x, dw4, db4, &nbrs);
    const auto tgt = t.value(m, 2);
    fill_mat(t.val(tgt), g, -0.5f, 0.5f);
    const auto dist = t.mse(pred, tgt);

    const auto aw1 = leaf(an.w1), ab1 = leaf(an.b1), aw2 = leaf(an.w2), ab2 = leaf(an.b2);
    const auto aw3 = leaf(an.w3), ab3 = leaf(an.b3);
    std::vector<Tape::NodeId> terms = {dist};
    std::vector<double> coeffs = {1.0};
    for (int j = 0; j < 3; ++j) {
        auto c = t.relu(t.affine(t.window_context(noisy[size_t(j)], w), aw1, ab1));
        c = t.relu(t.affine(c, aw2, ab2));
        const auto raw = t.affine(c, aw3, ab3);
        terms.push_back(t.laplace_rate(raw, noisy[size_t(j)]));
        coeffs.push_back(0.05);
    }
    const auto loss = t.weighted_sum(terms, coeffs);

    for (int j = 0; j < 3; ++j) fill_mat(t.val(latents[size_t(j)]), g, -2.0f, 2.0f);

    const std::vector<Tape::NodeId> params = {latents[0], latents[1], latents[2], tgt,
                                              dw1,        db1,        dw2,        db2,
                                              dw3,        db3,        dw4,        db4,
                                              aw1,        ab1,        aw2,        ab2,
                                              aw3,        ab3};
    const double err = fd_check(t, loss, params, 1e-3, 400, 137);
    pass = err < 1e-3;
    return fmt("max relative error %.3e over 400 probes (threshold 1e-3)", err);
}

// criterion 3: context model size at the default width

std::string criterion_arm_count(bool& pass) {
    const int n = count_params(make_arm_net(16));
    pass = n == 578;
    return fmt("%d parameters at context width 16 (expected 578)", n);
}

// criterion 4: occupancy coding is lossless across depths

std::string criterion_lossless_geometry(bool& pass) {
    auto g = test::rng(4001);
    for (int i = 0; i < 50; ++i) {
        const int depth = 2 + i % 7;
        const uint64_t cells = uint64_t(1) << (3 * depth);
        const size_t cap = size_t(std::min<uint64_t>(1500, cells / 2));
        const size_t n = 1 + size_t(g() % cap);
        const auto voxels = test::random_voxel_set(n, depth, 4100 + uint64_t(i));
        const auto h = build_hierarchy(voxels, depth, 1);
        const auto parsed = parse_occupancy(serialize_occupancy(encode_occupancy(h)));
        if (decode_occupancy(parsed) != voxels) {
            pass = false;
            return fmt("cloud %d (depth %d, %zu voxels) did not round-trip", i, depth, n);
        }
    }
    pass = true;
    return "50 random clouds, depths 2..8, exact round-trips";
}

// criterion 5: coded latent payload matches the modeled rate

std::string criterion_rate_estimate(bool& pass, const GaussianModel& model,
                                    const SweepPoint& point) {
    const EncodeConfig cfg = sphere_config(point.lambda);
    const auto vres = voxelize(model.positions, cfg.depth);
    const auto merged = merge_attributes(model, vres);
    const auto h = build_hierarchy(vres.octree.levels[0], cfg.depth, cfg.train.num_levels,
                                   vres.octree.bbox_min, vres.octree.cube_side);
    const auto nbrs = build_neighbor_table(h);
    const std::vector<AttributeMatrix> sel = {merged.attributes[16]};
    const auto trained = train_model(sel, h, cfg.train);
    const auto& ta = trained[0];
    const QuantizedPyramid qp = quantize_latents(ta.pyramid);
    const LatentPyramid int_pyr = dequantize_latents(qp);

    Mat target(sel[0].values.rows, 1);
    for (int r = 0; r < target.rows; ++r)
        target.at(r, 0) = (sel[0].values.at(r, 0) - ta.norm.offset[0]) / ta.norm.scale[0];
    const std::vector<Mat> tensors = {ta.dec.w1, ta.dec.b1, ta.dec.w2, ta.dec.b2,
                                      ta.dec.w3, ta.dec.b3, ta.dec.w4, ta.dec.b4,
                                      ta.arm.w1, ta.arm.b1, ta.arm.w2, ta.arm.b2,
                                      ta.arm.w3, ta.arm.b3};
    const auto recon = [&](const std::vector<Mat>& ts) {
        const DecoderNet d{ts[0], ts[1], ts[2], ts[3], ts[4], ts[5], ts[6], ts[7]};
        const ArmNet ar{ts[8], ts[9], ts[10], ts[11], ts[12], ts[13]};
        return rd_loss(target, int_pyr, d, ar, h, nbrs, cfg.train.lambda).loss;
    };
    const QuantizedNet qn =
        quantize_net(tensors, recon, cfg.train.lambda / double(h.finest_count()));
    QuantizedNet arm_qn;
    arm_qn.tensors.assign(qn.tensors.begin() + 8, qn.tensors.end());
    const ArmNet arm_q = assemble_arm(arm_qn);

    const double est_bytes = estimate_rate(int_pyr, arm_q) / 8.0;
    const double actual = double(latent_payload_bytes(point.bs, cfg.train.num_levels));
    const double slack = 0.02 * est_bytes + 64.0;
    pass = std::abs(actual - est_bytes) <= slack;
    return fmt("payload %.0f B vs estimate %.1f B on %zu voxels (slack %.1f B)", actual,
               est_bytes, h.finest_count(), slack);
}

// criterion 6: repeated encodes are byte-identical

std::string criterion_determinism(bool& pass) {
    const GaussianModel model = sphere_model(500, false, 3);
    EncodeConfig cfg;
    cfg.depth = 4;
    cfg.vq_size = 16;
    cfg.attrs = {kOpacityAttrId, 3};
    cfg.train.iterations = 800;
    cfg.train.num_levels = 3;
    cfg.train.context_width = 8;
    cfg.train.seed = 7;
    const RalheBitstream a = encode(model, cfg);
    const RalheBitstream b = encode(model, cfg);
    if (a.bytes != b.bytes) {
        pass = false;
        return fmt("streams differ (%zu vs %zu bytes)", a.bytes.size(), b.bytes.size());
    }
    const auto pa = save_ply(decode(a));
    const auto pb = save_ply(decode(b));
    pass = pa == pb;
    return pass ? fmt("two encodes and decodes byte-identical (%zu B stream)", a.bytes.size())
                : "decoded PLY bytes differ";
}

// criterion 7: sweep monotonicity in lambda

std::string criterion_sweep(bool& pass, const GaussianModel& model,
                            std::vector<SweepPoint>& points) {
    const std::vector<double> lambdas = {1e-5, 3.1623e-5, 1e-4, 3.1623e-4, 1e-3};
    for (const double l : lambdas) {
        SweepPoint p;
        p.lambda = l;
        p.bs = encode(model, sphere_config(l));
        p.bytes = p.bs.bytes.size();
        const Metrics mx = evaluate(model, 5, decode(p.bs), p.bs);
        const auto& a = mx.attributes[size_t(kOpacityAttrId - 1)];
        p.mse = a.mse;
        p.psnr = a.psnr;
        p.exact = a.exact;
        points.push_back(p);
    }

    // bytes must not grow and error must not shrink as lambda rises;
    // one adjacent violation of at most 2% is tolerated per metric
    int byte_viol = 0, mse_viol = 0;
    double worst_byte = 0.0, worst_mse = 0.0;
    for (size_t i = 1; i < points.size(); ++i) {
        if (points[i].bytes > points[i - 1].bytes) {
            ++byte_viol;
            worst_byte = std::max(
                worst_byte, double(points[i].bytes - points[i - 1].bytes) /
                                double(points[i - 1].bytes));
        }
        if (points[i].mse < points[i - 1].mse) {
            ++mse_viol;
            worst_mse =
                std::max(worst_mse, (points[i - 1].mse - points[i].mse) / points[i - 1].mse);
        }
    }
    pass = byte_viol <= 1 && worst_byte <= 0.02 && mse_viol <= 1 && worst_mse <= 0.02;
    std::string detail = "bytes";
    for (const auto& p : points) detail += fmt(" %zu", p.bytes);
    detail += ", psnr";
    for (const auto& p : points) detail += p.exact ? " inf" : fmt(" %.1f", p.psnr);
    detail += fmt(", violations %d/%d worst %.3f%%/%.3f%%", byte_viol, mse_viol,
                  100.0 * worst_byte, 100.0 * worst_mse);
    return detail;
}

// criterion 8: smooth fields are learnable and cheaper than noise

std::string criterion_learning(bool& pass, const GaussianModel& smooth,
                               const std::vector<SweepPoint>& points) {
    const double psnr = points.front().psnr;
    const bool psnr_ok = points.front().exact || psnr >= 40.0;

    const GaussianModel noisy = sphere_model(smooth.size(), true, 8001);
    const RalheBitstream nbs = encode(noisy, sphere_config(1e-4));
    const size_t noise_payload = latent_payload_bytes(nbs, 5);
    const size_t smooth_payload = latent_payload_bytes(points[2].bs, 5);
    const bool bits_ok = noise_payload > smooth_payload;
    pass = psnr_ok && bits_ok;
    return fmt("psnr %.1f dB at lambda 1e-5 (floor 40), latent payload noise %zu B vs smooth "
               "%zu B",
               psnr, noise_payload, smooth_payload);
}

// criterion 9: measured psnr of synthetic uniform noise matches the closed form

std::string criterion_eval_oracle(bool& pass) {
    const int side = 9, depth = 5;
    GaussianModel ref = sphere_model(size_t(side * side * side), false, 9001);
    size_t i = 0;
    for (int x = 0; x < side; ++x)
        for (int y = 0; y < side; ++y)
            for (int z = 0; z < side; ++z)
                ref.positions[i++] = {float(x), float(y), float(z)};

    const float q = 0.2f;
    GaussianModel noisy = ref;
    auto g = test::rng(9002);
    double lo[3] = {1e30, 1e30, 1e30}, hi[3] = {-1e30, -1e30, -1e30};
    for (size_t p = 0; p < noisy.size(); ++p) {
        for (int c = 0; c < 3; ++c) {
            const size_t col = 3 + size_t(c); // second SH triplet
            lo[c] = std::min(lo[c], double(ref.sh[p][col]));
            hi[c] = std::max(hi[c], double(ref.sh[p][col]));
            noisy.sh[p][col] += (float(test::uniform01(g)) - 0.5f) * q;
        }
    }
    double peak = 1.0;
    for (int c = 0; c < 3; ++c) peak = std::max(peak, hi[c] - lo[c]);
    const double expected = psnr_db(double(q) * double(q) / 12.0, peak);

    const Metrics mx = evaluate(ref, depth, noisy);
    const double measured = mx.attributes[1].psnr;
    pass = std::abs(measured - expected) <= 0.2;
    return fmt("measured %.3f dB vs closed form %.3f dB (tolerance 0.2 dB)", measured, expected);
}

} // namespace

int main() {
    std::vector<Result> results;
    results.push_back(run_criterion(1, "morton codes and hierarchy ordering", 10.0,
                                    [](bool& p) { return criterion_morton(p); }));
    results.push_back(run_criterion(2, "training graph gradients", 60.0,
                                    [](bool& p) { return criterion_gradients(p); }));
    results.push_back(run_criterion(3, "context model parameter count", 5.0,
                                    [](bool& p) { return criterion_arm_count(p); }));
    results.push_back(run_criterion(4, "lossless occupancy coding", 30.0,
                                    [](bool& p) { return criterion_lossless_geometry(p); }));
    results.push_back(run_criterion(9, "psnr oracle on uniform noise", 10.0,
                                    [](bool& p) { return criterion_eval_oracle(p); }));
    results.push_back(run_criterion(6, "deterministic encoding", 300.0,
                                    [](bool& p) { return criterion_determinism(p); }));

    const GaussianModel sphere = sphere_model(2200, false, 5001);
    std::vector<SweepPoint> points;
    results.push_back(run_criterion(7, "rate-distortion sweep monotonicity", 4500.0,
                                    [&](bool& p) { return criterion_sweep(p, sphere, points); }));
    results.push_back(
        run_criterion(5, "latent payload matches modeled rate", 900.0, [&](bool& p) {
            return criterion_rate_estimate(p, sphere, points[2]);
        }));
    results.push_back(run_criterion(8, "learning sanity on smooth fields", 900.0, [&](bool& p) {
        return criterion_learning(p, sphere, points);
    }));

    std::sort(results.begin(), results.end(),
              [](const Result& a, const Result& b) { return a.id < b.id; });
    int failures = 0;
    for (const auto& r : results) {
        failures += r.pass ? 0 : 1;
        std::printf("[%s] %d %-38s %7.1fs /%6.0fs  %s\n", r.pass ? "PASS" : "FAIL", r.id,
                    r.name.c_str(), r.secs, r.limit, r.detail.c_str());
    }
    std::printf("acceptance: %zu/%zu criteria passed\n", results.size() - size_t(failures),
                results.size());
    return failures;
}
