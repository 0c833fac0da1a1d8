// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#include "ralhe/bitstream.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include "ralhe/autodiff.hpp"
#include "ralhe/occupancy.hpp"
#include "ralhe/range_coder.hpp"
#include "ralhe/vq.hpp"

namespace ralhe {

namespace {

constexpr char kMagic[4] = {'R', 'L', 'H', 'E'};
constexpr uint16_t kVersion = 1;

class Writer {
public:
    std::vector<uint8_t> out;

    void u8(uint8_t v) { out.push_back(v); }
    void u16(uint16_t v) {
        u8(uint8_t(v));
        u8(uint8_t(v >> 8));
    }
    void u32(uint32_t v) {
        u16(uint16_t(v));
        u16(uint16_t(v >> 16));
    }
    void u64(uint64_t v) {
        u32(uint32_t(v));
        u32(uint32_t(v >> 32));
    }
    void i8(int8_t v) { u8(uint8_t(v)); }
    void i32(int32_t v) { u32(uint32_t(v)); }
    void f32(float v) {
        uint32_t b;
        std::memcpy(&b, &v, 4);
        u32(b);
    }
    void f64(double v) {
        uint64_t b;
        std::memcpy(&b, &v, 8);
        u64(b);
    }
    void tag4(const char* t) { out.insert(out.end(), t, t + 4); }
    void blob(const std::vector<uint8_t>& b) { out.insert(out.end(), b.begin(), b.end()); }
    void section(const char* tag, const std::vector<uint8_t>& payload) {
        tag4(tag);
        u32(uint32_t(payload.size()));
        blob(payload);
    }
};

class Reader {
public:
    Reader(const uint8_t* p, size_t n) : base_(p), p_(p), end_(p + n) {}
    explicit Reader(const std::vector<uint8_t>& b) : Reader(b.data(), b.size()) {}

    size_t remaining() const { return size_t(end_ - p_); }
    size_t pos() const { return size_t(p_ - base_); }
    void need(size_t n) const {
        if (remaining() < n) throw BitstreamError("bitstream: truncated stream");
    }
    uint8_t u8() {
        need(1);
        return *p_++;
    }
    uint16_t u16() {
        const uint16_t lo = u8();
        return uint16_t(lo | (uint16_t(u8()) << 8));
    }
    uint32_t u32() {
        const uint32_t lo = u16();
        return lo | (uint32_t(u16()) << 16);
    }
    uint64_t u64() {
        const uint64_t lo = u32();
        return lo | (uint64_t(u32()) << 32);
    }
    int8_t i8() { return int8_t(u8()); }
    int32_t i32() { return int32_t(u32()); }
    float f32() {
        const uint32_t b = u32();
        float v;
        std::memcpy(&v, &b, 4);
        return v;
    }
    double f64() {
        const uint64_t b = u64();
        double v;
        std::memcpy(&v, &b, 8);
        return v;
    }
    std::string tag4() {
        need(4);
        std::string t(reinterpret_cast<const char*>(p_), 4);
        p_ += 4;
        return t;
    }
    const uint8_t* raw(size_t n) {
        need(n);
        const uint8_t* r = p_;
        p_ += n;
        return r;
    }
    void skip(size_t n) { raw(n); }

private:
    const uint8_t* base_;
    const uint8_t* p_;
    const uint8_t* end_;
};

void require(bool ok, const char* msg) {
    if (!ok) throw BitstreamError(msg);
}

bool known_tag(const std::string& t) {
    return t == "GEOM" || t == "COVQ" || t == "ANET" || t == "ALAT";
}

/// Ordered walk over the section table; unknown tags are skipped, a known
/// tag other than the requested one is a structural error.
class SectionCursor {
public:
    SectionCursor(const std::vector<uint8_t>& bytes, const std::vector<StreamInfo::Section>& secs)
        : bytes_(bytes), secs_(secs) {}

    Reader require_section(const char* tag) {
        while (i_ < secs_.size()) {
            const auto& s = secs_[i_];
            ++i_;
            if (s.tag == tag) return Reader(bytes_.data() + s.offset, s.size);
            if (!known_tag(s.tag)) continue;
            throw BitstreamError("bitstream: unexpected section order");
        }
        throw BitstreamError("bitstream: missing section");
    }

private:
    const std::vector<uint8_t>& bytes_;
    const std::vector<StreamInfo::Section>& secs_;
    size_t i_ = 0;
};

StreamInfo parse_header(Reader& r) {
    r.need(4);
    StreamInfo si;
    {
        const uint8_t* m = r.raw(4);
        require(std::memcmp(m, kMagic, 4) == 0, "bitstream: bad magic");
    }
    si.version = r.u16();
    require(si.version == kVersion, "bitstream: unsupported version");
    si.depth = r.u8();
    si.num_levels = r.u8();
    si.context_width = r.u16();
    si.finest_count = r.u32();
    si.lambda = r.f64();
    for (auto& v : si.bbox_min) v = r.f64();
    si.cube_side = r.f64();
    si.dec_h1 = r.u16();
    si.dec_h2 = r.u16();
    si.dec_h3 = r.u16();
    si.arm_h1 = r.u16();
    si.arm_h2 = r.u16();
    const int attr_count = r.u16();

    require(si.depth >= 1 && si.depth <= kMaxDepth, "bitstream: depth out of range");
    require(si.num_levels >= 1 && si.num_levels <= si.depth + 1,
            "bitstream: level count out of range");
    require(si.context_width >= 1, "bitstream: context width out of range");
    require(si.finest_count >= 1, "bitstream: empty voxel set");
    require(std::isfinite(si.lambda) && si.lambda >= 0.0, "bitstream: bad lambda");
    for (double v : si.bbox_min) require(std::isfinite(v), "bitstream: bad bounding box");
    require(std::isfinite(si.cube_side) && si.cube_side > 0.0, "bitstream: bad cube side");
    require(si.dec_h1 >= 1 && si.dec_h2 >= 1 && si.dec_h3 >= 1, "bitstream: decoder widths");
    require(si.arm_h1 >= 1 && si.arm_h2 >= 1, "bitstream: arm widths");

    std::array<bool, kNumAttributes + 1> seen{};
    for (int a = 0; a < attr_count; ++a) {
        StreamInfo::AttrInfo ai;
        ai.attr_id = r.u8();
        ai.channels = r.u8();
        ai.dec_params = r.u32();
        ai.arm_params = r.u32();
        require(ai.attr_id >= 1 && ai.attr_id <= kNumAttributes, "bitstream: unknown attribute id");
        require(!seen[size_t(ai.attr_id)], "bitstream: duplicate attribute id");
        seen[size_t(ai.attr_id)] = true;
        require(ai.channels == attr_channels(ai.attr_id), "bitstream: attribute channel count");
        for (int c = 0; c < ai.channels; ++c) {
            ai.norm.offset.push_back(r.f32());
            ai.norm.scale.push_back(r.f32());
            require(std::isfinite(ai.norm.offset.back()), "bitstream: bad normalization offset");
            require(std::isfinite(ai.norm.scale.back()) && ai.norm.scale.back() > 0.0f,
                    "bitstream: bad normalization scale");
        }
        si.attrs.push_back(std::move(ai));
    }
    return si;
}

/// Uniform integer CDF over n symbols.
std::vector<uint32_t> uniform_cdf(size_t n) {
    return quantize_pmf(std::vector<double>(n, 1.0 / double(n)));
}

std::vector<uint8_t> code_tensor(const QuantizedTensor& t, int32_t lo, int32_t hi, float scale) {
    const LaplaceParams p{0.0f, scale / t.step()};
    const auto cdf = latent_cdf(lo, hi, p);
    std::vector<int32_t> syms(t.q.size());
    for (size_t i = 0; i < syms.size(); ++i) syms[i] = t.q[i] - lo;
    return range_encode(syms, [&](size_t, const auto&) -> const auto& { return cdf; });
}

void write_tensor(Writer& w, const QuantizedTensor& t) {
    const auto [lo_it, hi_it] = std::minmax_element(t.q.begin(), t.q.end());
    const int32_t lo = *lo_it, hi = *hi_it;
    const float scale = weight_scale(t);
    const auto coded = code_tensor(t, lo, hi, scale);
    w.u16(uint16_t(t.rows));
    w.u16(uint16_t(t.cols));
    w.i8(t.step_exp);
    w.i32(lo);
    w.i32(hi);
    w.f32(scale);
    w.u32(uint32_t(coded.size()));
    w.blob(coded);
}

QuantizedTensor read_tensor(Reader& r) {
    QuantizedTensor t;
    t.rows = r.u16();
    t.cols = r.u16();
    t.step_exp = r.i8();
    const int32_t lo = r.i32();
    const int32_t hi = r.i32();
    const float scale = r.f32();
    const uint32_t len = r.u32();
    const uint8_t* data = r.raw(len);

    require(t.rows >= 1 && t.cols >= 1, "bitstream: empty tensor");
    require(t.step_exp >= kStepExpMin && t.step_exp <= kStepExpMax, "bitstream: bad weight step");
    require(lo <= hi, "bitstream: bad weight range");
    require(std::isfinite(scale) && scale > 0.0f, "bitstream: bad weight scale");

    const LaplaceParams p{0.0f, scale / t.step()};
    const auto cdf = latent_cdf(lo, hi, p);
    const auto syms = range_decode(data, len, size_t(t.rows) * size_t(t.cols),
                                   [&](size_t, const auto&) -> const auto& { return cdf; });
    t.q.resize(syms.size());
    for (size_t i = 0; i < syms.size(); ++i) t.q[i] = lo + syms[i];
    return t;
}

void write_level(Writer& w, const QuantizedLevel& lv, int width, const ArmNet& arm) {
    w.i32(lv.lo);
    w.i32(lv.hi);
    std::vector<int32_t> syms(lv.values.size());
    for (size_t i = 0; i < syms.size(); ++i) syms[i] = lv.values[i] - lv.lo;

    std::vector<float> floats(lv.values.size(), 0.0f);
    size_t filled = 0;
    const auto coded = range_encode(syms, [&](size_t i, const std::vector<int32_t>& ss) {
        for (; filled < i; ++filled) floats[filled] = float(lv.lo + ss[filled]);
        return latent_cdf(lv.lo, lv.hi, arm_forward(build_context(floats, i, width), arm));
    });
    w.u32(uint32_t(coded.size()));
    w.blob(coded);
}

QuantizedLevel read_level(Reader& r, size_t count, int width, const ArmNet& arm) {
    QuantizedLevel lv;
    lv.lo = r.i32();
    lv.hi = r.i32();
    const uint32_t len = r.u32();
    const uint8_t* data = r.raw(len);
    require(lv.lo <= lv.hi, "bitstream: bad latent range");

    std::vector<float> floats(count, 0.0f);
    size_t filled = 0;
    const auto syms =
        range_decode(data, len, count, [&](size_t i, const std::vector<int32_t>& ss) {
            for (; filled < i; ++filled) floats[filled] = float(lv.lo + ss[filled]);
            return latent_cdf(lv.lo, lv.hi, arm_forward(build_context(floats, i, width), arm));
        });
    lv.values.resize(count);
    for (size_t i = 0; i < count; ++i) lv.values[i] = lv.lo + syms[i];
    return lv;
}

void check_net_shapes(const DecoderNet& d, const ArmNet& a, const StreamInfo& si, int channels) {
    const auto layer = [](const Mat& w, const Mat& b, int rows, int cols, const char* msg) {
        require(w.rows == rows && w.cols == cols && b.rows == 1 && b.cols == rows, msg);
    };
    layer(d.w1, d.b1, si.dec_h1, si.num_levels, "bitstream: decoder layer 1 shape");
    layer(d.w2, d.b2, si.dec_h2, si.dec_h1, "bitstream: decoder layer 2 shape");
    require(d.w3.rows == 27 * si.dec_h2 && d.w3.cols == si.dec_h3 && d.b3.rows == 1 &&
                d.b3.cols == si.dec_h3,
            "bitstream: decoder layer 3 shape");
    require(d.w4.rows == 27 * si.dec_h3 && d.w4.cols == channels && d.b4.rows == 1 &&
                d.b4.cols == channels,
            "bitstream: decoder layer 4 shape");
    layer(a.w1, a.b1, si.arm_h1, si.context_width, "bitstream: arm layer 1 shape");
    layer(a.w2, a.b2, si.arm_h2, si.arm_h1, "bitstream: arm layer 2 shape");
    layer(a.w3, a.b3, 2, si.arm_h2, "bitstream: arm layer 3 shape");
}

uint32_t tensor_params(const QuantizedNet& qn) {
    uint32_t n = 0;
    for (const auto& t : qn.tensors) n += uint32_t(t.rows) * uint32_t(t.cols);
    return n;
}

/// Normalized target exactly as the trainer saw it: the same float operations
/// normalize() applied, replayed from the stored parameters.
Mat apply_normalization(const Mat& raw, const NormalizationParams& norm) {
    check_shape(size_t(raw.cols) == norm.offset.size(), "apply_normalization: channel count");
    Mat out(raw.rows, raw.cols);
    for (int r = 0; r < raw.rows; ++r)
        for (int c = 0; c < raw.cols; ++c)
            out.at(r, c) = (raw.at(r, c) - norm.offset[size_t(c)]) / norm.scale[size_t(c)];
    return out;
}

} // namespace

QuantizedPyramid quantize_latents(const LatentPyramid& pyramid) {
    QuantizedPyramid out;
    out.attr_id = pyramid.attr_id;
    for (const auto& level : pyramid.levels) {
        QuantizedLevel q;
        q.values.reserve(level.size());
        for (float v : level) {
            if (!std::isfinite(v))
                throw TrainingError("quantize_latents: non-finite latent; training diverged");
            const float r = round_half_even(v);
            if (std::abs(r) > 32767.0f)
                throw TrainingError(
                    "quantize_latents: latent magnitude exceeds the 2^15 coding range; "
                    "training diverged");
            q.values.push_back(int32_t(r));
        }
        if (!q.values.empty()) {
            const auto [lo_it, hi_it] = std::minmax_element(q.values.begin(), q.values.end());
            q.lo = *lo_it;
            q.hi = *hi_it;
        }
        out.levels.push_back(std::move(q));
    }
    return out;
}

LatentPyramid dequantize_latents(const QuantizedPyramid& qp) {
    LatentPyramid out;
    out.attr_id = qp.attr_id;
    for (const auto& level : qp.levels) {
        std::vector<float> v(level.values.size());
        for (size_t i = 0; i < v.size(); ++i) v[i] = float(level.values[i]);
        out.levels.push_back(std::move(v));
    }
    return out;
}

QuantizedTensor quantize_tensor(const Mat& m, int8_t step_exp) {
    QuantizedTensor t;
    t.rows = m.rows;
    t.cols = m.cols;
    t.step_exp = step_exp;
    const float inv = std::ldexp(1.0f, -step_exp);
    t.q.reserve(m.v.size());
    for (float x : m.v) {
        if (!std::isfinite(x)) throw TrainingError("quantize_tensor: non-finite weight");
        const float r = round_half_even(x * inv);
        // beyond 2^24 the float grid no longer holds integers exactly
        if (std::abs(r) > 16777216.0f)
            throw TrainingError("quantize_tensor: weight magnitude out of range");
        t.q.push_back(int32_t(r));
    }
    return t;
}

Mat dequantize_tensor(const QuantizedTensor& t) {
    check_shape(size_t(t.rows) * size_t(t.cols) == t.q.size(), "dequantize_tensor: shape");
    Mat out(t.rows, t.cols);
    const float step = t.step();
    for (size_t i = 0; i < t.q.size(); ++i) out.v[i] = float(t.q[i]) * step;
    return out;
}

float weight_scale(const QuantizedTensor& t) {
    double acc = 0.0;
    for (int32_t q : t.q) acc += std::abs(double(q));
    const double mean = t.q.empty() ? 0.0 : acc / double(t.q.size());
    return std::max(float(mean * double(t.step())), kLaplaceMinScale);
}

double weight_bits(const QuantizedTensor& t) {
    const LaplaceParams p{0.0f, weight_scale(t) / t.step()};
    double bits = 0.0;
    for (int32_t q : t.q) bits += laplace_bits(double(q), p);
    return bits;
}

QuantizedNet quantize_net(const std::vector<Mat>& tensors,
                          const std::function<double(const std::vector<Mat>&)>& recon_loss,
                          double lambda_per_bit) {
    if (!recon_loss) throw ConfigError("quantize_net: null loss callback");
    if (lambda_per_bit < 0.0) throw ConfigError("quantize_net: negative bit price");
    std::vector<Mat> work = tensors;
    QuantizedNet out;
    out.tensors.reserve(tensors.size());
    for (size_t i = 0; i < tensors.size(); ++i) {
        double best_score = std::numeric_limits<double>::infinity();
        QuantizedTensor best;
        // coarse-to-fine scan; strict improvement keeps the coarsest tie
        for (int e = kStepExpMax; e >= kStepExpMin; --e) {
            QuantizedTensor cand = quantize_tensor(tensors[i], int8_t(e));
            work[i] = dequantize_tensor(cand);
            const double score = recon_loss(work) + lambda_per_bit * weight_bits(cand);
            if (score < best_score) {
                best_score = score;
                best = std::move(cand);
            }
        }
        work[i] = dequantize_tensor(best);
        out.tensors.push_back(std::move(best));
    }
    return out;
}

DecoderNet assemble_decoder(const QuantizedNet& qn) {
    check_shape(qn.tensors.size() == 8, "assemble_decoder: tensor count");
    DecoderNet n;
    Mat* slots[8] = {&n.w1, &n.b1, &n.w2, &n.b2, &n.w3, &n.b3, &n.w4, &n.b4};
    for (size_t i = 0; i < 8; ++i) *slots[i] = dequantize_tensor(qn.tensors[i]);
    return n;
}

ArmNet assemble_arm(const QuantizedNet& qn) {
    check_shape(qn.tensors.size() == 6, "assemble_arm: tensor count");
    ArmNet n;
    Mat* slots[6] = {&n.w1, &n.b1, &n.w2, &n.b2, &n.w3, &n.b3};
    for (size_t i = 0; i < 6; ++i) *slots[i] = dequantize_tensor(qn.tensors[i]);
    return n;
}

std::vector<uint32_t> latent_cdf(int32_t lo, int32_t hi, const LaplaceParams& p) {
    if (lo > hi) throw BitstreamError("latent_cdf: empty alphabet");
    const int64_t n = int64_t(hi) - int64_t(lo) + 1;
    if (n >= int64_t(kCdfTotal)) throw BitstreamError("latent_cdf: alphabet too large");
    std::vector<double> pmf(static_cast<size_t>(n));
    for (int64_t s = 0; s < n; ++s) {
        const double v = double(lo + s);
        const double lower = s == 0 ? 0.0 : laplace_cdf(v - 0.5, p);
        const double upper = s == n - 1 ? 1.0 : laplace_cdf(v + 0.5, p);
        pmf[size_t(s)] = std::max(upper - lower, 0.0);
    }
    return quantize_pmf(pmf);
}

RalheBitstream encode(const GaussianModel& model, const EncodeConfig& cfg) {
    if (model.size() == 0) throw DataError("encode: empty model");
    if (cfg.depth < 1 || cfg.depth > kMaxDepth) throw ConfigError("encode: depth out of range");
    const int k = cfg.train.num_levels;
    if (k < 1 || k > cfg.depth + 1) throw ConfigError("encode: level count out of range");
    if (cfg.train.context_width < 1) throw ConfigError("encode: context width out of range");
    if (cfg.vq_size < 1 || cfg.vq_size > 0xFFFF) throw ConfigError("encode: vq size out of range");

    std::vector<int> ids = cfg.attrs;
    if (ids.empty()) {
        ids.resize(kNumAttributes);
        std::iota(ids.begin(), ids.end(), 1);
    }
    std::array<bool, kNumAttributes + 1> seen{};
    for (int id : ids) {
        if (id < 1 || id > kNumAttributes) throw ConfigError("encode: unknown attribute id");
        if (seen[size_t(id)]) throw ConfigError("encode: duplicate attribute id");
        seen[size_t(id)] = true;
    }

    const VoxelizationResult vres = voxelize(model.positions, cfg.depth);
    const MergedAttributes merged = merge_attributes(model, vres);
    const OctreeHierarchy h = build_hierarchy(vres.octree.levels[0], cfg.depth, k,
                                              vres.octree.bbox_min, vres.octree.cube_side);
    const NeighborTable nbrs = build_neighbor_table(h);
    const size_t m = h.finest_count();

    std::vector<AttributeMatrix> selected;
    selected.reserve(ids.size());
    for (int id : ids) selected.push_back(merged.attributes[size_t(id - 1)]);
    const std::vector<TrainedAttribute> trained = train_model(selected, h, cfg.train);

    const Mat codebook = vq_train(merged.covariances, cfg.vq_size, cfg.train.seed);
    const std::vector<uint32_t> cov_idx = vq_encode(merged.covariances, codebook);

    struct CodedAttr {
        int attr_id = 0;
        int channels = 0;
        uint32_t dec_params = 0;
        uint32_t arm_params = 0;
        const NormalizationParams* norm = nullptr;
        std::vector<uint8_t> net_payload;
        std::vector<uint8_t> latent_payload;
    };
    std::vector<CodedAttr> coded;
    coded.reserve(trained.size());

    for (size_t a = 0; a < trained.size(); ++a) {
        const TrainedAttribute& ta = trained[a];
        QuantizedPyramid qp = quantize_latents(ta.pyramid);
        qp.attr_id = selected[a].attr_id;
        const LatentPyramid int_pyr = dequantize_latents(qp);
        const Mat target = apply_normalization(selected[a].values, ta.norm);

        const std::vector<Mat> tensors = {ta.dec.w1, ta.dec.b1, ta.dec.w2, ta.dec.b2,
                                          ta.dec.w3, ta.dec.b3, ta.dec.w4, ta.dec.b4,
                                          ta.arm.w1, ta.arm.b1, ta.arm.w2, ta.arm.b2,
                                          ta.arm.w3, ta.arm.b3};
        const auto recon = [&](const std::vector<Mat>& ts) {
            const DecoderNet d{ts[0], ts[1], ts[2], ts[3], ts[4], ts[5], ts[6], ts[7]};
            const ArmNet ar{ts[8], ts[9], ts[10], ts[11], ts[12], ts[13]};
            return rd_loss(target, int_pyr, d, ar, h, nbrs, cfg.train.lambda).loss;
        };
        const QuantizedNet qn = quantize_net(tensors, recon, cfg.train.lambda / double(m));

        QuantizedNet dec_qn, arm_qn;
        dec_qn.tensors.assign(qn.tensors.begin(), qn.tensors.begin() + 8);
        arm_qn.tensors.assign(qn.tensors.begin() + 8, qn.tensors.end());
        const ArmNet arm_q = assemble_arm(arm_qn);

        CodedAttr ca;
        ca.attr_id = selected[a].attr_id;
        ca.channels = selected[a].values.cols;
        ca.dec_params = tensor_params(dec_qn);
        ca.arm_params = tensor_params(arm_qn);
        ca.norm = &ta.norm;

        Writer nw;
        nw.u8(8);
        nw.u8(6);
        for (const auto& t : qn.tensors) write_tensor(nw, t);
        ca.net_payload = std::move(nw.out);

        Writer lw;
        for (int j = k - 1; j >= 0; --j)
            write_level(lw, qp.levels[size_t(j)], cfg.train.context_width, arm_q);
        ca.latent_payload = std::move(lw.out);

        coded.push_back(std::move(ca));
    }

    Writer w;
    w.tag4(kMagic);
    w.u16(kVersion);
    w.u8(uint8_t(cfg.depth));
    w.u8(uint8_t(k));
    w.u16(uint16_t(cfg.train.context_width));
    w.u32(uint32_t(m));
    w.f64(cfg.train.lambda);
    for (double v : h.bbox_min) w.f64(v);
    w.f64(h.cube_side);
    w.u16(uint16_t(trained[0].dec.w1.rows));
    w.u16(uint16_t(trained[0].dec.w2.rows));
    w.u16(uint16_t(trained[0].dec.b3.cols));
    w.u16(uint16_t(trained[0].arm.w1.rows));
    w.u16(uint16_t(trained[0].arm.w2.rows));
    w.u16(uint16_t(coded.size()));
    for (const auto& ca : coded) {
        w.u8(uint8_t(ca.attr_id));
        w.u8(uint8_t(ca.channels));
        w.u32(ca.dec_params);
        w.u32(ca.arm_params);
        for (int c = 0; c < ca.channels; ++c) {
            w.f32(ca.norm->offset[size_t(c)]);
            w.f32(ca.norm->scale[size_t(c)]);
        }
    }

    w.section("GEOM", serialize_occupancy(encode_occupancy(h)));

    {
        Writer cw;
        cw.u32(uint32_t(codebook.rows));
        cw.u16(uint16_t(codebook.cols));
        for (float v : codebook.v) cw.f32(v);
        const auto cdf = uniform_cdf(size_t(codebook.rows));
        std::vector<int32_t> syms(cov_idx.begin(), cov_idx.end());
        const auto bytes =
            range_encode(syms, [&](size_t, const auto&) -> const auto& { return cdf; });
        cw.u32(uint32_t(bytes.size()));
        cw.blob(bytes);
        w.section("COVQ", cw.out);
    }

    for (const auto& ca : coded) {
        w.section("ANET", ca.net_payload);
        w.section("ALAT", ca.latent_payload);
    }

    return RalheBitstream{std::move(w.out)};
}

StreamInfo inspect(const RalheBitstream& stream) {
    Reader r(stream.bytes);
    StreamInfo si = parse_header(r);
    si.header_bytes = r.pos();
    while (r.remaining() > 0) {
        if (r.remaining() < 8) throw BitstreamError("bitstream: truncated section table");
        StreamInfo::Section sec;
        sec.tag = r.tag4();
        sec.size = r.u32();
        sec.offset = r.pos();
        r.skip(sec.size);
        si.sections.push_back(std::move(sec));
    }
    si.total_bytes = stream.bytes.size();
    return si;
}

GaussianModel decode(const RalheBitstream& stream) {
    const StreamInfo si = inspect(stream);
    SectionCursor cur(stream.bytes, si.sections);

    Reader gr = cur.require_section("GEOM");
    const size_t gn = gr.remaining();
    const uint8_t* gp = gr.raw(gn);
    const OccupancyStream occ = parse_occupancy(std::vector<uint8_t>(gp, gp + gn));
    require(occ.depth == si.depth, "bitstream: geometry depth mismatch");
    const std::vector<MortonCode> codes = decode_occupancy(occ);
    require(codes.size() == si.finest_count, "bitstream: voxel count mismatch");
    const OctreeHierarchy h =
        build_hierarchy(codes, si.depth, si.num_levels, si.bbox_min, si.cube_side);
    const NeighborTable nbrs = build_neighbor_table(h);

    Reader cr = cur.require_section("COVQ");
    const uint32_t kb_rows = cr.u32();
    const uint16_t kb_cols = cr.u16();
    require(kb_rows >= 1 && kb_rows <= 0xFFFF, "bitstream: codebook size");
    require(kb_cols == kCovDim, "bitstream: codebook width");
    Mat codebook(int(kb_rows), kb_cols);
    for (auto& v : codebook.v) v = cr.f32();
    const uint32_t clen = cr.u32();
    const uint8_t* cdata = cr.raw(clen);
    require(cr.remaining() == 0, "bitstream: trailing bytes in covariance section");
    const auto cov_cdf = uniform_cdf(kb_rows);
    const auto cov_syms = range_decode(cdata, clen, si.finest_count,
                                       [&](size_t, const auto&) -> const auto& { return cov_cdf; });
    std::vector<uint32_t> cov_idx(cov_syms.begin(), cov_syms.end());
    const Mat covariances = vq_decode(cov_idx, codebook);

    std::vector<AttributeMatrix> attrs;
    attrs.reserve(si.attrs.size());
    for (const auto& ai : si.attrs) {
        Reader nr = cur.require_section("ANET");
        const int ndec = nr.u8();
        const int narm = nr.u8();
        require(ndec == 8 && narm == 6, "bitstream: tensor counts");
        QuantizedNet dec_qn, arm_qn;
        for (int t = 0; t < ndec; ++t) dec_qn.tensors.push_back(read_tensor(nr));
        for (int t = 0; t < narm; ++t) arm_qn.tensors.push_back(read_tensor(nr));
        require(nr.remaining() == 0, "bitstream: trailing bytes in net section");
        require(tensor_params(dec_qn) == ai.dec_params && tensor_params(arm_qn) == ai.arm_params,
                "bitstream: parameter count mismatch");
        const DecoderNet dec = assemble_decoder(dec_qn);
        const ArmNet arm = assemble_arm(arm_qn);
        check_net_shapes(dec, arm, si, ai.channels);

        Reader lr = cur.require_section("ALAT");
        QuantizedPyramid qp;
        qp.attr_id = ai.attr_id;
        qp.levels.resize(size_t(si.num_levels));
        for (int j = si.num_levels - 1; j >= 0; --j)
            qp.levels[size_t(j)] =
                read_level(lr, h.levels[size_t(j)].size(), si.context_width, arm);
        require(lr.remaining() == 0, "bitstream: trailing bytes in latent section");

        const Mat feats = upsample_copy(dequantize_latents(qp), h);
        const Mat pred = decoder_forward(feats, dec, nbrs);
        attrs.push_back({ai.attr_id, denormalize(pred, ai.norm)});
    }

    return assemble_model(h, attrs, covariances);
}

} // namespace ralhe
