// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#include "ralhe/range_coder.hpp"

#include <cmath>

namespace ralhe {

namespace {
constexpr uint32_t kTopValue = 1u << 24; // renormalization threshold
}

void RangeEncoder::shift_low() {
    if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
        const uint8_t carry = static_cast<uint8_t>(low_ >> 32);
        uint8_t byte = cache_;
        do {
            out_.push_back(static_cast<uint8_t>(byte + carry));
            byte = 0xFF;
        } while (--cache_size_ != 0);
        cache_ = static_cast<uint8_t>(low_ >> 24);
    }
    ++cache_size_;
    low_ = (low_ << 8) & 0xFFFFFFFFull;
}

void RangeEncoder::encode(uint32_t cum_lo, uint32_t cum_hi, uint32_t total) {
    if (cum_lo >= cum_hi || cum_hi > total)
        throw BitstreamError("range encoder: empty or inverted symbol interval");
    const uint32_t r = range_ / total; // range_ >= 2^24 > total, so r >= 1
    low_ += static_cast<uint64_t>(r) * cum_lo;
    range_ = r * (cum_hi - cum_lo);
    while (range_ < kTopValue) {
        range_ <<= 8;
        shift_low();
    }
}

std::vector<uint8_t> RangeEncoder::finish() {
    // any value in [low, low + range) finishes the stream; take the one with
    // the most trailing zero bytes and drop them, the decoder pads with zeros
    const uint64_t lo = low_, hi = low_ + range_;
    uint64_t v = hi - 1;
    for (int k = 34; k >= 0; --k) {
        const uint64_t cand = ((lo + ((uint64_t(1) << k) - 1)) >> k) << k;
        if (cand >= lo && cand < hi) {
            v = cand;
            break;
        }
    }
    low_ = v;
    for (int i = 0; i < 5; ++i) shift_low();
    while (!out_.empty() && out_.back() == 0) out_.pop_back();
    return std::move(out_);
}

RangeDecoder::RangeDecoder(const uint8_t* data, size_t size)
    : ptr_(data), end_(data + size) {
    next_byte(); // leading encoder cache byte, always zero
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

uint8_t RangeDecoder::next_byte() {
    return ptr_ == end_ ? 0 : *ptr_++;
}

uint32_t RangeDecoder::decode_cum(uint32_t total) {
    const uint32_t r = range_ / total;
    const uint32_t v = code_ / r;
    if (v >= total)
        throw BitstreamError("range decoder: inconsistent renormalization");
    return v;
}

void RangeDecoder::consume(uint32_t cum_lo, uint32_t cum_hi, uint32_t total) {
    const uint32_t r = range_ / total;
    code_ -= r * cum_lo;
    range_ = r * (cum_hi - cum_lo);
    while (range_ < kTopValue) {
        code_ = (code_ << 8) | next_byte();
        range_ <<= 8;
    }
}

void encode_bit(RangeEncoder& enc, AdaptiveBitModel& m, int bit) {
    if (bit)
        enc.encode(m.p0, kCdfTotal);
    else
        enc.encode(0, m.p0);
    m.update(bit);
}

int decode_bit(RangeDecoder& dec, AdaptiveBitModel& m) {
    const int bit = dec.decode_cum() >= m.p0 ? 1 : 0;
    if (bit)
        dec.consume(m.p0, kCdfTotal);
    else
        dec.consume(0, m.p0);
    m.update(bit);
    return bit;
}

std::vector<uint32_t> quantize_pmf(const std::vector<double>& pmf) {
    const size_t n = pmf.size();
    if (n == 0 || n >= kCdfTotal)
        throw BitstreamError("quantize_pmf: alphabet size out of range");
    std::vector<uint32_t> cdf(n + 1, 0);
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        acc += pmf[i];
        // lower clamp grants every bin mass 1, upper clamp reserves room for
        // the bins still to come
        const auto target = static_cast<int64_t>(std::llround(acc * kCdfTotal));
        const int64_t lo = static_cast<int64_t>(cdf[i]) + 1;
        const int64_t hi = static_cast<int64_t>(kCdfTotal) - static_cast<int64_t>(n - 1 - i);
        cdf[i + 1] = static_cast<uint32_t>(std::clamp(target, lo, hi));
    }
    cdf[n] = kCdfTotal;
    return cdf;
}

} // namespace ralhe
