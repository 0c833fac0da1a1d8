// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "ralhe/errors.hpp"

namespace ralhe {

/// Total frequency of every integer CDF handed to the coder. Tables are
/// cumulative: c[0] = 0, c[S] = kCdfTotal, strictly increasing.
inline constexpr uint32_t kCdfTotal = 1u << 16;

/// 32-bit carry-propagating range encoder. Appends to an internal buffer;
/// finish() flushes the tail and hands the bytes over.
class RangeEncoder {
public:
    void encode(uint32_t cum_lo, uint32_t cum_hi, uint32_t total = kCdfTotal);
    std::vector<uint8_t> finish();
    size_t pending_bytes() const { return out_.size(); }

private:
    void shift_low();

    std::vector<uint8_t> out_;
    uint64_t low_ = 0;
    uint32_t range_ = 0xFFFFFFFFu;
    uint8_t cache_ = 0;
    uint64_t cache_size_ = 1;
};

/// Matching decoder. Reads past the end of the buffer yield zero bytes (the
/// encoder trims trailing zeros); desynchronization surfaces as a
/// BitstreamError when a decoded cumulative value leaves the table.
class RangeDecoder {
public:
    RangeDecoder(const uint8_t* data, size_t size);
    explicit RangeDecoder(const std::vector<uint8_t>& bytes)
        : RangeDecoder(bytes.data(), bytes.size()) {}

    /// Cumulative frequency of the next symbol; look it up in the current
    /// table, then call consume() with that symbol's bounds.
    uint32_t decode_cum(uint32_t total = kCdfTotal);
    void consume(uint32_t cum_lo, uint32_t cum_hi, uint32_t total = kCdfTotal);

private:
    uint8_t next_byte();

    const uint8_t* ptr_;
    const uint8_t* end_;
    uint32_t range_ = 0xFFFFFFFFu;
    uint32_t code_ = 0;
};

/// Adaptive binary probability state, 16-bit precision.
struct AdaptiveBitModel {
    uint16_t p0 = 1u << 15; // probability of bit == 0, out of kCdfTotal

    void update(int bit) {
        if (bit)
            p0 = static_cast<uint16_t>(p0 - (p0 >> 5));
        else
            p0 = static_cast<uint16_t>(p0 + ((kCdfTotal - p0) >> 5));
    }
};

void encode_bit(RangeEncoder& enc, AdaptiveBitModel& m, int bit);
int decode_bit(RangeDecoder& dec, AdaptiveBitModel& m);

/// Turns a real-valued pmf over S symbols into a strict 16-bit integer CDF:
/// S+1 cumulative counts, c[0] = 0, c[S] = kCdfTotal, every bin >= 1.
std::vector<uint32_t> quantize_pmf(const std::vector<double>& pmf);

/// Symbol-sequence front ends. The provider is called once per position in
/// order and sees all previous symbols, so an autoregressive model behaves
/// identically on both sides: cdf(i, prefix) -> cumulative table (by value
/// or reference), prefix = symbols[0..i).
template <typename Provider>
std::vector<uint8_t> range_encode(const std::vector<int32_t>& symbols, Provider&& cdf) {
    RangeEncoder enc;
    for (size_t i = 0; i < symbols.size(); ++i) {
        const auto& table = cdf(i, symbols);
        const int32_t s = symbols[i];
        if (s < 0 || s + 1 >= static_cast<int32_t>(table.size()))
            throw BitstreamError("range_encode: symbol outside CDF alphabet");
        enc.encode(table[s], table[s + 1]);
    }
    return enc.finish();
}

template <typename Provider>
std::vector<int32_t> range_decode(const uint8_t* data, size_t size, size_t count,
                                  Provider&& cdf) {
    RangeDecoder dec(data, size);
    std::vector<int32_t> symbols;
    symbols.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        const auto& table = cdf(i, symbols);
        const uint32_t cum = dec.decode_cum();
        // largest s with table[s] <= cum; tables are strictly increasing
        const size_t s =
            static_cast<size_t>(std::upper_bound(table.begin() + 1, table.end() - 1, cum) -
                                table.begin()) -
            1;
        dec.consume(table[s], table[s + 1]);
        symbols.push_back(static_cast<int32_t>(s));
    }
    return symbols;
}

} // namespace ralhe
