#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dntsc/core/errors.hpp"
#include "dntsc/core/tensor.hpp"
#include "dntsc/entropy.hpp"

namespace dntsc {

// Carry-less byte-wise range coder (Subbotin style) with 64-bit state and
// 16-bit quantized frequency totals. The wide state keeps the truncation loss
// per symbol around 2^-32 bits, far inside the coded-length bound we test.
class RangeEncoder {
public:
    void encode(std::uint32_t cum, std::uint32_t freq, std::uint32_t total) {
        range_ /= total;
        low_ += cum * range_;
        range_ *= freq;
        normalize();
    }

    void encode_raw_byte(std::uint8_t b) { encode(b, 1, 256); }

    std::vector<std::uint8_t> finish() {
        for (int i = 0; i < 8; ++i) {
            out_.push_back(static_cast<std::uint8_t>(low_ >> 56));
            low_ <<= 8;
        }
        return std::move(out_);
    }

    std::size_t bytes_written() const { return out_.size(); }

private:
    static constexpr std::uint64_t kTop = 1ull << 56;
    static constexpr std::uint64_t kBottom = 1ull << 48;

    void normalize() {
        while ((low_ ^ (low_ + range_)) < kTop ||
               (range_ < kBottom && ((range_ = (0 - low_) & (kBottom - 1)), true))) {
            out_.push_back(static_cast<std::uint8_t>(low_ >> 56));
            low_ <<= 8;
            range_ <<= 8;
        }
    }

    std::uint64_t low_ = 0;
    std::uint64_t range_ = ~0ull;
    std::vector<std::uint8_t> out_;
};

class RangeDecoder {
public:
    RangeDecoder(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {
        for (int i = 0; i < 8; ++i) code_ = (code_ << 8) | next_byte();
    }

    std::uint32_t decode_freq(std::uint32_t total) {
        range_ /= total;
        const std::uint64_t v = (code_ - low_) / range_;
        if (v >= total) throw DecodeError("range coder state violation");
        return static_cast<std::uint32_t>(v);
    }

    void decode_update(std::uint32_t cum, std::uint32_t freq) {
        low_ += cum * range_;
        range_ *= freq;
        normalize();
    }

    std::uint8_t decode_raw_byte() {
        const std::uint32_t v = decode_freq(256);
        decode_update(v, 1);
        return static_cast<std::uint8_t>(v);
    }

private:
    static constexpr std::uint64_t kTop = 1ull << 56;
    static constexpr std::uint64_t kBottom = 1ull << 48;

    std::uint8_t next_byte() { return pos_ < size_ ? data_[pos_++] : 0; }

    void normalize() {
        while ((low_ ^ (low_ + range_)) < kTop ||
               (range_ < kBottom && ((range_ = (0 - low_) & (kBottom - 1)), true))) {
            code_ = (code_ << 8) | next_byte();
            low_ <<= 8;
            range_ <<= 8;
        }
    }

    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    std::uint64_t low_ = 0;
    std::uint64_t range_ = ~0ull;
    std::uint64_t code_ = 0;
};

// Quantized 16-bit cumulative frequency table over the alphabet
// {center-64, ..., center+64} plus a trailing escape symbol. Escaped values
// are coded as 4 raw zigzag bytes.
struct FrequencyTable {
    static constexpr int kHalfWidth = 64;
    static constexpr int kSymbols = 2 * kHalfWidth + 1;  // regular symbols
    static constexpr int kEscape = kSymbols;             // escape index
    static constexpr std::uint32_t kTotal = 1u << 16;

    std::int32_t center = 0;
    std::vector<std::uint16_t> freq;   // kSymbols + 1 entries, sums to kTotal
    std::vector<std::uint32_t> cum;    // kSymbols + 2 entries

    // pmf(t) evaluates the model mass of integer t.
    template <typename Pmf>
    static FrequencyTable build(std::int32_t center, Pmf&& pmf) {
        FrequencyTable t;
        t.center = center;
        std::vector<double> p(kSymbols + 1, 0.0);
        double acc = 0.0;
        for (int i = 0; i < kSymbols; ++i) {
            p[static_cast<std::size_t>(i)] =
                std::max(pmf(center - kHalfWidth + i), static_cast<double>(kCoderPmfFloor));
            acc += p[static_cast<std::size_t>(i)];
        }
        // escape carries whatever tail mass the window misses, floored
        p[kSymbols] = std::max(1.0 - acc, static_cast<double>(kCoderPmfFloor));
        acc += p[kSymbols];
        t.freq.assign(kSymbols + 1, 0);
        std::uint64_t sum = 0;
        std::size_t largest = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double scaled = p[i] / acc * static_cast<double>(kTotal);
            std::uint32_t f = static_cast<std::uint32_t>(std::floor(scaled));
            if (f < 1) f = 1;
            t.freq[i] = static_cast<std::uint16_t>(std::min<std::uint32_t>(f, kTotal - kSymbols - 1));
            sum += t.freq[i];
            if (t.freq[i] > t.freq[largest]) largest = i;
        }
        // settle the rounding residue on the most probable symbol
        const std::int64_t diff = static_cast<std::int64_t>(kTotal) - static_cast<std::int64_t>(sum);
        t.freq[largest] = static_cast<std::uint16_t>(static_cast<std::int64_t>(t.freq[largest]) + diff);
        t.rebuild_cum();
        return t;
    }

    void rebuild_cum() {
        cum.assign(freq.size() + 1, 0);
        for (std::size_t i = 0; i < freq.size(); ++i) cum[i + 1] = cum[i] + freq[i];
        if (cum.back() != kTotal) throw ConfigError("frequency table does not sum to 2^16");
    }

    int symbol_of(std::int64_t t) const {
        const std::int64_t d = t - center;
        if (d < -kHalfWidth || d > kHalfWidth) return kEscape;
        return static_cast<int>(d + kHalfWidth);
    }

    std::int64_t value_of(int symbol) const { return center - kHalfWidth + symbol; }
};

inline std::uint32_t zigzag32(std::int64_t v) {
    const std::int32_t x = static_cast<std::int32_t>(v);
    return (static_cast<std::uint32_t>(x) << 1) ^ static_cast<std::uint32_t>(x >> 31);
}

inline std::int64_t unzigzag32(std::uint32_t u) {
    return static_cast<std::int32_t>((u >> 1) ^ (~(u & 1) + 1));
}

inline void encode_symbol(RangeEncoder& enc, const FrequencyTable& table, std::int64_t value) {
    const int s = table.symbol_of(value);
    enc.encode(table.cum[static_cast<std::size_t>(s)], table.freq[static_cast<std::size_t>(s)],
               FrequencyTable::kTotal);
    if (s == FrequencyTable::kEscape) {
        const std::uint32_t z = zigzag32(value - table.center);
        for (int b = 3; b >= 0; --b)
            enc.encode_raw_byte(static_cast<std::uint8_t>((z >> (8 * b)) & 0xff));
    }
}

inline std::int64_t decode_symbol(RangeDecoder& dec, const FrequencyTable& table) {
    const std::uint32_t f = dec.decode_freq(FrequencyTable::kTotal);
    // binary search in the cumulative table
    std::size_t lo = 0, hi = table.freq.size();
    while (lo + 1 < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (table.cum[mid] <= f)
            lo = mid;
        else
            hi = mid;
    }
    dec.decode_update(table.cum[lo], table.freq[lo]);
    if (static_cast<int>(lo) == FrequencyTable::kEscape) {
        std::uint32_t z = 0;
        for (int b = 0; b < 4; ++b) z = (z << 8) | dec.decode_raw_byte();
        return table.center + unzigzag32(z);
    }
    return table.value_of(static_cast<int>(lo));
}

// --- latent segment: per-element tables derived from (mu, sigma) -----------

inline std::vector<std::uint8_t> encode_latent(const Tensor& y_bar, const GaussianParams& params) {
    if (y_bar.numel() != params.mu.numel()) throw ShapeError("encode_latent shape mismatch");
    if (y_bar.numel() == 0) return {};
    RangeEncoder enc;
    for (std::int64_t i = 0; i < y_bar.numel(); ++i) {
        const double mu = params.mu[i];
        const double sigma = params.sigma[i];
        auto table = FrequencyTable::build(static_cast<std::int32_t>(std::llround(mu)),
                                           [&](double t) { return gauss_bin_pmf(t, mu, sigma); });
        encode_symbol(enc, table, std::llround(y_bar[i]));
    }
    return enc.finish();
}

inline Tensor decode_latent(const std::vector<std::uint8_t>& bytes, const GaussianParams& params) {
    if (params.mu.numel() == 0) return Tensor();
    Tensor out(params.mu.shape());
    RangeDecoder dec(bytes.data(), bytes.size());
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        const double mu = params.mu[i];
        const double sigma = params.sigma[i];
        auto table = FrequencyTable::build(static_cast<std::int32_t>(std::llround(mu)),
                                           [&](double t) { return gauss_bin_pmf(t, mu, sigma); });
        out[i] = static_cast<double>(decode_symbol(dec, table));
    }
    return out;
}

// --- hyperprior segment: caller-supplied per-element marginal tables -------

inline std::vector<std::uint8_t> encode_hyper(const Tensor& z_bar,
                                              const std::vector<FrequencyTable>& tables) {
    if (static_cast<std::size_t>(z_bar.numel()) != tables.size())
        throw ShapeError("encode_hyper table count mismatch");
    if (z_bar.numel() == 0) return {};
    RangeEncoder enc;
    for (std::int64_t i = 0; i < z_bar.numel(); ++i)
        encode_symbol(enc, tables[static_cast<std::size_t>(i)], std::llround(z_bar[i]));
    return enc.finish();
}

inline Tensor decode_hyper(const std::vector<std::uint8_t>& bytes,
                           const std::vector<FrequencyTable>& tables, const Shape& shape) {
    Tensor out(shape);
    if (out.numel() == 0) return out;
    if (static_cast<std::size_t>(out.numel()) != tables.size())
        throw ShapeError("decode_hyper table count mismatch");
    RangeDecoder dec(bytes.data(), bytes.size());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<double>(decode_symbol(dec, tables[static_cast<std::size_t>(i)]));
    return out;
}

// Marginal tables of user `user` (0 or 1) under the joint hyperprior model.
inline std::vector<FrequencyTable> hyper_marginal_tables(const JointHyperModel& model, int user) {
    std::vector<FrequencyTable> tables;
    tables.reserve(static_cast<std::size_t>(model.pairs()));
    for (std::int64_t j = 0; j < model.pairs(); ++j) {
        const std::int32_t center =
            static_cast<std::int32_t>(std::llround(model.marginal_mean(user, j)));
        tables.push_back(FrequencyTable::build(
            center, [&](double t) { return model.marginal_bin_pmf(user, j, t); }));
    }
    return tables;
}

}  // namespace dntsc
