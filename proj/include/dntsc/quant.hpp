#pragma once

#include <cmath>

#include "dntsc/core/rng.hpp"
#include "dntsc/core/tensor.hpp"

namespace dntsc {

// Uniform scalar quantization: nearest integer, halves away from zero
// (std::round's tie rule, identical on encoder and decoder).
inline Tensor quantize(const Tensor& y) {
    Tensor out(y.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        if (std::isnan(y[i])) throw InputError("quantize: NaN input");
        out[i] = std::round(y[i]);
    }
    return out;
}

inline double quantize(double v) {
    if (std::isnan(v)) throw InputError("quantize: NaN input");
    return std::round(v);
}

// Additive uniform-noise relaxation of quantization: y + u with u i.i.d. on
// the open interval (-1/2, 1/2).
inline Tensor relax(const Tensor& y, Rng& rng) {
    Tensor out(y.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) out[i] = y[i] + (rng.uniform_open() - 0.5);
    return out;
}

// Noise-only variant used when the relaxation must be applied inside an
// autodiff graph (the noise is a constant w.r.t. the parameters).
inline Tensor relax_noise(const Shape& shape, Rng& rng) {
    Tensor out(shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = rng.uniform_open() - 0.5;
    return out;
}

}  // namespace dntsc
