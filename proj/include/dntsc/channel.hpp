#pragma once

#include <cmath>
#include <limits>

#include "dntsc/core/rng.hpp"
#include "dntsc/core/tensor.hpp"

namespace dntsc {

// Complex AWGN channel. Channel vectors are stored as interleaved real pairs
// (re, im); per complex symbol the noise variance is eps2 (eps2/2 per real
// component).
struct ChannelSpec {
    double snr_db = 5.0;
    double power = 1.0;
    std::uint64_t seed = 0;
    bool noiseless = false;  // snr = +inf flag

    double noise_variance() const {
        if (noiseless) return 0.0;
        const double e2 = power * std::pow(10.0, -snr_db / 10.0);
        if (!(e2 > 0.0)) throw ParamError("noise variance must be positive");
        return e2;
    }
};

// s_hat = s + n with n i.i.d. circularly symmetric complex Gaussian.
inline Tensor awgn_transmit(const Tensor& s, const ChannelSpec& spec, Rng& rng) {
    if (spec.noiseless) return s;
    if (s.numel() % 2 != 0) throw ShapeError("channel vector must hold interleaved complex pairs");
    const double sd = std::sqrt(spec.noise_variance() / 2.0);
    Tensor out(s.shape());
    for (std::int64_t i = 0; i < s.numel(); ++i) out[i] = s[i] + sd * rng.normal();
    return out;
}

// AWGN Shannon capacity in bits per complex channel use.
inline double capacity(double snr_db) {
    if (!std::isfinite(snr_db)) throw ParamError("snr_db must be finite");
    return std::log2(1.0 + std::pow(10.0, snr_db / 10.0));
}

}  // namespace dntsc
