#pragma once

#include <algorithm>
#include <cmath>

#include "dntsc/core/normal.hpp"

namespace dntsc {

namespace detail {

// Gauss-Legendre half-tables (symmetric points) used by the Genz quadrature.
inline constexpr double kGL6X[3] = {0.9324695142031521, 0.6612093864662645, 0.2386191860831969};
inline constexpr double kGL6W[3] = {0.1713244923791704, 0.3607615730481386, 0.4679139345726910};
inline constexpr double kGL12X[6] = {0.9815606342467192, 0.9041172563704749, 0.7699026741943047,
                                     0.5873179542866175, 0.3678314989981802, 0.1252334085114689};
inline constexpr double kGL12W[6] = {0.04717533638651183, 0.1069393259953184, 0.1600783285433462,
                                     0.2031674267230659, 0.2334925365383548, 0.2491470458134028};
inline constexpr double kGL20X[10] = {0.9931285991850949,  0.9639719272779138, 0.9122344282513259,
                                      0.8391169718222188,  0.7463319064601508, 0.6360536807265150,
                                      0.5108670019508271,  0.3737060887154195, 0.2277858511416451,
                                      0.07652652113349734};
inline constexpr double kGL20W[10] = {0.01761400713915212, 0.04060142980038694, 0.06267204833410907,
                                      0.08327674157670475, 0.1019301198172404,  0.1181945319615184,
                                      0.1316886384491766,  0.1420961093183820,  0.1491729864726037,
                                      0.1527533871307258};

// Genz's BVND: P(X > dh, Y > dk) for the standard bivariate normal with
// correlation r. Absolute accuracy around 5e-16 for |r| < 1.
inline double bvn_upper(double dh, double dk, double r) {
    const double* gx;
    const double* gw;
    int lg;
    const double ar = std::fabs(r);
    if (ar < 0.3) {
        gx = kGL6X, gw = kGL6W, lg = 3;
    } else if (ar < 0.75) {
        gx = kGL12X, gw = kGL12W, lg = 6;
    } else {
        gx = kGL20X, gw = kGL20W, lg = 10;
    }
    double h = dh, k = dk;
    double hk = h * k;
    double bvn = 0.0;
    if (ar < 0.925) {
        if (ar > 0.0) {
            const double hs = (h * h + k * k) / 2.0;
            const double asr = std::asin(r);
            for (int i = 0; i < lg; ++i) {
                for (int is = -1; is <= 1; is += 2) {
                    const double sn = std::sin(asr * (is * gx[i] + 1.0) / 2.0);
                    bvn += gw[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
                }
            }
            bvn = bvn * asr / (2.0 * kTwoPi);
        }
        bvn += norm_cdf(-h) * norm_cdf(-k);
    } else {
        if (r < 0.0) {
            k = -k;
            hk = -hk;
        }
        if (ar < 1.0) {
            const double as = (1.0 - r) * (1.0 + r);
            double a = std::sqrt(as);
            const double bs = (h - k) * (h - k);
            const double c = (4.0 - hk) / 8.0;
            const double d = (12.0 - hk) / 16.0;
            double asr = -(bs / as + hk) / 2.0;
            if (asr > -100.0)
                bvn = a * std::exp(asr) *
                      (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as * as / 5.0);
            if (-hk < 100.0) {
                const double b = std::sqrt(bs);
                bvn -= std::exp(-hk / 2.0) * std::sqrt(kTwoPi) * norm_cdf(-b / a) * b *
                       (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
            }
            a /= 2.0;
            for (int i = 0; i < lg; ++i) {
                for (int is = -1; is <= 1; is += 2) {
                    const double xs = a * (is * gx[i] + 1.0) * (a * (is * gx[i] + 1.0));
                    const double rs = std::sqrt(1.0 - xs);
                    asr = -(bs / xs + hk) / 2.0;
                    if (asr > -100.0) {
                        bvn += a * gw[i] * std::exp(asr) *
                               (std::exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs -
                                (1.0 + c * xs * (1.0 + d * xs)));
                    }
                }
            }
            bvn = -bvn / kTwoPi;
        }
        if (r > 0.0) {
            bvn += norm_cdf(-std::max(h, k));
        } else {
            bvn = -bvn;
            if (k > h) bvn += norm_cdf(k) - norm_cdf(h);
        }
    }
    return bvn;
}

}  // namespace detail

// P(X <= x, Y <= y) for the standard bivariate normal with correlation rho.
inline double bvn_cdf(double x, double y, double rho) {
    return detail::bvn_upper(-x, -y, rho);
}

// Closed-form partial derivatives (Plackett): d/dx, d/dy, d/drho.
inline void bvn_cdf_derivs(double x, double y, double rho, double* dx, double* dy, double* drho) {
    const double om = 1.0 - rho * rho;
    const double sq = std::sqrt(om);
    *dx = norm_pdf(x) * norm_cdf((y - rho * x) / sq);
    *dy = norm_pdf(y) * norm_cdf((x - rho * y) / sq);
    *drho = std::exp(-(x * x - 2.0 * rho * x * y + y * y) / (2.0 * om)) / (kTwoPi * sq);
}

// Probability of the axis-aligned rectangle [a1,b1]x[a2,b2] under a bivariate
// normal with standardized bounds. Clamped at zero against tail cancellation.
inline double bvn_rect_std(double a1, double b1, double a2, double b2, double rho) {
    const double p = bvn_cdf(b1, b2, rho) - bvn_cdf(a1, b2, rho) - bvn_cdf(b1, a2, rho) +
                     bvn_cdf(a1, a2, rho);
    return std::max(p, 0.0);
}

}  // namespace dntsc
