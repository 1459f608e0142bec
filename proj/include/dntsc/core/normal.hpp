#pragma once

#include <cmath>

namespace dntsc {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;
inline constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;

// Standard normal CDF, accurate in both tails (erfc-based).
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

inline double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

}  // namespace dntsc
