#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>

namespace ftl::detail {

// Branch-free exp for arguments <= 0, written so that GCC and Clang can
// vectorize loops calling it (std::exp is an opaque libm call). Cody-Waite
// reduction to |r| <= ln2/2, degree-12 Taylor polynomial, exponent rebuilt
// from the integer bits of the rounded quotient. Max relative error against
// std::exp is below 4e-16 on [-708, 0]; results below e^-708 are flushed to
// that value and are irrelevant for every caller in this library.
inline double exp_nonpositive(double x) noexcept {
    constexpr double log2e = 1.4426950408889634;
    constexpr double ln2_hi = 6.93147180369123816490e-01;
    constexpr double ln2_lo = 1.90821492927058770002e-10;
    constexpr double shifter = 0x1.8p52;
    constexpr std::int64_t shifter_bits = 0x4338000000000000LL;

    x = std::max(x, -708.0);
    const double t = x * log2e + shifter;
    const double n = t - shifter;
    std::int64_t n_bits;
    std::memcpy(&n_bits, &t, sizeof t);
    const double r = (x - n * ln2_hi) - n * ln2_lo;

    double p = 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;

    const std::int64_t scale_bits = (n_bits - shifter_bits + 1023) << 52;
    double scale;
    std::memcpy(&scale, &scale_bits, sizeof scale);
    return p * scale;
}

}  // namespace ftl::detail
