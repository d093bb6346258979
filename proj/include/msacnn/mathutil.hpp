#pragma once

#include <cstdint>
#include <cstring>
#include <limits>

namespace msacnn::detail {

// exp(x) as 2^n * exp(r) with r in [-ln2/2, ln2/2] and a degree-11 Taylor
// polynomial; relative error stays below ~1e-14. Pure arithmetic, so results
// are bit-reproducible across libm versions, and the loop bodies vectorize.
inline double fast_exp(double x) {
    constexpr double kLog2E = 1.44269504088896340736;
    constexpr double kLn2Hi = 6.93147180369123816490e-01;
    constexpr double kLn2Lo = 1.90821492927058770002e-10;
    constexpr double kShift = 6755399441055744.0;  // 1.5 * 2^52
    // branchless clamp keeps the loop bodies vectorizable; arguments beyond
    // the representable range saturate instead of under/overflowing
    x = x < -708.0 ? -708.0 : (x > 709.0 ? 709.0 : x);
    const double nd = (x * kLog2E + kShift) - kShift;  // round to nearest
    const double r = (x - nd * kLn2Hi) - nd * kLn2Lo;
    double p = 1.0 / 39916800.0;
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
    const std::uint64_t bits =
        static_cast<std::uint64_t>(static_cast<std::int64_t>(nd) + 1023) << 52;
    double pow2;
    std::memcpy(&pow2, &bits, sizeof(pow2));
    return p * pow2;
}

// Dot product with four independent accumulators. The order of operations is
// fixed, so results are deterministic; the independence lets the compiler
// vectorize what a strict left-to-right reduction would serialize.
inline double dot(const double* __restrict a, const double* __restrict b, int n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    double s = (s0 + s1) + (s2 + s3);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline void axpy(double* __restrict y, double a, const double* __restrict x, int n) {
    for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

// max and sum with the same fixed-order four-lane scheme as dot()
inline double vmax(const double* __restrict a, int n) {
    double m0 = a[0], m1 = a[0], m2 = a[0], m3 = a[0];
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        m0 = a[i] > m0 ? a[i] : m0;
        m1 = a[i + 1] > m1 ? a[i + 1] : m1;
        m2 = a[i + 2] > m2 ? a[i + 2] : m2;
        m3 = a[i + 3] > m3 ? a[i + 3] : m3;
    }
    double m = m0 > m1 ? m0 : m1;
    m = m2 > m ? m2 : m;
    m = m3 > m ? m3 : m;
    for (; i < n; ++i) m = a[i] > m ? a[i] : m;
    return m;
}

inline double vsum(const double* __restrict a, int n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i];
        s1 += a[i + 1];
        s2 += a[i + 2];
        s3 += a[i + 3];
    }
    double s = (s0 + s1) + (s2 + s3);
    for (; i < n; ++i) s += a[i];
    return s;
}

} // namespace msacnn::detail
