#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "msacnn/errors.hpp"

namespace msacnn {

// One biquad y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2].
struct SecondOrderSection {
    double b0, b1, b2;
    double a1, a2;
};

struct FilterSpec {
    int order = 0;
    double cutoff_hz = 0.0;
    double sample_rate_hz = 0.0;
    std::vector<SecondOrderSection> sections;

    // magnitude of the digital frequency response at f (Hz)
    double magnitude_at(double f_hz) const {
        const double w = 2.0 * M_PI * f_hz / sample_rate_hz;
        const std::complex<double> z1 = std::polar(1.0, -w);
        const std::complex<double> z2 = z1 * z1;
        std::complex<double> h(1.0, 0.0);
        for (const auto& s : sections)
            h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
        return std::abs(h);
    }

    bool stable() const {
        // biquad poles lie inside the unit circle iff |a2| < 1 and |a1| < 1 + a2
        for (const auto& s : sections)
            if (!(std::abs(s.a2) < 1.0 && std::abs(s.a1) < 1.0 + s.a2))
                return false;
        return true;
    }
};

// Designs a digital low-pass Butterworth filter as a cascade of second-order
// sections: the analog prototype is mapped by the bilinear transform with
// frequency prewarping, so the digital magnitude at cutoff_hz is exactly
// 1/sqrt(2) and the DC gain is exactly 1 per section.
inline FilterSpec design_butterworth_lowpass(int order, double cutoff_hz,
                                             double sample_rate_hz) {
    if (order < 2 || order > 8 || order % 2 != 0)
        throw ConfigError("butterworth: order must be one of {2, 4, 6, 8}");
    if (cutoff_hz <= 0.0 || sample_rate_hz <= 0.0)
        throw ConfigError("butterworth: cutoff and sample rate must be positive");
    if (cutoff_hz >= sample_rate_hz / 2.0)
        throw ConfigError("butterworth: cutoff must be below the Nyquist frequency");

    FilterSpec spec;
    spec.order = order;
    spec.cutoff_hz = cutoff_hz;
    spec.sample_rate_hz = sample_rate_hz;

    // prewarped prototype substitution s -> K (1 - z^-1) / (1 + z^-1)
    const double inv_warp = 1.0 / std::tan(M_PI * cutoff_hz / sample_rate_hz);
    const int n_sections = order / 2;
    for (int i = 0; i < n_sections; ++i) {
        // conjugate pole pair of the normalized prototype: s^2 + 2 zeta s + 1
        const double zeta = std::sin(M_PI * (2.0 * i + 1.0) / (2.0 * order));
        const double k2 = inv_warp * inv_warp;
        const double a0 = k2 + 2.0 * zeta * inv_warp + 1.0;
        SecondOrderSection s;
        s.b0 = 1.0 / a0;
        s.b1 = 2.0 / a0;
        s.b2 = 1.0 / a0;
        s.a1 = 2.0 * (1.0 - k2) / a0;
        s.a2 = (k2 - 2.0 * zeta * inv_warp + 1.0) / a0;
        spec.sections.push_back(s);
    }
    if (!spec.stable()) throw InternalError("butterworth: designed sections unstable");
    return spec;
}

// Causal forward filtering through the section cascade, direct form II
// transposed, zero initial states; output length equals input length.
inline std::vector<double> filter_forward(const FilterSpec& spec,
                                          const std::vector<double>& signal) {
    std::vector<double> y = signal;
    for (const auto& s : spec.sections) {
        double z1 = 0.0, z2 = 0.0;
        for (double& v : y) {
            const double x = v;
            const double out = s.b0 * x + z1;
            z1 = s.b1 * x - s.a1 * out + z2;
            z2 = s.b2 * x - s.a2 * out;
            v = out;
        }
    }
    return y;
}

// Linear interpolation onto a uniform grid at to_hz spanning the same
// duration as the input.
inline std::vector<double> resample_to(const std::vector<double>& signal,
                                       double from_hz, double to_hz) {
    if (from_hz <= 0.0 || to_hz <= 0.0)
        throw ConfigError("resample_to: rates must be positive");
    if (signal.empty()) throw DataError("resample_to: empty signal");
    if (from_hz == to_hz) return signal;
    if (signal.size() == 1) return signal;

    const std::size_t n = signal.size();
    const double duration = static_cast<double>(n - 1) / from_hz;
    const std::size_t m = static_cast<std::size_t>(std::llround(duration * to_hz)) + 1;
    std::vector<double> out(m);
    const double ratio = from_hz / to_hz;
    for (std::size_t i = 0; i < m; ++i) {
        const double pos = static_cast<double>(i) * ratio;
        std::size_t lo = static_cast<std::size_t>(pos);
        if (lo >= n - 1) {
            out[i] = signal[n - 1];
            continue;
        }
        const double frac = pos - static_cast<double>(lo);
        out[i] = signal[lo] + frac * (signal[lo + 1] - signal[lo]);
    }
    return out;
}

} // namespace msacnn
