#pragma once

#include <string>
#include <vector>

#include "msacnn/errors.hpp"
#include "msacnn/tensor.hpp"

namespace msacnn {

enum class FilterMode { unimodal, multimodal };

struct ScaleSpec {
    int p_in = 1;    // input pooling size
    int p_comp = 8;  // complementary pooling size
    int filters = 8; // temporal filters on this scale
};

// Scale ladder of the multi-scale module. Every scale satisfies
// p_in * p_comp == p_tot so that the pooled feature maps can be merged.
struct ScalePlan {
    std::vector<ScaleSpec> scales;  // ascending p_in
    int p_tot = 8;
    int kernel_msm1 = 15;
    int kernel_msm2 = 5;
    int filters_msm2 = 16;  // per filter bank (per channel when multimodal)
    FilterMode mode = FilterMode::unimodal;

    int total_scale_filters() const {
        int n = 0;
        for (const auto& s : scales) n += s.filters;
        return n;
    }

    void validate() const {
        if (scales.empty()) throw ConfigError("scale plan has no scales");
        if (kernel_msm1 % 2 == 0 || kernel_msm2 % 2 == 0)
            throw ConfigError("scale plan kernels must be odd");
        int prev_p_in = 0;
        for (const auto& s : scales) {
            if (s.p_in * s.p_comp != p_tot)
                throw ConfigError("scale plan: p_in * p_comp must equal p_tot");
            if (s.p_in <= prev_p_in || (s.p_in & (s.p_in - 1)) != 0)
                throw ConfigError("scale plan: p_in must be strictly increasing powers of two");
            if (s.filters < 1) throw ConfigError("scale plan: filters must be >= 1");
            prev_p_in = s.p_in;
        }
        if (filters_msm2 < 1) throw ConfigError("scale plan: filters_msm2 must be >= 1");
    }
};

// Contiguous subset of the canonical four-scale ladder (p_in 1,2,4,8). The
// total number of scale filters is held at 4 * base_filters; when it does
// not divide evenly the earliest scales receive the remainder.
inline ScalePlan scale_plan_from_indices(const std::vector<int>& indices,
                                         int base_filters, int filters_msm2,
                                         FilterMode mode = FilterMode::unimodal) {
    if (indices.empty() || indices.size() > 4)
        throw ConfigError("scale plan: need between 1 and 4 scales");
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] > 3)
            throw ConfigError("scale plan: scale index out of range [0, 3]");
        if (i > 0 && indices[i] != indices[i - 1] + 1)
            throw ConfigError("scale plan: scale subset must be contiguous and ascending");
    }
    const int total = 4 * base_filters;
    const int n = static_cast<int>(indices.size());
    const int each = total / n;
    int remainder = total % n;

    ScalePlan plan;
    plan.mode = mode;
    plan.filters_msm2 = filters_msm2;
    for (int idx : indices) {
        ScaleSpec s;
        s.p_in = 1 << idx;
        s.p_comp = plan.p_tot / s.p_in;
        s.filters = each + (remainder > 0 ? 1 : 0);
        if (remainder > 0) --remainder;
        plan.scales.push_back(s);
    }
    plan.validate();
    return plan;
}

inline ScalePlan default_scale_plan(int n_scales = 4, int first_scale = 0,
                                    int base_filters = 8, int filters_msm2 = 16,
                                    FilterMode mode = FilterMode::unimodal) {
    if (n_scales < 1 || n_scales > 4)
        throw ConfigError("default_scale_plan: n_scales must be in [1, 4]");
    if (first_scale < 0 || first_scale + n_scales > 4)
        throw ConfigError("default_scale_plan: scale window out of range");
    std::vector<int> indices;
    for (int i = 0; i < n_scales; ++i) indices.push_back(first_scale + i);
    return scale_plan_from_indices(indices, base_filters, filters_msm2, mode);
}

struct ScaleSummary {
    double receptive_field_ms = 0.0;
    double f_max_hz = 0.0;        // frequency range is [0, f_max_hz]
    double freq_spacing_hz = 0.0;
};

inline ScaleSummary scale_summary(const ScaleSpec& scale, int kernel_msm1,
                                  double sample_rate_hz = 100.0) {
    ScaleSummary s;
    s.receptive_field_ms = 1000.0 * kernel_msm1 * scale.p_in / sample_rate_hz;
    s.freq_spacing_hz = sample_rate_hz / (scale.p_in * kernel_msm1);
    s.f_max_hz = (kernel_msm1 / 2) * s.freq_spacing_hz;
    return s;
}

// Parameters of the MSM. Unimodal: one bank per scale shared by all
// channels plus one integration convolution. Multimodal: a bank per
// (channel, scale) and one integration convolution per channel.
struct MsmParams {
    std::vector<Tensor> scale_w;      // [filters x 1 x kernel_msm1]
    std::vector<Tensor> scale_b;      // [filters]
    std::vector<Tensor> integrate_w;  // [filters_msm2 x total_filters x kernel_msm2]
    std::vector<Tensor> integrate_b;  // [filters_msm2]
};

// Per-scale pooled convolutions, complementary max pooling, ordered merge,
// and the scale-integration convolution; returns [n_ch * filters_msm2 x
// T/p_tot] with per-channel blocks in input channel order.
inline Tensor msm_forward(Tape& tape, const ScalePlan& plan, const MsmParams& params,
                          const Tensor& input) {
    plan.validate();
    if (input.rank() != 2) throw DataError("msm_forward: expected input [N_ch x T]");
    const int n_ch = input.dim(0);
    const int t_len = input.dim(1);
    if (t_len % plan.p_tot != 0)
        throw DataError("msm_forward: signal length " + std::to_string(t_len) +
                        " not divisible by total pooling " + std::to_string(plan.p_tot));
    const int n_scales = static_cast<int>(plan.scales.size());
    const bool multimodal = plan.mode == FilterMode::multimodal;
    const std::size_t banks_expected =
        multimodal ? static_cast<std::size_t>(n_ch) * n_scales : static_cast<std::size_t>(n_scales);
    if (params.scale_w.size() != banks_expected || params.scale_b.size() != banks_expected)
        throw ConfigError("msm_forward: scale banks do not match the plan");
    if (params.integrate_w.size() != (multimodal ? static_cast<std::size_t>(n_ch) : 1u))
        throw ConfigError("msm_forward: integration banks do not match the plan");

    std::vector<Tensor> channel_blocks;
    channel_blocks.reserve(static_cast<std::size_t>(n_ch));
    for (int c = 0; c < n_ch; ++c) {
        Tensor xc = tape.slice_rows(input, c, 1);
        std::vector<Tensor> merged;
        merged.reserve(static_cast<std::size_t>(n_scales));
        for (int s = 0; s < n_scales; ++s) {
            const auto& spec = plan.scales[static_cast<std::size_t>(s)];
            const std::size_t bank =
                multimodal ? static_cast<std::size_t>(c) * n_scales + s : static_cast<std::size_t>(s);
            Tensor pooled = spec.p_in == 1 ? xc : tape.pool(xc, spec.p_in, PoolMode::average);
            Tensor conv = tape.conv1d_same(pooled, params.scale_w[bank], params.scale_b[bank]);
            Tensor act = tape.relu(conv);
            merged.push_back(spec.p_comp == 1 ? act : tape.pool(act, spec.p_comp, PoolMode::max));
        }
        Tensor stacked = merged.size() == 1 ? merged[0] : tape.concat_rows(merged);
        const std::size_t ib = multimodal ? static_cast<std::size_t>(c) : 0u;
        Tensor integrated =
            tape.conv1d_same(stacked, params.integrate_w[ib], params.integrate_b[ib]);
        channel_blocks.push_back(tape.relu(integrated));
    }
    return channel_blocks.size() == 1 ? channel_blocks[0] : tape.concat_rows(channel_blocks);
}

} // namespace msacnn
