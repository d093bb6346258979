#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "msacnn/msm.hpp"

using namespace msacnn;

namespace {

Tensor random_tensor(std::vector<int> shape, RngStream& rng, bool rq = false) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-0.5, 0.5);
    return Tensor::from(std::move(shape), std::move(v), rq);
}

MsmParams random_params(const ScalePlan& plan, int n_ch, RngStream& rng) {
    MsmParams p;
    const int banks = plan.mode == FilterMode::multimodal ? n_ch : 1;
    for (int b = 0; b < banks; ++b) {
        for (const auto& s : plan.scales) {
            p.scale_w.push_back(random_tensor({s.filters, 1, plan.kernel_msm1}, rng));
            p.scale_b.push_back(random_tensor({s.filters}, rng));
        }
        p.integrate_w.push_back(random_tensor(
            {plan.filters_msm2, plan.total_scale_filters(), plan.kernel_msm2}, rng));
        p.integrate_b.push_back(random_tensor({plan.filters_msm2}, rng));
    }
    return p;
}

} // namespace

TEST_CASE("default scale plan matches the published ladder", "[msm]") {
    ScalePlan plan = default_scale_plan();
    REQUIRE(plan.scales.size() == 4);
    const int expect_p_in[4] = {1, 2, 4, 8};
    const int expect_p_comp[4] = {8, 4, 2, 1};
    for (int s = 0; s < 4; ++s) {
        CHECK(plan.scales[static_cast<std::size_t>(s)].p_in == expect_p_in[s]);
        CHECK(plan.scales[static_cast<std::size_t>(s)].p_comp == expect_p_comp[s]);
        CHECK(plan.scales[static_cast<std::size_t>(s)].filters == 8);
    }
    CHECK(plan.kernel_msm1 == 15);
    CHECK(plan.kernel_msm2 == 5);
    CHECK(plan.filters_msm2 == 16);
}

TEST_CASE("every plan keeps p_in * p_comp == p_tot", "[msm]") {
    for (int count = 1; count <= 4; ++count)
        for (int first = 0; first + count <= 4; ++first) {
            ScalePlan plan = default_scale_plan(count, first);
            for (const auto& s : plan.scales) CHECK(s.p_in * s.p_comp == plan.p_tot);
        }
}

TEST_CASE("single-scale plans preserve the total filter count", "[msm]") {
    ScalePlan plan = default_scale_plan(1, 1);  // scale II only
    REQUIRE(plan.scales.size() == 1);
    CHECK(plan.scales[0].p_in == 2);
    CHECK(plan.scales[0].p_comp == 4);
    CHECK(plan.scales[0].filters == 32);  // 4 x 8 preserved
}

TEST_CASE("three-scale plans distribute the fixed total evenly", "[msm]") {
    ScalePlan plan = default_scale_plan(3, 0);
    REQUIRE(plan.scales.size() == 3);
    CHECK(plan.total_scale_filters() == 32);
    CHECK(plan.scales[0].filters == 11);
    CHECK(plan.scales[1].filters == 11);
    CHECK(plan.scales[2].filters == 10);
}

TEST_CASE("invalid scale subsets are rejected", "[msm]") {
    CHECK_THROWS_AS(scale_plan_from_indices({0, 2}, 8, 16), ConfigError);
    CHECK_THROWS_AS(scale_plan_from_indices({2, 1}, 8, 16), ConfigError);
    CHECK_THROWS_AS(scale_plan_from_indices({}, 8, 16), ConfigError);
    CHECK_THROWS_AS(scale_plan_from_indices({4}, 8, 16), ConfigError);
    CHECK_THROWS_AS(default_scale_plan(2, 3), ConfigError);
}

TEST_CASE("scale summaries match the published characteristics", "[msm]") {
    ScalePlan plan = default_scale_plan();
    ScaleSummary s1 = scale_summary(plan.scales[0], plan.kernel_msm1, 100.0);
    CHECK(s1.receptive_field_ms == Catch::Approx(150.0));
    CHECK(s1.f_max_hz == Catch::Approx(46.7).margin(0.05));
    CHECK(s1.freq_spacing_hz == Catch::Approx(6.7).margin(0.05));

    ScaleSummary s4 = scale_summary(plan.scales[3], plan.kernel_msm1, 100.0);
    CHECK(s4.receptive_field_ms == Catch::Approx(1200.0));
    CHECK(s4.f_max_hz == Catch::Approx(5.8).margin(0.05));
    CHECK(s4.freq_spacing_hz == Catch::Approx(0.8).margin(0.05));

    // doubling p_in doubles the receptive field and halves the spacing
    for (int s = 1; s < 4; ++s) {
        ScaleSummary lo = scale_summary(plan.scales[static_cast<std::size_t>(s - 1)],
                                        plan.kernel_msm1, 100.0);
        ScaleSummary hi = scale_summary(plan.scales[static_cast<std::size_t>(s)],
                                        plan.kernel_msm1, 100.0);
        CHECK(hi.receptive_field_ms == Catch::Approx(2.0 * lo.receptive_field_ms));
        CHECK(hi.freq_spacing_hz == Catch::Approx(0.5 * lo.freq_spacing_hz));
    }
}

TEST_CASE("unimodal parameter arithmetic for the small four-scale plan", "[msm]") {
    ScalePlan plan = default_scale_plan();
    RngStream rng(2);
    MsmParams p = random_params(plan, 1, rng);
    long msm1 = 0, msm2 = 0;
    for (std::size_t i = 0; i < p.scale_w.size(); ++i)
        msm1 += static_cast<long>(p.scale_w[i].size() + p.scale_b[i].size());
    for (std::size_t i = 0; i < p.integrate_w.size(); ++i)
        msm2 += static_cast<long>(p.integrate_w[i].size() + p.integrate_b[i].size());
    CHECK(msm1 == 512);
    CHECK(msm2 == 2576);
    CHECK(msm1 + msm2 == 3088);
}

TEST_CASE("msm_forward output temporal length is T / p_tot", "[msm]") {
    ScalePlan plan = default_scale_plan();
    RngStream rng(3);
    MsmParams p = random_params(plan, 1, rng);
    Tensor x = random_tensor({1, 3000}, rng);
    Tape tape;
    Tensor y = msm_forward(tape, plan, p, x);
    CHECK(y.dim(0) == 16);
    CHECK(y.dim(1) == 375);

    Tensor bad = random_tensor({1, 3001}, rng);
    CHECK_THROWS_AS(msm_forward(tape, plan, p, bad), DataError);
}

TEST_CASE("all-zero input propagates only biases through the ReLUs", "[msm]") {
    ScalePlan plan = default_scale_plan();
    RngStream rng(4);
    MsmParams p = random_params(plan, 1, rng);
    // zero every parameter except the integration bias
    for (auto& t : p.scale_w) std::fill(t.value().begin(), t.value().end(), 0.0);
    for (auto& t : p.scale_b) std::fill(t.value().begin(), t.value().end(), 0.0);
    std::fill(p.integrate_w[0].value().begin(), p.integrate_w[0].value().end(), 0.0);

    Tensor x = Tensor::zeros({2, 240});
    Tape tape;
    Tensor y = msm_forward(tape, plan, p, x);
    REQUIRE(y.dim(0) == 2 * 16);
    for (int c = 0; c < y.dim(0); ++c) {
        const double expect =
            std::max(0.0, p.integrate_b[0].value()[static_cast<std::size_t>(c % 16)]);
        for (int t = 0; t < y.dim(1); ++t)
            CHECK(y.value()[static_cast<std::size_t>(c) * y.dim(1) + t] ==
                  Catch::Approx(expect));
    }
}

TEST_CASE("single-scale msm equals a plain conv + maxpool pipeline", "[msm]") {
    ScalePlan plan = default_scale_plan(1, 0);  // scale I: p_in = 1, p_comp = 8
    RngStream rng(5);
    MsmParams p = random_params(plan, 1, rng);
    Tensor x = random_tensor({1, 640}, rng);

    Tape tape;
    Tensor got = msm_forward(tape, plan, p, x);

    // independent composition of tensor-core primitives
    Tape oracle;
    Tensor conv = oracle.relu(oracle.conv1d_same(x, p.scale_w[0], p.scale_b[0]));
    Tensor pooled = oracle.pool(conv, 8, PoolMode::max);
    Tensor expect = oracle.relu(oracle.conv1d_same(pooled, p.integrate_w[0], p.integrate_b[0]));

    REQUIRE(got.shape() == expect.shape());
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(std::abs(got.value()[i] - expect.value()[i]) < 1e-12);
}

TEST_CASE("unimodal msm is equivariant to channel permutation", "[msm]") {
    ScalePlan plan = default_scale_plan();
    RngStream rng(6);
    MsmParams p = random_params(plan, 3, rng);
    Tensor x = random_tensor({3, 240}, rng);

    std::vector<double> permuted(x.size());
    const int t = x.dim(1);
    const int perm[3] = {2, 0, 1};
    for (int c = 0; c < 3; ++c)
        std::copy(x.value().begin() + perm[c] * t, x.value().begin() + (perm[c] + 1) * t,
                  permuted.begin() + c * t);

    Tape tape;
    Tensor ya = msm_forward(tape, plan, p, x);
    Tensor yb = msm_forward(tape, plan, p, Tensor::from({3, 240}, std::move(permuted)));

    const int block = 16 * ya.dim(1);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < block; ++i)
            CHECK(yb.value()[static_cast<std::size_t>(c) * block + i] ==
                  ya.value()[static_cast<std::size_t>(perm[c]) * block + i]);
}

TEST_CASE("multimodal msm uses a distinct bank per channel", "[msm]") {
    ScalePlan plan = default_scale_plan(4, 0, 4, 8, FilterMode::multimodal);
    RngStream rng(7);
    MsmParams p = random_params(plan, 2, rng);
    Tensor x = random_tensor({2, 240}, rng);
    Tape tape;
    Tensor y = msm_forward(tape, plan, p, x);
    CHECK(y.dim(0) == 2 * 8);
    CHECK(y.dim(1) == 30);

    // identical signals on both channels still differ after per-channel banks
    std::vector<double> same(x.value().begin(), x.value().begin() + 240);
    same.insert(same.end(), x.value().begin(), x.value().begin() + 240);
    Tensor x2 = Tensor::from({2, 240}, std::move(same));
    Tensor y2 = msm_forward(tape, plan, p, x2);
    double diff = 0.0;
    for (int i = 0; i < 8 * 30; ++i)
        diff += std::abs(y2.value()[static_cast<std::size_t>(i)] -
                         y2.value()[static_cast<std::size_t>(8 * 30 + i)]);
    CHECK(diff > 1e-6);
}

TEST_CASE("msm gradients check out", "[msm][grad]") {
    ScalePlan plan = default_scale_plan(2, 1);
    RngStream rng(8);
    MsmParams p = random_params(plan, 1, rng);
    Tensor point = random_tensor({1, 64}, rng);
    const double err = grad_check(
        [&](Tape& t, const Tensor& x) {
            Tensor y = msm_forward(t, plan, p, x);
            return t.sum(t.mul(y, y));
        },
        point);
    CHECK(err < 1e-4);
}
