#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "msacnn/tcm.hpp"

using namespace msacnn;

namespace {

Tensor random_tensor(std::vector<int> shape, RngStream& rng, bool rq = false) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-0.5, 0.5);
    return Tensor::from(std::move(shape), std::move(v), rq);
}

TcmLayerParams random_layer(int d, RngStream& rng) {
    TcmLayerParams p;
    p.wq = random_tensor({d, d}, rng); p.bq = random_tensor({d}, rng);
    p.wk = random_tensor({d, d}, rng); p.bk = random_tensor({d}, rng);
    p.wv = random_tensor({d, d}, rng); p.bv = random_tensor({d}, rng);
    p.wo = random_tensor({d, d}, rng); p.bo = random_tensor({d}, rng);
    p.ln1_gain = Tensor::from({d}, std::vector<double>(d, 1.0));
    p.ln1_shift = Tensor::zeros({d});
    p.ff1_w = random_tensor({d, 2 * d}, rng);
    p.ff1_b = random_tensor({2 * d}, rng);
    p.ff2_w = random_tensor({2 * d, d}, rng);
    p.ff2_b = random_tensor({d}, rng);
    p.ln2_gain = Tensor::from({d}, std::vector<double>(d, 1.0));
    p.ln2_shift = Tensor::zeros({d});
    return p;
}

TcmParams random_tcm(const TcmConfig& cfg, RngStream& rng) {
    TcmParams p;
    p.embed_w = random_tensor({cfg.d_in, cfg.d_emb}, rng);
    p.embed_b = random_tensor({cfg.d_emb}, rng);
    for (int l = 0; l < cfg.n_layers; ++l) p.layers.push_back(random_layer(cfg.d_emb, rng));
    return p;
}

} // namespace

TEST_CASE("positional encoding goldens", "[tcm]") {
    Tensor pe = positional_encoding(12, 8);
    for (int i = 0; i < 8; ++i) {
        const double v = pe.value()[static_cast<std::size_t>(i)];
        if (i % 2 == 0) CHECK(v == 0.0);   // sin(0)
        else CHECK(v == 1.0);              // cos(0)
    }
    for (double v : pe.value()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    // spot-check the stated formula at (t, i) = (3, 4) and (3, 5)
    const double denom = std::pow(10000.0, 4.0 / 8.0);
    CHECK(pe.value()[3 * 8 + 4] == Catch::Approx(std::sin(3.0 / denom)));
    CHECK(pe.value()[3 * 8 + 5] == Catch::Approx(std::cos(3.0 / denom)));
}

TEST_CASE("tcm config invariants", "[tcm]") {
    TcmConfig cfg;
    cfg.d_in = 32; cfg.d_emb = 16; cfg.n_heads = 2; cfg.n_layers = 1;
    cfg.validate();
    CHECK(cfg.d_k() == 8);
    CHECK(cfg.ff_hidden() == 32);
    cfg.n_heads = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("identical tokens yield uniform attention rows", "[tcm]") {
    TcmConfig cfg;
    cfg.d_in = 4; cfg.d_emb = 4; cfg.n_heads = 2; cfg.n_layers = 1;
    RngStream rng(3);
    TcmLayerParams p = random_layer(4, rng);
    std::vector<double> tok(6 * 4);
    for (int t = 0; t < 6; ++t)
        for (int i = 0; i < 4; ++i) tok[static_cast<std::size_t>(t) * 4 + i] = 0.3 * i - 0.1;
    Tensor tokens = Tensor::from({6, 4}, std::move(tok));

    AttentionCapture cap;
    cap.want = true;
    cap.head = 0;
    Tape tape;
    mha_forward(tape, tokens, p, cfg, &cap);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
            CHECK(cap.weights[static_cast<std::size_t>(i) * 6 + j] ==
                  Catch::Approx(1.0 / 6.0).epsilon(1e-9));
}

TEST_CASE("single token attends only to itself", "[tcm]") {
    TcmConfig cfg;
    cfg.d_in = 4; cfg.d_emb = 4; cfg.n_heads = 1; cfg.n_layers = 1;
    RngStream rng(9);
    TcmLayerParams p = random_layer(4, rng);
    Tensor tokens = random_tensor({1, 4}, rng);

    AttentionCapture cap;
    cap.want = true;
    Tape tape;
    Tensor out = mha_forward(tape, tokens, p, cfg, &cap);
    REQUIRE(cap.weights.size() == 1);
    CHECK(cap.weights[0] == Catch::Approx(1.0));

    // output = layer_norm(tokens + W^O (V) + biases) for the single token
    Tape oracle;
    Tensor v = oracle.dense(tokens, p.wv, p.bv);
    Tensor mapped = oracle.dense(v, p.wo, p.bo);
    Tensor expect = oracle.layer_norm(oracle.add(mapped, tokens), p.ln1_gain, p.ln1_shift);
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(out.value()[i] == Catch::Approx(expect.value()[i]).margin(1e-12));
}

TEST_CASE("mha matches a primitive-composition oracle", "[tcm]") {
    TcmConfig cfg;
    cfg.d_in = 4; cfg.d_emb = 4; cfg.n_heads = 1; cfg.n_layers = 1;
    RngStream rng(11);
    TcmLayerParams p = random_layer(4, rng);
    Tensor tokens = random_tensor({5, 4}, rng);

    Tape tape;
    Tensor got = mha_forward(tape, tokens, p, cfg);

    Tape o;
    Tensor q = o.dense(tokens, p.wq, p.bq);
    Tensor k = o.dense(tokens, p.wk, p.bk);
    Tensor v = o.dense(tokens, p.wv, p.bv);
    Tensor attn = o.softmax_rows(o.scale(o.matmul(q, o.transpose(k)), 0.5));  // 1/sqrt(4)
    Tensor ctx = o.matmul(attn, v);
    Tensor expect =
        o.layer_norm(o.add(o.dense(ctx, p.wo, p.bo), tokens), p.ln1_gain, p.ln1_shift);

    REQUIRE(got.shape() == expect.shape());
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(std::abs(got.value()[i] - expect.value()[i]) < 1e-10);
}

TEST_CASE("ffn goldens and oracle", "[tcm]") {
    TcmConfig cfg;
    cfg.d_in = 4; cfg.d_emb = 4; cfg.n_heads = 1; cfg.n_layers = 1;
    cfg.dropout_rate = 0.1;
    RngStream rng(13);

    SECTION("zero weights and biases reduce to layer_norm of the input") {
        TcmLayerParams p = random_layer(4, rng);
        for (Tensor* t : {&p.ff1_w, &p.ff1_b, &p.ff2_w, &p.ff2_b})
            std::fill(t->value().begin(), t->value().end(), 0.0);
        Tensor tokens = random_tensor({5, 4}, rng);
        RngStream drop(1);
        Tape tape;
        Tensor got = ffn_forward(tape, tokens, p, cfg, drop, false);
        Tape o;
        Tensor expect = o.layer_norm(tokens, p.ln2_gain, p.ln2_shift);
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(got.value()[i] == Catch::Approx(expect.value()[i]).margin(1e-12));
    }
    SECTION("eval mode is deterministic despite a nonzero dropout rate") {
        TcmLayerParams p = random_layer(4, rng);
        Tensor tokens = random_tensor({5, 4}, rng);
        RngStream d1(1), d2(2);
        Tape tape;
        Tensor a = ffn_forward(tape, tokens, p, cfg, d1, false);
        Tensor b = ffn_forward(tape, tokens, p, cfg, d2, false);
        CHECK(a.value() == b.value());
    }
    SECTION("matches the primitive composition") {
        TcmLayerParams p = random_layer(4, rng);
        Tensor tokens = random_tensor({5, 4}, rng);
        RngStream drop(1);
        Tape tape;
        Tensor got = ffn_forward(tape, tokens, p, cfg, drop, false);
        Tape o;
        Tensor h = o.relu(o.dense(tokens, p.ff1_w, p.ff1_b));
        h = o.relu(o.dense(h, p.ff2_w, p.ff2_b));
        Tensor expect = o.layer_norm(o.add(h, tokens), p.ln2_gain, p.ln2_shift);
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(std::abs(got.value()[i] - expect.value()[i]) < 1e-10);
    }
}

TEST_CASE("tcm_forward dimension bookkeeping", "[tcm]") {
    TcmConfig cfg;
    cfg.d_in = 32; cfg.d_emb = 16; cfg.n_heads = 2; cfg.n_layers = 1;
    RngStream rng(17);
    TcmParams p = random_tcm(cfg, rng);
    Tensor features = random_tensor({375, 32}, rng);
    RngStream drop(1);
    Tape tape;
    tape.set_recording(false);
    Tensor out = tcm_forward(tape, features, p, cfg, drop, false);
    CHECK(out.dim(0) == 375);
    CHECK(out.dim(1) == 16);  // the TCM halves the feature dimension
}

TEST_CASE("degenerate zero-layer tcm is embedding plus positional encoding", "[tcm]") {
    TcmConfig cfg;
    cfg.d_in = 6; cfg.d_emb = 4; cfg.n_heads = 2; cfg.n_layers = 0;
    RngStream rng(19);
    TcmParams p = random_tcm(cfg, rng);
    Tensor features = random_tensor({7, 6}, rng);
    RngStream drop(1);
    Tape tape;
    Tensor got = tcm_forward(tape, features, p, cfg, drop, false);
    Tape o;
    Tensor expect = o.add(o.dense(features, p.embed_w, p.embed_b), positional_encoding(7, 4));
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got.value()[i] == Catch::Approx(expect.value()[i]).margin(1e-12));
}

TEST_CASE("attention rows sum to one at the traced layer", "[tcm]") {
    TcmConfig cfg;
    cfg.d_in = 8; cfg.d_emb = 8; cfg.n_heads = 2; cfg.n_layers = 2;
    RngStream rng(23);
    TcmParams p = random_tcm(cfg, rng);
    Tensor features = random_tensor({20, 8}, rng, false);
    RngStream drop(1);
    AttentionCapture cap;
    cap.want = true;
    cap.head = 1;
    Tape tape;
    tcm_forward(tape, features, p, cfg, drop, false, &cap);
    REQUIRE(cap.t_tok == 20);
    for (int i = 0; i < 20; ++i) {
        double s = 0.0;
        for (int j = 0; j < 20; ++j) s += cap.weights[static_cast<std::size_t>(i) * 20 + j];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("zero projection weights reduce the tcm to stacked layer norms", "[tcm]") {
    TcmConfig cfg;
    cfg.d_in = 6; cfg.d_emb = 4; cfg.n_heads = 2; cfg.n_layers = 1;
    RngStream rng(29);
    TcmParams p = random_tcm(cfg, rng);
    for (Tensor* t : {&p.layers[0].wq, &p.layers[0].wk, &p.layers[0].wv, &p.layers[0].wo,
                      &p.layers[0].ff1_w, &p.layers[0].ff2_w})
        std::fill(t->value().begin(), t->value().end(), 0.0);

    Tensor features = random_tensor({9, 6}, rng);
    RngStream drop(1);
    Tape tape;
    Tensor got = tcm_forward(tape, features, p, cfg, drop, false);

    // expected fixed point: embedding + PE, then LN(x + bo), then
    // LN(x + relu-chain of ffn biases)
    Tape o;
    Tensor x = o.add(o.dense(features, p.embed_w, p.embed_b), positional_encoding(9, 4));
    Tensor bo_rows = o.dense(x, p.layers[0].wo, p.layers[0].bo);  // wo is zero: rows = bo
    Tensor after_attn =
        o.layer_norm(o.add(bo_rows, x), p.layers[0].ln1_gain, p.layers[0].ln1_shift);
    Tensor h = o.relu(o.dense(after_attn, p.layers[0].ff1_w, p.layers[0].ff1_b));
    h = o.relu(o.dense(h, p.layers[0].ff2_w, p.layers[0].ff2_b));
    Tensor expect = o.layer_norm(o.add(h, after_attn), p.layers[0].ln2_gain,
                                 p.layers[0].ln2_shift);
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got.value()[i] == Catch::Approx(expect.value()[i]).margin(1e-10));
}

TEST_CASE("trace_from_weights computes incoming and outgoing attention", "[tcm]") {
    SECTION("uniform weights give uniform incoming and outgoing") {
        AttentionCapture cap;
        cap.want = true;
        cap.t_tok = 4;
        cap.weights.assign(16, 0.25);
        AttentionTrace tr = trace_from_weights(cap, 0);
        for (double v : tr.incoming) CHECK(v == Catch::Approx(0.25));
        for (double v : tr.outgoing) CHECK(v == Catch::Approx(0.25));
        CHECK(tr.argmax_incoming == 0);  // first index on ties
    }
    SECTION("incoming is the column mean and sums to one") {
        AttentionCapture cap;
        cap.want = true;
        cap.t_tok = 3;
        cap.weights = {0.2, 0.3, 0.5,
                       0.1, 0.8, 0.1,
                       0.4, 0.4, 0.2};
        AttentionTrace tr = trace_from_weights(cap, 0);
        CHECK(tr.incoming[0] == Catch::Approx((0.2 + 0.1 + 0.4) / 3.0));
        CHECK(tr.incoming[1] == Catch::Approx((0.3 + 0.8 + 0.4) / 3.0));
        CHECK(tr.incoming[2] == Catch::Approx((0.5 + 0.1 + 0.2) / 3.0));
        CHECK(tr.incoming[0] + tr.incoming[1] + tr.incoming[2] == Catch::Approx(1.0));
        CHECK(tr.argmax_incoming == 1);
        CHECK(tr.outgoing == std::vector<double>{0.1, 0.8, 0.1});
        double outgoing_sum = 0.0;
        for (double v : tr.outgoing) outgoing_sum += v;
        CHECK(outgoing_sum == Catch::Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("attention trace CSV layout", "[tcm]") {
    AttentionCapture cap;
    cap.want = true;
    cap.t_tok = 2;
    cap.weights = {0.75, 0.25, 0.5, 0.5};
    AttentionTrace tr = trace_from_weights(cap, 0);
    const std::string csv = attention_trace_csv(tr, 8, 100.0);
    CHECK(csv.rfind("token_index,time_seconds,incoming,outgoing\n", 0) == 0);
    CHECK(csv.find("\n0,0,") != std::string::npos);
    CHECK(csv.find("\n1,0.08,") != std::string::npos);  // 1 * 8 / 100
}

TEST_CASE("repeated forwards are independent and deterministic in eval mode", "[tcm]") {
    TcmConfig cfg;
    cfg.d_in = 8; cfg.d_emb = 8; cfg.n_heads = 2; cfg.n_layers = 1;
    RngStream rng(31);
    TcmParams p = random_tcm(cfg, rng);
    Tensor a = random_tensor({10, 8}, rng);
    Tensor b = random_tensor({10, 8}, rng);
    RngStream drop(1);
    Tape tape;
    tape.set_recording(false);
    auto a1 = tcm_forward(tape, a, p, cfg, drop, false).value();
    auto b1 = tcm_forward(tape, b, p, cfg, drop, false).value();
    auto b2 = tcm_forward(tape, b, p, cfg, drop, false).value();
    auto a2 = tcm_forward(tape, a, p, cfg, drop, false).value();
    CHECK(a1 == a2);
    CHECK(b1 == b2);
}

TEST_CASE("tcm gradients check out", "[tcm][grad]") {
    TcmConfig cfg;
    cfg.d_in = 6; cfg.d_emb = 4; cfg.n_heads = 2; cfg.n_layers = 1;
    RngStream rng(37);
    TcmParams p = random_tcm(cfg, rng);
    Tensor point = random_tensor({7, 6}, rng);
    const double err = grad_check(
        [&](Tape& t, const Tensor& x) {
            RngStream drop(5);
            Tensor y = tcm_forward(t, x, p, cfg, drop, false);
            return t.sum(t.mul(y, y));
        },
        point);
    CHECK(err < 1e-4);
}
