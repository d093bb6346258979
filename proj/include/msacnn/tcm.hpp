#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "msacnn/csv.hpp"
#include "msacnn/errors.hpp"
#include "msacnn/rng.hpp"
#include "msacnn/tensor.hpp"

namespace msacnn {

struct TcmConfig {
    int d_in = 32;        // token width entering the module
    int d_emb = 16;       // embedding dimension
    int n_heads = 2;
    int n_layers = 1;
    double dropout_rate = 0.1;

    int d_k() const { return d_emb / n_heads; }
    int ff_hidden() const { return 2 * d_emb; }

    void validate() const {
        if (d_in < 1 || d_emb < 1 || n_heads < 1 || n_layers < 0)
            throw ConfigError("tcm: dimensions must be positive");
        if (d_emb % n_heads != 0)
            throw ConfigError("tcm: embedding dimension must be divisible by the head count");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ConfigError("tcm: dropout rate must be in [0, 1)");
    }
};

// Sinusoidal positional encoding:
//   PE(t, i) = sin(t / 10000^(i/d_emb))       for even i
//   PE(t, i) = cos(t / 10000^((i-1)/d_emb))   for odd i
inline Tensor positional_encoding(int t_tok, int d_emb) {
    if (t_tok < 1 || d_emb < 1) throw ConfigError("positional_encoding: sizes must be >= 1");
    std::vector<double> pe(static_cast<std::size_t>(t_tok) * d_emb);
    for (int t = 0; t < t_tok; ++t) {
        for (int i = 0; i < d_emb; ++i) {
            const int even_i = i - (i % 2);
            const double denom = std::pow(10000.0, static_cast<double>(even_i) / d_emb);
            const double arg = static_cast<double>(t) / denom;
            pe[static_cast<std::size_t>(t) * d_emb + i] =
                (i % 2 == 0) ? std::sin(arg) : std::cos(arg);
        }
    }
    return Tensor::from({t_tok, d_emb}, std::move(pe));
}

namespace detail {

// The encoding is pure in (t_tok, d_emb); memoize per thread since it is
// re-added on every forward pass.
inline const Tensor& cached_positional_encoding(int t_tok, int d_emb) {
    thread_local std::vector<std::pair<std::pair<int, int>, Tensor>> cache;
    for (const auto& [key, pe] : cache)
        if (key.first == t_tok && key.second == d_emb) return pe;
    cache.emplace_back(std::make_pair(t_tok, d_emb), positional_encoding(t_tok, d_emb));
    return cache.back().second;
}

} // namespace detail

struct TcmLayerParams {
    Tensor wq, bq, wk, bk, wv, bv;  // fused projections, split into heads
    Tensor wo, bo;                  // square output map
    Tensor ln1_gain, ln1_shift;
    Tensor ff1_w, ff1_b, ff2_w, ff2_b;
    Tensor ln2_gain, ln2_shift;
};

struct TcmParams {
    Tensor embed_w, embed_b;
    std::vector<TcmLayerParams> layers;
};

// Requests capture of the attention weights of the first multi-head
// attention operation. head < 0 averages the weights over heads.
struct AttentionCapture {
    bool want = false;
    int head = 0;
    int t_tok = 0;
    std::vector<double> weights;  // T_tok x T_tok, row-major
};

// Scaled dot-product multi-head self-attention with residual connection and
// post-norm, Q/K/V realized as fused width-d_emb projections.
inline Tensor mha_forward(Tape& tape, const Tensor& tokens, const TcmLayerParams& p,
                          const TcmConfig& cfg, AttentionCapture* capture = nullptr) {
    cfg.validate();
    if (tokens.rank() != 2 || tokens.dim(1) != cfg.d_emb)
        throw ConfigError("mha_forward: expected tokens [T_tok x d_emb]");
    const int t_tok = tokens.dim(0);
    const int dk = cfg.d_k();
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

    Tensor q = tape.dense(tokens, p.wq, p.bq);
    Tensor k = tape.dense(tokens, p.wk, p.bk);
    Tensor v = tape.dense(tokens, p.wv, p.bv);

    if (capture && capture->want) {
        capture->t_tok = t_tok;
        capture->weights.assign(static_cast<std::size_t>(t_tok) * t_tok, 0.0);
    }

    std::vector<Tensor> head_ctx;
    head_ctx.reserve(static_cast<std::size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
        Tensor qh = tape.slice_cols(q, h * dk, dk);
        Tensor kh = tape.slice_cols(k, h * dk, dk);
        Tensor vh = tape.slice_cols(v, h * dk, dk);
        Tensor scores = tape.matmul(qh, tape.transpose(kh), inv_sqrt_dk);
        Tensor attn = tape.softmax_rows(scores);
        if (capture && capture->want && (capture->head == h || capture->head < 0)) {
            const double w = capture->head < 0 ? 1.0 / cfg.n_heads : 1.0;
            const auto& av = attn.value();
            for (std::size_t i = 0; i < av.size(); ++i) capture->weights[i] += w * av[i];
        }
        head_ctx.push_back(tape.matmul(attn, vh));
    }
    Tensor ctx = head_ctx.size() == 1 ? head_ctx[0] : tape.concat_cols(head_ctx);
    Tensor mapped = tape.dense(ctx, p.wo, p.bo);
    Tensor residual = tape.add(mapped, tokens);
    return tape.layer_norm(residual, p.ln1_gain, p.ln1_shift);
}

// Two dense layers (hidden width 2 * d_emb), each followed by ReLU and
// dropout, then residual add and layer norm.
inline Tensor ffn_forward(Tape& tape, const Tensor& tokens, const TcmLayerParams& p,
                          const TcmConfig& cfg, RngStream& dropout_rng, bool train) {
    Tensor h = tape.relu(tape.dense(tokens, p.ff1_w, p.ff1_b));
    h = tape.dropout(h, cfg.dropout_rate, dropout_rng, train);
    h = tape.relu(tape.dense(h, p.ff2_w, p.ff2_b));
    h = tape.dropout(h, cfg.dropout_rate, dropout_rng, train);
    Tensor residual = tape.add(h, tokens);
    return tape.layer_norm(residual, p.ln2_gain, p.ln2_shift);
}

// Embedding, positional encoding, then n_layers x (attention + feed-forward).
inline Tensor tcm_forward(Tape& tape, const Tensor& features, const TcmParams& params,
                          const TcmConfig& cfg, RngStream& dropout_rng, bool train,
                          AttentionCapture* capture = nullptr) {
    cfg.validate();
    if (features.rank() != 2 || features.dim(1) != cfg.d_in)
        throw ConfigError("tcm_forward: expected features [T_tok x d_in]");
    if (static_cast<int>(params.layers.size()) != cfg.n_layers)
        throw ConfigError("tcm_forward: layer parameter count mismatch");
    Tensor tok = tape.dense(features, params.embed_w, params.embed_b);
    tok = tape.add(tok, detail::cached_positional_encoding(tok.dim(0), cfg.d_emb));
    for (int l = 0; l < cfg.n_layers; ++l) {
        // the trace is defined on the first attention operation only
        AttentionCapture* cap = (l == 0) ? capture : nullptr;
        tok = mha_forward(tape, tok, params.layers[static_cast<std::size_t>(l)], cfg, cap);
        tok = ffn_forward(tape, tok, params.layers[static_cast<std::size_t>(l)], cfg,
                          dropout_rng, train);
    }
    return tok;
}

// Incoming attention (column mean of A_h), its argmax (first index on ties),
// and the outgoing attention row at that point.
struct AttentionTrace {
    int head_index = 0;  // -1 when averaged over heads
    int t_tok = 0;
    std::vector<double> weights;   // T_tok x T_tok
    std::vector<double> incoming;  // mean over the first axis
    std::vector<double> outgoing;  // row of A_h at argmax_incoming
    int argmax_incoming = 0;
};

inline AttentionTrace trace_from_weights(const AttentionCapture& capture, int head_index) {
    const int n = capture.t_tok;
    if (n <= 0 || capture.weights.size() != static_cast<std::size_t>(n) * n)
        throw UsageError("trace_from_weights: no captured attention weights");
    AttentionTrace tr;
    tr.head_index = head_index;
    tr.t_tok = n;
    tr.weights = capture.weights;
    tr.incoming.assign(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            tr.incoming[static_cast<std::size_t>(j)] +=
                capture.weights[static_cast<std::size_t>(i) * n + j];
    for (auto& v : tr.incoming) v /= n;
    tr.argmax_incoming = 0;
    for (int j = 1; j < n; ++j)
        if (tr.incoming[static_cast<std::size_t>(j)] >
            tr.incoming[static_cast<std::size_t>(tr.argmax_incoming)])
            tr.argmax_incoming = j;
    tr.outgoing.assign(
        capture.weights.begin() + static_cast<std::size_t>(tr.argmax_incoming) * n,
        capture.weights.begin() + static_cast<std::size_t>(tr.argmax_incoming + 1) * n);
    return tr;
}

// CSV export: (token_index, time_seconds, incoming, outgoing) with
// time_seconds = token_index * p_tot / sample_rate_hz.
inline std::string attention_trace_csv(const AttentionTrace& trace, int p_tot,
                                       double sample_rate_hz) {
    CsvWriter csv({"token_index", "time_seconds", "incoming", "outgoing"});
    for (int j = 0; j < trace.t_tok; ++j) {
        csv.row({std::to_string(j),
                 format_double(j * p_tot / sample_rate_hz),
                 format_double(trace.incoming[static_cast<std::size_t>(j)]),
                 format_double(trace.outgoing[static_cast<std::size_t>(j)])});
    }
    return csv.str();
}

} // namespace msacnn
