#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "msacnn/errors.hpp"
#include "msacnn/mathutil.hpp"
#include "msacnn/rng.hpp"

namespace msacnn {

enum class PoolMode { average, max };

namespace detail {

inline std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on first accumulation
    bool needs_grad = false;
    std::uint64_t id = next_node_id();

    std::size_t size() const { return value.size(); }

    double* grad_data() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad.data();
    }
};

inline std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw UsageError("tensor dimensions must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

} // namespace detail

// Dense real-valued array participating in reverse-mode differentiation.
// Copies alias the same storage; Tape operations produce new tensors.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(std::vector<int> shape, std::vector<double> data,
                       bool requires_grad = false) {
        if (detail::shape_numel(shape) != data.size())
            throw UsageError("tensor data length does not match shape");
        Tensor t;
        t.node_ = std::make_shared<detail::Node>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(data);
        t.node_->needs_grad = requires_grad;
        return t;
    }

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        std::size_t n = detail::shape_numel(shape);
        return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(std::vector<int> shape, double v, bool requires_grad = false) {
        std::size_t n = detail::shape_numel(shape);
        return from(std::move(shape), std::vector<double>(n, v), requires_grad);
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const& { return check()->shape; }
    std::vector<int> shape() && { return check()->shape; }
    int rank() const { return static_cast<int>(check()->shape.size()); }
    int dim(int i) const { return check()->shape.at(static_cast<std::size_t>(i)); }
    std::size_t size() const { return check()->value.size(); }

    // rvalue overloads copy, so accessing a temporary's data is safe
    const std::vector<double>& value() const& { return check()->value; }
    std::vector<double>& value() & { return check()->value; }
    std::vector<double> value() && { return check()->value; }

    double item() const {
        if (size() != 1) throw UsageError("item() requires a scalar tensor");
        return check()->value[0];
    }

    bool requires_grad() const { return check()->needs_grad; }
    bool has_grad() const { return defined() && node_->grad.size() == node_->value.size(); }

    const std::vector<double>& grad() const& {
        if (!has_grad()) throw UsageError("tensor has no gradient");
        return node_->grad;
    }
    std::vector<double> grad() && {
        if (!has_grad()) throw UsageError("tensor has no gradient");
        return node_->grad;
    }

    void zero_grad() {
        auto* n = check();
        n->grad.assign(n->value.size(), 0.0);
    }

    std::uint64_t id() const { return check()->id; }

    std::shared_ptr<detail::Node> node() const { return node_; }

private:
    detail::Node* check() const {
        if (!node_) throw UsageError("use of undefined tensor");
        return node_.get();
    }

    std::shared_ptr<detail::Node> node_;
};

// Records each differentiable operation in execution order; replaying the
// records backwards propagates gradients from a scalar loss to every
// requires_grad leaf. Inputs always precede the operations that use them.
class Tape {
public:
    struct OpRecord {
        const char* name;
        std::vector<std::uint64_t> inputs;
        std::uint64_t output;
    };

    void set_recording(bool on) { recording_ = on; }
    bool recording() const { return recording_; }
    std::size_t num_ops() const { return entries_.size(); }

    // metadata (op names, operand ids) is for inspection and costs extra
    // allocations, so it is collected only on request
    void set_keep_metadata(bool on) { keep_metadata_ = on; }
    const std::vector<OpRecord>& records() const { return records_; }

    // --- convolution / pooling -------------------------------------------

    // "Same"-padded 1-D cross-correlation: out[c,t] = b[c] +
    // sum_{i,j} w[c,i,j] * x[i, t+j-(k-1)/2], zero padding outside [0,T).
    Tensor conv1d_same(const Tensor& input, const Tensor& weights, const Tensor& bias) {
        if (input.rank() != 2 || weights.rank() != 3 || bias.rank() != 1)
            throw ConfigError("conv1d_same: expected input [C_in x T], weights [C_out x C_in x k], bias [C_out]");
        const int c_in = input.dim(0), t_len = input.dim(1);
        const int c_out = weights.dim(0), k = weights.dim(2);
        if (weights.dim(1) != c_in)
            throw ConfigError("conv1d_same: weight C_in mismatch");
        if (bias.dim(0) != c_out)
            throw ConfigError("conv1d_same: bias length mismatch");
        if (k % 2 == 0) throw ConfigError("conv1d_same: kernel size must be odd");

        Tensor out = make({c_out, t_len}, needs(input, weights, bias));
        const int half = (k - 1) / 2;
        const double* x = input.value().data();
        const double* w = weights.value().data();
        const double* b = bias.value().data();
        double* y = out.value().data();
        for (int co = 0; co < c_out; ++co) {
            double* __restrict yr = y + static_cast<std::size_t>(co) * t_len;
            std::fill(yr, yr + t_len, b[co]);
            for (int ci = 0; ci < c_in; ++ci) {
                const double* __restrict xr = x + static_cast<std::size_t>(ci) * t_len;
                const double* wr = w + (static_cast<std::size_t>(co) * c_in + ci) * k;
                for (int j = 0; j < k; ++j) {
                    const int off = j - half;
                    const int t0 = std::max(0, -off);
                    const int t1 = std::min(t_len, t_len - off);
                    const double wv = wr[j];
                    for (int t = t0; t < t1; ++t) yr[t] += wv * xr[t + off];
                }
            }
        }

        record("conv1d_same", {input, weights, bias}, out, [=]() {
            auto xi = input.node();
            auto wi = weights.node();
            auto bi = bias.node();
            auto yo = out.node();
            if (yo->grad.empty()) return;
            const double* gy = yo->grad.data();
            double* gx = xi->needs_grad ? xi->grad_data() : nullptr;
            double* gw = wi->needs_grad ? wi->grad_data() : nullptr;
            double* gb = bi->needs_grad ? bi->grad_data() : nullptr;
            const double* xv = xi->value.data();
            const double* wv = wi->value.data();
            for (int co = 0; co < c_out; ++co) {
                const double* gyr = gy + static_cast<std::size_t>(co) * t_len;
                if (gb) {
                    double s = 0.0;
                    for (int t = 0; t < t_len; ++t) s += gyr[t];
                    gb[co] += s;
                }
                for (int ci = 0; ci < c_in; ++ci) {
                    const double* xr = xv + static_cast<std::size_t>(ci) * t_len;
                    const std::size_t wbase = (static_cast<std::size_t>(co) * c_in + ci) * k;
                    for (int j = 0; j < k; ++j) {
                        const int off = j - half;
                        const int t0 = std::max(0, -off);
                        const int t1 = std::min(t_len, t_len - off);
                        if (gw && t1 > t0)
                            gw[wbase + j] += detail::dot(gyr + t0, xr + t0 + off, t1 - t0);
                        if (gx && t1 > t0)
                            detail::axpy(gx + static_cast<std::size_t>(ci) * t_len + t0 + off,
                                         wv[wbase + j], gyr + t0, t1 - t0);
                    }
                }
            }
        });
        return out;
    }

    // Non-overlapping pooling along time with stride == window size; a
    // trailing remainder shorter than the window is dropped. Max pooling
    // records the per-window argmax (first index on ties) for backward.
    Tensor pool(const Tensor& input, int size, PoolMode mode) {
        if (input.rank() != 2) throw ConfigError("pool: expected input [C x T]");
        if (size < 1) throw ConfigError("pool: window size must be >= 1");
        const int c_n = input.dim(0), t_len = input.dim(1);
        const int t_out = t_len / size;
        if (t_out < 1) throw ConfigError("pool: window longer than signal");

        Tensor out = make({c_n, t_out}, needs(input));
        auto argmax = std::make_shared<std::vector<int>>();
        if (mode == PoolMode::max) argmax->resize(static_cast<std::size_t>(c_n) * t_out);
        const double* x = input.value().data();
        double* y = out.value().data();
        const double inv = 1.0 / size;
        for (int c = 0; c < c_n; ++c) {
            const double* xr = x + static_cast<std::size_t>(c) * t_len;
            double* yr = y + static_cast<std::size_t>(c) * t_out;
            for (int w = 0; w < t_out; ++w) {
                const int base = w * size;
                if (mode == PoolMode::average) {
                    double s = 0.0;
                    for (int u = 0; u < size; ++u) s += xr[base + u];
                    yr[w] = s * inv;
                } else {
                    int best = 0;
                    double bv = xr[base];
                    for (int u = 1; u < size; ++u)
                        if (xr[base + u] > bv) { bv = xr[base + u]; best = u; }
                    yr[w] = bv;
                    (*argmax)[static_cast<std::size_t>(c) * t_out + w] = base + best;
                }
            }
        }

        record("pool", {input}, out, [=]() {
            auto xi = input.node();
            auto yo = out.node();
            if (yo->grad.empty() || !xi->needs_grad) return;
            const double* gy = yo->grad.data();
            double* gx = xi->grad_data();
            for (int c = 0; c < c_n; ++c) {
                const double* gyr = gy + static_cast<std::size_t>(c) * t_out;
                double* gxr = gx + static_cast<std::size_t>(c) * t_len;
                for (int w = 0; w < t_out; ++w) {
                    if (mode == PoolMode::average) {
                        const double g = gyr[w] * inv;
                        const int base = w * size;
                        for (int u = 0; u < size; ++u) gxr[base + u] += g;
                    } else {
                        gxr[(*argmax)[static_cast<std::size_t>(c) * t_out + w]] += gyr[w];
                    }
                }
            }
        });
        return out;
    }

    // --- dense / normalization / activations ------------------------------

    // out = input . weights + bias, broadcast over leading axes.
    Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
        if (weights.rank() != 2 || bias.rank() != 1)
            throw ConfigError("dense: expected weights [d_in x d_out], bias [d_out]");
        const int d_in = weights.dim(0), d_out = weights.dim(1);
        if (bias.dim(0) != d_out) throw ConfigError("dense: bias length mismatch");
        if (input.rank() < 1 || input.shape().back() != d_in)
            throw ConfigError("dense: input last axis must equal d_in");
        const int rows = static_cast<int>(input.size()) / d_in;

        std::vector<int> out_shape = input.shape();
        out_shape.back() = d_out;
        Tensor out = make(out_shape, needs(input, weights, bias));
        const double* x = input.value().data();
        const double* w = weights.value().data();
        const double* b = bias.value().data();
        double* y = out.value().data();
        for (int r = 0; r < rows; ++r) {
            double* __restrict yr = y + static_cast<std::size_t>(r) * d_out;
            std::copy(b, b + d_out, yr);
            const double* xr = x + static_cast<std::size_t>(r) * d_in;
            for (int d = 0; d < d_in; ++d) {
                const double xv = xr[d];
                const double* __restrict wr = w + static_cast<std::size_t>(d) * d_out;
                for (int o = 0; o < d_out; ++o) yr[o] += xv * wr[o];
            }
        }

        record("dense", {input, weights, bias}, out, [=]() {
            auto xi = input.node();
            auto wi = weights.node();
            auto bi = bias.node();
            auto yo = out.node();
            if (yo->grad.empty()) return;
            const double* gy = yo->grad.data();
            const double* xv = xi->value.data();
            const double* wv = wi->value.data();
            double* gx = xi->needs_grad ? xi->grad_data() : nullptr;
            double* gw = wi->needs_grad ? wi->grad_data() : nullptr;
            double* gb = bi->needs_grad ? bi->grad_data() : nullptr;
            for (int r = 0; r < rows; ++r) {
                const double* gyr = gy + static_cast<std::size_t>(r) * d_out;
                const double* xr = xv + static_cast<std::size_t>(r) * d_in;
                if (gb)
                    for (int o = 0; o < d_out; ++o) gb[o] += gyr[o];
                for (int d = 0; d < d_in; ++d) {
                    const double* wr = wv + static_cast<std::size_t>(d) * d_out;
                    if (gx) gx[static_cast<std::size_t>(r) * d_in + d] += detail::dot(gyr, wr, d_out);
                    if (gw)
                        detail::axpy(gw + static_cast<std::size_t>(d) * d_out, xr[d], gyr, d_out);
                }
            }
        });
        return out;
    }

    // Row-wise softmax with max subtraction.
    Tensor softmax_rows(const Tensor& input) {
        if (input.rank() != 2) throw ConfigError("softmax_rows: expected [R x C]");
        const int rows = input.dim(0), cols = input.dim(1);
        Tensor out = make(input.shape(), needs(input));
        const double* x = input.value().data();
        double* y = out.value().data();
        for (int r = 0; r < rows; ++r) {
            const double* xr = x + static_cast<std::size_t>(r) * cols;
            double* yr = y + static_cast<std::size_t>(r) * cols;
            const double m = detail::vmax(xr, cols);
            for (int c = 0; c < cols; ++c) yr[c] = detail::fast_exp(xr[c] - m);
            const double inv = 1.0 / detail::vsum(yr, cols);
            for (int c = 0; c < cols; ++c) yr[c] *= inv;
        }

        record("softmax_rows", {input}, out, [=]() {
            auto xi = input.node();
            auto yo = out.node();
            if (yo->grad.empty() || !xi->needs_grad) return;
            const double* gy = yo->grad.data();
            const double* yv = yo->value.data();
            double* gx = xi->grad_data();
            for (int r = 0; r < rows; ++r) {
                const double* gyr = gy + static_cast<std::size_t>(r) * cols;
                const double* yr = yv + static_cast<std::size_t>(r) * cols;
                double dot = 0.0;
                for (int c = 0; c < cols; ++c) dot += gyr[c] * yr[c];
                double* gxr = gx + static_cast<std::size_t>(r) * cols;
                for (int c = 0; c < cols; ++c) gxr[c] += yr[c] * (gyr[c] - dot);
            }
        });
        return out;
    }

    // Normalizes each trailing-axis slice to zero mean / unit variance
    // (population variance), then applies the learnt gain and shift.
    Tensor layer_norm(const Tensor& input, const Tensor& gain, const Tensor& shift,
                      double epsilon = 1e-5) {
        if (gain.rank() != 1 || shift.rank() != 1)
            throw ConfigError("layer_norm: gain/shift must be rank-1");
        const int d = gain.dim(0);
        if (shift.dim(0) != d) throw ConfigError("layer_norm: gain/shift length mismatch");
        if (input.rank() < 1 || input.shape().back() != d)
            throw ConfigError("layer_norm: input last axis must equal normalized width");
        if (epsilon < 0) throw ConfigError("layer_norm: epsilon must be >= 0");
        const int slices = static_cast<int>(input.size()) / d;

        Tensor out = make(input.shape(), needs(input, gain, shift));
        auto xhat = std::make_shared<std::vector<double>>(input.size());
        auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<std::size_t>(slices));
        const double* x = input.value().data();
        const double* g = gain.value().data();
        const double* s = shift.value().data();
        double* y = out.value().data();
        for (int r = 0; r < slices; ++r) {
            const double* xr = x + static_cast<std::size_t>(r) * d;
            double mean = 0.0;
            for (int i = 0; i < d; ++i) mean += xr[i];
            mean /= d;
            double var = 0.0;
            for (int i = 0; i < d; ++i) {
                const double c = xr[i] - mean;
                var += c * c;
            }
            var /= d;
            const double inv = 1.0 / std::sqrt(var + epsilon);
            (*inv_sigma)[static_cast<std::size_t>(r)] = inv;
            double* hr = xhat->data() + static_cast<std::size_t>(r) * d;
            double* yr = y + static_cast<std::size_t>(r) * d;
            for (int i = 0; i < d; ++i) {
                hr[i] = (xr[i] - mean) * inv;
                yr[i] = hr[i] * g[i] + s[i];
            }
        }

        record("layer_norm", {input, gain, shift}, out, [=]() {
            auto xi = input.node();
            auto gi = gain.node();
            auto si = shift.node();
            auto yo = out.node();
            if (yo->grad.empty()) return;
            const double* gy = yo->grad.data();
            const double* gv = gi->value.data();
            double* gx = xi->needs_grad ? xi->grad_data() : nullptr;
            double* gg = gi->needs_grad ? gi->grad_data() : nullptr;
            double* gs = si->needs_grad ? si->grad_data() : nullptr;
            std::vector<double> dxhat(static_cast<std::size_t>(d));
            for (int r = 0; r < slices; ++r) {
                const double* gyr = gy + static_cast<std::size_t>(r) * d;
                const double* hr = xhat->data() + static_cast<std::size_t>(r) * d;
                if (gg)
                    for (int i = 0; i < d; ++i) gg[i] += gyr[i] * hr[i];
                if (gs)
                    for (int i = 0; i < d; ++i) gs[i] += gyr[i];
                if (gx) {
                    double c1 = 0.0, c2 = 0.0;
                    for (int i = 0; i < d; ++i) {
                        dxhat[static_cast<std::size_t>(i)] = gyr[i] * gv[i];
                        c1 += dxhat[static_cast<std::size_t>(i)];
                        c2 += dxhat[static_cast<std::size_t>(i)] * hr[i];
                    }
                    c1 /= d;
                    c2 /= d;
                    const double inv = (*inv_sigma)[static_cast<std::size_t>(r)];
                    double* gxr = gx + static_cast<std::size_t>(r) * d;
                    for (int i = 0; i < d; ++i)
                        gxr[i] += inv * (dxhat[static_cast<std::size_t>(i)] - c1 - hr[i] * c2);
                }
            }
        });
        return out;
    }

    Tensor relu(const Tensor& input) {
        Tensor out = make(input.shape(), needs(input));
        const double* x = input.value().data();
        double* y = out.value().data();
        const std::size_t n = input.size();
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;

        record("relu", {input}, out, [=]() {
            auto xi = input.node();
            auto yo = out.node();
            if (yo->grad.empty() || !xi->needs_grad) return;
            const double* gy = yo->grad.data();
            const double* xv = xi->value.data();
            double* gx = xi->grad_data();
            for (std::size_t i = 0; i < n; ++i)
                if (xv[i] > 0.0) gx[i] += gy[i];
        });
        return out;
    }

    // Inverted dropout: in train mode zeroes each element with probability
    // `rate` and scales survivors by 1/(1-rate); identity in eval mode.
    Tensor dropout(const Tensor& input, double rate, RngStream& rng, bool train) {
        if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0, 1)");
        if (!train || rate == 0.0) return input;
        const std::size_t n = input.size();
        auto factor = std::make_shared<std::vector<double>>(n);
        const double keep_scale = 1.0 / (1.0 - rate);
        for (std::size_t i = 0; i < n; ++i)
            (*factor)[i] = rng.uniform() < rate ? 0.0 : keep_scale;

        Tensor out = make(input.shape(), needs(input));
        const double* x = input.value().data();
        double* y = out.value().data();
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * (*factor)[i];

        record("dropout", {input}, out, [=]() {
            auto xi = input.node();
            auto yo = out.node();
            if (yo->grad.empty() || !xi->needs_grad) return;
            const double* gy = yo->grad.data();
            double* gx = xi->grad_data();
            for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * (*factor)[i];
        });
        return out;
    }

    // Mean over the batch of -log softmax(logits)[label], evaluated with a
    // fused log-sum-exp.
    Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
        if (logits.rank() != 2) throw ConfigError("cross_entropy: expected logits [B x K]");
        const int batch = logits.dim(0), k_classes = logits.dim(1);
        if (static_cast<int>(labels.size()) != batch)
            throw UsageError("cross_entropy: label count does not match batch");
        for (int i = 0; i < batch; ++i)
            if (labels[i] < 0 || labels[i] >= k_classes)
                throw DataError("cross_entropy: label " + std::to_string(labels[i]) +
                                " out of range [0, " + std::to_string(k_classes) + ")");

        auto probs = std::make_shared<std::vector<double>>(logits.size());
        const double* x = logits.value().data();
        double total = 0.0;
        for (int r = 0; r < batch; ++r) {
            const double* xr = x + static_cast<std::size_t>(r) * k_classes;
            double m = xr[0];
            for (int c = 1; c < k_classes; ++c) m = std::max(m, xr[c]);
            double s = 0.0;
            for (int c = 0; c < k_classes; ++c) s += detail::fast_exp(xr[c] - m);
            const double lse = m + std::log(s);
            total += lse - xr[labels[static_cast<std::size_t>(r)]];
            double* pr = probs->data() + static_cast<std::size_t>(r) * k_classes;
            for (int c = 0; c < k_classes; ++c) pr[c] = detail::fast_exp(xr[c] - lse);
        }
        Tensor out = make({1}, needs(logits));
        out.value()[0] = total / batch;

        auto labels_copy = std::make_shared<std::vector<int>>(labels);
        record("cross_entropy", {logits}, out, [=]() {
            auto xi = logits.node();
            auto yo = out.node();
            if (yo->grad.empty() || !xi->needs_grad) return;
            const double gl = yo->grad[0] / batch;
            double* gx = xi->grad_data();
            for (int r = 0; r < batch; ++r) {
                const double* pr = probs->data() + static_cast<std::size_t>(r) * k_classes;
                double* gxr = gx + static_cast<std::size_t>(r) * k_classes;
                for (int c = 0; c < k_classes; ++c) gxr[c] += gl * pr[c];
                gxr[(*labels_copy)[static_cast<std::size_t>(r)]] -= gl;
            }
        });
        return out;
    }

    // --- linear algebra and glue ------------------------------------------

    Tensor add(const Tensor& a, const Tensor& b) {
        if (a.shape() != b.shape()) throw ConfigError("add: shape mismatch");
        Tensor out = make(a.shape(), needs(a, b));
        const double* av = a.value().data();
        const double* bv = b.value().data();
        double* y = out.value().data();
        const std::size_t n = a.size();
        for (std::size_t i = 0; i < n; ++i) y[i] = av[i] + bv[i];

        record("add", {a, b}, out, [=]() {
            auto an = a.node(); auto bn = b.node(); auto yo = out.node();
            if (yo->grad.empty()) return;
            const double* gy = yo->grad.data();
            if (an->needs_grad) {
                double* g = an->grad_data();
                for (std::size_t i = 0; i < n; ++i) g[i] += gy[i];
            }
            if (bn->needs_grad) {
                double* g = bn->grad_data();
                for (std::size_t i = 0; i < n; ++i) g[i] += gy[i];
            }
        });
        return out;
    }

    Tensor mul(const Tensor& a, const Tensor& b) {
        if (a.shape() != b.shape()) throw ConfigError("mul: shape mismatch");
        Tensor out = make(a.shape(), needs(a, b));
        const double* av = a.value().data();
        const double* bv = b.value().data();
        double* y = out.value().data();
        const std::size_t n = a.size();
        for (std::size_t i = 0; i < n; ++i) y[i] = av[i] * bv[i];

        record("mul", {a, b}, out, [=]() {
            auto an = a.node(); auto bn = b.node(); auto yo = out.node();
            if (yo->grad.empty()) return;
            const double* gy = yo->grad.data();
            if (an->needs_grad) {
                double* g = an->grad_data();
                const double* other = bn->value.data();
                for (std::size_t i = 0; i < n; ++i) g[i] += gy[i] * other[i];
            }
            if (bn->needs_grad) {
                double* g = bn->grad_data();
                const double* other = an->value.data();
                for (std::size_t i = 0; i < n; ++i) g[i] += gy[i] * other[i];
            }
        });
        return out;
    }

    Tensor scale(const Tensor& a, double factor) {
        Tensor out = make(a.shape(), needs(a));
        const double* av = a.value().data();
        double* y = out.value().data();
        const std::size_t n = a.size();
        for (std::size_t i = 0; i < n; ++i) y[i] = av[i] * factor;

        record("scale", {a}, out, [=]() {
            auto an = a.node(); auto yo = out.node();
            if (yo->grad.empty() || !an->needs_grad) return;
            const double* gy = yo->grad.data();
            double* g = an->grad_data();
            for (std::size_t i = 0; i < n; ++i) g[i] += gy[i] * factor;
        });
        return out;
    }

    // out = alpha * (a . b); the scale factor is fused so attention scores
    // avoid a separate full-matrix pass
    Tensor matmul(const Tensor& a, const Tensor& b, double alpha = 1.0) {
        if (a.rank() != 2 || b.rank() != 2) throw ConfigError("matmul: expected 2-D operands");
        const int rows = a.dim(0), inner = a.dim(1), cols = b.dim(1);
        if (b.dim(0) != inner) throw ConfigError("matmul: inner dimension mismatch");
        Tensor out = make({rows, cols}, needs(a, b));
        const double* av = a.value().data();
        const double* bv = b.value().data();
        double* y = out.value().data();
        for (int i = 0; i < rows; ++i) {
            double* __restrict yr = y + static_cast<std::size_t>(i) * cols;
            const double* ar = av + static_cast<std::size_t>(i) * inner;
            for (int k = 0; k < inner; ++k) {
                const double x = alpha * ar[k];
                const double* __restrict br = bv + static_cast<std::size_t>(k) * cols;
                for (int j = 0; j < cols; ++j) yr[j] += x * br[j];
            }
        }

        record("matmul", {a, b}, out, [=]() {
            auto an = a.node(); auto bn = b.node(); auto yo = out.node();
            if (yo->grad.empty()) return;
            const double* gy = yo->grad.data();
            if (an->needs_grad) {
                double* ga = an->grad_data();
                const double* bvv = bn->value.data();
                for (int i = 0; i < rows; ++i) {
                    const double* gyr = gy + static_cast<std::size_t>(i) * cols;
                    double* gar = ga + static_cast<std::size_t>(i) * inner;
                    for (int k = 0; k < inner; ++k)
                        gar[k] += alpha * detail::dot(gyr, bvv + static_cast<std::size_t>(k) * cols,
                                                      cols);
                }
            }
            if (bn->needs_grad) {
                double* gb = bn->grad_data();
                const double* avv = an->value.data();
                for (int i = 0; i < rows; ++i) {
                    const double* gyr = gy + static_cast<std::size_t>(i) * cols;
                    const double* ar = avv + static_cast<std::size_t>(i) * inner;
                    for (int k = 0; k < inner; ++k)
                        detail::axpy(gb + static_cast<std::size_t>(k) * cols, alpha * ar[k], gyr,
                                     cols);
                }
            }
        });
        return out;
    }

    Tensor transpose(const Tensor& a) {
        if (a.rank() != 2) throw ConfigError("transpose: expected 2-D input");
        const int rows = a.dim(0), cols = a.dim(1);
        Tensor out = make({cols, rows}, needs(a));
        const double* av = a.value().data();
        double* y = out.value().data();
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                y[static_cast<std::size_t>(j) * rows + i] = av[static_cast<std::size_t>(i) * cols + j];

        record("transpose", {a}, out, [=]() {
            auto an = a.node(); auto yo = out.node();
            if (yo->grad.empty() || !an->needs_grad) return;
            const double* gy = yo->grad.data();
            double* g = an->grad_data();
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j)
                    g[static_cast<std::size_t>(i) * cols + j] += gy[static_cast<std::size_t>(j) * rows + i];
        });
        return out;
    }

    // Per-row affine map y[r, t] = gain[r] * x[r, t] + offset[r]; realizes
    // the learnt per-channel scaling of the input epoch.
    Tensor row_affine(const Tensor& x, const Tensor& gain, const Tensor& offset) {
        if (x.rank() != 2 || gain.rank() != 1 || offset.rank() != 1)
            throw ConfigError("row_affine: expected x [R x C], gain [R], offset [R]");
        const int rows = x.dim(0), cols = x.dim(1);
        if (gain.dim(0) != rows || offset.dim(0) != rows)
            throw ConfigError("row_affine: gain/offset length must match rows");
        Tensor out = make(x.shape(), needs(x, gain, offset));
        const double* xv = x.value().data();
        const double* gv = gain.value().data();
        const double* ov = offset.value().data();
        double* y = out.value().data();
        for (int r = 0; r < rows; ++r) {
            const double* xr = xv + static_cast<std::size_t>(r) * cols;
            double* yr = y + static_cast<std::size_t>(r) * cols;
            const double g = gv[r], o = ov[r];
            for (int c = 0; c < cols; ++c) yr[c] = g * xr[c] + o;
        }

        record("row_affine", {x, gain, offset}, out, [=]() {
            auto xn = x.node(); auto gn = gain.node(); auto on = offset.node();
            auto yo = out.node();
            if (yo->grad.empty()) return;
            const double* gy = yo->grad.data();
            const double* xvv = xn->value.data();
            const double* gvv = gn->value.data();
            for (int r = 0; r < rows; ++r) {
                const double* gyr = gy + static_cast<std::size_t>(r) * cols;
                const double* xr = xvv + static_cast<std::size_t>(r) * cols;
                if (gn->needs_grad) {
                    double s = 0.0;
                    for (int c = 0; c < cols; ++c) s += gyr[c] * xr[c];
                    gn->grad_data()[r] += s;
                }
                if (on->needs_grad) {
                    double s = 0.0;
                    for (int c = 0; c < cols; ++c) s += gyr[c];
                    on->grad_data()[r] += s;
                }
                if (xn->needs_grad) {
                    double* gxr = xn->grad_data() + static_cast<std::size_t>(r) * cols;
                    const double g = gvv[r];
                    for (int c = 0; c < cols; ++c) gxr[c] += g * gyr[c];
                }
            }
        });
        return out;
    }

    Tensor slice_rows(const Tensor& x, int first, int count) {
        if (x.rank() != 2) throw ConfigError("slice_rows: expected 2-D input");
        const int rows = x.dim(0), cols = x.dim(1);
        if (first < 0 || count < 1 || first + count > rows)
            throw UsageError("slice_rows: range out of bounds");
        Tensor out = make({count, cols}, needs(x));
        const double* xv = x.value().data() + static_cast<std::size_t>(first) * cols;
        std::copy(xv, xv + static_cast<std::size_t>(count) * cols, out.value().data());

        record("slice_rows", {x}, out, [=]() {
            auto xn = x.node(); auto yo = out.node();
            if (yo->grad.empty() || !xn->needs_grad) return;
            const double* gy = yo->grad.data();
            double* gx = xn->grad_data() + static_cast<std::size_t>(first) * cols;
            const std::size_t n = static_cast<std::size_t>(count) * cols;
            for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i];
        });
        return out;
    }

    Tensor slice_cols(const Tensor& x, int first, int count) {
        if (x.rank() != 2) throw ConfigError("slice_cols: expected 2-D input");
        const int rows = x.dim(0), cols = x.dim(1);
        if (first < 0 || count < 1 || first + count > cols)
            throw UsageError("slice_cols: range out of bounds");
        Tensor out = make({rows, count}, needs(x));
        const double* xv = x.value().data();
        double* y = out.value().data();
        for (int r = 0; r < rows; ++r)
            std::copy(xv + static_cast<std::size_t>(r) * cols + first,
                      xv + static_cast<std::size_t>(r) * cols + first + count,
                      y + static_cast<std::size_t>(r) * count);

        record("slice_cols", {x}, out, [=]() {
            auto xn = x.node(); auto yo = out.node();
            if (yo->grad.empty() || !xn->needs_grad) return;
            const double* gy = yo->grad.data();
            double* gx = xn->grad_data();
            for (int r = 0; r < rows; ++r) {
                const double* gyr = gy + static_cast<std::size_t>(r) * count;
                double* gxr = gx + static_cast<std::size_t>(r) * cols + first;
                for (int c = 0; c < count; ++c) gxr[c] += gyr[c];
            }
        });
        return out;
    }

    Tensor concat_rows(const std::vector<Tensor>& parts) {
        if (parts.empty()) throw UsageError("concat_rows: no inputs");
        const int cols = parts[0].dim(1);
        int rows = 0;
        bool ng = false;
        for (const auto& p : parts) {
            if (p.rank() != 2 || p.dim(1) != cols)
                throw ConfigError("concat_rows: column mismatch");
            rows += p.dim(0);
            ng = ng || p.requires_grad();
        }
        Tensor out = make({rows, cols}, ng);
        double* y = out.value().data();
        std::size_t at = 0;
        for (const auto& p : parts) {
            std::copy(p.value().begin(), p.value().end(), y + at);
            at += p.size();
        }

        auto parts_copy = std::make_shared<std::vector<Tensor>>(parts);
        record("concat_rows", parts, out, [=]() {
            auto yo = out.node();
            if (yo->grad.empty()) return;
            const double* gy = yo->grad.data();
            std::size_t pos = 0;
            for (const auto& p : *parts_copy) {
                auto pn = p.node();
                if (pn->needs_grad) {
                    double* g = pn->grad_data();
                    for (std::size_t i = 0; i < pn->size(); ++i) g[i] += gy[pos + i];
                }
                pos += pn->size();
            }
        });
        return out;
    }

    Tensor concat_cols(const std::vector<Tensor>& parts) {
        if (parts.empty()) throw UsageError("concat_cols: no inputs");
        const int rows = parts[0].dim(0);
        int cols = 0;
        bool ng = false;
        for (const auto& p : parts) {
            if (p.rank() != 2 || p.dim(0) != rows)
                throw ConfigError("concat_cols: row mismatch");
            cols += p.dim(1);
            ng = ng || p.requires_grad();
        }
        Tensor out = make({rows, cols}, ng);
        double* y = out.value().data();
        int at = 0;
        for (const auto& p : parts) {
            const int pc = p.dim(1);
            const double* pv = p.value().data();
            for (int r = 0; r < rows; ++r)
                std::copy(pv + static_cast<std::size_t>(r) * pc,
                          pv + static_cast<std::size_t>(r + 1) * pc,
                          y + static_cast<std::size_t>(r) * cols + at);
            at += pc;
        }

        auto parts_copy = std::make_shared<std::vector<Tensor>>(parts);
        record("concat_cols", parts, out, [=]() {
            auto yo = out.node();
            if (yo->grad.empty()) return;
            const double* gy = yo->grad.data();
            int pos = 0;
            for (const auto& p : *parts_copy) {
                auto pn = p.node();
                const int pc = pn->shape[1];
                if (pn->needs_grad) {
                    double* g = pn->grad_data();
                    for (int r = 0; r < rows; ++r) {
                        const double* gyr = gy + static_cast<std::size_t>(r) * cols + pos;
                        double* gr = g + static_cast<std::size_t>(r) * pc;
                        for (int c = 0; c < pc; ++c) gr[c] += gyr[c];
                    }
                }
                pos += pc;
            }
        });
        return out;
    }

    // Mean over the row axis: [R x C] -> [1 x C].
    Tensor mean_rows(const Tensor& x) {
        if (x.rank() != 2) throw ConfigError("mean_rows: expected 2-D input");
        const int rows = x.dim(0), cols = x.dim(1);
        Tensor out = make({1, cols}, needs(x));
        const double* xv = x.value().data();
        double* y = out.value().data();
        std::fill(y, y + cols, 0.0);
        for (int r = 0; r < rows; ++r) {
            const double* xr = xv + static_cast<std::size_t>(r) * cols;
            for (int c = 0; c < cols; ++c) y[c] += xr[c];
        }
        const double inv = 1.0 / rows;
        for (int c = 0; c < cols; ++c) y[c] *= inv;

        record("mean_rows", {x}, out, [=]() {
            auto xn = x.node(); auto yo = out.node();
            if (yo->grad.empty() || !xn->needs_grad) return;
            const double* gy = yo->grad.data();
            double* gx = xn->grad_data();
            for (int r = 0; r < rows; ++r) {
                double* gxr = gx + static_cast<std::size_t>(r) * cols;
                for (int c = 0; c < cols; ++c) gxr[c] += gy[c] * inv;
            }
        });
        return out;
    }

    Tensor sum(const Tensor& x) {
        Tensor out = make({1}, needs(x));
        const double* xv = x.value().data();
        double s = 0.0;
        const std::size_t n = x.size();
        for (std::size_t i = 0; i < n; ++i) s += xv[i];
        out.value()[0] = s;

        record("sum", {x}, out, [=]() {
            auto xn = x.node(); auto yo = out.node();
            if (yo->grad.empty() || !xn->needs_grad) return;
            const double g = yo->grad[0];
            double* gx = xn->grad_data();
            for (std::size_t i = 0; i < n; ++i) gx[i] += g;
        });
        return out;
    }

    // Runs the recorded operations in reverse, seeding d(loss)/d(loss) = 1.
    // Gradients accumulate additively, so leaves shared across samples keep
    // collecting until zero_grad().
    void backward(const Tensor& loss) {
        if (loss.size() != 1) throw UsageError("backward: loss must be scalar");
        auto n = loss.node();
        n->grad_data()[0] += 1.0;
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
    }

private:
    struct Entry {
        std::function<void()> backward;
    };

    static bool needs(const Tensor& a) { return a.requires_grad(); }
    static bool needs(const Tensor& a, const Tensor& b) {
        return a.requires_grad() || b.requires_grad();
    }
    static bool needs(const Tensor& a, const Tensor& b, const Tensor& c) {
        return a.requires_grad() || b.requires_grad() || c.requires_grad();
    }

    Tensor make(std::vector<int> shape, bool needs_grad) {
        Tensor t = Tensor::zeros(std::move(shape));
        t.node()->needs_grad = needs_grad;
        return t;
    }

    void record(const char* name, const std::vector<Tensor>& inputs, const Tensor& out,
                std::function<void()> fn) {
        if (!recording_ || !out.requires_grad()) return;
        if (keep_metadata_) {
            OpRecord rec;
            rec.name = name;
            rec.output = out.id();
            for (const auto& t : inputs) rec.inputs.push_back(t.id());
            records_.push_back(std::move(rec));
        }
        entries_.push_back(Entry{std::move(fn)});
    }

    std::vector<Entry> entries_;
    std::vector<OpRecord> records_;
    bool recording_ = true;
    bool keep_metadata_ = false;
};

// Compares the taped gradient of a scalar-valued function against central
// finite differences; returns the max over coordinates of
// |analytic - numeric| / max(1, |analytic|).
template <typename F>
double grad_check(F&& f, const Tensor& point, double step = 1e-5) {
    Tensor x = Tensor::from(point.shape(), point.value(), true);
    Tape tape;
    Tensor loss = f(tape, x);
    if (loss.size() != 1) throw UsageError("grad_check: function must be scalar-valued");
    tape.backward(loss);
    std::vector<double> analytic = x.has_grad() ? x.grad()
                                                : std::vector<double>(x.size(), 0.0);

    auto eval = [&](const std::vector<double>& at) {
        Tensor p = Tensor::from(point.shape(), at, false);
        Tape t;
        t.set_recording(false);
        return f(t, p).item();
    };

    std::vector<double> coords = point.value();
    double worst = 0.0;
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const double keep = coords[i];
        coords[i] = keep + step;
        const double hi = eval(coords);
        coords[i] = keep - step;
        const double lo = eval(coords);
        coords[i] = keep;
        const double numeric = (hi - lo) / (2.0 * step);
        const double err = std::abs(analytic[i] - numeric) /
                           std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

} // namespace msacnn
