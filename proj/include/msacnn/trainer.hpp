#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "msacnn/csv.hpp"
#include "msacnn/dataset.hpp"
#include "msacnn/errors.hpp"
#include "msacnn/model.hpp"
#include "msacnn/rng.hpp"
#include "msacnn/tensor.hpp"

namespace msacnn {

struct TrainConfig {
    int epochs = 100;
    double base_lr = 1e-3;
    double head_lr = -1.0;  // < 0: same as base_lr
    double weight_decay = 1e-4;
    double dropout = 0.1;
    int batch_size = 64;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    // coupled decay (L2 term in the gradient) is the default; the decoupled
    // form applies the decay directly to the parameters instead
    bool decoupled_weight_decay = false;

    double effective_head_lr() const { return head_lr < 0.0 ? base_lr : head_lr; }

    // Published learning-rate policy: 1e-3 for small models, 1e-4 for large
    // ones, with the TCM + output group raised back to 1e-3 for the large
    // multivariate and multimodal variants.
    static TrainConfig defaults_for(const ModelConfig& model) {
        TrainConfig c;
        if (model.size == ModelSize::large) {
            c.base_lr = 1e-4;
            if (model.mode != ModelMode::univariate) c.head_lr = 1e-3;
        } else {
            c.base_lr = 1e-3;
        }
        return c;
    }
};

// One Adam update for a single parameter tensor. Weight decay defaults to
// the coupled form: an L2 term added to the gradient before the moment
// updates. The decoupled form subtracts lr * wd * theta after the adaptive
// step instead. The step counter t is 1-based and shared across a whole
// optimizer step.
inline void adam_step(std::vector<double>& values, const std::vector<double>& grads,
                      std::vector<double>& m, std::vector<double>& v, long t,
                      double lr, double weight_decay, double beta1 = 0.9,
                      double beta2 = 0.999, double epsilon = 1e-8,
                      bool decoupled = false) {
    if (values.size() != grads.size() || values.size() != m.size() ||
        values.size() != v.size())
        throw UsageError("adam_step: buffer size mismatch");
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = grads[i] + (decoupled ? 0.0 : weight_decay * values[i]);
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        values[i] -= lr * (m_hat / (std::sqrt(v_hat) + epsilon) +
                           (decoupled ? weight_decay * values[i] : 0.0));
    }
}

// Adam over all model parameters with the two learning-rate groups
// (backbone vs TCM + output head).
class AdamOptimizer {
public:
    AdamOptimizer(MsaCnnModel& model, const TrainConfig& cfg) : model_(model), cfg_(cfg) {
        for (const auto& [name, t] : model.parameters()) {
            m_.emplace_back(t.size(), 0.0);
            v_.emplace_back(t.size(), 0.0);
        }
        lr_of_.assign(model.parameters().size(), cfg.base_lr);
        for (auto i : model.head_group()) lr_of_[i] = cfg.effective_head_lr();
    }

    void step() {
        ++t_;
        const auto& params = model_.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = const_cast<Tensor&>(params[i].second);
            if (!p.has_grad()) p.zero_grad();
            adam_step(p.value(), p.grad(), m_[i], v_[i], t_, lr_of_[i],
                      cfg_.weight_decay, cfg_.beta1, cfg_.beta2, cfg_.epsilon,
                      cfg_.decoupled_weight_decay);
        }
    }

    long step_count() const { return t_; }

private:
    MsaCnnModel& model_;
    TrainConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::vector<double> lr_of_;
    long t_ = 0;
};

struct TrainHistory {
    std::vector<double> mean_loss;       // per epoch
    std::vector<double> train_accuracy;  // per epoch

    std::string csv() const {
        CsvWriter w({"epoch", "mean_loss", "train_accuracy"});
        for (std::size_t e = 0; e < mean_loss.size(); ++e)
            w.row({std::to_string(e + 1), format_double(mean_loss[e]),
                   format_double(train_accuracy[e])});
        return w.str();
    }
};

// Mini-batch training: seeded per-epoch shuffling, cross-entropy loss,
// one Adam step per batch, dropout active. Shuffling and dropout use
// separate streams so data order never perturbs the dropout draws.
inline TrainHistory train(MsaCnnModel& model, const EpochSet& train_set,
                          const TrainConfig& cfg) {
    if (train_set.n_epochs() == 0) throw UsageError("train: empty training set");
    if (train_set.n_channels() != model.config.n_ch)
        throw DataError("train: dataset channels do not match the model");
    const int n = train_set.n_epochs();
    const int batch_size = std::min(cfg.batch_size, n);
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");

    RngStream shuffle_rng(derive_seed(cfg.seed, 0x73687566ULL));
    RngStream dropout_rng(derive_seed(cfg.seed, 0x64726f70ULL));

    AdamOptimizer optimizer(model, cfg);
    model.zero_grad();

    TrainHistory history;
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        long correct = 0;
        int at = 0;
        while (at < n) {
            const int b = std::min(batch_size, n - at);
            for (int i = 0; i < b; ++i) {
                const int idx = order[static_cast<std::size_t>(at + i)];
                Tensor x = train_set.epoch_matrix(idx);
                const int label = train_set.labels[static_cast<std::size_t>(idx)];
                Tape tape;
                Tensor logits = model.forward_logits(tape, x, true, &dropout_rng);
                const auto& lv = logits.value();
                int arg = 0;
                for (int k = 1; k < model.config.n_classes; ++k)
                    if (lv[static_cast<std::size_t>(k)] > lv[static_cast<std::size_t>(arg)]) arg = k;
                if (arg == label) ++correct;
                Tensor loss = tape.cross_entropy(logits, {label});
                loss_sum += loss.item();
                // scale so accumulated leaf grads hold the batch mean
                tape.backward(tape.scale(loss, 1.0 / b));
            }
            optimizer.step();
            model.zero_grad();
            at += b;
        }
        history.mean_loss.push_back(loss_sum / n);
        history.train_accuracy.push_back(static_cast<double>(correct) / n);
    }
    return history;
}

} // namespace msacnn
