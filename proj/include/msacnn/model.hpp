#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "msacnn/binio.hpp"
#include "msacnn/dataset.hpp"
#include "msacnn/errors.hpp"
#include "msacnn/msm.hpp"
#include "msacnn/rng.hpp"
#include "msacnn/sha256.hpp"
#include "msacnn/tcm.hpp"
#include "msacnn/tensor.hpp"

namespace msacnn {

enum class ModelSize { small, large };
enum class ModelMode { univariate, multivariate, multimodal };

inline std::string to_string(ModelSize s) { return s == ModelSize::small ? "small" : "large"; }
inline std::string to_string(ModelMode m) {
    switch (m) {
        case ModelMode::univariate: return "univariate";
        case ModelMode::multivariate: return "multivariate";
        default: return "multimodal";
    }
}

inline ModelSize model_size_from_string(const std::string& s) {
    if (s == "small") return ModelSize::small;
    if (s == "large") return ModelSize::large;
    throw ConfigError("unknown model size '" + s + "'");
}

inline ModelMode model_mode_from_string(const std::string& s) {
    if (s == "univariate") return ModelMode::univariate;
    if (s == "multivariate") return ModelMode::multivariate;
    if (s == "multimodal") return ModelMode::multimodal;
    throw ConfigError("unknown model mode '" + s + "'");
}

struct VariantFlags {
    // contiguous window into the canonical four-scale ladder; (0, 4) is the
    // full MSM, (s, 1) the single-scale -MSM variant
    int scale_first = 0;
    int scale_count = 4;
    bool no_tcm = false;

    bool full_msm() const { return scale_first == 0 && scale_count == 4; }
};

struct ModelConfig {
    ModelSize size = ModelSize::small;
    ModelMode mode = ModelMode::multivariate;
    int n_ch = 1;
    int n_classes = kNumStages;
    ScalePlan scale_plan;
    int spatial_filters = 32;
    int spatial_temporal_kernel = 5;  // univariate spatial stage kernel
    TcmConfig tcm;
    VariantFlags variant;

    // Assembles the configuration for a size/mode/channel combination with
    // the published hyperparameters.
    static ModelConfig make(ModelSize size, ModelMode mode, int n_ch,
                            VariantFlags variant = {}) {
        ModelConfig c;
        c.size = size;
        c.mode = mode;
        c.n_ch = mode == ModelMode::univariate ? 1 : n_ch;
        c.variant = variant;
        const bool large = size == ModelSize::large;
        const bool multimodal = mode == ModelMode::multimodal;
        const int base_filters = multimodal ? 4 : 8;
        const int filters_msm2 = multimodal ? (large ? 16 : 8) : (large ? 32 : 16);
        const FilterMode fmode = multimodal ? FilterMode::multimodal : FilterMode::unimodal;
        c.scale_plan = default_scale_plan(variant.scale_count, variant.scale_first,
                                          base_filters, filters_msm2, fmode);
        c.spatial_filters = large ? 64 : 32;
        c.tcm.d_in = c.spatial_filters;
        c.tcm.d_emb = large ? 32 : 16;
        c.tcm.n_heads = large ? 4 : 2;
        c.tcm.n_layers = large ? 2 : 1;
        c.validate();
        return c;
    }

    int head_input_width() const {
        // without the TCM the head consumes the spatial features directly,
        // i.e. twice the embedding width
        return variant.no_tcm ? spatial_filters : tcm.d_emb;
    }

    void validate() const {
        if (n_ch < 1) throw ConfigError("model: n_ch must be >= 1");
        if (mode == ModelMode::univariate && n_ch != 1)
            throw ConfigError("model: univariate mode requires n_ch == 1");
        if (mode == ModelMode::multimodal && scale_plan.mode != FilterMode::multimodal)
            throw ConfigError("model: multimodal mode requires multimodal filter banks");
        if (mode != ModelMode::multimodal && scale_plan.mode != FilterMode::unimodal)
            throw ConfigError("model: unimodal filter banks required for this mode");
        if (n_classes != kNumStages) throw ConfigError("model: n_classes must be 5");
        scale_plan.validate();
        if (!variant.no_tcm) tcm.validate();
    }
};

// Variant transformations explored in the experiments.
struct VariantSpec {
    enum class Kind { rescaled, multimodal, univariate, no_msm, no_tcm };
    Kind kind = Kind::rescaled;
    int scale = 0;  // used by no_msm

    static VariantSpec parse(const std::string& s) {
        VariantSpec v;
        if (s == "rescaled") { v.kind = Kind::rescaled; return v; }
        if (s == "multimodal") { v.kind = Kind::multimodal; return v; }
        if (s == "univariate") { v.kind = Kind::univariate; return v; }
        if (s == "no_tcm") { v.kind = Kind::no_tcm; return v; }
        if (s.rfind("no_msm", 0) == 0) {
            v.kind = Kind::no_msm;
            if (s.size() > 6) {
                const std::string arg = s.substr(6);
                int idx = -1;
                if (arg == "1" || arg == "_1" || arg == "(1)" || arg == "I") idx = 0;
                else if (arg == "2" || arg == "_2" || arg == "(2)" || arg == "II") idx = 1;
                else if (arg == "3" || arg == "_3" || arg == "(3)" || arg == "III") idx = 2;
                else if (arg == "4" || arg == "_4" || arg == "(4)" || arg == "IV") idx = 3;
                if (idx < 0) throw ConfigError("unknown no_msm scale in '" + s + "'");
                v.scale = idx;
            }
            return v;
        }
        throw ConfigError("unknown variant '" + s + "'");
    }
};

inline ModelConfig apply_variant(const ModelConfig& base, const VariantSpec& v) {
    ModelSize size = base.size;
    ModelMode mode = base.mode;
    int n_ch = base.n_ch;
    VariantFlags flags = base.variant;
    switch (v.kind) {
        case VariantSpec::Kind::rescaled:
            size = size == ModelSize::small ? ModelSize::large : ModelSize::small;
            break;
        case VariantSpec::Kind::multimodal:
            if (mode == ModelMode::univariate)
                throw ConfigError("apply_variant: multimodal conflicts with univariate");
            mode = ModelMode::multimodal;
            break;
        case VariantSpec::Kind::univariate:
            mode = ModelMode::univariate;
            n_ch = 1;
            break;
        case VariantSpec::Kind::no_msm:
            if (!flags.full_msm())
                throw ConfigError("apply_variant: scale window already restricted");
            flags.scale_first = v.scale;
            flags.scale_count = 1;
            break;
        case VariantSpec::Kind::no_tcm:
            if (flags.no_tcm)
                throw ConfigError("apply_variant: no_tcm flag already set");
            flags.no_tcm = true;
            break;
    }
    return ModelConfig::make(size, mode, n_ch, flags);
}

// --- complexity accounting ---------------------------------------------------

// Closed-form trainable parameter count: weights + biases + layer-norm
// affines + the per-channel scaling where applicable.
inline long param_count(const ModelConfig& cfg) {
    cfg.validate();
    const auto& plan = cfg.scale_plan;
    const int total_filters = plan.total_scale_filters();
    const int f2 = plan.filters_msm2;
    long count = 0;

    if (cfg.mode != ModelMode::univariate) count += 2L * cfg.n_ch;  // gain + offset

    long msm1 = 0;
    for (const auto& s : plan.scales) msm1 += static_cast<long>(s.filters) * plan.kernel_msm1 + s.filters;
    long msm2 = static_cast<long>(f2) * total_filters * plan.kernel_msm2 + f2;
    const int banks = cfg.mode == ModelMode::multimodal ? cfg.n_ch : 1;
    count += banks * (msm1 + msm2);

    const int s_f = cfg.spatial_filters;
    if (cfg.mode == ModelMode::univariate)
        count += static_cast<long>(s_f) * f2 * cfg.spatial_temporal_kernel + s_f;
    else
        count += static_cast<long>(s_f) * cfg.n_ch * f2 + s_f;

    if (!cfg.variant.no_tcm) {
        const int d = cfg.tcm.d_emb;
        const int din = cfg.tcm.d_in;
        long tcm = static_cast<long>(din) * d + d;  // embedding
        long per_layer = 0;
        per_layer += 4L * (static_cast<long>(d) * d + d);  // Q, K, V, W^O
        per_layer += 2L * d;                               // layer norm 1
        per_layer += static_cast<long>(d) * (2 * d) + 2 * d;  // FFN expand
        per_layer += static_cast<long>(2 * d) * d + d;        // FFN project
        per_layer += 2L * d;                               // layer norm 2
        tcm += per_layer * cfg.tcm.n_layers;
        count += tcm;
    }

    count += static_cast<long>(cfg.head_input_width()) * cfg.n_classes + cfg.n_classes;
    return count;
}

// Multiply-accumulate estimate of one forward pass, in millions. Counts the
// convolutions, all dense maps, and the attention score and context
// products (T_tok^2 * d_k per head each).
inline double flop_estimate(const ModelConfig& cfg, int t_len = 3000) {
    cfg.validate();
    const auto& plan = cfg.scale_plan;
    if (t_len % plan.p_tot != 0)
        throw ConfigError("flop_estimate: T must be divisible by p_tot");
    const int t8 = t_len / plan.p_tot;
    const int f2 = plan.filters_msm2;
    const int n_ch = cfg.n_ch;
    double macs = 0.0;

    if (cfg.mode != ModelMode::univariate) macs += static_cast<double>(n_ch) * t_len;

    // both unimodal and multimodal MSM stages run once per channel
    for (const auto& s : plan.scales)
        macs += static_cast<double>(s.filters) * plan.kernel_msm1 * (t_len / s.p_in) * n_ch;
    macs += static_cast<double>(f2) * plan.total_scale_filters() * plan.kernel_msm2 * t8 * n_ch;

    if (cfg.mode == ModelMode::univariate)
        macs += static_cast<double>(cfg.spatial_filters) * f2 * cfg.spatial_temporal_kernel * t8;
    else
        macs += static_cast<double>(cfg.spatial_filters) * n_ch * f2 * t8;

    if (!cfg.variant.no_tcm) {
        const double d = cfg.tcm.d_emb;
        const double dk = cfg.tcm.d_k();
        macs += static_cast<double>(cfg.tcm.d_in) * d * t8;  // embedding
        const double scores = cfg.tcm.n_heads * (static_cast<double>(t8) * t8 * dk);
        double per_layer = 3.0 * d * d * t8   // Q, K, V
                           + 2.0 * scores     // attention scores and A.V
                           + d * d * t8       // W^O
                           + 2.0 * (2.0 * d * d) * t8;  // FFN
        macs += per_layer * cfg.tcm.n_layers;
    }

    macs += static_cast<double>(cfg.head_input_width()) * cfg.n_classes;
    return macs / 1e6;
}

// --- the assembled model -------------------------------------------------------

class MsaCnnModel {
public:
    ModelConfig config;

    Tensor channel_gain, channel_offset;  // absent in univariate mode
    MsmParams msm;
    Tensor spatial_w, spatial_b;
    TcmParams tcm;
    Tensor head_w, head_b;

    const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }

    // indices into parameters() for the two learning-rate groups
    const std::vector<std::size_t>& backbone_group() const { return backbone_; }
    const std::vector<std::size_t>& head_group() const { return head_; }

    long parameter_count() const {
        long n = 0;
        for (const auto& [name, t] : params_) n += static_cast<long>(t.size());
        return n;
    }

    void zero_grad() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    std::string parameter_hash() const {
        Sha256 h;
        for (const auto& [name, t] : params_) {
            h.update(name.data(), name.size());
            h.update(t.value().data(), t.value().size() * sizeof(double));
        }
        return Sha256::hex(const_cast<Sha256&>(h).digest());
    }

    static MsaCnnModel build(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        MsaCnnModel m;
        m.config = cfg;
        RngStream init(derive_seed(seed, 0x6d6f64656cULL));

        const auto& plan = cfg.scale_plan;
        const bool multimodal = cfg.mode == ModelMode::multimodal;
        const int n_scales = static_cast<int>(plan.scales.size());

        if (cfg.mode != ModelMode::univariate) {
            m.channel_gain = Tensor::from({cfg.n_ch}, std::vector<double>(cfg.n_ch, 1.0), true);
            m.channel_offset = Tensor::zeros({cfg.n_ch}, true);
            m.reg("channel_scale.gain", m.channel_gain, false);
            m.reg("channel_scale.offset", m.channel_offset, false);
        }

        const int banks = multimodal ? cfg.n_ch : 1;
        for (int b = 0; b < banks; ++b) {
            const std::string prefix = multimodal ? "msm.ch" + std::to_string(b) + "." : "msm.";
            for (int s = 0; s < n_scales; ++s) {
                const auto& spec = plan.scales[static_cast<std::size_t>(s)];
                Tensor w = m.init_uniform(init, {spec.filters, 1, plan.kernel_msm1}, plan.kernel_msm1);
                Tensor bias = Tensor::zeros({spec.filters}, true);
                m.msm.scale_w.push_back(w);
                m.msm.scale_b.push_back(bias);
                m.reg(prefix + "scale" + std::to_string(s) + ".w", w, false);
                m.reg(prefix + "scale" + std::to_string(s) + ".b", bias, false);
            }
            Tensor iw = m.init_uniform(
                init, {plan.filters_msm2, plan.total_scale_filters(), plan.kernel_msm2},
                plan.total_scale_filters() * plan.kernel_msm2);
            Tensor ib = Tensor::zeros({plan.filters_msm2}, true);
            m.msm.integrate_w.push_back(iw);
            m.msm.integrate_b.push_back(ib);
            m.reg(prefix + "integrate.w", iw, false);
            m.reg(prefix + "integrate.b", ib, false);
        }

        if (cfg.mode == ModelMode::univariate) {
            m.spatial_w = m.init_uniform(
                init, {cfg.spatial_filters, plan.filters_msm2, cfg.spatial_temporal_kernel},
                plan.filters_msm2 * cfg.spatial_temporal_kernel);
        } else {
            m.spatial_w = m.init_uniform(
                init, {cfg.n_ch * plan.filters_msm2, cfg.spatial_filters},
                cfg.n_ch * plan.filters_msm2);
        }
        m.spatial_b = Tensor::zeros({cfg.spatial_filters}, true);
        m.reg("spatial.w", m.spatial_w, false);
        m.reg("spatial.b", m.spatial_b, false);

        if (!cfg.variant.no_tcm) {
            const int d = cfg.tcm.d_emb;
            m.tcm.embed_w = m.init_uniform(init, {cfg.tcm.d_in, d}, cfg.tcm.d_in);
            m.tcm.embed_b = Tensor::zeros({d}, true);
            m.reg("tcm.embed.w", m.tcm.embed_w, true);
            m.reg("tcm.embed.b", m.tcm.embed_b, true);
            for (int l = 0; l < cfg.tcm.n_layers; ++l) {
                const std::string p = "tcm.layer" + std::to_string(l) + ".";
                TcmLayerParams lp;
                lp.wq = m.init_uniform(init, {d, d}, d); lp.bq = Tensor::zeros({d}, true);
                lp.wk = m.init_uniform(init, {d, d}, d); lp.bk = Tensor::zeros({d}, true);
                lp.wv = m.init_uniform(init, {d, d}, d); lp.bv = Tensor::zeros({d}, true);
                lp.wo = m.init_uniform(init, {d, d}, d); lp.bo = Tensor::zeros({d}, true);
                lp.ln1_gain = Tensor::from({d}, std::vector<double>(d, 1.0), true);
                lp.ln1_shift = Tensor::zeros({d}, true);
                lp.ff1_w = m.init_uniform(init, {d, 2 * d}, d);
                lp.ff1_b = Tensor::zeros({2 * d}, true);
                lp.ff2_w = m.init_uniform(init, {2 * d, d}, 2 * d);
                lp.ff2_b = Tensor::zeros({d}, true);
                lp.ln2_gain = Tensor::from({d}, std::vector<double>(d, 1.0), true);
                lp.ln2_shift = Tensor::zeros({d}, true);
                m.reg(p + "attn.wq", lp.wq, true); m.reg(p + "attn.bq", lp.bq, true);
                m.reg(p + "attn.wk", lp.wk, true); m.reg(p + "attn.bk", lp.bk, true);
                m.reg(p + "attn.wv", lp.wv, true); m.reg(p + "attn.bv", lp.bv, true);
                m.reg(p + "attn.wo", lp.wo, true); m.reg(p + "attn.bo", lp.bo, true);
                m.reg(p + "ln1.gain", lp.ln1_gain, true); m.reg(p + "ln1.shift", lp.ln1_shift, true);
                m.reg(p + "ffn.w1", lp.ff1_w, true); m.reg(p + "ffn.b1", lp.ff1_b, true);
                m.reg(p + "ffn.w2", lp.ff2_w, true); m.reg(p + "ffn.b2", lp.ff2_b, true);
                m.reg(p + "ln2.gain", lp.ln2_gain, true); m.reg(p + "ln2.shift", lp.ln2_shift, true);
                m.tcm.layers.push_back(std::move(lp));
            }
        }

        m.head_w = m.init_uniform(init, {cfg.head_input_width(), cfg.n_classes},
                                  cfg.head_input_width());
        m.head_b = Tensor::zeros({cfg.n_classes}, true);
        m.reg("head.w", m.head_w, true);
        m.reg("head.b", m.head_b, true);
        return m;
    }

    // Forward pass to class logits [1 x 5]. The dropout stream is consumed
    // only in train mode.
    Tensor forward_logits(Tape& tape, const Tensor& epoch, bool train,
                          RngStream* dropout_rng = nullptr,
                          AttentionCapture* capture = nullptr) const {
        if (epoch.rank() != 2 || epoch.dim(0) != config.n_ch)
            throw DataError("forward: epoch shape does not match the configured channels");
        Tensor x = epoch;
        if (config.mode != ModelMode::univariate)
            x = tape.row_affine(x, channel_gain, channel_offset);
        Tensor feats = msm_forward(tape, config.scale_plan, msm, x);

        Tensor tokens;
        if (config.mode == ModelMode::univariate) {
            Tensor s = tape.relu(tape.conv1d_same(feats, spatial_w, spatial_b));
            tokens = tape.transpose(s);
        } else {
            tokens = tape.relu(tape.dense(tape.transpose(feats), spatial_w, spatial_b));
        }

        if (!config.variant.no_tcm) {
            RngStream fallback(0);
            TcmConfig tcfg = config.tcm;
            tokens = tcm_forward(tape, tokens, tcm, tcfg,
                                 dropout_rng ? *dropout_rng : fallback, train, capture);
        }
        Tensor pooled = tape.mean_rows(tokens);
        return tape.dense(pooled, head_w, head_b);
    }

    // Eval-mode class probabilities.
    std::vector<double> forward(const Tensor& epoch) const {
        Tape tape;
        tape.set_recording(false);
        Tensor logits = forward_logits(tape, epoch, false);
        Tensor probs = tape.softmax_rows(logits);
        return probs.value();
    }

    int predict(const Tensor& epoch) const {
        auto p = forward(epoch);
        int best = 0;
        for (int k = 1; k < static_cast<int>(p.size()); ++k)
            if (p[static_cast<std::size_t>(k)] > p[static_cast<std::size_t>(best)]) best = k;
        return best;
    }

private:
    Tensor init_uniform(RngStream& rng, std::vector<int> shape, int fan_in) {
        const double lim = std::sqrt(1.0 / fan_in);
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        std::vector<double> v(n);
        for (auto& x : v) x = rng.uniform(-lim, lim);
        return Tensor::from(std::move(shape), std::move(v), true);
    }

    void reg(std::string name, const Tensor& t, bool head_group) {
        params_.emplace_back(std::move(name), t);
        (head_group ? head_ : backbone_).push_back(params_.size() - 1);
    }

    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::size_t> backbone_, head_;
};

// Trace of the first multi-head attention operation for one sample.
// head_index in [0, n_heads) selects a head; -1 averages over heads.
inline AttentionTrace attention_trace(const MsaCnnModel& model, const Tensor& epoch,
                                      int head_index = 0) {
    if (model.config.variant.no_tcm)
        throw UsageError("attention_trace: model has no TCM");
    if (head_index >= model.config.tcm.n_heads || head_index < -1)
        throw UsageError("attention_trace: head index out of range");
    AttentionCapture capture;
    capture.want = true;
    capture.head = head_index;
    Tape tape;
    tape.set_recording(false);
    model.forward_logits(tape, epoch, false, nullptr, &capture);
    return trace_from_weights(capture, head_index);
}

// --- checkpoints -----------------------------------------------------------
//
// Binary container: magic "MSC1", u16 version, length-prefixed config text,
// u32 blob count, per blob {name, u16 rank, u32 dims..., f32 values}.

inline std::string serialize_config_text(const ModelConfig& cfg) {
    std::ostringstream out;
    out << "size=" << to_string(cfg.size) << "\n";
    out << "mode=" << to_string(cfg.mode) << "\n";
    out << "n_ch=" << cfg.n_ch << "\n";
    out << "scale_first=" << cfg.variant.scale_first << "\n";
    out << "scale_count=" << cfg.variant.scale_count << "\n";
    out << "no_tcm=" << (cfg.variant.no_tcm ? 1 : 0) << "\n";
    return out.str();
}

inline ModelConfig parse_config_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    for (const char* key : {"size", "mode", "n_ch", "scale_first", "scale_count", "no_tcm"})
        if (!kv.count(key)) throw DataError(std::string("checkpoint config missing key ") + key);
    VariantFlags flags;
    flags.scale_first = std::stoi(kv["scale_first"]);
    flags.scale_count = std::stoi(kv["scale_count"]);
    flags.no_tcm = kv["no_tcm"] == "1";
    return ModelConfig::make(model_size_from_string(kv["size"]),
                             model_mode_from_string(kv["mode"]),
                             std::stoi(kv["n_ch"]), flags);
}

inline std::vector<unsigned char> serialize_checkpoint(const MsaCnnModel& model) {
    ByteWriter w;
    w.bytes("MSC1", 4);
    w.u16(1);
    w.str16(serialize_config_text(model.config));
    w.u32(static_cast<std::uint32_t>(model.parameters().size()));
    for (const auto& [name, t] : model.parameters()) {
        w.str16(name);
        w.u16(static_cast<std::uint16_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) w.u32(static_cast<std::uint32_t>(t.dim(i)));
        for (double v : t.value()) w.f32(static_cast<float>(v));
    }
    return w.buffer();
}

// Human-readable sidecar listing parameter names, shapes, and the total.
inline std::string checkpoint_manifest(const MsaCnnModel& model) {
    std::ostringstream out;
    out << "msa-cnn checkpoint\n";
    out << "size: " << to_string(model.config.size) << "\n";
    out << "mode: " << to_string(model.config.mode) << "\n";
    out << "channels: " << model.config.n_ch << "\n";
    for (const auto& [name, t] : model.parameters()) {
        out << name << " [";
        for (int i = 0; i < t.rank(); ++i) out << (i ? " x " : "") << t.dim(i);
        out << "] " << t.size() << "\n";
    }
    out << "total_parameters: " << model.parameter_count() << "\n";
    return out.str();
}

inline void save_checkpoint(const MsaCnnModel& model, const std::string& path) {
    ByteWriter w;
    auto bytes = serialize_checkpoint(model);
    w.bytes(bytes.data(), bytes.size());
    w.write_file(path);
    std::ofstream manifest(path + ".manifest.txt", std::ios::trunc);
    if (!manifest) throw DataError("cannot write checkpoint manifest for " + path);
    manifest << checkpoint_manifest(model);
}

inline MsaCnnModel load_checkpoint(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    if (r.remaining() < 4) throw DataError("bad magic: checkpoint shorter than 4 bytes");
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != "MSC1")
        throw DataError("bad magic at byte offset 0 (expected \"MSC1\")");
    if (r.u16() != 1) throw DataError("unsupported checkpoint version");
    ModelConfig cfg = parse_config_text(r.str16());
    MsaCnnModel model = MsaCnnModel::build(cfg, 0);
    const std::uint32_t n = r.u32();
    if (n != model.parameters().size())
        throw DataError("checkpoint parameter count does not match the config");
    for (const auto& [name, t] : model.parameters()) {
        const std::string got = r.str16();
        if (got != name)
            throw DataError("checkpoint parameter '" + got + "' does not match expected '" +
                            name + "'");
        const int rank = r.u16();
        if (rank != t.rank()) throw DataError("checkpoint rank mismatch for " + name);
        for (int i = 0; i < rank; ++i)
            if (static_cast<int>(r.u32()) != t.dim(i))
                throw DataError("checkpoint shape mismatch for " + name);
        Tensor& dst = const_cast<Tensor&>(t);
        for (auto& v : dst.value()) v = static_cast<double>(r.f32());
    }
    return model;
}

} // namespace msacnn
