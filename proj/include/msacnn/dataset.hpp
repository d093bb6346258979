#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "msacnn/binio.hpp"
#include "msacnn/csv.hpp"
#include "msacnn/errors.hpp"
#include "msacnn/rng.hpp"
#include "msacnn/sha256.hpp"
#include "msacnn/sigproc.hpp"
#include "msacnn/tensor.hpp"

namespace msacnn {

constexpr int kNumStages = 5;  // W, N1, N2, N3, REM
inline const char* stage_name(int label) {
    static const char* names[kNumStages] = {"W", "N1", "N2", "N3", "REM"};
    return (label >= 0 && label < kNumStages) ? names[label] : "?";
}

// Labelled collection of fixed-length multivariate sleep epochs. Samples are
// stored as f32 so that on-disk and in-memory payloads match bit for bit.
struct EpochSet {
    std::vector<float> data;               // [N_s x N_ch x T], row-major
    std::vector<std::uint8_t> labels;      // [N_s], values in [0, 5)
    std::vector<std::uint32_t> subject_ids;// [N_s], contiguous 0..S-1
    std::vector<std::string> channel_names;
    int t_len = 0;
    float sample_rate_hz = 0.0f;

    int n_epochs() const { return static_cast<int>(labels.size()); }
    int n_channels() const { return static_cast<int>(channel_names.size()); }

    int n_subjects() const {
        std::uint32_t mx = 0;
        for (auto s : subject_ids) mx = std::max(mx, s);
        return subject_ids.empty() ? 0 : static_cast<int>(mx) + 1;
    }

    void validate() const {
        if (channel_names.empty()) throw DataError("epoch set has no channels");
        if (labels.size() != subject_ids.size())
            throw DataError("label/subject count mismatch");
        if (t_len != static_cast<int>(std::lround(30.0 * sample_rate_hz)))
            throw DataError("epoch length does not equal 30 seconds at the sample rate");
        if (data.size() != static_cast<std::size_t>(n_epochs()) * n_channels() * t_len)
            throw DataError("payload size does not match epoch dimensions");
        for (auto l : labels)
            if (l >= kNumStages) throw DataError("label out of range");
        const int s = n_subjects();
        std::vector<bool> seen(static_cast<std::size_t>(s), false);
        for (auto id : subject_ids) seen[id] = true;
        for (int i = 0; i < s; ++i)
            if (!seen[static_cast<std::size_t>(i)])
                throw DataError("subject ids are not contiguous from 0");
    }

    // Epoch i as a [N_ch x T] tensor (network input).
    Tensor epoch_matrix(int i) const {
        const int nc = n_channels();
        std::vector<double> v(static_cast<std::size_t>(nc) * t_len);
        const float* src = data.data() + static_cast<std::size_t>(i) * nc * t_len;
        for (std::size_t j = 0; j < v.size(); ++j) v[j] = static_cast<double>(src[j]);
        return Tensor::from({nc, t_len}, std::move(v));
    }

    std::vector<std::uint32_t> unique_subjects() const {
        std::vector<std::uint32_t> s(subject_ids);
        std::sort(s.begin(), s.end());
        s.erase(std::unique(s.begin(), s.end()), s.end());
        return s;
    }
};

struct ClassDistribution {
    std::array<long, kNumStages> counts{};
    std::array<double, kNumStages> proportions{};
};

inline ClassDistribution class_distribution(const EpochSet& set) {
    if (set.labels.empty()) throw DataError("class_distribution: empty epoch set");
    ClassDistribution cd;
    for (auto l : set.labels) cd.counts[l] += 1;
    for (int k = 0; k < kNumStages; ++k)
        cd.proportions[static_cast<std::size_t>(k)] =
            static_cast<double>(cd.counts[static_cast<std::size_t>(k)]) /
            static_cast<double>(set.labels.size());
    return cd;
}

// --- binary epoch store ----------------------------------------------------
//
// magic "EPS1", u16 version=1, u16 K, u32 N_s, u32 N_ch, u32 T,
// f32 sample_rate_hz, channel names (u16 length + UTF-8 each),
// u32 subject count, u32 subject_ids[N_s], u8 labels[N_s],
// f32 payload[N_s x N_ch x T]; all integers little-endian.

inline std::vector<unsigned char> serialize_epochset(const EpochSet& set) {
    set.validate();
    ByteWriter w;
    w.bytes("EPS1", 4);
    w.u16(1);
    w.u16(kNumStages);
    w.u32(static_cast<std::uint32_t>(set.n_epochs()));
    w.u32(static_cast<std::uint32_t>(set.n_channels()));
    w.u32(static_cast<std::uint32_t>(set.t_len));
    w.f32(set.sample_rate_hz);
    for (const auto& name : set.channel_names) w.str16(name);
    w.u32(static_cast<std::uint32_t>(set.n_subjects()));
    for (auto id : set.subject_ids) w.u32(id);
    for (auto l : set.labels) w.u8(l);
    w.bytes(set.data.data(), set.data.size() * sizeof(float));
    return w.buffer();
}

inline void save_epochset(const EpochSet& set, const std::string& path) {
    ByteWriter w;
    auto bytes = serialize_epochset(set);
    w.bytes(bytes.data(), bytes.size());
    w.write_file(path);
}

inline EpochSet deserialize_epochset(std::vector<unsigned char> bytes) {
    ByteReader r(std::move(bytes));
    if (r.remaining() < 4) throw DataError("bad magic: file shorter than 4 bytes");
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != "EPS1")
        throw DataError("bad magic at byte offset 0 (expected \"EPS1\")");
    const std::uint16_t version = r.u16();
    if (version != 1)
        throw DataError("unsupported version " + std::to_string(version) +
                        " at byte offset 4");
    const std::uint16_t k = r.u16();
    if (k != kNumStages)
        throw DataError("unexpected class count " + std::to_string(k) +
                        " at byte offset 6");
    const std::uint32_t n_s = r.u32();
    const std::uint32_t n_ch = r.u32();
    const std::uint32_t t_len = r.u32();
    EpochSet set;
    set.sample_rate_hz = r.f32();
    set.t_len = static_cast<int>(t_len);
    for (std::uint32_t i = 0; i < n_ch; ++i) set.channel_names.push_back(r.str16());
    const std::uint32_t n_subjects = r.u32();
    set.subject_ids.resize(n_s);
    for (std::uint32_t i = 0; i < n_s; ++i) set.subject_ids[i] = r.u32();
    set.labels.resize(n_s);
    for (std::uint32_t i = 0; i < n_s; ++i) {
        const std::size_t at = r.offset();
        set.labels[i] = r.u8();
        if (set.labels[i] >= kNumStages)
            throw DataError("label out of range at byte offset " + std::to_string(at));
    }
    if (n_subjects != static_cast<std::uint32_t>(set.n_subjects()))
        throw DataError("subject count does not match subject ids");
    set.data.resize(static_cast<std::size_t>(n_s) * n_ch * t_len);
    r.bytes(set.data.data(), set.data.size() * sizeof(float));
    set.validate();
    return set;
}

inline EpochSet load_epochset(const std::string& path) {
    auto reader = ByteReader::from_file(path);
    std::vector<unsigned char> bytes(reader.remaining());
    reader.bytes(bytes.data(), bytes.size());
    return deserialize_epochset(std::move(bytes));
}

inline std::string epochset_fingerprint(const EpochSet& set) {
    return sha256_hex(serialize_epochset(set));
}

// --- CSV ingestion -----------------------------------------------------------

// One numeric CSV per subject (columns = channels, rows = samples) plus a
// label CSV with header "subject,label" listing one stage per epoch in
// order. Signals are low-pass filtered before segmentation; a trailing
// partial epoch is discarded.
inline EpochSet ingest_csv(const std::vector<std::string>& signal_files,
                           const std::string& label_file, double sample_rate_hz,
                           int epoch_seconds = 30, double cutoff_hz = 40.0) {
    if (signal_files.empty()) throw DataError("ingest_csv: no signal files");
    NumericCsv label_csv = read_numeric_csv(label_file);
    if (label_csv.header.size() != 2 || label_csv.header[0] != "subject" ||
        label_csv.header[1] != "label")
        throw DataError(label_file + ": expected header 'subject,label'");
    std::vector<std::vector<int>> labels_by_subject(signal_files.size());
    for (std::size_t r = 0; r < label_csv.rows; ++r) {
        const double sd = label_csv.columns[0][r];
        const double ld = label_csv.columns[1][r];
        const int s = static_cast<int>(sd);
        const int l = static_cast<int>(ld);
        if (sd != s || s < 0 || s >= static_cast<int>(signal_files.size()))
            throw DataError(label_file + ": subject index " + format_double(sd) +
                            " out of range at data row " + std::to_string(r + 1));
        if (ld != l || l < 0 || l >= kNumStages)
            throw DataError(label_file + ": label " + format_double(ld) +
                            " out of range at data row " + std::to_string(r + 1));
        labels_by_subject[static_cast<std::size_t>(s)].push_back(l);
    }

    const FilterSpec lp = design_butterworth_lowpass(4, cutoff_hz, sample_rate_hz);
    const int t_len = static_cast<int>(std::lround(epoch_seconds * sample_rate_hz));

    EpochSet set;
    set.sample_rate_hz = static_cast<float>(sample_rate_hz);
    set.t_len = t_len;
    for (std::size_t s = 0; s < signal_files.size(); ++s) {
        NumericCsv csv = read_numeric_csv(signal_files[s]);
        if (s == 0) {
            set.channel_names = csv.header;
        } else if (csv.header != set.channel_names) {
            throw DataError(signal_files[s] + ": channel names differ from " +
                            signal_files[0]);
        }
        const int n_full = static_cast<int>(csv.rows) / t_len;
        const auto& labels = labels_by_subject[s];
        if (static_cast<int>(labels.size()) != n_full)
            throw DataError("subject " + std::to_string(s) + ": " +
                            std::to_string(labels.size()) + " labels for " +
                            std::to_string(n_full) + " full epochs");
        std::vector<std::vector<double>> filtered;
        filtered.reserve(csv.columns.size());
        for (const auto& col : csv.columns) filtered.push_back(filter_forward(lp, col));
        for (int e = 0; e < n_full; ++e) {
            for (const auto& col : filtered)
                for (int t = 0; t < t_len; ++t)
                    set.data.push_back(static_cast<float>(col[static_cast<std::size_t>(e) * t_len + t]));
            set.labels.push_back(static_cast<std::uint8_t>(labels[static_cast<std::size_t>(e)]));
            set.subject_ids.push_back(static_cast<std::uint32_t>(s));
        }
    }
    set.validate();
    return set;
}

// --- synthetic polysomnography ----------------------------------------------

// Span of the injected spindle + K-complex transient in an N2 epoch,
// in seconds from epoch onset.
struct SyntheticEvent {
    int epoch_index = -1;
    double start_s = 0.0;
    double end_s = 0.0;
};

namespace detail {

// ISRUC-S3 stage proportions (class samples over 8,589 total).
inline const std::array<double, kNumStages>& isruc_s3_proportions() {
    static const std::array<double, kNumStages> p = {
        1674.0 / 8589.0, 1217.0 / 8589.0, 2616.0 / 8589.0,
        2016.0 / 8589.0, 1066.0 / 8589.0};
    return p;
}

// Largest-remainder quota of n items over the stage proportions, so small
// sets still track the target distribution closely.
inline std::array<int, kNumStages> stage_quota(int n) {
    const auto& p = isruc_s3_proportions();
    std::array<int, kNumStages> q{};
    std::array<double, kNumStages> frac{};
    int assigned = 0;
    for (int k = 0; k < kNumStages; ++k) {
        const double ideal = n * p[static_cast<std::size_t>(k)];
        q[static_cast<std::size_t>(k)] = static_cast<int>(ideal);
        frac[static_cast<std::size_t>(k)] = ideal - q[static_cast<std::size_t>(k)];
        assigned += q[static_cast<std::size_t>(k)];
    }
    while (assigned < n) {
        int best = 0;
        for (int k = 1; k < kNumStages; ++k)
            if (frac[static_cast<std::size_t>(k)] > frac[static_cast<std::size_t>(best)]) best = k;
        q[static_cast<std::size_t>(best)] += 1;
        frac[static_cast<std::size_t>(best)] = -1.0;
        ++assigned;
    }
    return q;
}

} // namespace detail

// Class-conditional synthetic generator. The oscillatory class signature and
// any N2 transients are coherent across channels; channel noise is
// independent, so multivariate models gain from cross-channel averaging.
// Deterministic given the argument tuple. When `events` is non-null it
// receives the span of the injected spindle + K-complex for every N2 epoch.
inline EpochSet generate_synthetic(std::uint64_t seed, int n_subjects,
                                   int epochs_per_subject, int n_ch,
                                   double sample_rate_hz = 100.0,
                                   std::vector<SyntheticEvent>* events = nullptr) {
    if (n_subjects < 1 || epochs_per_subject < 1 || n_ch < 1)
        throw ConfigError("generate_synthetic: all counts must be >= 1");
    const int t_len = static_cast<int>(std::lround(30.0 * sample_rate_hz));
    const double dt = 1.0 / sample_rate_hz;

    EpochSet set;
    set.sample_rate_hz = static_cast<float>(sample_rate_hz);
    set.t_len = t_len;
    static const char* kPsgNames[10] = {"F3", "C3", "O1", "F4", "C4",
                                        "O2", "LOC", "ROC", "EMG", "AUX"};
    for (int c = 0; c < n_ch; ++c)
        set.channel_names.push_back(c < 10 ? kPsgNames[c] : "ch" + std::to_string(c));
    set.data.reserve(static_cast<std::size_t>(n_subjects) * epochs_per_subject * n_ch * t_len);

    std::vector<double> base(static_cast<std::size_t>(t_len));
    for (int s = 0; s < n_subjects; ++s) {
        RngStream subject_rng(derive_seed(seed, 11, static_cast<std::uint64_t>(s)));
        const double subject_amp = subject_rng.uniform(0.95, 1.05);
        std::vector<double> ch_gain(static_cast<std::size_t>(n_ch));
        std::vector<double> ch_offset(static_cast<std::size_t>(n_ch));
        for (int c = 0; c < n_ch; ++c) {
            ch_gain[static_cast<std::size_t>(c)] = subject_rng.uniform(0.75, 1.25);
            ch_offset[static_cast<std::size_t>(c)] = subject_rng.uniform(-0.3, 0.3);
        }

        auto quota = detail::stage_quota(epochs_per_subject);
        std::vector<int> stage_order;
        for (int k = 0; k < kNumStages; ++k)
            stage_order.insert(stage_order.end(), quota[static_cast<std::size_t>(k)], k);
        RngStream order_rng(derive_seed(seed, 13, static_cast<std::uint64_t>(s)));
        order_rng.shuffle(stage_order);

        for (int e = 0; e < epochs_per_subject; ++e) {
            const int label = stage_order[static_cast<std::size_t>(e)];
            RngStream rng(derive_seed(seed, 17, static_cast<std::uint64_t>(s),
                                      static_cast<std::uint64_t>(e)));
            std::fill(base.begin(), base.end(), 0.0);
            // one noise level for all stages: the class identity lives in the
            // coherent oscillation, not in the channel noise floor
            const double noise_sigma = 1.0;
            const double phase = rng.uniform(0.0, 2.0 * M_PI);
            switch (label) {
                case 0: {  // W: alpha rhythm
                    const double f = rng.uniform(8.0, 12.0);
                    for (int t = 0; t < t_len; ++t)
                        base[static_cast<std::size_t>(t)] =
                            1.0 * std::sin(2.0 * M_PI * f * t * dt + phase);
                    break;
                }
                case 1: {  // N1: moderate theta
                    const double f = rng.uniform(4.0, 7.0);
                    for (int t = 0; t < t_len; ++t)
                        base[static_cast<std::size_t>(t)] =
                            0.8 * std::sin(2.0 * M_PI * f * t * dt + phase);
                    break;
                }
                case 2: {  // N2: N1-like theta plus one K-complex + spindle pair
                    const double f = rng.uniform(4.0, 7.0);
                    for (int t = 0; t < t_len; ++t)
                        base[static_cast<std::size_t>(t)] =
                            0.8 * std::sin(2.0 * M_PI * f * t * dt + phase);
                    const double k_dur = 0.8;
                    const double sp_dur = 1.0;
                    const double k_start = rng.uniform(2.0, 30.0 - (k_dur + sp_dur) - 2.0);
                    const double sp_start = k_start + k_dur;
                    const double f_sp = rng.uniform(12.0, 14.0);
                    const double sp_phase = rng.uniform(0.0, 2.0 * M_PI);
                    for (int t = 0; t < t_len; ++t) {
                        const double ts = t * dt;
                        if (ts >= k_start && ts < k_start + k_dur) {
                            const double tau = (ts - k_start) / k_dur;
                            base[static_cast<std::size_t>(t)] +=
                                -2.4 * std::sin(2.0 * M_PI * tau) * std::sin(M_PI * tau);
                        }
                        if (ts >= sp_start && ts < sp_start + sp_dur) {
                            const double tau = (ts - sp_start) / sp_dur;
                            const double env = std::exp(-0.5 * std::pow((tau - 0.5) / 0.18, 2.0));
                            base[static_cast<std::size_t>(t)] +=
                                1.6 * env * std::sin(2.0 * M_PI * f_sp * ts + sp_phase);
                        }
                    }
                    if (events)
                        events->push_back(SyntheticEvent{set.n_epochs(), k_start,
                                                         sp_start + sp_dur});
                    break;
                }
                case 3: {  // N3: high-amplitude delta
                    const double f = rng.uniform(0.5, 2.0);
                    for (int t = 0; t < t_len; ++t)
                        base[static_cast<std::size_t>(t)] =
                            3.0 * std::sin(2.0 * M_PI * f * t * dt + phase);
                    break;
                }
                default: {  // REM: low-amplitude mixed theta
                    const double f = rng.uniform(4.0, 7.0);
                    for (int t = 0; t < t_len; ++t)
                        base[static_cast<std::size_t>(t)] =
                            0.45 * std::sin(2.0 * M_PI * f * t * dt + phase);
                    break;
                }
            }
            for (int c = 0; c < n_ch; ++c) {
                const double g = ch_gain[static_cast<std::size_t>(c)] * subject_amp;
                const double o = ch_offset[static_cast<std::size_t>(c)];
                for (int t = 0; t < t_len; ++t)
                    set.data.push_back(static_cast<float>(
                        g * base[static_cast<std::size_t>(t)] + o +
                        noise_sigma * rng.gaussian()));
            }
            set.labels.push_back(static_cast<std::uint8_t>(label));
            set.subject_ids.push_back(static_cast<std::uint32_t>(s));
        }
    }
    set.validate();
    return set;
}

// Restriction of an epoch set to the given subjects (order preserved).
inline EpochSet subset_by_subjects(const EpochSet& set,
                                   const std::vector<std::uint32_t>& subjects) {
    std::vector<bool> keep(static_cast<std::size_t>(set.n_subjects()), false);
    for (auto s : subjects) keep.at(s) = true;
    EpochSet out;
    out.channel_names = set.channel_names;
    out.sample_rate_hz = set.sample_rate_hz;
    out.t_len = set.t_len;
    // preserve original ids; remap to a contiguous range afterwards
    std::vector<std::uint32_t> kept_ids;
    const std::size_t stride = static_cast<std::size_t>(set.n_channels()) * set.t_len;
    for (int i = 0; i < set.n_epochs(); ++i) {
        if (!keep[set.subject_ids[static_cast<std::size_t>(i)]]) continue;
        out.labels.push_back(set.labels[static_cast<std::size_t>(i)]);
        kept_ids.push_back(set.subject_ids[static_cast<std::size_t>(i)]);
        const float* src = set.data.data() + static_cast<std::size_t>(i) * stride;
        out.data.insert(out.data.end(), src, src + stride);
    }
    std::vector<std::uint32_t> sorted(kept_ids);
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    for (auto id : kept_ids) {
        const auto it = std::lower_bound(sorted.begin(), sorted.end(), id);
        out.subject_ids.push_back(static_cast<std::uint32_t>(it - sorted.begin()));
    }
    return out;
}

// Restriction of an epoch set to a subset of channels (by index, in order).
inline EpochSet subset_by_channels(const EpochSet& set, const std::vector<int>& channels) {
    if (channels.empty()) throw ConfigError("subset_by_channels: empty channel list");
    EpochSet out;
    out.sample_rate_hz = set.sample_rate_hz;
    out.t_len = set.t_len;
    out.labels = set.labels;
    out.subject_ids = set.subject_ids;
    for (int c : channels) {
        if (c < 0 || c >= set.n_channels())
            throw ConfigError("subset_by_channels: channel index out of range");
        out.channel_names.push_back(set.channel_names[static_cast<std::size_t>(c)]);
    }
    const std::size_t stride = static_cast<std::size_t>(set.n_channels()) * set.t_len;
    out.data.reserve(static_cast<std::size_t>(set.n_epochs()) * channels.size() * set.t_len);
    for (int i = 0; i < set.n_epochs(); ++i) {
        const float* src = set.data.data() + static_cast<std::size_t>(i) * stride;
        for (int c : channels) {
            const float* row = src + static_cast<std::size_t>(c) * set.t_len;
            out.data.insert(out.data.end(), row, row + set.t_len);
        }
    }
    out.validate();
    return out;
}

} // namespace msacnn
