#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "msacnn/csv.hpp"
#include "msacnn/dataset.hpp"
#include "msacnn/errors.hpp"
#include "msacnn/eval.hpp"
#include "msacnn/model.hpp"
#include "msacnn/sha256.hpp"
#include "msacnn/sigproc.hpp"
#include "msacnn/trainer.hpp"

namespace msacnn::cli {

namespace fs = std::filesystem;

// Collects the files of one run directory and writes a manifest of their
// hashes at the end. Every byte written is deterministic for a fixed
// RunConfig, which is what makes rerun comparisons meaningful.
class RunDir {
public:
    explicit RunDir(const std::string& dir) : dir_(dir) { fs::create_directories(dir_); }

    void write_text(const std::string& name, const std::string& content) {
        std::ofstream out(dir_ / name, std::ios::trunc | std::ios::binary);
        if (!out) throw DataError("cannot write " + (dir_ / name).string());
        out << content;
        entries_.emplace_back(name, sha256_hex(content));
    }

    void write_bytes(const std::string& name, const std::vector<unsigned char>& bytes) {
        std::ofstream out(dir_ / name, std::ios::trunc | std::ios::binary);
        if (!out) throw DataError("cannot write " + (dir_ / name).string());
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        entries_.emplace_back(name, sha256_hex(bytes));
    }

    void finalize() {
        std::sort(entries_.begin(), entries_.end());
        std::ostringstream out;
        for (const auto& [name, hash] : entries_) out << hash << "  " << name << "\n";
        std::ofstream f(dir_ / "manifest.txt", std::ios::trunc | std::ios::binary);
        if (!f) throw DataError("cannot write manifest in " + dir_.string());
        f << out.str();
    }

    const fs::path& path() const { return dir_; }

private:
    fs::path dir_;
    std::vector<std::pair<std::string, std::string>> entries_;
};

// Resolved run configuration; serialized as flat key=value lines.
struct RunConfig {
    std::vector<std::pair<std::string, std::string>> entries;

    void set(const std::string& key, const std::string& value) {
        entries.emplace_back(key, value);
    }
    void set(const std::string& key, long value) { set(key, std::to_string(value)); }
    void set(const std::string& key, std::uint64_t value) { set(key, std::to_string(value)); }
    void set(const std::string& key, int value) { set(key, std::to_string(value)); }
    void set(const std::string& key, double value) { set(key, format_double(value, 17)); }

    std::string text() const {
        std::ostringstream out;
        for (const auto& [k, v] : entries) out << k << "=" << v << "\n";
        return out.str();
    }
};

inline std::map<std::string, std::string> read_key_value_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError(path + ": malformed line '" + line + "' (expected key=value)");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

namespace detail {

// Expands a leading `--config file` into explicit options placed before the
// user's own flags, so later flags override the file.
inline std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::string config_path;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw UsageError("--config requires a file path");
            config_path = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    if (config_path.empty()) return rest;

    auto kv = read_key_value_file(config_path);
    const auto cmd_it = kv.find("command");
    if (cmd_it == kv.end())
        throw DataError(config_path + ": config file lacks a command entry");
    std::vector<std::string> out;
    std::size_t skip = 0;
    if (!rest.empty() && !rest[0].empty() && rest[0][0] != '-') {
        if (rest[0] != cmd_it->second)
            throw UsageError("config file is for command '" + cmd_it->second +
                             "' but '" + rest[0] + "' was given");
        out.push_back(rest[0]);
        skip = 1;
    } else {
        out.push_back(cmd_it->second);
    }
    for (const auto& [k, v] : kv) {
        if (k == "command") continue;
        out.push_back("--" + k);
        out.push_back(v);
    }
    out.insert(out.end(), rest.begin() + static_cast<std::ptrdiff_t>(skip), rest.end());
    return out;
}

inline std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stoi(item));
    }
    return out;
}

inline std::string join_ints(const std::vector<int>& v, char sep = ',') {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s.push_back(sep);
        s += std::to_string(v[i]);
    }
    return s;
}

inline const char* roman_scale(int idx) {
    static const char* names[4] = {"I", "II", "III", "IV"};
    return names[idx];
}

} // namespace detail

// Shared option bundles --------------------------------------------------------

struct ModelArgs {
    std::string size = "small";
    std::string mode = "multivariate";
    std::string variant;  // empty = none

    void add_to(CLI::App* cmd, bool with_variant = true) {
        cmd->add_option("--size", size, "model size: small or large")
            ->check(CLI::IsMember({"small", "large"}));
        cmd->add_option("--mode", mode, "model mode: univariate, multivariate, multimodal")
            ->check(CLI::IsMember({"univariate", "multivariate", "multimodal"}));
        if (with_variant)
            cmd->add_option("--variant", variant,
                            "variant: rescaled, multimodal, univariate, no_msm1..4, no_tcm");
    }

    ModelConfig build(int n_ch) const {
        ModelConfig cfg = ModelConfig::make(model_size_from_string(size),
                                            model_mode_from_string(mode), n_ch);
        if (!variant.empty()) cfg = apply_variant(cfg, VariantSpec::parse(variant));
        return cfg;
    }
};

struct TrainArgs {
    std::uint64_t seed = 1;
    int epochs = 100;
    int batch = 64;
    double lr = -1.0;       // < 0: learning-rate policy default
    double head_lr = -1.0;  // < 0: policy default
    double weight_decay = 1e-4;
    double dropout = 0.1;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--seed", seed, "run seed");
        cmd->add_option("--epochs", epochs, "training epochs")->check(CLI::PositiveNumber);
        cmd->add_option("--batch", batch, "mini-batch size")->check(CLI::PositiveNumber);
        cmd->add_option("--lr", lr, "base learning rate (default per model size)");
        cmd->add_option("--head-lr", head_lr, "TCM + output head learning rate");
        cmd->add_option("--weight-decay", weight_decay, "L2 weight decay");
        cmd->add_option("--dropout", dropout, "dropout rate inside the TCM feed-forward");
    }

    TrainConfig resolve(const ModelConfig& model_cfg) const {
        TrainConfig cfg = TrainConfig::defaults_for(model_cfg);
        if (lr >= 0.0) cfg.base_lr = lr;
        if (head_lr >= 0.0) cfg.head_lr = head_lr;
        cfg.weight_decay = weight_decay;
        cfg.dropout = dropout;
        cfg.epochs = epochs;
        cfg.batch_size = batch;
        cfg.seed = seed;
        return cfg;
    }

    void record(RunConfig& rc, const TrainConfig& resolved) const {
        rc.set("seed", resolved.seed);
        rc.set("epochs", resolved.epochs);
        rc.set("batch", resolved.batch_size);
        rc.set("lr", resolved.base_lr);
        rc.set("head-lr", resolved.effective_head_lr());
        rc.set("weight-decay", resolved.weight_decay);
        rc.set("dropout", resolved.dropout);
    }
};

struct CvArgs {
    int k = 10;
    int reps = 10;
    int jobs = 1;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--k", k, "fold count")->check(CLI::PositiveNumber);
        cmd->add_option("--reps", reps, "repetitions")->check(CLI::PositiveNumber);
        cmd->add_option("--jobs", jobs, "parallel fold jobs")->check(CLI::PositiveNumber);
    }
};

// Writes the per-fold artifacts of one cross-validation result.
inline void write_cv_outputs(RunDir& run, const CvResult& result, const std::string& tag) {
    const std::string suffix = tag.empty() ? "" : "_" + tag;
    run.write_text("folds" + suffix + ".csv", fold_reports_csv(result.folds));
    run.write_text("summary" + suffix + ".txt", summary_text(result.aggregate));
    for (std::size_t i = 0; i < result.folds.size(); ++i) {
        const auto& f = result.folds[i];
        const std::string stem = suffix + "_rep" + std::to_string(f.repetition) + "_fold" +
                                 std::to_string(f.fold);
        run.write_text("history" + stem + ".csv", result.histories[i].csv());
        if (!result.models.empty()) {
            run.write_bytes("checkpoint" + stem + ".msc",
                            serialize_checkpoint(result.models[i]));
            run.write_text("checkpoint" + stem + ".msc.manifest.txt",
                           checkpoint_manifest(result.models[i]));
        }
    }
}

// --- entry point ----------------------------------------------------------------

inline int run(const std::vector<std::string>& raw_args) {
    CLI::App app{"MSA-CNN sleep-stage classification toolkit"};
    app.require_subcommand(1);
    // later occurrences override earlier ones, so explicit flags take
    // precedence over values injected from --config files
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    std::function<void()> action;

    // gen-data ------------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic epoch store");
    {
        auto seed = std::make_shared<std::uint64_t>(1);
        auto subjects = std::make_shared<int>(6);
        auto epochs = std::make_shared<int>(120);
        auto channels = std::make_shared<int>(4);
        auto rate = std::make_shared<double>(100.0);
        auto out = std::make_shared<std::string>();
        gen->add_option("--seed", *seed, "generator seed");
        gen->add_option("--subjects", *subjects, "subject count")->check(CLI::PositiveNumber);
        gen->add_option("--epochs-per-subject", *epochs, "epochs per subject")
            ->check(CLI::PositiveNumber);
        gen->add_option("--channels", *channels, "channel count")->check(CLI::PositiveNumber);
        gen->add_option("--sample-rate", *rate, "sample rate in Hz")->check(CLI::PositiveNumber);
        gen->add_option("--out", *out, "output epoch store path")->required();
        gen->callback([=, &action]() {
            action = [=]() {
                EpochSet set = generate_synthetic(*seed, *subjects, *epochs, *channels, *rate);
                save_epochset(set, *out);
                std::cout << "wrote " << *out << ": " << set.n_epochs() << " epochs, "
                          << set.n_channels() << " channels, fingerprint "
                          << epochset_fingerprint(set) << "\n";
            };
        });
    }

    // ingest ---------------------------------------------------------------
    auto* ingest = app.add_subcommand("ingest", "build an epoch store from CSV recordings");
    {
        auto signals = std::make_shared<std::vector<std::string>>();
        auto labels = std::make_shared<std::string>();
        auto rate = std::make_shared<double>(100.0);
        auto cutoff = std::make_shared<double>(40.0);
        auto out = std::make_shared<std::string>();
        ingest->add_option("--signal", *signals, "per-subject signal CSV (repeatable)")
            ->required()
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
        ingest->add_option("--labels", *labels, "label CSV with header subject,label")
            ->required();
        ingest->add_option("--sample-rate", *rate, "signal sample rate in Hz")
            ->check(CLI::PositiveNumber);
        ingest->add_option("--cutoff", *cutoff, "low-pass cutoff in Hz")
            ->check(CLI::PositiveNumber);
        ingest->add_option("--out", *out, "output epoch store path")->required();
        ingest->callback([=, &action]() {
            action = [=]() {
                EpochSet set = ingest_csv(*signals, *labels, *rate, 30, *cutoff);
                save_epochset(set, *out);
                std::cout << "wrote " << *out << ": " << set.n_epochs() << " epochs from "
                          << set.n_subjects() << " subjects\n";
            };
        });
    }

    // preprocess -------------------------------------------------------------
    auto* prep = app.add_subcommand("preprocess", "low-pass filter (and resample) a CSV");
    {
        auto in_path = std::make_shared<std::string>();
        auto out_path = std::make_shared<std::string>();
        auto rate = std::make_shared<double>(100.0);
        auto cutoff = std::make_shared<double>(40.0);
        auto resample = std::make_shared<double>(-1.0);
        prep->add_option("--in", *in_path, "input CSV")->required();
        prep->add_option("--out", *out_path, "output CSV")->required();
        prep->add_option("--sample-rate", *rate, "input sample rate in Hz")
            ->check(CLI::PositiveNumber);
        prep->add_option("--cutoff", *cutoff, "low-pass cutoff in Hz")
            ->check(CLI::PositiveNumber);
        prep->add_option("--resample-to", *resample, "target sample rate in Hz");
        prep->callback([=, &action]() {
            action = [=]() {
                NumericCsv csv = read_numeric_csv(*in_path);
                const FilterSpec lp = design_butterworth_lowpass(4, *cutoff, *rate);
                CsvWriter w(csv.header);
                std::vector<std::vector<double>> cols;
                for (const auto& col : csv.columns) {
                    auto filtered = filter_forward(lp, col);
                    if (*resample > 0.0) filtered = resample_to(filtered, *rate, *resample);
                    cols.push_back(std::move(filtered));
                }
                const std::size_t rows = cols.empty() ? 0 : cols[0].size();
                for (std::size_t r = 0; r < rows; ++r) {
                    std::vector<std::string> cells;
                    for (const auto& c : cols) cells.push_back(format_double(c[r]));
                    w.row(cells);
                }
                w.write_file(*out_path);
                std::cout << "wrote " << *out_path << ": " << rows << " rows\n";
            };
        });
    }

    // params -----------------------------------------------------------------
    auto* params = app.add_subcommand("params", "print the trainable parameter count");
    {
        auto margs = std::make_shared<ModelArgs>();
        auto channels = std::make_shared<int>(9);
        margs->add_to(params);
        params->add_option("--channels", *channels, "input channel count")
            ->check(CLI::PositiveNumber);
        params->callback([=, &action]() {
            action = [=]() { std::cout << param_count(margs->build(*channels)) << "\n"; };
        });
    }

    // flops ------------------------------------------------------------------
    auto* flops = app.add_subcommand("flops", "print the MFLOPS estimate per forward pass");
    {
        auto margs = std::make_shared<ModelArgs>();
        auto channels = std::make_shared<int>(9);
        auto t_len = std::make_shared<int>(3000);
        margs->add_to(flops);
        flops->add_option("--channels", *channels, "input channel count")
            ->check(CLI::PositiveNumber);
        flops->add_option("--T", *t_len, "epoch length in samples")->check(CLI::PositiveNumber);
        flops->callback([=, &action]() {
            action = [=]() {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "%.3f\n",
                              flop_estimate(margs->build(*channels), *t_len));
                std::cout << buf;
            };
        });
    }

    // train --------------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "train one model on a full epoch store");
    {
        auto data = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto margs = std::make_shared<ModelArgs>();
        auto targs = std::make_shared<TrainArgs>();
        train_cmd->add_option("--data", *data, "epoch store path")->required();
        train_cmd->add_option("--out", *out, "run directory")->required();
        margs->add_to(train_cmd);
        targs->add_to(train_cmd);
        train_cmd->callback([=, &action]() {
            action = [=]() {
                EpochSet set = load_epochset(*data);
                ModelConfig cfg = margs->build(set.n_channels());
                TrainConfig tcfg = targs->resolve(cfg);
                MsaCnnModel model =
                    MsaCnnModel::build(cfg, derive_seed(tcfg.seed, 0x626c64ULL));
                TrainHistory history = train(model, set, tcfg);

                RunDir run(*out);
                RunConfig rc;
                rc.set("command", "train");
                rc.set("data", *data);
                rc.set("size", margs->size);
                rc.set("mode", margs->mode);
                if (!margs->variant.empty()) rc.set("variant", margs->variant);
                targs->record(rc, tcfg);
                rc.set("out", *out);
                run.write_text("run_config.txt", rc.text());
                run.write_text("dataset_fingerprint.txt", epochset_fingerprint(set) + "\n");
                run.write_text("history.csv", history.csv());
                run.write_bytes("checkpoint.msc", serialize_checkpoint(model));
                run.write_text("checkpoint.msc.manifest.txt", checkpoint_manifest(model));
                run.finalize();
                std::cout << "final train accuracy: "
                          << format_double(history.train_accuracy.back(), 6) << "\n";
            };
        });
    }

    // cv -----------------------------------------------------------------------
    auto* cv_cmd = app.add_subcommand("cv", "repeated subject-wise cross-validation");
    {
        auto data = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto margs = std::make_shared<ModelArgs>();
        auto targs = std::make_shared<TrainArgs>();
        auto cargs = std::make_shared<CvArgs>();
        cv_cmd->add_option("--data", *data, "epoch store path")->required();
        cv_cmd->add_option("--out", *out, "run directory")->required();
        margs->add_to(cv_cmd);
        targs->add_to(cv_cmd);
        cargs->add_to(cv_cmd);
        cv_cmd->callback([=, &action]() {
            action = [=]() {
                EpochSet set = load_epochset(*data);
                ModelConfig cfg = margs->build(set.n_channels());
                TrainConfig tcfg = targs->resolve(cfg);
                FoldPlan plan =
                    make_fold_plan(set.unique_subjects(), cargs->k, cargs->reps, tcfg.seed);
                CvResult result = run_cv(cfg, set, plan, tcfg, cargs->jobs, true);

                RunDir run(*out);
                RunConfig rc;
                rc.set("command", "cv");
                rc.set("data", *data);
                rc.set("size", margs->size);
                rc.set("mode", margs->mode);
                if (!margs->variant.empty()) rc.set("variant", margs->variant);
                targs->record(rc, tcfg);
                rc.set("k", cargs->k);
                rc.set("reps", cargs->reps);
                rc.set("jobs", cargs->jobs);
                rc.set("out", *out);
                run.write_text("run_config.txt", rc.text());
                run.write_text("dataset_fingerprint.txt", epochset_fingerprint(set) + "\n");
                write_cv_outputs(run, result, "");
                run.finalize();
                std::cout << summary_text(result.aggregate);
            };
        });
    }

    // ablate ----------------------------------------------------------------------
    auto* ablate = app.add_subcommand("ablate", "cross-validate a model variant");
    {
        auto data = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto margs = std::make_shared<ModelArgs>();
        auto targs = std::make_shared<TrainArgs>();
        auto cargs = std::make_shared<CvArgs>();
        auto compare = std::make_shared<bool>(false);
        data->clear();
        ablate->add_option("--data", *data, "epoch store path")->required();
        ablate->add_option("--out", *out, "run directory")->required();
        margs->add_to(ablate, false);
        ablate->add_option("--variant", margs->variant,
                           "variant: rescaled, multimodal, univariate, no_msm1..4, no_tcm")
            ->required();
        ablate->add_flag("--compare", *compare,
                         "also run the unmodified reference on the same folds");
        targs->add_to(ablate);
        cargs->add_to(ablate);
        ablate->callback([=, &action]() {
            action = [=]() {
                EpochSet set = load_epochset(*data);
                ModelConfig base = ModelConfig::make(model_size_from_string(margs->size),
                                                     model_mode_from_string(margs->mode),
                                                     set.n_channels());
                ModelConfig cfg = apply_variant(base, VariantSpec::parse(margs->variant));
                std::cout << param_count(cfg) << "\n";  // before any training

                TrainConfig tcfg = targs->resolve(cfg);
                FoldPlan plan =
                    make_fold_plan(set.unique_subjects(), cargs->k, cargs->reps, tcfg.seed);
                EpochSet variant_set = set;
                if (cfg.mode == ModelMode::univariate && set.n_channels() > 1)
                    variant_set = subset_by_channels(set, {0});
                CvResult result = run_cv(cfg, variant_set, plan, tcfg, cargs->jobs, true);

                RunDir run(*out);
                RunConfig rc;
                rc.set("command", "ablate");
                rc.set("data", *data);
                rc.set("size", margs->size);
                rc.set("mode", margs->mode);
                rc.set("variant", margs->variant);
                targs->record(rc, tcfg);
                rc.set("k", cargs->k);
                rc.set("reps", cargs->reps);
                rc.set("jobs", cargs->jobs);
                if (*compare) rc.set("compare", 1);
                rc.set("out", *out);
                run.write_text("run_config.txt", rc.text());
                run.write_text("dataset_fingerprint.txt", epochset_fingerprint(set) + "\n");
                write_cv_outputs(run, result, "variant");
                if (*compare) {
                    TrainConfig ref_cfg = targs->resolve(base);
                    CvResult ref = run_cv(base, set, plan, ref_cfg, cargs->jobs, true);
                    write_cv_outputs(run, ref, "reference");
                    TTestResult tt = paired_t_test(ref.aggregate.fold_mean_accuracy,
                                                   result.aggregate.fold_mean_accuracy);
                    std::ostringstream tout;
                    tout << "paired t-test on repetition-averaged fold accuracies "
                            "(reference - variant)\n";
                    tout << "t: " << format_double(tt.t) << "\n";
                    tout << "p: " << format_double(tt.p) << "\n";
                    tout << "stderr_of_difference: " << format_double(tt.stderr_of_difference)
                         << "\n";
                    run.write_text("ttest.txt", tout.str());
                }
                run.finalize();
                std::cout << summary_text(result.aggregate);
            };
        });
    }

    // sweep-channels -----------------------------------------------------------------
    auto* sweep_ch = app.add_subcommand("sweep-channels",
                                        "accuracy vs number of input channels");
    {
        auto data = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto order = std::make_shared<std::string>();
        auto size = std::make_shared<std::string>("small");
        auto targs = std::make_shared<TrainArgs>();
        auto cargs = std::make_shared<CvArgs>();
        sweep_ch->add_option("--data", *data, "epoch store path")->required();
        sweep_ch->add_option("--out", *out, "run directory")->required();
        sweep_ch->add_option("--order", *order,
                             "comma-separated channel order, most informative first");
        sweep_ch->add_option("--size", *size, "model size")->check(CLI::IsMember({"small", "large"}));
        targs->add_to(sweep_ch);
        cargs->add_to(sweep_ch);
        sweep_ch->callback([=, &action]() {
            action = [=]() {
                EpochSet set = load_epochset(*data);
                std::vector<int> channel_order;
                if (order->empty()) {
                    for (int c = 0; c < set.n_channels(); ++c) channel_order.push_back(c);
                } else {
                    channel_order = detail::parse_int_list(*order);
                }
                if (channel_order.empty())
                    throw ConfigError("sweep-channels: empty channel order");

                RunDir run(*out);
                RunConfig rc;
                rc.set("command", "sweep-channels");
                rc.set("data", *data);
                rc.set("order", detail::join_ints(channel_order));
                rc.set("size", *size);
                TrainConfig probe = targs->resolve(ModelConfig::make(
                    model_size_from_string(*size), ModelMode::multivariate, 1));
                targs->record(rc, probe);
                rc.set("k", cargs->k);
                rc.set("reps", cargs->reps);
                rc.set("jobs", cargs->jobs);
                rc.set("out", *out);
                run.write_text("run_config.txt", rc.text());
                run.write_text("dataset_fingerprint.txt", epochset_fingerprint(set) + "\n");

                FoldPlan plan = make_fold_plan(set.unique_subjects(), cargs->k, cargs->reps,
                                               targs->seed);
                CsvWriter sweep({"n_channels", "channels", "parameters", "accuracy_mean",
                                 "accuracy_std", "macro_f1_mean", "kappa_mean"});
                for (std::size_t n = 1; n <= channel_order.size(); ++n) {
                    std::vector<int> chans(channel_order.begin(),
                                           channel_order.begin() + static_cast<std::ptrdiff_t>(n));
                    EpochSet sub = subset_by_channels(set, chans);
                    // the multivariate configuration is kept even for one channel
                    ModelConfig cfg = ModelConfig::make(model_size_from_string(*size),
                                                        ModelMode::multivariate,
                                                        static_cast<int>(n));
                    TrainConfig tcfg = targs->resolve(cfg);
                    CvResult result = run_cv(cfg, sub, plan, tcfg, cargs->jobs, false);
                    write_cv_outputs(run, result, "ch" + std::to_string(n));
                    sweep.row({std::to_string(n), detail::join_ints(chans, ';'),
                               std::to_string(param_count(cfg)),
                               format_double(result.aggregate.accuracy_mean),
                               format_double(result.aggregate.accuracy_std),
                               format_double(result.aggregate.macro_f1_mean),
                               format_double(result.aggregate.kappa_mean)});
                }
                run.write_text("sweep_channels.csv", sweep.str());
                run.finalize();
                std::cout << "wrote " << (run.path() / "sweep_channels.csv").string() << "\n";
            };
        });
    }

    // sweep-scales ---------------------------------------------------------------------
    auto* sweep_sc = app.add_subcommand("sweep-scales",
                                        "accuracy vs contiguous MSM scale subsets");
    {
        auto data = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto margs = std::make_shared<ModelArgs>();
        auto targs = std::make_shared<TrainArgs>();
        auto cargs = std::make_shared<CvArgs>();
        sweep_sc->add_option("--data", *data, "epoch store path")->required();
        sweep_sc->add_option("--out", *out, "run directory")->required();
        margs->add_to(sweep_sc, false);
        targs->add_to(sweep_sc);
        cargs->add_to(sweep_sc);
        sweep_sc->callback([=, &action]() {
            action = [=]() {
                EpochSet set = load_epochset(*data);
                RunDir run(*out);
                RunConfig rc;
                rc.set("command", "sweep-scales");
                rc.set("data", *data);
                rc.set("size", margs->size);
                rc.set("mode", margs->mode);
                TrainConfig probe = targs->resolve(margs->build(set.n_channels()));
                targs->record(rc, probe);
                rc.set("k", cargs->k);
                rc.set("reps", cargs->reps);
                rc.set("jobs", cargs->jobs);
                rc.set("out", *out);
                run.write_text("run_config.txt", rc.text());
                run.write_text("dataset_fingerprint.txt", epochset_fingerprint(set) + "\n");

                FoldPlan plan = make_fold_plan(set.unique_subjects(), cargs->k, cargs->reps,
                                               targs->seed);
                CsvWriter sweep({"n_scales", "scales", "parameters", "mflops",
                                 "accuracy_mean", "accuracy_std"});
                for (int count = 4; count >= 1; --count) {
                    for (int first = 0; first + count <= 4; ++first) {
                        VariantFlags flags;
                        flags.scale_first = first;
                        flags.scale_count = count;
                        ModelConfig cfg = ModelConfig::make(
                            model_size_from_string(margs->size),
                            model_mode_from_string(margs->mode), set.n_channels(), flags);
                        TrainConfig tcfg = targs->resolve(cfg);
                        CvResult result = run_cv(cfg, set, plan, tcfg, cargs->jobs, false);
                        std::string scales;
                        for (int s = first; s < first + count; ++s) {
                            if (!scales.empty()) scales += "+";
                            scales += detail::roman_scale(s);
                        }
                        write_cv_outputs(run, result,
                                         "s" + std::to_string(first) + std::to_string(count));
                        sweep.row({std::to_string(count), scales,
                                   std::to_string(param_count(cfg)),
                                   format_double(flop_estimate(cfg, set.t_len), 6),
                                   format_double(result.aggregate.accuracy_mean),
                                   format_double(result.aggregate.accuracy_std)});
                    }
                }
                run.write_text("sweep_scales.csv", sweep.str());
                run.finalize();
                std::cout << "wrote " << (run.path() / "sweep_scales.csv").string() << "\n";
            };
        });
    }

    // attention -----------------------------------------------------------------------
    auto* attn = app.add_subcommand("attention",
                                    "train without one subject and export its attention trace");
    {
        auto data = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto epoch_index = std::make_shared<int>(-1);
        auto head = std::make_shared<int>(0);
        auto margs = std::make_shared<ModelArgs>();
        auto targs = std::make_shared<TrainArgs>();
        attn->add_option("--data", *data, "epoch store path")->required();
        attn->add_option("--out", *out, "run directory")->required();
        attn->add_option("--epoch-index", *epoch_index, "index of the traced epoch")
            ->required();
        attn->add_option("--head", *head, "attention head (-1 = mean over heads)");
        margs->add_to(attn);
        targs->add_to(attn);
        attn->callback([=, &action]() {
            action = [=]() {
                EpochSet set = load_epochset(*data);
                if (*epoch_index < 0 || *epoch_index >= set.n_epochs())
                    throw UsageError("attention: epoch index out of range");
                const std::uint32_t subject =
                    set.subject_ids[static_cast<std::size_t>(*epoch_index)];
                std::vector<std::uint32_t> train_subjects;
                for (auto s : set.unique_subjects())
                    if (s != subject) train_subjects.push_back(s);
                if (train_subjects.empty())
                    throw ConfigError("attention: need at least two subjects");
                EpochSet train_set = subset_by_subjects(set, train_subjects);

                ModelConfig cfg = margs->build(set.n_channels());
                TrainConfig tcfg = targs->resolve(cfg);
                MsaCnnModel model =
                    MsaCnnModel::build(cfg, derive_seed(tcfg.seed, 0x626c64ULL));
                train(model, train_set, tcfg);

                Tensor sample = set.epoch_matrix(*epoch_index);
                AttentionTrace trace = attention_trace(model, sample, *head);
                auto probs = model.forward(sample);
                int pred = 0;
                for (int k = 1; k < kNumStages; ++k)
                    if (probs[static_cast<std::size_t>(k)] > probs[static_cast<std::size_t>(pred)])
                        pred = k;

                RunDir run(*out);
                RunConfig rc;
                rc.set("command", "attention");
                rc.set("data", *data);
                rc.set("epoch-index", *epoch_index);
                rc.set("head", *head);
                rc.set("size", margs->size);
                rc.set("mode", margs->mode);
                if (!margs->variant.empty()) rc.set("variant", margs->variant);
                targs->record(rc, tcfg);
                rc.set("out", *out);
                run.write_text("run_config.txt", rc.text());
                run.write_text("dataset_fingerprint.txt", epochset_fingerprint(set) + "\n");
                run.write_text("attention.csv",
                               attention_trace_csv(trace, cfg.scale_plan.p_tot,
                                                   set.sample_rate_hz));
                std::ostringstream s;
                s << "epoch_index: " << *epoch_index << "\n";
                s << "subject: " << subject << "\n";
                s << "true_label: " << stage_name(set.labels[static_cast<std::size_t>(*epoch_index)])
                  << "\n";
                s << "predicted: " << stage_name(pred) << "\n";
                s << "probability: " << format_double(probs[static_cast<std::size_t>(pred)], 6)
                  << "\n";
                s << "argmax_incoming_token: " << trace.argmax_incoming << "\n";
                s << "argmax_incoming_seconds: "
                  << format_double(trace.argmax_incoming * cfg.scale_plan.p_tot /
                                   static_cast<double>(set.sample_rate_hz))
                  << "\n";
                run.write_text("attention_summary.txt", s.str());
                run.finalize();
                std::cout << s.str();
            };
        });
    }

    (void)prep;
    (void)gen;
    (void)ingest;
    (void)params;
    (void)flops;
    (void)train_cmd;
    (void)cv_cmd;
    (void)ablate;
    (void)sweep_ch;
    (void)sweep_sc;
    (void)attn;

    try {
        std::vector<std::string> args = detail::expand_config(raw_args);
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const InternalError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        if (action) action();
    } catch (const InternalError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace msacnn::cli
