#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "msacnn/csv.hpp"
#include "msacnn/dataset.hpp"
#include "msacnn/errors.hpp"
#include "msacnn/model.hpp"
#include "msacnn/trainer.hpp"

namespace msacnn {

// --- fold plans --------------------------------------------------------------

// Subject-to-fold assignment for repeated subject-wise cross-validation.
// The assignment is fixed across repetitions; repetitions differ only in
// training stochasticity.
struct FoldPlan {
    int k = 0;
    int repetitions = 1;
    std::vector<int> fold_of_subject;  // indexed by subject id

    std::vector<std::uint32_t> fold_subjects(int fold) const {
        std::vector<std::uint32_t> out;
        for (std::size_t s = 0; s < fold_of_subject.size(); ++s)
            if (fold_of_subject[s] == fold) out.push_back(static_cast<std::uint32_t>(s));
        return out;
    }

    std::vector<std::uint32_t> out_of_fold_subjects(int fold) const {
        std::vector<std::uint32_t> out;
        for (std::size_t s = 0; s < fold_of_subject.size(); ++s)
            if (fold_of_subject[s] != fold) out.push_back(static_cast<std::uint32_t>(s));
        return out;
    }
};

inline FoldPlan make_fold_plan(const std::vector<std::uint32_t>& subjects, int k,
                               int repetitions, std::uint64_t seed) {
    if (k < 1) throw ConfigError("make_fold_plan: k must be >= 1");
    if (repetitions < 1) throw ConfigError("make_fold_plan: repetitions must be >= 1");
    if (static_cast<std::size_t>(k) > subjects.size())
        throw ConfigError("make_fold_plan: more folds than subjects");
    std::vector<std::uint32_t> order(subjects);
    std::sort(order.begin(), order.end());
    order.erase(std::unique(order.begin(), order.end()), order.end());
    if (static_cast<std::size_t>(k) > order.size())
        throw ConfigError("make_fold_plan: more folds than distinct subjects");
    RngStream rng(derive_seed(seed, 0x666f6c64ULL));
    rng.shuffle(order);
    FoldPlan plan;
    plan.k = k;
    plan.repetitions = repetitions;
    std::uint32_t max_id = 0;
    for (auto s : order) max_id = std::max(max_id, s);
    plan.fold_of_subject.assign(static_cast<std::size_t>(max_id) + 1, -1);
    for (std::size_t i = 0; i < order.size(); ++i)
        plan.fold_of_subject[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    return plan;
}

// --- confusion matrix and metrics ---------------------------------------------

struct ConfusionMatrix {
    std::array<std::array<long, kNumStages>, kNumStages> counts{};  // [true][pred]

    void add(int truth, int pred) {
        if (truth < 0 || truth >= kNumStages || pred < 0 || pred >= kNumStages)
            throw UsageError("confusion matrix: class index out of range");
        counts[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)] += 1;
    }

    long total() const {
        long n = 0;
        for (const auto& row : counts)
            for (long c : row) n += c;
        return n;
    }

    long tp(int i) const { return counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)]; }

    long row_sum(int i) const {
        long n = 0;
        for (long c : counts[static_cast<std::size_t>(i)]) n += c;
        return n;
    }

    long col_sum(int i) const {
        long n = 0;
        for (const auto& row : counts) n += row[static_cast<std::size_t>(i)];
        return n;
    }

    long fp(int i) const { return col_sum(i) - tp(i); }
    long fn(int i) const { return row_sum(i) - tp(i); }
    long tn(int i) const { return total() - tp(i) - fp(i) - fn(i); }
};

inline double accuracy(const ConfusionMatrix& cm) {
    const long n = cm.total();
    if (n == 0) throw DataError("accuracy: empty confusion matrix");
    long tp = 0;
    for (int i = 0; i < kNumStages; ++i) tp += cm.tp(i);
    return static_cast<double>(tp) / static_cast<double>(n);
}

// Mean over classes of 2 P R / (P + R); a class with an undefined precision
// or recall contributes 0.
inline double macro_f1(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw DataError("macro_f1: empty confusion matrix");
    double sum = 0.0;
    for (int i = 0; i < kNumStages; ++i) {
        const long tp = cm.tp(i), fp = cm.fp(i), fn = cm.fn(i);
        if (tp + fp == 0 || tp + fn == 0) continue;
        const double p = static_cast<double>(tp) / static_cast<double>(tp + fp);
        const double r = static_cast<double>(tp) / static_cast<double>(tp + fn);
        if (p + r > 0.0) sum += 2.0 * p * r / (p + r);
    }
    return sum / kNumStages;
}

inline double cohens_kappa(const ConfusionMatrix& cm) {
    const long n = cm.total();
    if (n == 0) throw DataError("cohens_kappa: empty confusion matrix");
    double po = 0.0, pe = 0.0;
    for (int i = 0; i < kNumStages; ++i) {
        po += static_cast<double>(cm.tp(i));
        pe += static_cast<double>(cm.row_sum(i)) * static_cast<double>(cm.col_sum(i));
    }
    po /= static_cast<double>(n);
    pe /= static_cast<double>(n) * static_cast<double>(n);
    if (pe == 1.0) return 0.0;
    return (po - pe) / (1.0 - pe);
}

// --- paired t-test ------------------------------------------------------------

namespace detail {

// Regularized incomplete beta I_x(a, b) by the Lentz continued fraction.
inline double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kFpMin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

inline double reg_incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

} // namespace detail

// Two-sided p-value of Student's t with nu degrees of freedom.
inline double student_t_two_sided_p(double t, double nu) {
    if (std::isinf(t)) return 0.0;
    const double x = nu / (nu + t * t);
    return detail::reg_incomplete_beta(nu / 2.0, 0.5, x);
}

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    double stderr_of_difference = 0.0;
};

// Two-sided paired t-test over repetition-averaged per-fold metrics. With
// zero variance of the differences: p = 0 if any difference is nonzero,
// otherwise t = 0 and p = 1.
inline TTestResult paired_t_test(const std::vector<double>& a,
                                 const std::vector<double>& b) {
    if (a.size() != b.size()) throw UsageError("paired_t_test: length mismatch");
    const std::size_t n = a.size();
    if (n < 2) throw UsageError("paired_t_test: need at least two pairs");
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = (a[i] - b[i]) - mean;
        ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    TTestResult r;
    r.stderr_of_difference = sd / std::sqrt(static_cast<double>(n));
    if (sd == 0.0) {
        if (mean != 0.0) {
            r.t = mean > 0.0 ? std::numeric_limits<double>::infinity()
                             : -std::numeric_limits<double>::infinity();
            r.p = 0.0;
        } else {
            r.t = 0.0;
            r.p = 1.0;
        }
        return r;
    }
    r.t = mean / r.stderr_of_difference;
    r.p = student_t_two_sided_p(r.t, static_cast<double>(n - 1));
    return r;
}

// --- repeated cross-validation --------------------------------------------------

struct FoldReport {
    int repetition = 0;
    int fold = 0;
    long n_test = 0;
    ConfusionMatrix cm;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double kappa = 0.0;
};

struct AggregateReport {
    // sample-weighted fold means per repetition, then mean/std over repetitions
    double accuracy_mean = 0.0, accuracy_std = 0.0;
    double macro_f1_mean = 0.0, macro_f1_std = 0.0;
    double kappa_mean = 0.0, kappa_std = 0.0;
    std::vector<double> per_repetition_accuracy;
    std::vector<double> fold_mean_accuracy;  // per fold, averaged over repetitions
};

struct CvResult {
    std::vector<FoldReport> folds;  // ordered by (repetition, fold)
    std::vector<TrainHistory> histories;
    std::vector<MsaCnnModel> models;  // populated when keep_models
    AggregateReport aggregate;
};

namespace detail {

inline void mean_std(const std::vector<double>& v, double& mean, double& std_out) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    if (v.size() < 2) {
        std_out = 0.0;
        return;
    }
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    std_out = std::sqrt(ss / static_cast<double>(v.size() - 1));
}

} // namespace detail

// Sample-weighted mean over folds within each repetition, then mean and
// standard deviation across repetitions. `folds` must be keyed by
// (repetition, fold); the result is invariant to fold relabelling.
inline AggregateReport aggregate_fold_reports(const std::vector<FoldReport>& folds, int k,
                                              int repetitions) {
    if (static_cast<int>(folds.size()) != k * repetitions)
        throw UsageError("aggregate_fold_reports: report count does not match the plan");
    AggregateReport agg;
    std::vector<double> rep_acc, rep_f1, rep_kappa;
    for (int rep = 0; rep < repetitions; ++rep) {
        double wa = 0.0, wf = 0.0, wk = 0.0;
        long total = 0;
        for (int fold = 0; fold < k; ++fold) {
            const auto& r = folds[static_cast<std::size_t>(rep * k + fold)];
            wa += r.accuracy * static_cast<double>(r.n_test);
            wf += r.macro_f1 * static_cast<double>(r.n_test);
            wk += r.kappa * static_cast<double>(r.n_test);
            total += r.n_test;
        }
        rep_acc.push_back(wa / static_cast<double>(total));
        rep_f1.push_back(wf / static_cast<double>(total));
        rep_kappa.push_back(wk / static_cast<double>(total));
    }
    agg.per_repetition_accuracy = rep_acc;
    detail::mean_std(rep_acc, agg.accuracy_mean, agg.accuracy_std);
    detail::mean_std(rep_f1, agg.macro_f1_mean, agg.macro_f1_std);
    detail::mean_std(rep_kappa, agg.kappa_mean, agg.kappa_std);
    agg.fold_mean_accuracy.assign(static_cast<std::size_t>(k), 0.0);
    for (int fold = 0; fold < k; ++fold) {
        double s = 0.0;
        for (int rep = 0; rep < repetitions; ++rep)
            s += folds[static_cast<std::size_t>(rep * k + fold)].accuracy;
        agg.fold_mean_accuracy[static_cast<std::size_t>(fold)] = s / repetitions;
    }
    return agg;
}

// Trains and scores every (repetition, fold) job; jobs are independent and
// merged by key order, so the result is the same for any `jobs` value.
inline CvResult run_cv(const ModelConfig& model_cfg, const EpochSet& data,
                       const FoldPlan& plan, const TrainConfig& train_cfg,
                       int jobs = 1, bool keep_models = false) {
    data.validate();
    const auto subjects = data.unique_subjects();
    for (auto s : subjects)
        if (s >= plan.fold_of_subject.size() || plan.fold_of_subject[s] < 0)
            throw ConfigError("run_cv: dataset subject " + std::to_string(s) +
                              " missing from the fold plan");

    const int n_jobs_total = plan.repetitions * plan.k;
    CvResult result;
    result.folds.resize(static_cast<std::size_t>(n_jobs_total));
    result.histories.resize(static_cast<std::size_t>(n_jobs_total));
    if (keep_models) result.models.resize(static_cast<std::size_t>(n_jobs_total));

    auto run_one = [&](int job) {
        const int rep = job / plan.k;
        const int fold = job % plan.k;
        const auto test_subjects = plan.fold_subjects(fold);
        const auto train_subjects = plan.out_of_fold_subjects(fold);
        for (auto ts : test_subjects)
            for (auto tr : train_subjects)
                if (ts == tr)
                    throw InternalError("subject leakage: subject " + std::to_string(ts) +
                                        " in both partitions of fold " + std::to_string(fold));
        EpochSet train_set = subset_by_subjects(data, train_subjects);
        EpochSet test_set = subset_by_subjects(data, test_subjects);
        if (train_set.n_epochs() == 0 || test_set.n_epochs() == 0)
            throw ConfigError("run_cv: fold " + std::to_string(fold) + " has an empty partition");

        MsaCnnModel model = MsaCnnModel::build(
            model_cfg, derive_seed(train_cfg.seed, 0x6375ULL, static_cast<std::uint64_t>(rep),
                                   static_cast<std::uint64_t>(fold)));
        TrainConfig cfg = train_cfg;
        cfg.seed = derive_seed(train_cfg.seed, 0x7472ULL, static_cast<std::uint64_t>(rep),
                               static_cast<std::uint64_t>(fold));
        TrainHistory history = train(model, train_set, cfg);

        FoldReport report;
        report.repetition = rep;
        report.fold = fold;
        report.n_test = test_set.n_epochs();
        for (int i = 0; i < test_set.n_epochs(); ++i)
            report.cm.add(test_set.labels[static_cast<std::size_t>(i)],
                          model.predict(test_set.epoch_matrix(i)));
        report.accuracy = accuracy(report.cm);
        report.macro_f1 = macro_f1(report.cm);
        report.kappa = cohens_kappa(report.cm);
        result.folds[static_cast<std::size_t>(job)] = report;
        result.histories[static_cast<std::size_t>(job)] = std::move(history);
        if (keep_models) result.models[static_cast<std::size_t>(job)] = std::move(model);
    };

    if (jobs <= 1) {
        for (int j = 0; j < n_jobs_total; ++j) run_one(j);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
        for (int w = 0; w < jobs; ++w) {
            pool.emplace_back([&, w]() {
                try {
                    for (int j = next.fetch_add(1); j < n_jobs_total; j = next.fetch_add(1))
                        run_one(j);
                } catch (...) {
                    errors[static_cast<std::size_t>(w)] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    result.aggregate = aggregate_fold_reports(result.folds, plan.k, plan.repetitions);
    return result;
}

// One row per fold: ids, sizes, metrics, and the flattened confusion matrix.
inline std::string fold_reports_csv(const std::vector<FoldReport>& folds) {
    std::vector<std::string> header = {"repetition", "fold",     "n_test",
                                       "accuracy",   "macro_f1", "kappa"};
    for (int i = 0; i < kNumStages; ++i)
        for (int j = 0; j < kNumStages; ++j)
            header.push_back("cm_" + std::to_string(i) + "_" + std::to_string(j));
    CsvWriter w(header);
    for (const auto& f : folds) {
        std::vector<std::string> row = {
            std::to_string(f.repetition), std::to_string(f.fold), std::to_string(f.n_test),
            format_double(f.accuracy), format_double(f.macro_f1), format_double(f.kappa)};
        for (int i = 0; i < kNumStages; ++i)
            for (int j = 0; j < kNumStages; ++j)
                row.push_back(std::to_string(
                    f.cm.counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]));
        w.row(row);
    }
    return w.str();
}

inline std::string summary_text(const AggregateReport& agg) {
    std::ostringstream out;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "accuracy: %.4f +- %.4f\n", agg.accuracy_mean,
                  agg.accuracy_std);
    out << buf;
    std::snprintf(buf, sizeof(buf), "macro_f1: %.4f +- %.4f\n", agg.macro_f1_mean,
                  agg.macro_f1_std);
    out << buf;
    std::snprintf(buf, sizeof(buf), "kappa: %.4f +- %.4f\n", agg.kappa_mean, agg.kappa_std);
    out << buf;
    return out.str();
}

} // namespace msacnn
