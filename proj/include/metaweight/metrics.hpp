#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "metaweight/dataset.hpp"
#include "metaweight/errors.hpp"

namespace metaweight {

struct EpochRecord {
    long epoch = 0;
    double train_loss = 0.0;
    double test_acc = 0.0;
    double meta_val_acc = 0.0;
    double mean_weight_clean = 0.0;
    double mean_weight_corrupted = 0.0;
    double kl_mean = 0.0;
    double grad_norm_sq = 0.0;
};

struct RunSummary {
    double best_test_acc = 0.0;
    long best_epoch = -1;
    double last10_mean_acc = 0.0;
};

struct RunMetrics {
    std::vector<EpochRecord> epochs;
    // Full per-iteration trace of ||grad_Theta L_train||^2 (the convergence
    // diagnostic); the per-epoch records carry its epoch means.
    std::vector<double> iteration_grad_norm_sq;
};

struct WeightSeparation {
    double mean_clean = std::numeric_limits<double>::quiet_NaN();
    double mean_corrupted = std::numeric_limits<double>::quiet_NaN();
    // P(random clean weight > random corrupted weight), ties counting 1/2.
    double rank_stat = std::numeric_limits<double>::quiet_NaN();
    bool rank_defined = false;
};

/// Group means plus the U/(n1*n2) rank statistic; with an empty group only
/// the other group's mean is defined and rank_defined stays false.
inline WeightSeparation weight_separation(std::span<const double> weights,
                                          const std::vector<bool>& corrupted) {
    if (weights.size() != corrupted.size())
        throw ContractError("weight_separation: length mismatch");
    std::vector<double> clean, noisy;
    for (std::size_t i = 0; i < weights.size(); ++i)
        (corrupted[i] ? noisy : clean).push_back(weights[i]);

    WeightSeparation out;
    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    if (!clean.empty()) out.mean_clean = mean(clean);
    if (!noisy.empty()) out.mean_corrupted = mean(noisy);
    if (clean.empty() || noisy.empty()) return out;

    std::sort(noisy.begin(), noisy.end());
    double u = 0.0;
    for (double w : clean) {
        const auto lo = std::lower_bound(noisy.begin(), noisy.end(), w);
        const auto hi = std::upper_bound(lo, noisy.end(), w);
        u += static_cast<double>(lo - noisy.begin());
        u += 0.5 * static_cast<double>(hi - lo);
    }
    out.rank_stat = u / (static_cast<double>(clean.size()) * static_cast<double>(noisy.size()));
    out.rank_defined = true;
    return out;
}

/// Best = test accuracy at the (first) epoch maximizing validation accuracy
/// on the meta set; Last = mean test accuracy over the final min(10, E) epochs.
inline RunSummary summarize_run(const std::vector<EpochRecord>& epochs) {
    if (epochs.empty()) throw ContractError("summarize_run: empty history");
    RunSummary s;
    std::size_t best = 0;
    for (std::size_t i = 1; i < epochs.size(); ++i)
        if (epochs[i].meta_val_acc > epochs[best].meta_val_acc) best = i;
    s.best_epoch = epochs[best].epoch;
    s.best_test_acc = epochs[best].test_acc;

    const std::size_t tail = std::min<std::size_t>(10, epochs.size());
    double acc = 0.0;
    for (std::size_t i = epochs.size() - tail; i < epochs.size(); ++i)
        acc += epochs[i].test_acc;
    s.last10_mean_acc = acc / static_cast<double>(tail);
    return s;
}

/// Equal-width fixed-range counts; intervals are right-open except the last,
/// which also includes `hi`. Out-of-range values are dropped.
inline std::vector<std::size_t> histogram(std::span<const double> values, std::size_t bins,
                                          double lo, double hi) {
    if (bins < 1) throw ContractError("histogram: bins must be >= 1");
    if (!(hi > lo)) throw ContractError("histogram: empty range");
    std::vector<std::size_t> counts(bins, 0);
    const double width = (hi - lo) / static_cast<double>(bins);
    for (double v : values) {
        if (v < lo || v > hi) continue;
        auto idx = static_cast<std::size_t>((v - lo) / width);
        if (idx >= bins) idx = bins - 1;  // v == hi (or rounding at the edge)
        ++counts[idx];
    }
    return counts;
}

namespace detail {
inline std::string metric_value(double v) {
    if (std::isnan(v)) return "nan";
    return format_double_exact(v);
}
}  // namespace detail

inline const char* kMetricsHeader =
    "epoch,train_loss,test_acc,meta_val_acc,mean_weight_clean,"
    "mean_weight_corrupted,kl_mean,grad_norm_sq";

inline void write_metrics_csv(std::ostream& os, const std::vector<EpochRecord>& epochs) {
    os << kMetricsHeader << "\n";
    for (const auto& r : epochs) {
        os << r.epoch << ',' << detail::metric_value(r.train_loss) << ','
           << detail::metric_value(r.test_acc) << ',' << detail::metric_value(r.meta_val_acc)
           << ',' << detail::metric_value(r.mean_weight_clean) << ','
           << detail::metric_value(r.mean_weight_corrupted) << ','
           << detail::metric_value(r.kl_mean) << ',' << detail::metric_value(r.grad_norm_sq)
           << "\n";
    }
}

inline std::vector<EpochRecord> read_metrics_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ParseError("metrics csv: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kMetricsHeader) throw ParseError("metrics csv: unexpected header: " + line);
    std::vector<EpochRecord> out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> f = detail::split_csv_line(line);
        if (f.size() != 8) throw ParseError("metrics csv: wrong field count on line " +
                                            std::to_string(lineno));
        EpochRecord r;
        r.epoch = detail::parse_int(f[0], lineno, "epoch");
        r.train_loss = detail::parse_double(f[1], lineno, "train_loss");
        r.test_acc = detail::parse_double(f[2], lineno, "test_acc");
        r.meta_val_acc = detail::parse_double(f[3], lineno, "meta_val_acc");
        r.mean_weight_clean = detail::parse_double(f[4], lineno, "mean_weight_clean");
        r.mean_weight_corrupted = detail::parse_double(f[5], lineno, "mean_weight_corrupted");
        r.kl_mean = detail::parse_double(f[6], lineno, "kl_mean");
        r.grad_norm_sq = detail::parse_double(f[7], lineno, "grad_norm_sq");
        out.push_back(r);
    }
    return out;
}

inline void write_summary_json(std::ostream& os, const RunSummary& s, std::size_t epochs) {
    nlohmann::json j;
    j["best_test_acc"] = s.best_test_acc;
    j["best_epoch"] = s.best_epoch;
    j["last10_mean_acc"] = s.last10_mean_acc;
    j["epochs"] = epochs;
    os << j.dump(2) << "\n";
}

inline RunSummary read_summary_json(std::istream& is) {
    nlohmann::json j = nlohmann::json::parse(is);
    RunSummary s;
    s.best_test_acc = j.at("best_test_acc").get<double>();
    s.best_epoch = j.at("best_epoch").get<long>();
    s.last10_mean_acc = j.at("last10_mean_acc").get<double>();
    return s;
}

struct WeightDumpRow {
    std::size_t sample_index = 0;
    double raw_weight = 0.0;
    double normalized_weight = 0.0;
    bool corrupted = false;
};

inline void write_weight_dump_csv(std::ostream& os, const std::vector<WeightDumpRow>& rows) {
    os << "sample_index,raw_weight,normalized_weight,corrupted\n";
    for (const auto& r : rows)
        os << r.sample_index << ',' << detail::metric_value(r.raw_weight) << ','
           << detail::metric_value(r.normalized_weight) << ',' << (r.corrupted ? 1 : 0)
           << "\n";
}

}  // namespace metaweight
