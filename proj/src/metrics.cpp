#include "fslcast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "fslcast/error.hpp"

namespace fslcast::metrics {

namespace {

double mean_of(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double pop_std(std::span<const double> v, double mu) {
    double acc = 0.0;
    for (double x : v) acc += (x - mu) * (x - mu);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

std::string to_string(Convention c) { return c == Convention::rmse ? "rmse" : "strict_paper"; }

Convention convention_from_string(const std::string& name) {
    if (name == "rmse") return Convention::rmse;
    if (name == "strict_paper" || name == "strict") return Convention::strict_paper;
    throw ConfigError("unknown metric convention '" + name + "'");
}

double rmse(std::span<const double> truth, std::span<const double> pred, Convention convention) {
    if (truth.size() != pred.size())
        throw InvalidArgument("rmse: length mismatch (" + std::to_string(truth.size()) + " vs " +
                              std::to_string(pred.size()) + ")");
    if (truth.empty()) throw InvalidArgument("rmse: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double e = truth[i] - pred[i];
        acc += convention == Convention::rmse ? e * e : std::sqrt(e * e);
    }
    acc /= static_cast<double>(truth.size());
    return convention == Convention::rmse ? std::sqrt(acc) : acc;
}

double mrmse(std::span<const double> per_series) {
    if (per_series.empty()) throw InvalidArgument("mrmse: no series");
    return mean_of(per_series);
}

TrimResult trim_outliers(std::span<const double> values) {
    if (values.size() < 2) throw InvalidArgument("trim_outliers needs at least 2 entries");
    const double mu = mean_of(values);
    const double s = pop_std(values, mu);
    // Rounding slack so an all-equal list never loses entries to a mean off by one ulp.
    const double slack = 1e-12 * std::max(1.0, std::abs(mu));
    TrimResult out;
    for (double v : values) {
        if (v >= mu - 2.0 * s - slack && v <= mu + 2.0 * s + slack) {
            out.kept.push_back(v);
        } else {
            ++out.removed;
        }
    }
    if (out.kept.empty()) throw std::logic_error("trim_outliers removed every entry");
    out.mean = mean_of(out.kept);
    out.std = pop_std(out.kept, out.mean);
    return out;
}

EvalReport EvalReport::from(std::span<const double> per_series, Convention convention) {
    EvalReport r;
    r.convention = convention;
    r.rmse.assign(per_series.begin(), per_series.end());
    r.mrmse = metrics::mrmse(per_series);
    if (per_series.size() >= 2) {
        const TrimResult t = trim_outliers(per_series);
        r.trimmed_mrmse = t.mean;
        r.trimmed_std = t.std;
        r.removed_count = t.removed;
    } else {
        r.trimmed_mrmse = r.mrmse;
    }
    return r;
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["convention"] = to_string(convention);
    j["rmse"] = rmse;
    j["mrmse"] = mrmse;
    j["trimmed_mrmse"] = trimmed_mrmse;
    j["trimmed_std"] = trimmed_std;
    j["removed_count"] = removed_count;
    return j.dump();
}

std::string EvalReport::cell() const {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f\u00b1%.3f", trimmed_mrmse, trimmed_std);
    return buf;
}

std::vector<double> ranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> out(values.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t m = i; m <= j; ++m) out[order[m]] = avg;
        i = j + 1;
    }
    return out;
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw InvalidArgument("pearson: need two equal-length samples");
    const double ma = mean_of(a);
    const double mb = mean_of(b);
    double sab = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return std::nan("");
    return sab / std::sqrt(saa * sbb);
}

double spearman(std::span<const double> a, std::span<const double> b) {
    const auto ra = ranks(a);
    const auto rb = ranks(b);
    return pearson(ra, rb);
}

double sign_test_p(std::size_t wins, std::size_t trials) {
    if (wins > trials) throw InvalidArgument("sign test: wins exceed trials");
    double p = 0.0;
    for (std::size_t x = wins; x <= trials; ++x) {
        // log C(trials, x) - trials * log 2
        const double log_term = std::lgamma(static_cast<double>(trials) + 1.0) -
                                std::lgamma(static_cast<double>(x) + 1.0) -
                                std::lgamma(static_cast<double>(trials - x) + 1.0) -
                                static_cast<double>(trials) * std::log(2.0);
        p += std::exp(log_term);
    }
    return std::min(1.0, p);
}

double median(std::vector<double> values) {
    if (values.empty()) throw InvalidArgument("median of empty list");
    std::sort(values.begin(), values.end());
    const std::size_t mid = values.size() / 2;
    return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

}  // namespace fslcast::metrics
