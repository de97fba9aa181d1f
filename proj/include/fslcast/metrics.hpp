#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fslcast::metrics {

enum class Convention {
    /// sqrt(mean(squared error))
    rmse,
    /// The printed per-point form, mean of sqrt(e^2), i.e. mean absolute error.
    strict_paper
};

std::string to_string(Convention c);
Convention convention_from_string(const std::string& name);

double rmse(std::span<const double> truth, std::span<const double> pred,
            Convention convention = Convention::rmse);

/// Mean of per-series errors.
double mrmse(std::span<const double> per_series);

struct TrimResult {
    double mean = 0.0;
    double std = 0.0;
    std::size_t removed = 0;
    std::vector<double> kept;
};

/// Drops entries outside mean +- 2 population std (bounds inclusive) in a
/// single pass and recomputes mean and std of the remainder.
TrimResult trim_outliers(std::span<const double> values);

struct EvalReport {
    Convention convention = Convention::rmse;
    std::vector<double> rmse;
    double mrmse = 0.0;
    double trimmed_mrmse = 0.0;
    double trimmed_std = 0.0;
    std::size_t removed_count = 0;

    static EvalReport from(std::span<const double> per_series, Convention convention);
    std::string to_json() const;
    /// "mean±std" cell with 3 decimals.
    std::string cell() const;
};

/// Average ranks (ties share the mean rank), 1-based.
std::vector<double> ranks(std::span<const double> values);
double pearson(std::span<const double> a, std::span<const double> b);
double spearman(std::span<const double> a, std::span<const double> b);

/// One-sided sign test: P(X >= wins) for X ~ Binomial(trials, 1/2).
double sign_test_p(std::size_t wins, std::size_t trials);

double median(std::vector<double> values);

}  // namespace fslcast::metrics
