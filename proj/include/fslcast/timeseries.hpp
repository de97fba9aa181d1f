#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fslcast {

/// Horizon of the few-shot test window.
inline constexpr std::size_t kTestHorizon = 72;

/**
 * @brief One user's load sequence.
 *
 * Time is a sample index relative to the dataset epoch plus a sampling
 * granularity in minutes. Values are always non-empty and finite.
 */
class Series {
public:
    Series(std::string user_id, std::int64_t start_index, int granularity_minutes,
           std::vector<double> values);

    /// Anonymous series anchored at index 0 with 1-minute granularity.
    explicit Series(std::vector<double> values);

    const std::string& user_id() const { return user_id_; }
    std::int64_t start_index() const { return start_index_; }
    int granularity_minutes() const { return granularity_minutes_; }
    const std::vector<double>& values() const { return values_; }
    std::size_t size() const { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }

    /// Same identity and anchor, new values.
    Series with_values(std::vector<double> values) const;

    bool operator==(const Series&) const = default;

private:
    std::string user_id_;
    std::int64_t start_index_;
    int granularity_minutes_;
    std::vector<double> values_;
};

struct FewShotSplit {
    Series train;
    Series test;
};

/// Bucket-average k consecutive samples; the trailing remainder is dropped.
Series resample(const Series& series, std::size_t k);

/// Zero mean, unit population standard deviation. Throws DegenerateSeries on zero std.
Series standardize(const Series& series);

/// First k points for training, the following `horizon` points for testing.
FewShotSplit split_few_shot(const Series& series, std::size_t k,
                            std::size_t horizon = kTestHorizon);

Series slice_window(const Series& series, std::size_t start, std::size_t length);

double mean(std::span<const double> values);
/// Population (divide-by-N) standard deviation.
double population_std(std::span<const double> values);
double population_variance(std::span<const double> values);

}  // namespace fslcast
