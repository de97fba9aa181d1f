#include "fslcast/timeseries.hpp"

#include <cmath>
#include <numeric>
#include <utility>

#include "fslcast/error.hpp"

namespace fslcast {

Series::Series(std::string user_id, std::int64_t start_index, int granularity_minutes,
               std::vector<double> values)
    : user_id_(std::move(user_id)),
      start_index_(start_index),
      granularity_minutes_(granularity_minutes),
      values_(std::move(values)) {
    if (values_.empty()) throw InvalidArgument("series '" + user_id_ + "' is empty");
    if (granularity_minutes_ <= 0)
        throw InvalidArgument("series '" + user_id_ + "' has non-positive granularity");
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i]))
            throw InvalidArgument("series '" + user_id_ + "' has a non-finite value at " +
                                  std::to_string(i));
    }
}

Series::Series(std::vector<double> values) : Series("", 0, 1, std::move(values)) {}

Series Series::with_values(std::vector<double> values) const {
    return Series(user_id_, start_index_, granularity_minutes_, std::move(values));
}

double mean(std::span<const double> values) {
    if (values.empty()) return 0.0;
    return std::accumulate(values.begin(), values.end(), 0.0) /
           static_cast<double>(values.size());
}

double population_variance(std::span<const double> values) {
    if (values.empty()) return 0.0;
    const double mu = mean(values);
    double acc = 0.0;
    for (double v : values) acc += (v - mu) * (v - mu);
    return acc / static_cast<double>(values.size());
}

double population_std(std::span<const double> values) {
    return std::sqrt(population_variance(values));
}

Series resample(const Series& series, std::size_t k) {
    if (k == 0) throw InvalidArgument("resample factor must be >= 1");
    if (series.size() < k)
        throw InvalidArgument("series shorter than resample factor " + std::to_string(k));
    const std::size_t out_len = series.size() / k;
    std::vector<double> out(out_len);
    const auto& v = series.values();
    for (std::size_t m = 0; m < out_len; ++m) {
        double acc = 0.0;
        for (std::size_t i = m * k; i < m * k + k; ++i) acc += v[i];
        out[m] = acc / static_cast<double>(k);
    }
    const auto kk = static_cast<std::int64_t>(k);
    // Anchor stays on the coarse grid: start index is expressed in output samples.
    return Series(series.user_id(), series.start_index() / kk,
                  series.granularity_minutes() * static_cast<int>(k), std::move(out));
}

Series standardize(const Series& series) {
    if (series.size() < 2) throw InvalidArgument("standardize needs at least 2 samples");
    const double mu = mean(series.values());
    const double sd = population_std(series.values());
    if (!(sd > 0.0)) throw DegenerateSeries("standardize: zero standard deviation");
    std::vector<double> out(series.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (series[i] - mu) / sd;
    return series.with_values(std::move(out));
}

FewShotSplit split_few_shot(const Series& series, std::size_t k, std::size_t horizon) {
    if (k == 0) throw InvalidArgument("few-shot k must be >= 1");
    const std::size_t needed = k + horizon;
    if (series.size() < needed)
        throw InvalidArgument("few-shot split needs at least " + std::to_string(needed) +
                              " samples, got " + std::to_string(series.size()));
    return FewShotSplit{slice_window(series, 0, k), slice_window(series, k, horizon)};
}

Series slice_window(const Series& series, std::size_t start, std::size_t length) {
    if (length == 0) throw InvalidArgument("slice length must be positive");
    if (start > series.size() || length > series.size() - start)
        throw InvalidArgument("slice [" + std::to_string(start) + ", " +
                              std::to_string(start + length) + ") exceeds series length " +
                              std::to_string(series.size()));
    std::vector<double> out(series.values().begin() + static_cast<std::ptrdiff_t>(start),
                            series.values().begin() + static_cast<std::ptrdiff_t>(start + length));
    return Series(series.user_id(), series.start_index() + static_cast<std::int64_t>(start),
                  series.granularity_minutes(), std::move(out));
}

}  // namespace fslcast
