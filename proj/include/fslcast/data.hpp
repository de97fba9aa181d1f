#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fslcast/timeseries.hpp"

namespace fslcast::data {

struct Dataset {
    std::vector<Series> series;
    std::string source;
    /// Epoch seconds of sample index 0 (0 for index-timed data).
    std::int64_t epoch = 0;
    int granularity_minutes = 1;
    /// Ground-truth group per series; empty for real data.
    std::vector<int> groups;
};

enum class TimeMode { epoch_seconds, sample_index };

struct CsvSchema {
    std::string user_column = "user_id";
    std::string time_column = "timestamp";
    std::string value_column = "value";
    TimeMode time_mode = TimeMode::sample_index;
    /// Granularity of index-timed files; epoch files infer it from the data.
    int granularity_minutes = 1;
    /// Half-open sample-index window [start, end) applied after parsing.
    std::optional<std::int64_t> window_start;
    std::optional<std::int64_t> window_end;
};

/**
 * @brief Reads `user,time,value` rows into one time-sorted series per user.
 *
 * Users keep their first-appearance order. Every user must be contiguous in
 * time; all series are trimmed to the configured window, or to the index
 * range every user covers when no window is given. CRLF line endings are
 * accepted.
 */
Dataset load_csv(const std::string& path, const CsvSchema& schema = {});

/// Writes `user_id,timestamp,value` with 17 significant digits.
void save_csv(const Dataset& dataset, const std::string& path,
              TimeMode time_mode = TimeMode::sample_index);

struct SynthConfig {
    int users_per_group = 20;
    std::vector<int> periods = {10, 15, 20};
    double amplitude = 1.0;
    double noise_sigma = 0.1;
    bool random_phase = true;
    std::size_t length = 480;
    std::uint64_t seed = 0;

    void validate() const;
};

/// x[t] = amplitude * sin(2 pi t / T + phase) + N(0, sigma^2), one group per period.
Dataset synth_generate(const SynthConfig& config);

/// Resamples every series by an integer factor.
Dataset resample(const Dataset& dataset, std::size_t factor);

}  // namespace fslcast::data
