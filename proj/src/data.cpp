#include "fslcast/data.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "fslcast/error.hpp"
#include "fslcast/seed.hpp"

namespace fslcast::data {

namespace {

struct Row {
    std::int64_t time;
    double value;
    std::size_t line;
};

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::string trim(std::string s) {
    const auto notspace = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
    s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
    return s;
}

bool parse_double(const std::string& text, double& out) {
    if (text.empty()) return false;
    char* end = nullptr;
    errno = 0;
    out = std::strtod(text.c_str(), &end);
    return end == text.c_str() + text.size() && errno != ERANGE;
}

bool parse_int(const std::string& text, std::int64_t& out) {
    if (text.empty()) return false;
    char* end = nullptr;
    errno = 0;
    out = std::strtoll(text.c_str(), &end, 10);
    return end == text.c_str() + text.size() && errno != ERANGE;
}

std::size_t column_index(const std::vector<std::string>& header, const std::string& name,
                         const std::string& path) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(path + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    std::vector<std::string> header = split_fields(line);
    for (auto& h : header) h = trim(h);
    const std::size_t ucol = column_index(header, schema.user_column, path);
    const std::size_t tcol = column_index(header, schema.time_column, path);
    const std::size_t vcol = column_index(header, schema.value_column, path);

    std::vector<std::string> order;
    std::map<std::string, std::vector<Row>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != header.size())
            throw DataError(path + ": row " + std::to_string(line_no) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(header.size()));
        const std::string user = trim(fields[ucol]);
        if (user.empty()) throw DataError(path + ": row " + std::to_string(line_no) + " has an empty user id");
        Row r{0, 0.0, line_no};
        if (!parse_int(trim(fields[tcol]), r.time))
            throw DataError(path + ": row " + std::to_string(line_no) + " has a non-integer timestamp '" +
                            fields[tcol] + "'");
        if (!parse_double(trim(fields[vcol]), r.value) || !std::isfinite(r.value))
            throw DataError(path + ": row " + std::to_string(line_no) + " has a non-numeric or non-finite value '" +
                            fields[vcol] + "'");
        auto [it, inserted] = rows.try_emplace(user);
        if (inserted) order.push_back(user);
        it->second.push_back(r);
    }
    if (order.empty()) throw DataError(path + ": no data rows");

    for (auto& [user, list] : rows)
        std::stable_sort(list.begin(), list.end(), [](const Row& a, const Row& b) { return a.time < b.time; });

    Dataset ds;
    ds.source = path;
    std::int64_t step = 1;
    if (schema.time_mode == TimeMode::epoch_seconds) {
        std::int64_t smallest = 0;
        std::int64_t earliest = rows.at(order.front()).front().time;
        for (const auto& [user, list] : rows) {
            earliest = std::min(earliest, list.front().time);
            for (std::size_t i = 1; i < list.size(); ++i) {
                const std::int64_t d = list[i].time - list[i - 1].time;
                if (d > 0 && (smallest == 0 || d < smallest)) smallest = d;
            }
        }
        if (smallest == 0) smallest = 60;
        if (smallest % 60 != 0)
            throw DataError(path + ": sampling interval of " + std::to_string(smallest) +
                            " s is not a whole number of minutes");
        step = smallest;
        ds.epoch = earliest;
        ds.granularity_minutes = static_cast<int>(smallest / 60);
    } else {
        ds.epoch = 0;
        ds.granularity_minutes = schema.granularity_minutes;
    }

    std::int64_t common_lo = std::numeric_limits<std::int64_t>::min();
    std::int64_t common_hi = std::numeric_limits<std::int64_t>::max();
    std::vector<Series> parsed;
    for (const auto& user : order) {
        const auto& list = rows.at(user);
        std::vector<double> values;
        values.reserve(list.size());
        std::int64_t first_index = 0;
        for (std::size_t i = 0; i < list.size(); ++i) {
            const std::int64_t offset = list[i].time - ds.epoch;
            if (offset % step != 0)
                throw DataError(path + ": row " + std::to_string(list[i].line) +
                                " is off the sampling grid");
            const std::int64_t index = offset / step;
            if (i == 0) {
                first_index = index;
            } else {
                const std::int64_t expected = first_index + static_cast<std::int64_t>(i);
                if (index == expected - 1)
                    throw DataError(path + ": user '" + user + "' has a duplicate timestamp at row " +
                                    std::to_string(list[i].line));
                if (index != expected)
                    throw DataError(path + ": user '" + user + "' has a gap before row " +
                                    std::to_string(list[i].line));
            }
            values.push_back(list[i].value);
        }
        const std::int64_t end_index = first_index + static_cast<std::int64_t>(values.size());
        common_lo = std::max(common_lo, first_index);
        common_hi = std::min(common_hi, end_index);
        parsed.emplace_back(user, first_index, ds.granularity_minutes, std::move(values));
    }

    const std::int64_t lo = schema.window_start.value_or(common_lo);
    const std::int64_t hi = schema.window_end.value_or(common_hi);
    if (hi <= lo) throw DataError(path + ": users share no common time window");
    for (const auto& s : parsed) {
        if (s.start_index() > lo || s.start_index() + static_cast<std::int64_t>(s.size()) < hi)
            throw DataError(path + ": user '" + s.user_id() + "' does not cover the window [" +
                            std::to_string(lo) + ", " + std::to_string(hi) + ")");
        ds.series.push_back(slice_window(s, static_cast<std::size_t>(lo - s.start_index()),
                                         static_cast<std::size_t>(hi - lo)));
    }
    return ds;
}

void save_csv(const Dataset& dataset, const std::string& path, TimeMode time_mode) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << "user_id,timestamp,value\n";
    char buf[64];
    const std::int64_t seconds = static_cast<std::int64_t>(dataset.granularity_minutes) * 60;
    for (const auto& s : dataset.series) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            const std::int64_t index = s.start_index() + static_cast<std::int64_t>(i);
            const std::int64_t t = time_mode == TimeMode::sample_index ? index : dataset.epoch + index * seconds;
            std::snprintf(buf, sizeof(buf), "%.17g", s[i]);
            out << s.user_id() << ',' << t << ',' << buf << '\n';
        }
    }
    if (!out) throw DataError("failed writing '" + path + "'");
}

void SynthConfig::validate() const {
    if (users_per_group < 1) throw ConfigError("synthetic users per group must be >= 1");
    if (periods.empty()) throw ConfigError("synthetic periods must not be empty");
    for (int p : periods)
        if (p < 2) throw ConfigError("synthetic periods must be >= 2");
    if (!(noise_sigma >= 0.0)) throw ConfigError("synthetic noise sigma must be >= 0");
    const int longest = *std::max_element(periods.begin(), periods.end());
    if (length < 2 * static_cast<std::size_t>(longest))
        throw ConfigError("synthetic length must cover two of the longest period");
}

Dataset synth_generate(const SynthConfig& config) {
    config.validate();
    Dataset ds;
    ds.source = "synthetic";
    ds.granularity_minutes = 1;
    for (std::size_t g = 0; g < config.periods.size(); ++g) {
        const double period = config.periods[g];
        for (int u = 0; u < config.users_per_group; ++u) {
            std::mt19937_64 rng(derive_seed(config.seed, {g, static_cast<std::uint64_t>(u)}));
            std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
            const double phase = config.random_phase ? phase_dist(rng) : 0.0;
            std::normal_distribution<double> noise(0.0, 1.0);
            std::vector<double> values(config.length);
            for (std::size_t t = 0; t < config.length; ++t) {
                const double clean =
                    config.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase);
                values[t] = clean + (config.noise_sigma > 0.0 ? config.noise_sigma * noise(rng) : 0.0);
            }
            ds.series.emplace_back("g" + std::to_string(g) + "_u" + std::to_string(u), 0, 1, std::move(values));
            ds.groups.push_back(static_cast<int>(g));
        }
    }
    return ds;
}

Dataset resample(const Dataset& dataset, std::size_t factor) {
    Dataset out = dataset;
    out.series.clear();
    for (const auto& s : dataset.series) out.series.push_back(fslcast::resample(s, factor));
    out.granularity_minutes = dataset.granularity_minutes * static_cast<int>(factor);
    return out;
}

}  // namespace fslcast::data
