#include "fslcast/wavelet.hpp"

#include <algorithm>
#include <cmath>

#include "fslcast/error.hpp"

namespace fslcast::wavelet {

namespace {

std::vector<double> alternating_reversal(const std::vector<double>& lowpass) {
    const std::size_t n = lowpass.size();
    std::vector<double> high(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double sign = (k % 2 == 0) ? 1.0 : -1.0;
        high[k] = sign * lowpass[n - 1 - k];
    }
    return high;
}

double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
        m = 0.5 * (m + lower);
    }
    return m;
}

}  // namespace

std::string to_string(Family family) {
    switch (family) {
        case Family::haar: return "haar";
        case Family::db2: return "db2";
        case Family::db4: return "db4";
    }
    return "unknown";
}

Family family_from_string(const std::string& name) {
    if (name == "haar") return Family::haar;
    if (name == "db2") return Family::db2;
    if (name == "db4") return Family::db4;
    throw InvalidArgument("unknown wavelet family '" + name + "'");
}

WaveletSpec WaveletSpec::make(Family family) {
    WaveletSpec spec{family, {}, {}};
    switch (family) {
        case Family::haar: {
            const double s = 1.0 / std::sqrt(2.0);
            spec.lowpass = {s, s};
            break;
        }
        case Family::db2: {
            const double r3 = std::sqrt(3.0);
            const double d = 4.0 * std::sqrt(2.0);
            spec.lowpass = {(1 + r3) / d, (3 + r3) / d, (3 - r3) / d, (1 - r3) / d};
            break;
        }
        case Family::db4:
            spec.lowpass = {0.2303778133088965,   0.7148465705529157,  0.6308807679298589,
                            -0.027983769416859854, -0.18703481171909309, 0.030841381835560764,
                            0.0328830116668852,    -0.010597401785069032};
            break;
    }
    spec.highpass = alternating_reversal(spec.lowpass);
    return spec;
}

int max_level(std::size_t signal_len, std::size_t filter_len) {
    if (filter_len == 0) throw InvalidArgument("filter length must be positive");
    if (signal_len < filter_len)
        throw InvalidArgument("signal length " + std::to_string(signal_len) +
                              " is shorter than filter length " + std::to_string(filter_len));
    int level = 0;
    // floor(log2(a/b)) without floating point: largest j with b * 2^j <= a.
    std::size_t scaled = filter_len;
    while (scaled * 2 <= signal_len) {
        scaled *= 2;
        ++level;
    }
    return level;
}

double energy(std::span<const double> x) {
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return acc;
}

void analysis_step(std::span<const double> x, const WaveletSpec& spec, std::vector<double>& low,
                   std::vector<double>& high) {
    const std::size_t n = x.size();
    if (n == 0 || n % 2 != 0)
        throw InvalidArgument("analysis step needs a positive even length, got " +
                              std::to_string(n));
    const std::size_t half = n / 2;
    const std::size_t taps = spec.filter_length();
    low.assign(half, 0.0);
    high.assign(half, 0.0);
    for (std::size_t k = 0; k < half; ++k) {
        double a = 0.0;
        double d = 0.0;
        for (std::size_t t = 0; t < taps; ++t) {
            const double v = x[(2 * k + t) % n];
            a += spec.lowpass[t] * v;
            d += spec.highpass[t] * v;
        }
        low[k] = a;
        high[k] = d;
    }
}

std::vector<double> synthesis_step(std::span<const double> low, std::span<const double> high,
                                   const WaveletSpec& spec) {
    if (low.size() != high.size())
        throw InvalidArgument("synthesis step: approximation/detail length mismatch");
    const std::size_t half = low.size();
    const std::size_t n = 2 * half;
    const std::size_t taps = spec.filter_length();
    std::vector<double> x(n, 0.0);
    for (std::size_t k = 0; k < half; ++k) {
        for (std::size_t t = 0; t < taps; ++t) {
            x[(2 * k + t) % n] += spec.lowpass[t] * low[k] + spec.highpass[t] * high[k];
        }
    }
    return x;
}

WaveletTree dwpt(std::span<const double> signal, int levels, const WaveletSpec& spec) {
    if (levels < 1) throw InvalidArgument("dwpt needs at least one level");
    if (levels >= 63 || signal.size() < (std::size_t{1} << levels))
        throw InvalidArgument("signal of length " + std::to_string(signal.size()) +
                              " is too short for " + std::to_string(levels) + " packet levels");
    if (signal.size() % (std::size_t{1} << levels) != 0)
        throw InvalidArgument("dwpt needs a length divisible by 2^" + std::to_string(levels) +
                              ", got " + std::to_string(signal.size()));
    WaveletTree tree;
    tree.levels = levels;
    tree.nodes.resize(static_cast<std::size_t>(levels) + 1);
    tree.nodes[0].emplace_back(signal.begin(), signal.end());
    for (int j = 0; j < levels; ++j) {
        auto& parent = tree.nodes[static_cast<std::size_t>(j)];
        auto& children = tree.nodes[static_cast<std::size_t>(j) + 1];
        children.resize(parent.size() * 2);
        for (std::size_t i = 0; i < parent.size(); ++i) {
            analysis_step(parent[i], spec, children[2 * i], children[2 * i + 1]);
        }
    }
    for (const auto& leaf : tree.leaves()) tree.total_energy += energy(leaf);
    return tree;
}

WaveletTree dwpt(const Series& series, int levels, const WaveletSpec& spec) {
    return dwpt(series.values(), levels, spec);
}

std::vector<double> idwpt(const WaveletTree& tree, const WaveletSpec& spec) {
    if (tree.nodes.empty()) throw InvalidArgument("empty packet tree");
    std::vector<std::vector<double>> level = tree.leaves();
    for (int j = tree.levels; j > 0; --j) {
        std::vector<std::vector<double>> parent(level.size() / 2);
        for (std::size_t i = 0; i < parent.size(); ++i) {
            parent[i] = synthesis_step(level[2 * i], level[2 * i + 1], spec);
        }
        level = std::move(parent);
    }
    return level.front();
}

DwtPyramid dwt(std::span<const double> signal, int level, const WaveletSpec& spec) {
    if (level < 1) throw InvalidArgument("dwt level must be >= 1");
    // Structural bound only: every level needs at least two input samples.
    // The edge-effect bound from max_level is applied by the callers that
    // pick a level (denoising, feature extraction).
    if (level >= 63 || (std::size_t{1} << level) > signal.size())
        throw InvalidArgument("dwt level " + std::to_string(level) + " is too deep for length " +
                              std::to_string(signal.size()));
    DwtPyramid pyramid;
    std::vector<double> current(signal.begin(), signal.end());
    std::vector<double> low;
    std::vector<double> high;
    for (int j = 0; j < level; ++j) {
        pyramid.lengths.push_back(current.size());
        // Odd lengths are extended by repeating the last sample; idwt crops it off.
        if (current.size() % 2 != 0) current.push_back(current.back());
        analysis_step(current, spec, low, high);
        pyramid.details.push_back(high);
        current = low;
    }
    pyramid.approximation = std::move(current);
    return pyramid;
}

DwtPyramid dwt(const Series& series, int level, const WaveletSpec& spec) {
    return dwt(series.values(), level, spec);
}

std::vector<double> idwt(const DwtPyramid& pyramid, const WaveletSpec& spec) {
    if (pyramid.details.size() != pyramid.lengths.size() || pyramid.details.empty())
        throw InvalidArgument("idwt: inconsistent pyramid shape");
    std::vector<double> current = pyramid.approximation;
    for (int j = pyramid.levels() - 1; j >= 0; --j) {
        const auto& detail = pyramid.details[static_cast<std::size_t>(j)];
        const std::size_t target = pyramid.lengths[static_cast<std::size_t>(j)];
        if (detail.size() != current.size() || (target + 1) / 2 != current.size())
            throw InvalidArgument("idwt: coefficient length mismatch at level " +
                                  std::to_string(j + 1));
        current = synthesis_step(current, detail, spec);
        current.resize(target);
    }
    return current;
}

double threshold(double x, double t, ThresholdMode mode) {
    if (mode == ThresholdMode::hard) return std::abs(x) > t ? x : 0.0;
    if (x <= -t) return x + t;
    if (x >= t) return x - t;
    return 0.0;
}

std::vector<double> threshold(std::span<const double> coeffs, double t, ThresholdMode mode) {
    if (t < 0.0) throw InvalidArgument("threshold must be non-negative");
    std::vector<double> out(coeffs.size());
    for (std::size_t i = 0; i < coeffs.size(); ++i) out[i] = threshold(coeffs[i], t, mode);
    return out;
}

double universal_threshold(std::span<const double> finest_detail, std::size_t n) {
    std::vector<double> magnitudes(finest_detail.size());
    for (std::size_t i = 0; i < magnitudes.size(); ++i) magnitudes[i] = std::abs(finest_detail[i]);
    const double sigma = median_of(std::move(magnitudes)) / 0.6745;
    if (n < 2) return 0.0;
    return sigma * std::sqrt(2.0 * std::log(static_cast<double>(n)));
}

std::vector<double> denoise(std::span<const double> signal, const DenoiseConfig& config) {
    const WaveletSpec spec = WaveletSpec::make(config.family);
    const int level = max_level(signal.size(), spec.filter_length());
    if (level == 0) return {signal.begin(), signal.end()};
    DwtPyramid pyramid = dwt(signal, level, spec);
    const double t = config.threshold_override.value_or(
        universal_threshold(pyramid.details.front(), signal.size()));
    for (auto& detail : pyramid.details) detail = threshold(detail, t, config.mode);
    return idwt(pyramid, spec);
}

Series denoise(const Series& series, const DenoiseConfig& config) {
    return series.with_values(denoise(std::span<const double>(series.values()), config));
}

}  // namespace fslcast::wavelet
