#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fslcast/timeseries.hpp"

namespace fslcast::wavelet {

enum class Family { haar, db2, db4 };

std::string to_string(Family family);
Family family_from_string(const std::string& name);

/// Orthonormal two-channel filter pair. Highpass is the alternating-sign
/// reversal of the lowpass.
struct WaveletSpec {
    Family family;
    std::vector<double> lowpass;
    std::vector<double> highpass;

    static WaveletSpec make(Family family);
    std::size_t filter_length() const { return lowpass.size(); }
};

/**
 * @brief Full wavelet packet tree.
 *
 * `nodes[j]` holds the 2^j coefficient sets of level j in natural order:
 * node i of level j splits into node 2i (lowpass) and 2i+1 (highpass) of
 * level j+1. Level 0 is the input signal itself.
 */
struct WaveletTree {
    int levels = 0;
    std::vector<std::vector<std::vector<double>>> nodes;
    double total_energy = 0.0;

    const std::vector<std::vector<double>>& leaves() const { return nodes.back(); }
};

/// Approximation at the coarsest level plus details d_1 (finest) ... d_L.
/// `lengths[j]` is the signal length entering level j+1, kept so odd lengths
/// reconstruct exactly.
struct DwtPyramid {
    std::vector<double> approximation;
    std::vector<std::vector<double>> details;
    std::vector<std::size_t> lengths;

    int levels() const { return static_cast<int>(details.size()); }
};

enum class ThresholdMode {
    soft,  ///< x+T / 0 / x-T shrinkage
    hard   ///< keep if |x| > T, else zero
};

struct DenoiseConfig {
    Family family = Family::db4;
    ThresholdMode mode = ThresholdMode::soft;
    /// Replaces the universal threshold when set.
    std::optional<double> threshold_override;
};

/// floor(log2(signal_len / filter_len)).
int max_level(std::size_t signal_len, std::size_t filter_len);

/// One analysis step with periodic extension; input length must be even.
void analysis_step(std::span<const double> x, const WaveletSpec& spec, std::vector<double>& low,
                   std::vector<double>& high);

/// Inverse of analysis_step; output has twice the coefficient length.
std::vector<double> synthesis_step(std::span<const double> low, std::span<const double> high,
                                   const WaveletSpec& spec);

/// Wavelet packet decomposition to depth L. Requires len divisible by 2^L.
WaveletTree dwpt(std::span<const double> signal, int levels, const WaveletSpec& spec);
WaveletTree dwpt(const Series& series, int levels, const WaveletSpec& spec);

/// Reconstructs the level-0 signal from the leaves of a packet tree.
std::vector<double> idwpt(const WaveletTree& tree, const WaveletSpec& spec);

DwtPyramid dwt(std::span<const double> signal, int level, const WaveletSpec& spec);
DwtPyramid dwt(const Series& series, int level, const WaveletSpec& spec);

std::vector<double> idwt(const DwtPyramid& pyramid, const WaveletSpec& spec);

double threshold(double x, double t, ThresholdMode mode = ThresholdMode::soft);
std::vector<double> threshold(std::span<const double> coeffs, double t,
                              ThresholdMode mode = ThresholdMode::soft);

/// MAD noise estimate from the finest detail set times sqrt(2 ln n).
double universal_threshold(std::span<const double> finest_detail, std::size_t n);

std::vector<double> denoise(std::span<const double> signal, const DenoiseConfig& config = {});
Series denoise(const Series& series, const DenoiseConfig& config = {});

double energy(std::span<const double> x);

}  // namespace fslcast::wavelet
