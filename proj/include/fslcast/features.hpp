#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fslcast/timeseries.hpp"
#include "fslcast/wavelet.hpp"

namespace fslcast::features {

inline constexpr double kLogFloor = 1e-12;

/// Which template ranges sample entropy compares.
enum class TemplateRange {
    /// Both lengths use templates i < N-m, so the counts are comparable.
    shared,
    /// Length m uses N-m+1 templates and length m+1 uses N-m.
    per_length
};

struct SampleEntropyOptions {
    int m = 2;
    /// Tolerance as a multiple of the population std; ignored when `r` is set.
    double r_factor = 0.2;
    std::optional<double> r;
    TemplateRange range = TemplateRange::shared;
    /// Returns -ln(N_m / N_{m+1}) instead of -ln(N_{m+1} / N_m).
    bool strict_paper = false;
};

struct FeatureConfig {
    wavelet::Family family = wavelet::Family::db4;
    int max_levels = 5;
    /// Seasonal period in samples for the decomposition degrees.
    std::size_t period = 24;
    SampleEntropyOptions entropy;
};

struct FeatureVector {
    std::vector<double> dwe;
    std::vector<double> lwe;
    std::vector<double> wcc;
    double s_deg = 0.0;
    double t_deg = 0.0;
    double skewness = 0.0;
    double sample_entropy = 0.0;
    double hurst_k = 0.0;
    int levels = 0;
    std::optional<std::vector<double>> reduced;

    /// [wcc | lwe | dwe]
    std::vector<double> wavelet_block() const;
    /// [s_deg | t_deg | skew | sampEn | hurst]
    std::vector<double> statistical_block() const;
    /// [wcc | lwe | dwe | s_deg | t_deg | skew | sampEn | hurst]
    std::vector<double> flatten() const;
    std::vector<std::string> names() const;
};

struct StlDegrees {
    double seasonal = 0.0;
    double trend = 0.0;
};

std::vector<double> dwe(const wavelet::WaveletTree& tree);
std::vector<double> lwe(std::span<const double> dwe_values);
/// Orthonormal DCT-II.
std::vector<double> wcc(std::span<const double> lwe_values);

StlDegrees stl_degrees(std::span<const double> values, std::size_t period);
double skewness(std::span<const double> values);
double sample_entropy(std::span<const double> values, const SampleEntropyOptions& options = {});
double hurst_k(std::span<const double> values);

/// Packet depth used for a window of the given length.
int feature_levels(std::size_t length, std::size_t filter_len, int cap);

FeatureVector extract_features(const Series& series, const FeatureConfig& config = {});

struct PcaModel {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;
    /// Input dimensions that survived the zero-variance filter.
    std::vector<std::size_t> kept_dims;
    /// One orthonormal component per row, in z-scored coordinates.
    Eigen::MatrixXd components;
    std::vector<double> explained_ratio;
    std::size_t input_dims = 0;

    std::size_t output_dims() const { return static_cast<std::size_t>(components.rows()); }
};

/// Rows are samples. Keeps the fewest components reaching `variance_target`.
PcaModel pca_fit(const Eigen::MatrixXd& samples, double variance_target = 0.95);
PcaModel pca_fit(std::span<const std::vector<double>> samples, double variance_target = 0.95);
Eigen::VectorXd pca_transform(const PcaModel& model, const Eigen::VectorXd& sample);
std::vector<double> pca_transform(const PcaModel& model, std::span<const double> sample);
/// Maps reduced coordinates back to the input space.
Eigen::VectorXd pca_reconstruct(const PcaModel& model, const Eigen::VectorXd& reduced);

/// One header row plus one row per series.
void write_features_csv(const std::string& path, std::span<const std::string> ids,
                        std::span<const FeatureVector> vectors);

}  // namespace fslcast::features
