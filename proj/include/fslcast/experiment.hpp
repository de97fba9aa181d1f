#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fslcast/clustering.hpp"
#include "fslcast/data.hpp"
#include "fslcast/forecaster.hpp"
#include "fslcast/metrics.hpp"
#include "fslcast/wavelet.hpp"

namespace fslcast::experiment {

enum class CaseKind { k_sweep, granularity, compactness };

std::string to_string(CaseKind kind);
CaseKind case_from_string(const std::string& name);

/// Compactness-study clusterer configurations: the four base algorithms
/// alone, plus the consensus ensemble.
inline const std::vector<std::string> kClustererConfigs = {"kmeans", "agglomerative", "gmm_em",
                                                           "affinity_propagation", "ensemble"};

struct DatasetSource {
    /// "synthetic" or "csv"
    std::string kind = "synthetic";
    data::SynthConfig synth;
    std::string csv_path;
    data::CsvSchema schema;
};

struct ExperimentConfig {
    CaseKind kind = CaseKind::k_sweep;
    DatasetSource dataset;
    /// Sampling granularities in minutes; each must be a multiple of the base granularity.
    std::vector<int> granularities = {1};
    std::vector<int> shots = {12, 24, 48, 96, 192};
    std::size_t horizon = kTestHorizon;
    /// Global seed; replicate r runs with derive_seed(seed, {replicate tag, r}).
    std::uint64_t seed = 0;
    int replicates = 1;
    /// Held-out users per ground-truth group (or in total for real data).
    int targets_per_group = 1;
    /// Restricts targets to these groups; empty means every group.
    std::vector<int> target_groups;
    /// Index within each target series where the few-shot window starts.
    std::size_t query_start = 0;
    /// "fsl" and/or "baseline" for the k and granularity sweeps.
    std::vector<std::string> methods = {"fsl", "baseline"};
    /// Clusterer configurations for the compactness study.
    std::vector<std::string> clusterers = kClustererConfigs;
    clustering::ClusterConfig clustering;
    forecaster::TrainConfig train;
    /// Denoise the prototype; nullopt disables.
    std::optional<wavelet::DenoiseConfig> denoise = wavelet::DenoiseConfig{};
    bool denoise_few_shot = true;
    /// Baseline updates; negative means pretrain_steps + finetune_steps.
    int baseline_steps = -1;
    metrics::Convention metric = metrics::Convention::rmse;
    int jobs = 0;

    void validate() const;
};

nlohmann::ordered_json to_json(const ExperimentConfig& config);
/// Rejects unknown keys and mistyped values with ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// Applies `dotted.key=value` overrides, type-checked against the defaults.
nlohmann::json apply_overrides(nlohmann::json j, const std::vector<std::string>& overrides);

struct Cell {
    int granularity = 1;
    std::string method;
    int k = 0;
    int replicate = 0;
    std::string target;
    int target_group = -1;
    bool ok = false;
    double rmse = 0.0;
    double rmse_strict = 0.0;
    int query_cluster = -1;
    std::optional<bool> assignment_correct;
    std::optional<double> s_score;
    std::string error;
    std::vector<double> forecast;
    std::vector<double> truth;

    double metric(metrics::Convention c) const {
        return c == metrics::Convention::rmse ? rmse : rmse_strict;
    }
};

struct TableRow {
    int granularity = 1;
    std::string method;
    int k = 0;
    metrics::EvalReport report;
    std::size_t failures = 0;
    std::size_t cells = 0;
};

struct SScoreRow {
    std::string clusterer;
    double mean_s_score = 0.0;
    std::size_t samples = 0;
};

struct ExperimentResult {
    CaseKind kind = CaseKind::k_sweep;
    metrics::Convention convention = metrics::Convention::rmse;
    std::vector<Cell> cells;
    std::vector<TableRow> table;
    std::vector<SScoreRow> sscores;
    /// Fraction of fsl cells whose query landed in its own ground-truth group.
    std::optional<double> assignment_accuracy;
};

/// Few-shot data for one target: the dataset at the cell's granularity,
/// the target index and the remaining historical series.
struct CellInputs {
    const data::Dataset* dataset = nullptr;
    std::size_t target = 0;
    std::vector<std::size_t> historical;
};

/// One (target, k, method, seed) run. `clusterer` is "ensemble" or one of
/// the base algorithm names and only matters for fsl.
Cell run_fsl_cell(const ExperimentConfig& config, const CellInputs& inputs, int k,
                  const std::string& method, int replicate,
                  const std::string& clusterer = "ensemble");

/// Seed of one replicate.
std::uint64_t replicate_seed(const ExperimentConfig& config, int replicate);

/// Loads (or generates) the dataset for one replicate at base granularity.
data::Dataset load_dataset(const ExperimentConfig& config, int replicate);

/// Target indices and the historical pool of a dataset.
std::vector<CellInputs> select_targets(const ExperimentConfig& config, const data::Dataset& dataset);

ExperimentResult run_case_k_sweep(const ExperimentConfig& config);
ExperimentResult run_case_granularity(const ExperimentConfig& config);
ExperimentResult run_case_compactness(const ExperimentConfig& config);
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Recomputes table and S-score rows from the cells.
void aggregate(ExperimentResult& result);

/// Writes cells.csv, table.csv, sscore.csv and curves.csv under `dir`.
void write_results(const ExperimentResult& result, const std::string& dir);

}  // namespace fslcast::experiment
