#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fslcast/features.hpp"
#include "fslcast/timeseries.hpp"

namespace fslcast::clustering {

/// Rows are samples, columns are features.
using FeatureMatrix = Eigen::MatrixXd;

struct Labeling {
    std::vector<int> labels;
    int k = 0;
    std::string algorithm;
    std::uint64_t seed = 0;
    /// False when an iterative clusterer stopped without converging.
    bool converged = true;

    std::size_t size() const { return labels.size(); }
};

/// Relabels clusters 0..k-1 in order of first appearance.
Labeling canonical(Labeling labeling);
/// True when both label the same partition.
bool same_partition(std::span<const int> a, std::span<const int> b);
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

struct KMeansResult {
    Labeling labeling;
    Eigen::MatrixXd centroids;
    /// Within-cluster SSE after each assignment step.
    std::vector<double> sse_history;
};

KMeansResult kmeans_detailed(const FeatureMatrix& x, int k, std::uint64_t seed);
Labeling kmeans(const FeatureMatrix& x, int k, std::uint64_t seed);

struct GaussianMixture {
    std::vector<double> weights;
    Eigen::MatrixXd means;      ///< k x d
    Eigen::MatrixXd variances;  ///< k x d, diagonal covariances
};

struct GmmResult {
    Labeling labeling;
    GaussianMixture mixture;
    std::vector<double> log_likelihood_history;
};

inline constexpr double kVarianceFloor = 1e-6;

GmmResult gmm_em_detailed(const FeatureMatrix& x, int k, std::uint64_t seed);
Labeling gmm_em(const FeatureMatrix& x, int k, std::uint64_t seed);

/// Average-linkage merge on a precomputed distance matrix, cut at k clusters.
/// Ties merge the pair with the smallest member indices first.
std::vector<int> average_linkage(const Eigen::MatrixXd& distances, int k);

Labeling agglomerative(const FeatureMatrix& x, int k);

Labeling affinity_propagation(const FeatureMatrix& x);

struct ConsensusResult {
    std::vector<Labeling> base;
    Eigen::MatrixXi membership;      ///< H: samples x total clusters
    Eigen::MatrixXi co_association;  ///< S = H H^T
    Labeling final;
    std::optional<double> s_score;
};

/// Co-association graph cut with average linkage on 1 - S/r.
Labeling partition_similarity_graph(const Eigen::MatrixXi& co_association, int r, int k);

ConsensusResult cspa_consensus(std::span<const Labeling> labelings, int k_final);

/// Mean silhouette; samples alone in their cluster score 0.
double silhouette(const FeatureMatrix& x, std::span<const int> labels);

enum class Algorithm { kmeans, gmm_em, agglomerative, affinity_propagation };

std::string to_string(Algorithm algorithm);
Algorithm algorithm_from_string(const std::string& name);

struct ClusterConfig {
    features::FeatureConfig features;
    /// Whole-vector PCA instead of wavelet-block PCA plus raw statistics.
    bool pca_whole_vector = false;
    double pca_variance = 0.95;
    int k_min = 2;
    int k_max = 8;
    int restarts = 1;
    std::vector<Algorithm> algorithms = {Algorithm::kmeans, Algorithm::gmm_em,
                                         Algorithm::agglomerative,
                                         Algorithm::affinity_propagation};
    /// Use a single base clusterer's labeling as the final result (no consensus).
    std::optional<Algorithm> single;
    std::uint64_t seed = 0;
};

/// Builds the clustering matrix for a set of equal-length windows.
FeatureMatrix build_feature_matrix(std::span<const Series> windows, const ClusterConfig& config);

/// Runs the base ensemble and consensus over k_min..k_max, keeping the
/// silhouette-best k (smallest k on ties).
ConsensusResult cluster_matrix(const FeatureMatrix& x, const ClusterConfig& config);

struct PopulationClustering {
    ConsensusResult consensus;
    /// Final label of the query, which is the last sample.
    int query_cluster = 0;
    FeatureMatrix features;
};

/// Slices every historical series to the query's index window, clusters the
/// windows together with the query, and reports the query's cluster.
PopulationClustering cluster_population(std::span<const Series> historical, const Series& query,
                                        const ClusterConfig& config);

/// Writes `sample_id,final_label` rows plus a JSON sidecar with the S-score
/// and per-algorithm labels.
void write_consensus(const std::string& csv_path, const std::string& json_path,
                     std::span<const std::string> ids, const ConsensusResult& result);

}  // namespace fslcast::clustering
