#include "fslcast/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include <json.hpp>

#include "fslcast/error.hpp"
#include "fslcast/seed.hpp"

namespace fslcast::clustering {

namespace {

constexpr double kTieTolerance = 1e-12;

void check_k(const FeatureMatrix& x, int k) {
    if (k < 1) throw InvalidArgument("number of clusters must be >= 1");
    if (k > x.rows())
        throw InvalidArgument("k=" + std::to_string(k) + " exceeds sample count " +
                              std::to_string(x.rows()));
}

Eigen::MatrixXd squared_distances(const FeatureMatrix& x) {
    const auto n = x.rows();
    Eigen::MatrixXd d(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        d(i, i) = 0.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            d(i, j) = d(j, i) = (x.row(i) - x.row(j)).squaredNorm();
        }
    }
    return d;
}

std::vector<int> nearest_centroid(const FeatureMatrix& x, const Eigen::MatrixXd& centroids,
                                  double& sse) {
    std::vector<int> labels(static_cast<std::size_t>(x.rows()));
    sse = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
            const double d = (x.row(i) - centroids.row(c)).squaredNorm();
            if (d < best) {
                best = d;
                arg = static_cast<int>(c);
            }
        }
        labels[static_cast<std::size_t>(i)] = arg;
        sse += best;
    }
    return labels;
}

Eigen::MatrixXd kmeans_plus_plus(const FeatureMatrix& x, int k, std::mt19937_64& rng) {
    const auto n = x.rows();
    Eigen::MatrixXd centroids(k, x.cols());
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    centroids.row(0) = x.row(pick(rng));
    Eigen::VectorXd closest(n);
    for (Eigen::Index i = 0; i < n; ++i) closest(i) = (x.row(i) - centroids.row(0)).squaredNorm();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int c = 1; c < k; ++c) {
        const double total = closest.sum();
        Eigen::Index chosen = 0;
        if (total > 0.0) {
            const double target = unit(rng) * total;
            double acc = 0.0;
            chosen = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += closest(i);
                if (acc > target && closest(i) > 0.0) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = pick(rng);
        }
        centroids.row(c) = x.row(chosen);
        for (Eigen::Index i = 0; i < n; ++i)
            closest(i) = std::min(closest(i), (x.row(i) - centroids.row(c)).squaredNorm());
    }
    return centroids;
}

double log_gaussian_diag(const Eigen::RowVectorXd& point, const Eigen::RowVectorXd& mean,
                         const Eigen::RowVectorXd& var) {
    constexpr double kLog2Pi = 1.8378770664093453;
    double acc = 0.0;
    for (Eigen::Index j = 0; j < point.size(); ++j) {
        const double diff = point(j) - mean(j);
        acc += kLog2Pi + std::log(var(j)) + diff * diff / var(j);
    }
    return -0.5 * acc;
}

int count_clusters(std::span<const int> labels) {
    int k = 0;
    for (int l : labels) k = std::max(k, l + 1);
    return k;
}

}  // namespace

Labeling canonical(Labeling labeling) {
    std::map<int, int> remap;
    for (int& l : labeling.labels) {
        auto [it, inserted] = remap.try_emplace(l, static_cast<int>(remap.size()));
        l = it->second;
    }
    labeling.k = static_cast<int>(remap.size());
    return labeling;
}

bool same_partition(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) return false;
    std::map<int, int> forward;
    std::map<int, int> backward;
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto [f, fi] = forward.try_emplace(a[i], b[i]);
        auto [g, gi] = backward.try_emplace(b[i], a[i]);
        if (f->second != b[i] || g->second != a[i]) return false;
    }
    return true;
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) throw InvalidArgument("adjusted_rand_index: length mismatch");
    const auto n = static_cast<double>(a.size());
    std::map<std::pair<int, int>, double> table;
    std::map<int, double> rows;
    std::map<int, double> cols;
    for (std::size_t i = 0; i < a.size(); ++i) {
        table[{a[i], b[i]}] += 1.0;
        rows[a[i]] += 1.0;
        cols[b[i]] += 1.0;
    }
    auto choose2 = [](double v) { return v * (v - 1.0) / 2.0; };
    double index = 0.0;
    for (const auto& [key, v] : table) index += choose2(v);
    double sum_rows = 0.0;
    for (const auto& [key, v] : rows) sum_rows += choose2(v);
    double sum_cols = 0.0;
    for (const auto& [key, v] : cols) sum_cols += choose2(v);
    const double expected = sum_rows * sum_cols / choose2(n);
    const double max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index == expected) return 1.0;
    return (index - expected) / (max_index - expected);
}

KMeansResult kmeans_detailed(const FeatureMatrix& x, int k, std::uint64_t seed) {
    check_k(x, k);
    std::mt19937_64 rng(seed);
    KMeansResult result;
    Eigen::MatrixXd centroids = kmeans_plus_plus(x, k, rng);
    double sse = 0.0;
    std::vector<int> labels = nearest_centroid(x, centroids, sse);
    result.sse_history.push_back(sse);

    for (int iter = 0; iter < 300; ++iter) {
        Eigen::MatrixXd updated = Eigen::MatrixXd::Zero(k, x.cols());
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            updated.row(labels[static_cast<std::size_t>(i)]) += x.row(i);
            ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
        }
        std::vector<bool> taken(static_cast<std::size_t>(x.rows()), false);
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                updated.row(c) /= counts[static_cast<std::size_t>(c)];
                continue;
            }
            // Reseed an empty cluster at the point farthest from its centroid.
            double worst = -1.0;
            Eigen::Index arg = 0;
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                if (taken[static_cast<std::size_t>(i)]) continue;
                const double d =
                    (x.row(i) - centroids.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
                if (d > worst) {
                    worst = d;
                    arg = i;
                }
            }
            taken[static_cast<std::size_t>(arg)] = true;
            updated.row(c) = x.row(arg);
        }
        const double shift = (updated - centroids).rowwise().norm().maxCoeff();
        centroids = updated;
        labels = nearest_centroid(x, centroids, sse);
        result.sse_history.push_back(sse);
        if (shift < 1e-6) break;
    }
    result.centroids = centroids;
    result.labeling = canonical(Labeling{labels, k, "kmeans", seed, true});
    return result;
}

Labeling kmeans(const FeatureMatrix& x, int k, std::uint64_t seed) {
    return kmeans_detailed(x, k, seed).labeling;
}

GmmResult gmm_em_detailed(const FeatureMatrix& x, int k, std::uint64_t seed) {
    check_k(x, k);
    const auto n = x.rows();
    const auto d = x.cols();
    const KMeansResult init = kmeans_detailed(x, k, seed);

    GaussianMixture g;
    g.weights.assign(static_cast<std::size_t>(k), 0.0);
    g.means = Eigen::MatrixXd::Zero(k, d);
    g.variances = Eigen::MatrixXd::Zero(k, d);
    {
        std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
        // kmeans_detailed canonicalizes labels, so recompute against its centroids.
        double unused = 0.0;
        const std::vector<int> labels = nearest_centroid(x, init.centroids, unused);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int c = labels[static_cast<std::size_t>(i)];
            counts[static_cast<std::size_t>(c)] += 1.0;
            g.means.row(c) += x.row(i);
        }
        for (int c = 0; c < k; ++c) {
            const double cnt = std::max(counts[static_cast<std::size_t>(c)], 1.0);
            g.means.row(c) = counts[static_cast<std::size_t>(c)] > 0 ? Eigen::RowVectorXd(g.means.row(c) / cnt)
                                                                    : Eigen::RowVectorXd(init.centroids.row(c));
            g.weights[static_cast<std::size_t>(c)] =
                std::max(counts[static_cast<std::size_t>(c)], 1e-3) / static_cast<double>(n);
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            const int c = labels[static_cast<std::size_t>(i)];
            g.variances.row(c) += (x.row(i) - g.means.row(c)).array().square().matrix();
        }
        for (int c = 0; c < k; ++c) {
            const double cnt = std::max(counts[static_cast<std::size_t>(c)], 1.0);
            g.variances.row(c) = (g.variances.row(c) / cnt).array().max(kVarianceFloor).matrix();
        }
        const double wsum = std::accumulate(g.weights.begin(), g.weights.end(), 0.0);
        for (double& w : g.weights) w /= wsum;
    }

    GmmResult result;
    Eigen::MatrixXd resp(n, k);
    double previous = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 200; ++iter) {
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double top = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                resp(i, c) = std::log(g.weights[static_cast<std::size_t>(c)]) +
                             log_gaussian_diag(x.row(i), g.means.row(c), g.variances.row(c));
                top = std::max(top, resp(i, c));
            }
            double total = 0.0;
            for (int c = 0; c < k; ++c) total += std::exp(resp(i, c) - top);
            const double log_norm = top + std::log(total);
            ll += log_norm;
            for (int c = 0; c < k; ++c) resp(i, c) = std::exp(resp(i, c) - log_norm);
        }
        result.log_likelihood_history.push_back(ll);
        if (iter > 0 && ll - previous < 1e-7) break;
        previous = ll;

        for (int c = 0; c < k; ++c) {
            const double nk = resp.col(c).sum();
            if (nk < 1e-10) {
                g.weights[static_cast<std::size_t>(c)] = 1e-10 / static_cast<double>(n);
                continue;
            }
            g.weights[static_cast<std::size_t>(c)] = nk / static_cast<double>(n);
            const Eigen::RowVectorXd mu = (resp.col(c).transpose() * x) / nk;
            Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(d);
            for (Eigen::Index i = 0; i < n; ++i)
                var += resp(i, c) * (x.row(i) - mu).array().square().matrix();
            g.means.row(c) = mu;
            g.variances.row(c) = (var / nk).array().max(kVarianceFloor).matrix();
        }
        const double wsum = std::accumulate(g.weights.begin(), g.weights.end(), 0.0);
        for (double& w : g.weights) w /= wsum;
    }

    std::vector<int> labels(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index arg = 0;
        resp.row(i).maxCoeff(&arg);
        labels[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }
    result.labeling = canonical(Labeling{labels, k, "gmm_em", seed, true});
    result.mixture = std::move(g);
    return result;
}

Labeling gmm_em(const FeatureMatrix& x, int k, std::uint64_t seed) {
    return gmm_em_detailed(x, k, seed).labeling;
}

std::vector<int> average_linkage(const Eigen::MatrixXd& distances, int k) {
    const auto n = static_cast<int>(distances.rows());
    if (distances.cols() != distances.rows()) throw InvalidArgument("distance matrix must be square");
    if (k < 1 || k > n)
        throw InvalidArgument("cannot cut " + std::to_string(n) + " samples into " +
                              std::to_string(k) + " clusters");
    // Clusters are identified by their smallest member index.
    Eigen::MatrixXd d = distances;
    std::vector<int> size(static_cast<std::size_t>(n), 1);
    std::vector<bool> active(static_cast<std::size_t>(n), true);
    std::vector<int> owner(static_cast<std::size_t>(n));
    std::iota(owner.begin(), owner.end(), 0);

    for (int clusters = n; clusters > k; --clusters) {
        double best = std::numeric_limits<double>::infinity();
        int bi = -1;
        int bj = -1;
        for (int i = 0; i < n; ++i) {
            if (!active[static_cast<std::size_t>(i)]) continue;
            for (int j = i + 1; j < n; ++j) {
                if (!active[static_cast<std::size_t>(j)]) continue;
                const double v = d(i, j);
                if (bi < 0 || v < best - kTieTolerance * (1.0 + std::abs(best))) {
                    best = v;
                    bi = i;
                    bj = j;
                }
            }
        }
        const double si = size[static_cast<std::size_t>(bi)];
        const double sj = size[static_cast<std::size_t>(bj)];
        for (int m = 0; m < n; ++m) {
            if (!active[static_cast<std::size_t>(m)] || m == bi || m == bj) continue;
            const double merged = (si * d(bi, m) + sj * d(bj, m)) / (si + sj);
            d(bi, m) = d(m, bi) = merged;
        }
        active[static_cast<std::size_t>(bj)] = false;
        size[static_cast<std::size_t>(bi)] += size[static_cast<std::size_t>(bj)];
        for (int& o : owner)
            if (o == bj) o = bi;
    }
    std::vector<int> labels(static_cast<std::size_t>(n));
    std::map<int, int> remap;
    for (int i = 0; i < n; ++i) {
        auto [it, inserted] = remap.try_emplace(owner[static_cast<std::size_t>(i)],
                                                static_cast<int>(remap.size()));
        labels[static_cast<std::size_t>(i)] = it->second;
    }
    return labels;
}

Labeling agglomerative(const FeatureMatrix& x, int k) {
    check_k(x, k);
    const Eigen::MatrixXd d = squared_distances(x).cwiseSqrt();
    return canonical(Labeling{average_linkage(d, k), k, "agglomerative", 0, true});
}

Labeling affinity_propagation(const FeatureMatrix& x) {
    const auto n = x.rows();
    if (n < 1) throw InvalidArgument("affinity propagation needs at least one sample");
    if (n == 1) return Labeling{{0}, 1, "affinity_propagation", 0, true};

    Eigen::MatrixXd s = -squared_distances(x);
    std::vector<double> off;
    off.reserve(static_cast<std::size_t>(n * (n - 1)));
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (i != j) off.push_back(s(i, j));
    const auto [lo, hi] = std::minmax_element(off.begin(), off.end());
    if (*lo == *hi) {
        // Every pair is equally similar: no point is a better exemplar than another.
        return Labeling{std::vector<int>(static_cast<std::size_t>(n), 0), 1, "affinity_propagation", 0,
                        true};
    }
    std::vector<double> sorted = off;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    const double preference =
        sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    for (Eigen::Index i = 0; i < n; ++i) s(i, i) = preference;

    // Fixed-seed jitter breaks exact degeneracies without making the result random.
    std::mt19937_64 jitter_rng(0);
    std::normal_distribution<double> jitter(0.0, 1.0);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            s(i, j) += (std::numeric_limits<double>::epsilon() * s(i, j) +
                        std::numeric_limits<double>::min() * 100.0) *
                       jitter(jitter_rng);

    constexpr double damping = 0.9;
    constexpr int max_iter = 500;
    constexpr int stable_needed = 30;
    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    std::vector<bool> exemplars(static_cast<std::size_t>(n), false);
    int stable = 0;
    bool converged = false;
    for (int iter = 0; iter < max_iter; ++iter) {
        for (Eigen::Index i = 0; i < n; ++i) {
            double first = -std::numeric_limits<double>::infinity();
            double second = first;
            Eigen::Index arg = 0;
            for (Eigen::Index k = 0; k < n; ++k) {
                const double v = a(i, k) + s(i, k);
                if (v > first) {
                    second = first;
                    first = v;
                    arg = k;
                } else if (v > second) {
                    second = v;
                }
            }
            for (Eigen::Index k = 0; k < n; ++k) {
                const double fresh = s(i, k) - (k == arg ? second : first);
                r(i, k) = damping * r(i, k) + (1.0 - damping) * fresh;
            }
        }
        for (Eigen::Index k = 0; k < n; ++k) {
            double col = r(k, k);
            for (Eigen::Index i = 0; i < n; ++i)
                if (i != k) col += std::max(r(i, k), 0.0);
            for (Eigen::Index i = 0; i < n; ++i) {
                double fresh = 0.0;
                if (i == k) {
                    fresh = col - r(k, k);
                } else {
                    fresh = std::min(0.0, col - std::max(r(i, k), 0.0));
                }
                a(i, k) = damping * a(i, k) + (1.0 - damping) * fresh;
            }
        }
        std::vector<bool> current(static_cast<std::size_t>(n));
        bool any = false;
        for (Eigen::Index k = 0; k < n; ++k) {
            current[static_cast<std::size_t>(k)] = a(k, k) + r(k, k) > 0.0;
            any = any || current[static_cast<std::size_t>(k)];
        }
        stable = (current == exemplars) ? stable + 1 : 0;
        exemplars = std::move(current);
        if (any && stable >= stable_needed) {
            converged = true;
            break;
        }
    }

    std::vector<Eigen::Index> centers;
    for (Eigen::Index k = 0; k < n; ++k)
        if (exemplars[static_cast<std::size_t>(k)]) centers.push_back(k);
    if (centers.empty()) {
        return Labeling{std::vector<int>(static_cast<std::size_t>(n), 0), 1, "affinity_propagation", 0,
                        false};
    }
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        int best_c = 0;
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < centers.size(); ++c) {
            if (centers[c] == i) {
                best_c = static_cast<int>(c);
                break;
            }
            if (s(i, centers[c]) > best) {
                best = s(i, centers[c]);
                best_c = static_cast<int>(c);
            }
        }
        labels[static_cast<std::size_t>(i)] = best_c;
    }
    return canonical(Labeling{labels, static_cast<int>(centers.size()), "affinity_propagation", 0,
                              converged});
}

Labeling partition_similarity_graph(const Eigen::MatrixXi& co_association, int r, int k) {
    if (r < 1) throw InvalidArgument("co-association needs at least one base labeling");
    const auto n = co_association.rows();
    if (k > n)
        throw InvalidArgument("k=" + std::to_string(k) + " exceeds sample count " + std::to_string(n));
    const Eigen::MatrixXd d =
        (1.0 - co_association.cast<double>().array() / static_cast<double>(r)).matrix();
    return canonical(Labeling{average_linkage(d, k), k, "cspa", 0, true});
}

ConsensusResult cspa_consensus(std::span<const Labeling> labelings, int k_final) {
    if (labelings.empty()) throw InvalidArgument("consensus needs at least one labeling");
    const std::size_t n = labelings.front().size();
    int columns = 0;
    for (const auto& l : labelings) {
        if (l.size() != n)
            throw InvalidArgument("consensus labelings cover different sample counts (" +
                                  std::to_string(l.size()) + " vs " + std::to_string(n) + ")");
        columns += count_clusters(canonical(l).labels);
    }
    ConsensusResult result;
    result.base.assign(labelings.begin(), labelings.end());
    result.membership = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(n), columns);
    int offset = 0;
    for (const auto& l : labelings) {
        const Labeling c = canonical(l);
        for (std::size_t i = 0; i < n; ++i)
            result.membership(static_cast<Eigen::Index>(i), offset + c.labels[i]) = 1;
        offset += c.k;
    }
    result.co_association = result.membership * result.membership.transpose();
    result.final = partition_similarity_graph(result.co_association,
                                              static_cast<int>(labelings.size()), k_final);
    return result;
}

double silhouette(const FeatureMatrix& x, std::span<const int> labels) {
    const auto n = x.rows();
    if (static_cast<std::size_t>(n) != labels.size())
        throw InvalidArgument("silhouette: label count does not match samples");
    std::map<int, int> sizes;
    for (int l : labels) ++sizes[l];
    if (sizes.size() < 2) throw InvalidArgument("silhouette needs at least 2 clusters");
    const Eigen::MatrixXd d = squared_distances(x).cwiseSqrt();
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int own = labels[static_cast<std::size_t>(i)];
        if (sizes[own] == 1) continue;
        std::map<int, double> sums;
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i) sums[labels[static_cast<std::size_t>(j)]] += d(i, j);
        const double a = sums[own] / static_cast<double>(sizes[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [label, sum] : sums)
            if (label != own) b = std::min(b, sum / static_cast<double>(sizes[label]));
        const double denom = std::max(a, b);
        if (denom > 0.0) total += (b - a) / denom;
    }
    return total / static_cast<double>(n);
}

std::string to_string(Algorithm algorithm) {
    switch (algorithm) {
        case Algorithm::kmeans: return "kmeans";
        case Algorithm::gmm_em: return "gmm_em";
        case Algorithm::agglomerative: return "agglomerative";
        case Algorithm::affinity_propagation: return "affinity_propagation";
    }
    return "unknown";
}

Algorithm algorithm_from_string(const std::string& name) {
    if (name == "kmeans") return Algorithm::kmeans;
    if (name == "gmm_em" || name == "gmm") return Algorithm::gmm_em;
    if (name == "agglomerative") return Algorithm::agglomerative;
    if (name == "affinity_propagation" || name == "ap") return Algorithm::affinity_propagation;
    throw ConfigError("unknown clustering algorithm '" + name + "'");
}

FeatureMatrix build_feature_matrix(std::span<const Series> windows, const ClusterConfig& config) {
    if (windows.empty()) throw InvalidArgument("no series to cluster");
    std::vector<features::FeatureVector> fvs;
    fvs.reserve(windows.size());
    for (const auto& w : windows) fvs.push_back(features::extract_features(w, config.features));
    const auto n = static_cast<Eigen::Index>(windows.size());

    auto to_matrix = [&](auto block) {
        const auto first = block(fvs.front());
        Eigen::MatrixXd m(n, static_cast<Eigen::Index>(first.size()));
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto row = block(fvs[static_cast<std::size_t>(i)]);
            for (std::size_t j = 0; j < row.size(); ++j) m(i, static_cast<Eigen::Index>(j)) = row[j];
        }
        return m;
    };
    auto project = [&](const Eigen::MatrixXd& m) -> Eigen::MatrixXd {
        if (n < 2) return m;
        const auto model = features::pca_fit(m, config.pca_variance);
        Eigen::MatrixXd out(n, static_cast<Eigen::Index>(model.output_dims()));
        for (Eigen::Index i = 0; i < n; ++i)
            out.row(i) = features::pca_transform(model, Eigen::VectorXd(m.row(i).transpose())).transpose();
        return out;
    };

    if (config.pca_whole_vector) return project(to_matrix([](const auto& f) { return f.flatten(); }));

    const Eigen::MatrixXd wavelet_part = project(to_matrix([](const auto& f) { return f.wavelet_block(); }));
    Eigen::MatrixXd stats = to_matrix([](const auto& f) { return f.statistical_block(); });
    for (Eigen::Index j = 0; j < stats.cols(); ++j) {
        const double mu = stats.col(j).mean();
        const double sd = std::sqrt((stats.col(j).array() - mu).square().mean());
        if (sd > 1e-12 * (1.0 + std::abs(mu))) {
            stats.col(j) = (stats.col(j).array() - mu) / sd;
        } else {
            stats.col(j).setZero();
        }
    }
    Eigen::MatrixXd out(n, wavelet_part.cols() + stats.cols());
    out << wavelet_part, stats;
    return out;
}

ConsensusResult cluster_matrix(const FeatureMatrix& x, const ClusterConfig& config) {
    const auto n = static_cast<int>(x.rows());
    if (n < 1) throw InvalidArgument("no samples to cluster");
    const int k_hi = std::min(config.k_max, n - 1);
    const int k_lo = std::max(config.k_min, 2);

    auto one_cluster = [&]() {
        Labeling all{std::vector<int>(static_cast<std::size_t>(n), 0), 1, "single", config.seed, true};
        return cspa_consensus(std::span<const Labeling>(&all, 1), 1);
    };
    if (k_hi < k_lo) return one_cluster();

    auto has_algorithm = [&](Algorithm a) {
        return std::find(config.algorithms.begin(), config.algorithms.end(), a) != config.algorithms.end();
    };
    auto seeded = [&](Algorithm a, int restart, int k) {
        return derive_seed(config.seed, {static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(restart),
                                         static_cast<std::uint64_t>(k)});
    };
    auto base_for_k = [&](Algorithm a, int k, int restart) -> Labeling {
        switch (a) {
            case Algorithm::kmeans: return kmeans(x, k, seeded(a, restart, k));
            case Algorithm::gmm_em: return gmm_em(x, k, seeded(a, restart, k));
            case Algorithm::agglomerative: return agglomerative(x, k);
            case Algorithm::affinity_propagation: return affinity_propagation(x);
        }
        throw InvalidArgument("unknown algorithm");
    };

    std::optional<Labeling> ap;
    if (has_algorithm(Algorithm::affinity_propagation) ||
        config.single == Algorithm::affinity_propagation)
        ap = affinity_propagation(x);

    if (config.single) {
        const Algorithm a = *config.single;
        std::optional<ConsensusResult> best;
        auto consider = [&](const Labeling& l) {
            if (l.k < 2) return;
            ConsensusResult r = cspa_consensus(std::span<const Labeling>(&l, 1), l.k);
            r.final = l;
            r.s_score = silhouette(x, l.labels);
            if (!best || *r.s_score > *best->s_score + 1e-12) best = std::move(r);
        };
        if (a == Algorithm::affinity_propagation) {
            consider(*ap);
        } else {
            for (int k = k_lo; k <= k_hi; ++k) consider(base_for_k(a, k, 0));
        }
        if (!best) return one_cluster();
        return *best;
    }

    std::optional<ConsensusResult> best;
    for (int k = k_lo; k <= k_hi; ++k) {
        std::vector<Labeling> base;
        for (Algorithm a : config.algorithms) {
            if (a == Algorithm::affinity_propagation) continue;
            const bool deterministic = a == Algorithm::agglomerative;
            const int restarts = deterministic ? 1 : std::max(1, config.restarts);
            for (int rep = 0; rep < restarts; ++rep) base.push_back(base_for_k(a, k, rep));
        }
        if (ap) base.push_back(*ap);
        ConsensusResult r = cspa_consensus(base, k);
        r.s_score = silhouette(x, r.final.labels);
        if (!best || *r.s_score > *best->s_score + 1e-12) best = std::move(r);
    }
    return *best;
}

PopulationClustering cluster_population(std::span<const Series> historical, const Series& query,
                                        const ClusterConfig& config) {
    std::vector<Series> windows;
    windows.reserve(historical.size() + 1);
    for (const auto& h : historical) {
        if (h.granularity_minutes() != query.granularity_minutes())
            throw InvalidArgument("series '" + h.user_id() + "' has a different granularity than the query");
        const std::int64_t offset = query.start_index() - h.start_index();
        if (offset < 0 || static_cast<std::size_t>(offset) + query.size() > h.size())
            throw InvalidArgument("series '" + h.user_id() + "' does not cover the query window");
        windows.push_back(slice_window(h, static_cast<std::size_t>(offset), query.size()));
    }
    windows.push_back(query);
    PopulationClustering out;
    out.features = build_feature_matrix(windows, config);
    out.consensus = cluster_matrix(out.features, config);
    out.query_cluster = out.consensus.final.labels.back();
    return out;
}

void write_consensus(const std::string& csv_path, const std::string& json_path,
                     std::span<const std::string> ids, const ConsensusResult& result) {
    if (ids.size() != result.final.size())
        throw InvalidArgument("consensus export: id count does not match labels");
    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw DataError("cannot open '" + csv_path + "' for writing");
    csv << "sample_id,final_label\n";
    for (std::size_t i = 0; i < ids.size(); ++i) csv << ids[i] << ',' << result.final.labels[i] << '\n';

    nlohmann::ordered_json j;
    j["s_score"] = result.s_score ? nlohmann::ordered_json(*result.s_score) : nlohmann::ordered_json(nullptr);
    j["k"] = result.final.k;
    j["sample_ids"] = std::vector<std::string>(ids.begin(), ids.end());
    j["final_labels"] = result.final.labels;
    auto& base = j["base_labelings"] = nlohmann::ordered_json::array();
    for (const auto& l : result.base) {
        base.push_back({{"algorithm", l.algorithm},
                        {"seed", l.seed},
                        {"k", l.k},
                        {"converged", l.converged},
                        {"labels", l.labels}});
    }
    std::ofstream js(json_path, std::ios::binary);
    if (!js) throw DataError("cannot open '" + json_path + "' for writing");
    js << j.dump(2) << '\n';
}

}  // namespace fslcast::clustering
