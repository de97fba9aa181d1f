#include "fslcast/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "fslcast/error.hpp"

namespace fslcast::features {

namespace {

double safe_degree(double residual_var, double denom_var) {
    if (!(denom_var > 0.0)) return 0.0;
    return std::clamp(1.0 - residual_var / denom_var, 0.0, 1.0);
}

/// Centered moving average over one full period (2xp average for even p).
/// Entries outside [first, last] are left at zero.
std::vector<double> centered_trend(std::span<const double> x, std::size_t period,
                                   std::size_t& first, std::size_t& last) {
    const std::size_t n = x.size();
    std::vector<double> trend(n, 0.0);
    const std::size_t half = period / 2;
    first = half;
    last = n - 1 - half;
    const double p = static_cast<double>(period);
    for (std::size_t t = first; t <= last; ++t) {
        double acc = 0.0;
        if (period % 2 == 1) {
            for (std::size_t i = t - half; i <= t + half; ++i) acc += x[i];
            trend[t] = acc / p;
        } else {
            acc = 0.5 * (x[t - half] + x[t + half]);
            for (std::size_t i = t - half + 1; i < t + half; ++i) acc += x[i];
            trend[t] = acc / p;
        }
    }
    return trend;
}

StlDegrees linear_trend_only(std::span<const double> x) {
    const std::size_t n = x.size();
    if (n < 2) return {};
    double tm = 0.0;
    for (std::size_t t = 0; t < n; ++t) tm += static_cast<double>(t);
    tm /= static_cast<double>(n);
    const double xm = mean(x);
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        const double dt = static_cast<double>(t) - tm;
        sxy += dt * (x[t] - xm);
        sxx += dt * dt;
    }
    const double slope = sxy / sxx;
    std::vector<double> resid(n);
    for (std::size_t t = 0; t < n; ++t) resid[t] = x[t] - (xm + slope * (static_cast<double>(t) - tm));
    return {0.0, safe_degree(population_variance(resid), population_variance(x))};
}

std::size_t count_matches(std::span<const double> x, std::size_t templates, std::size_t length,
                          double r) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < templates; ++i) {
        for (std::size_t j = i + 1; j < templates; ++j) {
            double dist = 0.0;
            for (std::size_t k = 0; k < length && dist < r; ++k) {
                dist = std::max(dist, std::abs(x[i + k] - x[j + k]));
            }
            if (dist < r) ++count;
        }
    }
    return count;
}

void write_number(std::ostream& out, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
}

}  // namespace

std::vector<double> FeatureVector::wavelet_block() const {
    std::vector<double> out;
    out.reserve(wcc.size() + lwe.size() + dwe.size());
    out.insert(out.end(), wcc.begin(), wcc.end());
    out.insert(out.end(), lwe.begin(), lwe.end());
    out.insert(out.end(), dwe.begin(), dwe.end());
    return out;
}

std::vector<double> FeatureVector::statistical_block() const {
    return {s_deg, t_deg, skewness, sample_entropy, hurst_k};
}

std::vector<double> FeatureVector::flatten() const {
    std::vector<double> out = wavelet_block();
    const auto stats = statistical_block();
    out.insert(out.end(), stats.begin(), stats.end());
    return out;
}

std::vector<std::string> FeatureVector::names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < wcc.size(); ++i) out.push_back("wcc_" + std::to_string(i));
    for (std::size_t i = 0; i < lwe.size(); ++i) out.push_back("lwe_" + std::to_string(i));
    for (std::size_t i = 0; i < dwe.size(); ++i) out.push_back("dwe_" + std::to_string(i));
    for (const char* s : {"s_deg", "t_deg", "skewness", "sample_entropy", "hurst_k"})
        out.emplace_back(s);
    return out;
}

std::vector<double> dwe(const wavelet::WaveletTree& tree) {
    if (!(tree.total_energy > 0.0)) throw DegenerateSeries("dwe: zero total energy");
    std::vector<double> out;
    out.reserve(tree.leaves().size());
    for (const auto& leaf : tree.leaves()) out.push_back(wavelet::energy(leaf) / tree.total_energy);
    return out;
}

std::vector<double> lwe(std::span<const double> dwe_values) {
    std::vector<double> out(dwe_values.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::log10(std::max(dwe_values[i], kLogFloor));
    return out;
}

std::vector<double> wcc(std::span<const double> lwe_values) {
    const std::size_t n = lwe_values.size();
    std::vector<double> out(n, 0.0);
    if (n == 0) return out;
    const double nn = static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += lwe_values[i] *
                   std::cos(std::numbers::pi * (static_cast<double>(i) + 0.5) * static_cast<double>(k) / nn);
        }
        out[k] = acc * (k == 0 ? std::sqrt(1.0 / nn) : std::sqrt(2.0 / nn));
    }
    return out;
}

StlDegrees stl_degrees(std::span<const double> x, std::size_t period) {
    const std::size_t n = x.size();
    if (period < 2 || n < 2 * period) return linear_trend_only(x);

    std::size_t first = 0;
    std::size_t last = 0;
    const std::vector<double> trend = centered_trend(x, period, first, last);

    std::vector<double> seasonal_sum(period, 0.0);
    std::vector<std::size_t> seasonal_count(period, 0);
    for (std::size_t t = first; t <= last; ++t) {
        seasonal_sum[t % period] += x[t] - trend[t];
        ++seasonal_count[t % period];
    }
    std::vector<double> index(period, 0.0);
    for (std::size_t p = 0; p < period; ++p)
        index[p] = seasonal_count[p] ? seasonal_sum[p] / static_cast<double>(seasonal_count[p]) : 0.0;
    const double offset = mean(index);
    for (double& v : index) v -= offset;

    const std::size_t m = last - first + 1;
    std::vector<double> detrended(m);
    std::vector<double> deseasoned(m);
    std::vector<double> remainder(m);
    for (std::size_t t = first; t <= last; ++t) {
        const double s = index[t % period];
        detrended[t - first] = x[t] - trend[t];
        deseasoned[t - first] = x[t] - s;
        remainder[t - first] = x[t] - trend[t] - s;
    }
    const double var_e = population_variance(remainder);
    return {safe_degree(var_e, population_variance(detrended)),
            safe_degree(var_e, population_variance(deseasoned))};
}

double skewness(std::span<const double> x) {
    if (x.size() < 3) throw InvalidArgument("skewness needs at least 3 samples");
    const double mu = mean(x);
    const double sd = population_std(x);
    if (!(sd > 0.0)) return 0.0;
    double acc = 0.0;
    for (double v : x) {
        const double z = (v - mu) / sd;
        acc += z * z * z;
    }
    return acc / static_cast<double>(x.size());
}

double sample_entropy(std::span<const double> x, const SampleEntropyOptions& options) {
    if (options.m < 1) throw InvalidArgument("sample entropy needs m >= 1");
    const auto m = static_cast<std::size_t>(options.m);
    const std::size_t n = x.size();
    if (n < m + 2) throw InvalidArgument("sample entropy needs at least m+2 samples");
    const double sd = population_std(x);
    if (!(sd > 0.0)) return 0.0;
    const double r = options.r.value_or(options.r_factor * sd);

    const std::size_t templates_m = options.range == TemplateRange::shared ? n - m : n - m + 1;
    const std::size_t templates_m1 = n - m;
    const std::size_t count_m = count_matches(x, templates_m, m, r);
    const std::size_t count_m1 = count_matches(x, templates_m1, m + 1, r);
    if (count_m == 0 || count_m1 == 0)
        throw UndefinedEntropy("sample entropy undefined: N_m=" + std::to_string(count_m) +
                               ", N_m+1=" + std::to_string(count_m1));
    const double ratio = static_cast<double>(count_m1) / static_cast<double>(count_m);
    return options.strict_paper ? std::log(ratio) : -std::log(ratio);
}

double hurst_k(std::span<const double> x) {
    if (x.size() < 2) throw InvalidArgument("hurst_k needs at least 2 samples");
    const double mu = mean(x);
    const double sd = population_std(x);
    if (!(sd > 0.0)) return 0.0;
    double running = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        running += (x[i] - mu) / sd;
        if (i == 0 || running < lo) lo = running;
        if (i == 0 || running > hi) hi = running;
    }
    const double range = hi - lo;
    if (!(range > 0.0)) return 0.0;
    return 2.0 / static_cast<double>(x.size()) * std::log(range);
}

int feature_levels(std::size_t length, std::size_t filter_len, int cap) {
    if (length < 2) throw InvalidArgument("feature extraction needs at least 2 samples");
    int level = length >= filter_len ? std::min(cap, wavelet::max_level(length, filter_len)) : 0;
    level = std::max(level, 1);
    while (level > 1 && length % (std::size_t{1} << level) != 0) --level;
    return level;
}

FeatureVector extract_features(const Series& series, const FeatureConfig& config) {
    const auto spec = wavelet::WaveletSpec::make(config.family);
    const std::span<const double> x(series.values());
    const int level = feature_levels(x.size(), spec.filter_length(), config.max_levels);
    // An odd-length window loses its last sample to the packet tree only.
    const std::size_t usable = x.size() - x.size() % (std::size_t{1} << level);

    FeatureVector fv;
    fv.levels = level;
    const auto tree = wavelet::dwpt(x.first(usable), level, spec);
    if (tree.total_energy > 0.0) {
        fv.dwe = dwe(tree);
    } else {
        // All-zero window: spread energy evenly so the vector stays finite.
        fv.dwe.assign(tree.leaves().size(), 1.0 / static_cast<double>(tree.leaves().size()));
    }
    fv.lwe = lwe(fv.dwe);
    fv.wcc = wcc(fv.lwe);

    const StlDegrees degrees = stl_degrees(x, config.period);
    fv.s_deg = degrees.seasonal;
    fv.t_deg = degrees.trend;
    fv.skewness = x.size() >= 3 ? skewness(x) : 0.0;
    const auto m = static_cast<std::size_t>(config.entropy.m);
    if (x.size() >= m + 2) {
        try {
            fv.sample_entropy = sample_entropy(x, config.entropy);
        } catch (const UndefinedEntropy&) {
            // Cap at the log of the number of template pairs.
            const double templates = static_cast<double>(x.size() - m);
            const double cap = std::log(std::max(1.0, templates * (templates - 1.0) / 2.0));
            fv.sample_entropy = config.entropy.strict_paper ? -cap : cap;
        }
    }
    fv.hurst_k = hurst_k(x);
    return fv;
}

PcaModel pca_fit(const Eigen::MatrixXd& samples, double variance_target) {
    const auto n = samples.rows();
    const auto d = samples.cols();
    if (n < 2) throw InvalidArgument("pca_fit needs at least 2 samples");
    PcaModel model;
    model.input_dims = static_cast<std::size_t>(d);
    model.mean = samples.colwise().mean().transpose();
    model.scale = Eigen::VectorXd::Ones(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const double var = (samples.col(j).array() - model.mean(j)).square().mean();
        const double sd = std::sqrt(var);
        if (sd > 1e-12 * (1.0 + std::abs(model.mean(j)))) {
            model.scale(j) = sd;
            model.kept_dims.push_back(static_cast<std::size_t>(j));
        }
    }
    const auto kept = static_cast<Eigen::Index>(model.kept_dims.size());
    if (kept == 0) {
        model.components = Eigen::MatrixXd(0, 0);
        return model;
    }
    Eigen::MatrixXd z(n, kept);
    for (Eigen::Index c = 0; c < kept; ++c) {
        const auto j = static_cast<Eigen::Index>(model.kept_dims[static_cast<std::size_t>(c)]);
        z.col(c) = (samples.col(j).array() - model.mean(j)) / model.scale(j);
    }
    const Eigen::MatrixXd cov = (z.transpose() * z) / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    // Eigenvalues come out ascending.
    Eigen::VectorXd values = solver.eigenvalues().reverse();
    Eigen::MatrixXd vectors = solver.eigenvectors().rowwise().reverse();
    for (Eigen::Index i = 0; i < values.size(); ++i) values(i) = std::max(values(i), 0.0);
    const double total = values.sum();

    const Eigen::Index cap = std::min<Eigen::Index>(kept, n - 1);
    Eigen::Index keep = 0;
    double cumulative = 0.0;
    std::vector<double> ratios;
    while (keep < cap) {
        const double ratio = total > 0.0 ? values(keep) / total : 0.0;
        ratios.push_back(ratio);
        cumulative += ratio;
        ++keep;
        if (cumulative >= variance_target - 1e-12) break;
    }
    model.explained_ratio = std::move(ratios);
    model.components = vectors.leftCols(keep).transpose();
    for (Eigen::Index r = 0; r < model.components.rows(); ++r) {
        Eigen::Index arg = 0;
        model.components.row(r).cwiseAbs().maxCoeff(&arg);
        if (model.components(r, arg) < 0.0) model.components.row(r) *= -1.0;
    }
    return model;
}

PcaModel pca_fit(std::span<const std::vector<double>> samples, double variance_target) {
    if (samples.empty()) throw InvalidArgument("pca_fit needs at least 2 samples");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(samples.size()),
                      static_cast<Eigen::Index>(samples.front().size()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].size() != samples.front().size())
            throw InvalidArgument("pca_fit: inconsistent feature dimensions");
        for (std::size_t j = 0; j < samples[i].size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = samples[i][j];
    }
    return pca_fit(m, variance_target);
}

Eigen::VectorXd pca_transform(const PcaModel& model, const Eigen::VectorXd& sample) {
    if (static_cast<std::size_t>(sample.size()) != model.input_dims)
        throw InvalidArgument("pca_transform: dimension mismatch");
    Eigen::VectorXd z(static_cast<Eigen::Index>(model.kept_dims.size()));
    for (std::size_t c = 0; c < model.kept_dims.size(); ++c) {
        const auto j = static_cast<Eigen::Index>(model.kept_dims[c]);
        z(static_cast<Eigen::Index>(c)) = (sample(j) - model.mean(j)) / model.scale(j);
    }
    if (model.components.rows() == 0) return Eigen::VectorXd(0);
    return model.components * z;
}

std::vector<double> pca_transform(const PcaModel& model, std::span<const double> sample) {
    const Eigen::VectorXd in = Eigen::Map<const Eigen::VectorXd>(sample.data(),
                                                                  static_cast<Eigen::Index>(sample.size()));
    const Eigen::VectorXd out = pca_transform(model, in);
    return {out.data(), out.data() + out.size()};
}

Eigen::VectorXd pca_reconstruct(const PcaModel& model, const Eigen::VectorXd& reduced) {
    Eigen::VectorXd out = model.mean;
    if (model.components.rows() == 0) return out;
    const Eigen::VectorXd z = model.components.transpose() * reduced;
    for (std::size_t c = 0; c < model.kept_dims.size(); ++c) {
        const auto j = static_cast<Eigen::Index>(model.kept_dims[c]);
        out(j) += z(static_cast<Eigen::Index>(c)) * model.scale(j);
    }
    return out;
}

void write_features_csv(const std::string& path, std::span<const std::string> ids,
                        std::span<const FeatureVector> vectors) {
    if (ids.size() != vectors.size()) throw InvalidArgument("feature CSV: id/vector count mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << "user_id";
    if (!vectors.empty())
        for (const auto& name : vectors.front().names()) out << ',' << name;
    out << '\n';
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        out << ids[i];
        for (double v : vectors[i].flatten()) {
            out << ',';
            write_number(out, v);
        }
        out << '\n';
    }
}

}  // namespace fslcast::features
