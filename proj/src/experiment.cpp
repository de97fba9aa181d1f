#include "fslcast/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include "fslcast/error.hpp"
#include "fslcast/seed.hpp"

namespace fslcast::experiment {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

enum SeedTag : std::uint64_t { kReplicate = 11, kData = 12, kCluster = 13, kTrain = 14, kBaseline = 15 };

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

bool type_compatible(const json& reference, const json& value) {
    if (reference.is_null()) return value.is_null() || value.is_number();
    if (reference.is_boolean()) return value.is_boolean();
    if (reference.is_number_float()) return value.is_number();
    if (reference.is_number_unsigned()) return value.is_number_unsigned() || (value.is_number_integer() && value.get<std::int64_t>() >= 0);
    if (reference.is_number_integer()) return value.is_number_integer();
    if (reference.is_string()) return value.is_string();
    if (reference.is_array()) return value.is_array();
    if (reference.is_object()) return value.is_object();
    return false;
}

void check_shape(const json& reference, const json& given, const std::string& path) {
    if (!given.is_object()) throw ConfigError("config: '" + path + "' must be an object");
    for (auto it = given.begin(); it != given.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!reference.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
        const json& ref = reference.at(it.key());
        if (!type_compatible(ref, it.value()))
            throw ConfigError("config: key '" + key + "' has the wrong type");
        if (ref.is_object()) check_shape(ref, it.value(), key);
    }
}

void merge_into(json& base, const json& patch) {
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
            merge_into(base[it.key()], it.value());
        } else {
            base[it.key()] = it.value();
        }
    }
}

template <class T>
T get(const json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
    }
}

wavelet::ThresholdMode mode_from_string(const std::string& s) {
    if (s == "soft") return wavelet::ThresholdMode::soft;
    if (s == "hard") return wavelet::ThresholdMode::hard;
    throw ConfigError("config: unknown threshold mode '" + s + "'");
}

data::TimeMode time_mode_from_string(const std::string& s) {
    if (s == "sample_index") return data::TimeMode::sample_index;
    if (s == "epoch_seconds") return data::TimeMode::epoch_seconds;
    throw ConfigError("config: unknown time mode '" + s + "'");
}

std::size_t factor_for(const data::Dataset& base, int granularity) {
    if (granularity % base.granularity_minutes != 0)
        throw ConfigError("granularity " + std::to_string(granularity) + " is not a multiple of the data's " +
                          std::to_string(base.granularity_minutes) + "-minute sampling");
    return static_cast<std::size_t>(granularity / base.granularity_minutes);
}

template <class F>
void run_pool(std::size_t count, int jobs, F&& task) {
    unsigned workers = jobs > 0 ? static_cast<unsigned>(jobs) : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(count, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) task(i);
        });
    }
    for (auto& t : pool) t.join();
}

struct GridTask {
    int granularity;
    std::string method;
    std::string clusterer;
    int k;
    int replicate;
    std::size_t target_slot;
};

ExperimentResult run_grid(const ExperimentConfig& config, CaseKind kind) {
    config.validate();
    // Datasets are built up front so cells only read shared state.
    std::map<std::pair<int, int>, data::Dataset> datasets;
    for (int r = 0; r < config.replicates; ++r) {
        const data::Dataset base = load_dataset(config, r);
        for (int g : config.granularities) {
            const std::size_t factor = factor_for(base, g);
            datasets.emplace(std::make_pair(r, g), factor == 1 ? base : data::resample(base, factor));
        }
    }
    std::map<std::pair<int, int>, std::vector<CellInputs>> targets;
    for (auto& [key, ds] : datasets) targets[key] = select_targets(config, ds);

    std::vector<GridTask> tasks;
    const std::vector<std::string>& variants =
        kind == CaseKind::compactness ? config.clusterers : config.methods;
    for (int g : config.granularities)
        for (const auto& v : variants)
            for (int k : config.shots)
                for (int r = 0; r < config.replicates; ++r)
                    for (std::size_t t = 0; t < targets.at({r, g}).size(); ++t) {
                        if (kind == CaseKind::compactness)
                            tasks.push_back({g, v, v, k, r, t});
                        else
                            tasks.push_back({g, v, "ensemble", k, r, t});
                    }

    ExperimentResult result;
    result.kind = kind;
    result.convention = config.metric;
    result.cells.resize(tasks.size());
    run_pool(tasks.size(), config.jobs, [&](std::size_t i) {
        const GridTask& t = tasks[i];
        const CellInputs& inputs = targets.at({t.replicate, t.granularity})[t.target_slot];
        const std::string method = kind == CaseKind::compactness ? std::string("fsl") : t.method;
        Cell cell = run_fsl_cell(config, inputs, t.k, method, t.replicate, t.clusterer);
        if (kind == CaseKind::compactness) cell.method = t.clusterer;
        result.cells[i] = std::move(cell);
    });
    aggregate(result);
    return result;
}

}  // namespace

std::string to_string(CaseKind kind) {
    switch (kind) {
        case CaseKind::k_sweep: return "k_sweep";
        case CaseKind::granularity: return "granularity";
        case CaseKind::compactness: return "compactness";
    }
    return "unknown";
}

CaseKind case_from_string(const std::string& name) {
    if (name == "k_sweep") return CaseKind::k_sweep;
    if (name == "granularity") return CaseKind::granularity;
    if (name == "compactness") return CaseKind::compactness;
    throw ConfigError("unknown case '" + name + "'");
}

void ExperimentConfig::validate() const {
    if (dataset.kind != "synthetic" && dataset.kind != "csv")
        throw ConfigError("dataset.kind must be 'synthetic' or 'csv'");
    if (dataset.kind == "synthetic") dataset.synth.validate();
    if (dataset.kind == "csv" && dataset.csv_path.empty()) throw ConfigError("dataset.csv.path is required");
    if (granularities.empty()) throw ConfigError("granularities must not be empty");
    for (int g : granularities)
        if (g < 1) throw ConfigError("granularities must be positive");
    if (shots.empty()) throw ConfigError("shots must not be empty");
    for (std::size_t i = 0; i < shots.size(); ++i) {
        if (shots[i] < 2) throw ConfigError("shots must be >= 2");
        if (i > 0 && shots[i] <= shots[i - 1]) throw ConfigError("shots must be strictly ascending");
    }
    if (horizon < 1) throw ConfigError("horizon must be positive");
    if (replicates < 1) throw ConfigError("replicates must be >= 1");
    if (targets_per_group < 1) throw ConfigError("targets_per_group must be >= 1");
    for (const auto& m : methods)
        if (m != "fsl" && m != "baseline") throw ConfigError("unknown method '" + m + "'");
    for (const auto& c : clusterers)
        if (c != "ensemble") clustering::algorithm_from_string(c);
    train.validate();
    if (jobs < 0) throw ConfigError("jobs must be >= 0");
}

ojson to_json(const ExperimentConfig& c) {
    ojson j;
    j["case"] = to_string(c.kind);
    const auto& s = c.dataset.synth;
    const auto& sc = c.dataset.schema;
    j["dataset"] = {
        {"kind", c.dataset.kind},
        {"synth",
         {{"users_per_group", s.users_per_group},
          {"periods", s.periods},
          {"amplitude", s.amplitude},
          {"noise_sigma", s.noise_sigma},
          {"random_phase", s.random_phase},
          {"length", s.length}}},
        {"csv",
         {{"path", c.dataset.csv_path},
          {"user_column", sc.user_column},
          {"time_column", sc.time_column},
          {"value_column", sc.value_column},
          {"time_mode", sc.time_mode == data::TimeMode::sample_index ? "sample_index" : "epoch_seconds"},
          {"granularity_minutes", sc.granularity_minutes},
          {"window_start", sc.window_start ? ojson(*sc.window_start) : ojson(nullptr)},
          {"window_end", sc.window_end ? ojson(*sc.window_end) : ojson(nullptr)}}}};
    j["granularities"] = c.granularities;
    j["shots"] = c.shots;
    j["horizon"] = c.horizon;
    j["seed"] = c.seed;
    j["replicates"] = c.replicates;
    j["targets_per_group"] = c.targets_per_group;
    j["target_groups"] = c.target_groups;
    j["query_start"] = c.query_start;
    j["methods"] = c.methods;
    j["clusterers"] = c.clusterers;
    std::vector<std::string> algos;
    for (auto a : c.clustering.algorithms) algos.push_back(clustering::to_string(a));
    const auto& f = c.clustering.features;
    j["clustering"] = {{"wavelet", wavelet::to_string(f.family)},
                       {"max_levels", f.max_levels},
                       {"period", f.period},
                       {"entropy_m", f.entropy.m},
                       {"entropy_r_factor", f.entropy.r_factor},
                       {"entropy_strict", f.entropy.strict_paper},
                       {"pca_whole_vector", c.clustering.pca_whole_vector},
                       {"pca_variance", c.clustering.pca_variance},
                       {"k_min", c.clustering.k_min},
                       {"k_max", c.clustering.k_max},
                       {"restarts", c.clustering.restarts},
                       {"algorithms", algos}};
    const auto& t = c.train;
    j["train"] = {{"batch_size", t.batch_size},
                  {"learning_rate", t.learning_rate},
                  {"pretrain_steps", t.pretrain_steps},
                  {"finetune_steps", t.finetune_steps},
                  {"beta1", t.beta1},
                  {"beta2", t.beta2},
                  {"epsilon", t.epsilon},
                  {"window_len", t.window_len},
                  {"hidden_size", t.hidden_size},
                  {"init_scale", t.init_scale},
                  {"forget_bias", t.forget_bias},
                  {"step_unit", t.step_unit == forecaster::StepUnit::updates ? "updates" : "epochs"},
                  {"pretrain_on_members", t.pretrain_on_members}};
    const wavelet::DenoiseConfig d = c.denoise.value_or(wavelet::DenoiseConfig{});
    j["denoise"] = {{"enabled", c.denoise.has_value()},
                    {"wavelet", wavelet::to_string(d.family)},
                    {"mode", d.mode == wavelet::ThresholdMode::soft ? "soft" : "hard"},
                    {"threshold", d.threshold_override ? ojson(*d.threshold_override) : ojson(nullptr)}};
    j["denoise_few_shot"] = c.denoise_few_shot;
    j["baseline_steps"] = c.baseline_steps;
    j["metric"] = metrics::to_string(c.metric);
    j["jobs"] = c.jobs;
    return j;
}

ExperimentConfig config_from_json(const json& given) {
    const json defaults = json::parse(to_json(ExperimentConfig{}).dump());
    check_shape(defaults, given, "");
    json j = defaults;
    merge_into(j, given);

    ExperimentConfig c;
    c.kind = case_from_string(get<std::string>(j, "case"));
    const json& ds = j.at("dataset");
    c.dataset.kind = get<std::string>(ds, "kind");
    const json& s = ds.at("synth");
    c.dataset.synth.users_per_group = get<int>(s, "users_per_group");
    c.dataset.synth.periods = get<std::vector<int>>(s, "periods");
    c.dataset.synth.amplitude = get<double>(s, "amplitude");
    c.dataset.synth.noise_sigma = get<double>(s, "noise_sigma");
    c.dataset.synth.random_phase = get<bool>(s, "random_phase");
    c.dataset.synth.length = get<std::size_t>(s, "length");
    const json& csv = ds.at("csv");
    c.dataset.csv_path = get<std::string>(csv, "path");
    c.dataset.schema.user_column = get<std::string>(csv, "user_column");
    c.dataset.schema.time_column = get<std::string>(csv, "time_column");
    c.dataset.schema.value_column = get<std::string>(csv, "value_column");
    c.dataset.schema.time_mode = time_mode_from_string(get<std::string>(csv, "time_mode"));
    c.dataset.schema.granularity_minutes = get<int>(csv, "granularity_minutes");
    if (!csv.at("window_start").is_null()) c.dataset.schema.window_start = get<std::int64_t>(csv, "window_start");
    if (!csv.at("window_end").is_null()) c.dataset.schema.window_end = get<std::int64_t>(csv, "window_end");

    c.granularities = get<std::vector<int>>(j, "granularities");
    c.shots = get<std::vector<int>>(j, "shots");
    c.horizon = get<std::size_t>(j, "horizon");
    c.seed = get<std::uint64_t>(j, "seed");
    c.replicates = get<int>(j, "replicates");
    c.targets_per_group = get<int>(j, "targets_per_group");
    c.target_groups = get<std::vector<int>>(j, "target_groups");
    c.query_start = get<std::size_t>(j, "query_start");
    c.methods = get<std::vector<std::string>>(j, "methods");
    c.clusterers = get<std::vector<std::string>>(j, "clusterers");

    const json& cl = j.at("clustering");
    try {
        c.clustering.features.family = wavelet::family_from_string(get<std::string>(cl, "wavelet"));
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    c.clustering.features.max_levels = get<int>(cl, "max_levels");
    c.clustering.features.period = get<std::size_t>(cl, "period");
    c.clustering.features.entropy.m = get<int>(cl, "entropy_m");
    c.clustering.features.entropy.r_factor = get<double>(cl, "entropy_r_factor");
    c.clustering.features.entropy.strict_paper = get<bool>(cl, "entropy_strict");
    c.clustering.pca_whole_vector = get<bool>(cl, "pca_whole_vector");
    c.clustering.pca_variance = get<double>(cl, "pca_variance");
    c.clustering.k_min = get<int>(cl, "k_min");
    c.clustering.k_max = get<int>(cl, "k_max");
    c.clustering.restarts = get<int>(cl, "restarts");
    c.clustering.algorithms.clear();
    for (const auto& name : get<std::vector<std::string>>(cl, "algorithms"))
        c.clustering.algorithms.push_back(clustering::algorithm_from_string(name));

    const json& t = j.at("train");
    c.train.batch_size = get<int>(t, "batch_size");
    c.train.learning_rate = get<double>(t, "learning_rate");
    c.train.pretrain_steps = get<int>(t, "pretrain_steps");
    c.train.finetune_steps = get<int>(t, "finetune_steps");
    c.train.beta1 = get<double>(t, "beta1");
    c.train.beta2 = get<double>(t, "beta2");
    c.train.epsilon = get<double>(t, "epsilon");
    c.train.window_len = get<int>(t, "window_len");
    c.train.hidden_size = get<int>(t, "hidden_size");
    c.train.init_scale = get<double>(t, "init_scale");
    c.train.forget_bias = get<double>(t, "forget_bias");
    const auto unit = get<std::string>(t, "step_unit");
    if (unit == "updates") {
        c.train.step_unit = forecaster::StepUnit::updates;
    } else if (unit == "epochs") {
        c.train.step_unit = forecaster::StepUnit::epochs;
    } else {
        throw ConfigError("config: unknown step unit '" + unit + "'");
    }
    c.train.pretrain_on_members = get<bool>(t, "pretrain_on_members");

    const json& d = j.at("denoise");
    if (get<bool>(d, "enabled")) {
        wavelet::DenoiseConfig dc;
        try {
            dc.family = wavelet::family_from_string(get<std::string>(d, "wavelet"));
        } catch (const InvalidArgument& e) {
            throw ConfigError(e.what());
        }
        dc.mode = mode_from_string(get<std::string>(d, "mode"));
        if (!d.at("threshold").is_null()) dc.threshold_override = get<double>(d, "threshold");
        c.denoise = dc;
    } else {
        c.denoise.reset();
    }
    c.denoise_few_shot = get<bool>(j, "denoise_few_shot");
    c.baseline_steps = get<int>(j, "baseline_steps");
    c.metric = metrics::convention_from_string(get<std::string>(j, "metric"));
    c.jobs = get<int>(j, "jobs");
    c.validate();
    return c;
}

json apply_overrides(json j, const std::vector<std::string>& overrides) {
    const json defaults = json::parse(to_json(ExperimentConfig{}).dump());
    for (const auto& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + item + "' is not key=value");
        const std::string key = item.substr(0, eq);
        const std::string text = item.substr(eq + 1);
        json value;
        try {
            value = json::parse(text);
        } catch (const json::exception&) {
            value = text;
        }
        const json* ref = &defaults;
        json* target = &j;
        std::size_t start = 0;
        while (true) {
            const auto dot = key.find('.', start);
            const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (!ref->is_object() || !ref->contains(part)) throw ConfigError("override: unknown key '" + key + "'");
            ref = &ref->at(part);
            if (!target->is_object()) *target = json::object();
            if (dot == std::string::npos) {
                if (!type_compatible(*ref, value)) throw ConfigError("override: key '" + key + "' has the wrong type");
                (*target)[part] = value;
                break;
            }
            target = &(*target)[part];
            start = dot + 1;
        }
    }
    return j;
}

std::uint64_t replicate_seed(const ExperimentConfig& config, int replicate) {
    return derive_seed(config.seed, {kReplicate, static_cast<std::uint64_t>(replicate)});
}

data::Dataset load_dataset(const ExperimentConfig& config, int replicate) {
    if (config.dataset.kind == "csv") return data::load_csv(config.dataset.csv_path, config.dataset.schema);
    data::SynthConfig synth = config.dataset.synth;
    synth.seed = derive_seed(replicate_seed(config, replicate), {kData});
    return data::synth_generate(synth);
}

std::vector<CellInputs> select_targets(const ExperimentConfig& config, const data::Dataset& ds) {
    std::vector<bool> is_target(ds.series.size(), false);
    std::vector<std::size_t> chosen;
    const auto per = static_cast<std::size_t>(config.targets_per_group);
    if (!ds.groups.empty()) {
        std::map<int, std::vector<std::size_t>> members;
        for (std::size_t i = 0; i < ds.groups.size(); ++i) members[ds.groups[i]].push_back(i);
        for (const auto& [group, list] : members) {
            if (!config.target_groups.empty() &&
                std::find(config.target_groups.begin(), config.target_groups.end(), group) == config.target_groups.end())
                continue;
            if (list.size() <= per)
                throw ConfigError("group " + std::to_string(group) + " has too few users to hold out " +
                                  std::to_string(per));
            for (std::size_t i = list.size() - per; i < list.size(); ++i) chosen.push_back(list[i]);
        }
    } else {
        if (ds.series.size() <= per) throw ConfigError("dataset has too few users to hold out targets");
        for (std::size_t i = ds.series.size() - per; i < ds.series.size(); ++i) chosen.push_back(i);
    }
    // Every held-out series is excluded from every historical pool.
    if (!ds.groups.empty()) {
        std::map<int, std::vector<std::size_t>> members;
        for (std::size_t i = 0; i < ds.groups.size(); ++i) members[ds.groups[i]].push_back(i);
        for (const auto& [group, list] : members)
            for (std::size_t i = list.size() - std::min(per, list.size()); i < list.size(); ++i) is_target[list[i]] = true;
    } else {
        for (std::size_t i : chosen) is_target[i] = true;
    }
    std::vector<std::size_t> historical;
    for (std::size_t i = 0; i < ds.series.size(); ++i)
        if (!is_target[i]) historical.push_back(i);
    std::vector<CellInputs> out;
    for (std::size_t t : chosen) out.push_back(CellInputs{&ds, t, historical});
    return out;
}

Cell run_fsl_cell(const ExperimentConfig& config, const CellInputs& inputs, int k, const std::string& method,
                  int replicate, const std::string& clusterer) {
    const data::Dataset& ds = *inputs.dataset;
    const Series& target = ds.series.at(inputs.target);
    Cell cell;
    cell.granularity = ds.granularity_minutes;
    cell.method = method;
    cell.k = k;
    cell.replicate = replicate;
    cell.target = target.user_id();
    cell.target_group = ds.groups.empty() ? -1 : ds.groups[inputs.target];
    const std::uint64_t rep_seed = replicate_seed(config, replicate);
    const std::uint64_t path_k = static_cast<std::uint64_t>(k);
    const std::uint64_t path_g = static_cast<std::uint64_t>(ds.granularity_minutes);
    try {
        if (config.query_start >= target.size())
            throw InvalidArgument("query start lies beyond target series '" + target.user_id() + "'");
        const Series tail = slice_window(target, config.query_start, target.size() - config.query_start);
        const FewShotSplit split = split_few_shot(tail, static_cast<std::size_t>(k), config.horizon);
        Series few_shot = split.train;
        if (config.denoise_few_shot && config.denoise) {
            const auto filter = wavelet::WaveletSpec::make(config.denoise->family).filter_length();
            if (few_shot.size() >= filter) few_shot = wavelet::denoise(few_shot, *config.denoise);
        }
        const int window = forecaster::effective_window(static_cast<std::size_t>(k), config.train.window_len);
        forecaster::TrainConfig tc = config.train;
        tc.seed = derive_seed(rep_seed, {kTrain, path_g, path_k, inputs.target});

        forecaster::Model model;
        if (method == "baseline") {
            const int steps = config.baseline_steps >= 0 ? config.baseline_steps
                                                         : config.train.pretrain_steps + config.train.finetune_steps;
            model = forecaster::train(forecaster::initial_params(tc), few_shot, steps, tc, window,
                                      derive_seed(tc.seed, {kBaseline}))
                        .model;
        } else if (method == "fsl") {
            std::vector<Series> historical;
            historical.reserve(inputs.historical.size());
            for (std::size_t i : inputs.historical) historical.push_back(ds.series.at(i));
            clustering::ClusterConfig cc = config.clustering;
            cc.seed = derive_seed(rep_seed, {kCluster, path_g, path_k, inputs.target});
            if (clusterer != "ensemble") cc.single = clustering::algorithm_from_string(clusterer);
            const auto pc = clustering::cluster_population(historical, split.train, cc);
            cell.query_cluster = pc.query_cluster;
            cell.s_score = pc.consensus.s_score;

            std::vector<Series> members;
            std::map<int, int> group_votes;
            for (std::size_t i = 0; i < historical.size(); ++i) {
                if (pc.consensus.final.labels[i] != pc.query_cluster) continue;
                members.push_back(historical[i]);
                if (!ds.groups.empty()) ++group_votes[ds.groups[inputs.historical[i]]];
            }
            if (members.empty()) members = historical;  // query formed its own cluster
            if (!ds.groups.empty()) {
                int best_group = -1;
                int best_votes = 0;
                for (const auto& [g, v] : group_votes)
                    if (v > best_votes) {
                        best_votes = v;
                        best_group = g;
                    }
                cell.assignment_correct = best_group == cell.target_group;
            }
            const Series proto = forecaster::prototype_series(members, config.denoise);
            const forecaster::Model theta0 = forecaster::pretrain(proto, tc, window, members);
            model = forecaster::fine_tune(theta0, few_shot, tc);
        } else {
            throw ConfigError("unknown method '" + method + "'");
        }

        const auto& fv = few_shot.values();
        const std::vector<double> seed_window(fv.end() - window, fv.end());
        cell.forecast = forecaster::forecast(model, seed_window, config.horizon);
        cell.truth = split.test.values();
        cell.rmse = metrics::rmse(cell.truth, cell.forecast, metrics::Convention::rmse);
        cell.rmse_strict = metrics::rmse(cell.truth, cell.forecast, metrics::Convention::strict_paper);
        cell.ok = std::isfinite(cell.rmse);
        if (!cell.ok) cell.error = "non-finite rmse";
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        cell.ok = false;
        cell.error = e.what();
    }
    return cell;
}

void aggregate(ExperimentResult& result) {
    result.table.clear();
    result.sscores.clear();
    std::vector<std::tuple<int, std::string, int>> keys;
    std::map<std::tuple<int, std::string, int>, std::vector<const Cell*>> groups;
    for (const auto& c : result.cells) {
        const auto key = std::make_tuple(c.granularity, c.method, c.k);
        if (!groups.count(key)) keys.push_back(key);
        groups[key].push_back(&c);
    }
    for (const auto& key : keys) {
        TableRow row;
        std::tie(row.granularity, row.method, row.k) = key;
        std::vector<double> values;
        for (const Cell* c : groups[key]) {
            ++row.cells;
            if (c->ok) {
                values.push_back(c->metric(result.convention));
            } else {
                ++row.failures;
            }
        }
        if (!values.empty()) {
            row.report = metrics::EvalReport::from(values, result.convention);
        } else {
            row.report.convention = result.convention;
            row.report.mrmse = row.report.trimmed_mrmse = row.report.trimmed_std = std::nan("");
        }
        result.table.push_back(std::move(row));
    }

    std::vector<std::string> order;
    std::map<std::string, std::pair<double, std::size_t>> sums;
    std::size_t assigned = 0;
    std::size_t correct = 0;
    for (const auto& c : result.cells) {
        if (c.s_score) {
            if (!sums.count(c.method)) order.push_back(c.method);
            sums[c.method].first += *c.s_score;
            ++sums[c.method].second;
        }
        if (c.assignment_correct) {
            ++assigned;
            if (*c.assignment_correct) ++correct;
        }
    }
    for (const auto& m : order)
        result.sscores.push_back({m, sums[m].first / static_cast<double>(sums[m].second), sums[m].second});
    if (assigned > 0) result.assignment_accuracy = static_cast<double>(correct) / static_cast<double>(assigned);
    else result.assignment_accuracy.reset();
}

ExperimentResult run_case_k_sweep(const ExperimentConfig& config) { return run_grid(config, CaseKind::k_sweep); }

ExperimentResult run_case_granularity(const ExperimentConfig& config) {
    return run_grid(config, CaseKind::granularity);
}

ExperimentResult run_case_compactness(const ExperimentConfig& config) {
    return run_grid(config, CaseKind::compactness);
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
    switch (config.kind) {
        case CaseKind::k_sweep: return run_case_k_sweep(config);
        case CaseKind::granularity: return run_case_granularity(config);
        case CaseKind::compactness: return run_case_compactness(config);
    }
    throw ConfigError("unknown case");
}

void write_results(const ExperimentResult& result, const std::string& dir) {
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream out(std::filesystem::path(dir) / name, std::ios::binary);
        if (!out) throw DataError("cannot write '" + (std::filesystem::path(dir) / name).string() + "'");
        return out;
    };
    {
        auto out = open("cells.csv");
        out << "granularity_minutes,method,k,replicate,target,group,status,rmse,rmse_strict,query_cluster,"
               "assignment_correct,s_score,error\n";
        for (const auto& c : result.cells) {
            std::string err = c.error;
            std::replace(err.begin(), err.end(), ',', ';');
            std::replace(err.begin(), err.end(), '\n', ' ');
            out << c.granularity << ',' << c.method << ',' << c.k << ',' << c.replicate << ',' << c.target << ','
                << c.target_group << ',' << (c.ok ? "ok" : "failed") << ',' << (c.ok ? fmt(c.rmse) : "") << ','
                << (c.ok ? fmt(c.rmse_strict) : "") << ',' << c.query_cluster << ','
                << (c.assignment_correct ? (*c.assignment_correct ? "1" : "0") : "") << ','
                << (c.s_score ? fmt(*c.s_score) : "") << ',' << err << '\n';
        }
    }
    std::vector<int> ks;
    for (const auto& r : result.table)
        if (std::find(ks.begin(), ks.end(), r.k) == ks.end()) ks.push_back(r.k);
    auto cell_text = [](const TableRow* r) { return r && std::isfinite(r->report.trimmed_mrmse) ? r->report.cell() : std::string("n/a"); };
    auto find_row = [&](int g, const std::string& m, int k) -> const TableRow* {
        for (const auto& r : result.table)
            if (r.granularity == g && r.method == m && r.k == k) return &r;
        return nullptr;
    };
    std::vector<std::pair<int, std::string>> rows;
    for (const auto& r : result.table) {
        const auto key = std::make_pair(r.granularity, r.method);
        if (std::find(rows.begin(), rows.end(), key) == rows.end()) rows.push_back(key);
    }
    {
        auto out = open("table.csv");
        out << "granularity_minutes,method";
        for (int k : ks) out << ',' << k << "shot";
        out << '\n';
        for (const auto& [g, m] : rows) {
            out << g << ',' << m;
            for (int k : ks) out << ',' << cell_text(find_row(g, m, k));
            out << '\n';
        }
    }
    {
        auto out = open("sscore.csv");
        out << "clusterer";
        for (int k : ks) out << ',' << k;
        out << ",s_score\n";
        for (const auto& s : result.sscores) {
            out << s.clusterer;
            for (int k : ks) {
                const TableRow* found = nullptr;
                for (const auto& r : result.table)
                    if (r.method == s.clusterer && r.k == k) found = &r;
                out << ',' << cell_text(found);
            }
            out << ',' << fmt(s.mean_s_score) << '\n';
        }
    }
    {
        auto out = open("curves.csv");
        out << "granularity_minutes,method,k,trimmed_mrmse,trimmed_std,mrmse,removed,failures,cells\n";
        for (const auto& r : result.table) {
            out << r.granularity << ',' << r.method << ',' << r.k << ',' << fmt(r.report.trimmed_mrmse) << ','
                << fmt(r.report.trimmed_std) << ',' << fmt(r.report.mrmse) << ',' << r.report.removed_count << ','
                << r.failures << ',' << r.cells << '\n';
        }
    }
}

}  // namespace fslcast::experiment
