#include "fslcast/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fslcast/clustering.hpp"
#include "fslcast/data.hpp"
#include "fslcast/error.hpp"
#include "fslcast/experiment.hpp"
#include "fslcast/features.hpp"
#include "fslcast/forecaster.hpp"
#include "fslcast/metrics.hpp"
#include "fslcast/seed.hpp"

namespace fslcast::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

struct Flags {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_given = false;
    int jobs = -1;
    bool strict_paper = false;
    std::vector<std::string> overrides;

    // synth
    std::vector<int> periods;
    int users = 0;
    std::size_t length = 0;
    double noise = -1.0;
    double amplitude = -1.0;
    bool fixed_phase = false;

    // features / cluster / forecast
    std::string input;
    int granularity = 0;

    // forecast
    std::string target;
    int k = 0;
    std::string method = "fsl";
    std::string clusterer = "ensemble";
    std::size_t query_start = 0;
};

LogLevel log_level() {
    const char* env = std::getenv("FSL_LOG");
    if (!env) return LogLevel::warn;
    const std::string v = env;
    if (v == "error") return LogLevel::error;
    if (v == "info") return LogLevel::info;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::warn;
}

void log(std::ostream& err, LogLevel level, const std::string& message) {
    static const char* names[] = {"error", "warn", "info", "debug"};
    if (level <= log_level()) err << "[" << names[static_cast<int>(level)] << "] " << message << '\n';
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += (c == '\n' || c == '\r') ? ' ' : c;
    }
    return out + "\"";
}

int report(std::ostream& err, int code, const char* kind, const std::string& message) {
    err << "error code=" << code << " kind=" << kind << " message=" << quote(message) << '\n';
    return code;
}

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config_path, "Experiment config JSON")->check(CLI::ExistingFile);
    cmd->add_option("--out", f.out_dir, "Output directory (created if missing)")->required();
    cmd->add_option_function<std::uint64_t>(
        "--seed",
        [&f](const std::uint64_t& s) {
            f.seed = s;
            f.seed_given = true;
        },
        "Global seed");
    cmd->add_option("--jobs", f.jobs, "Parallel cells (0 = all cores)")->check(CLI::NonNegativeNumber);
    cmd->add_flag("--strict-paper", f.strict_paper, "Literal entropy ratio and root-outside-sum RMSE");
    cmd->add_option("--set", f.overrides, "Config override dotted.key=value (repeatable)");
}

experiment::ExperimentConfig resolve_config(const Flags& f) {
    json j = json::object();
    if (!f.config_path.empty()) {
        std::ifstream in(f.config_path);
        if (!in) throw ConfigError("cannot open config '" + f.config_path + "'");
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError("config '" + f.config_path + "' is not valid JSON: " + e.what());
        }
    }
    j = experiment::apply_overrides(std::move(j), f.overrides);
    experiment::ExperimentConfig c = experiment::config_from_json(j);
    if (f.seed_given) c.seed = f.seed;
    if (f.jobs >= 0) c.jobs = f.jobs;
    if (f.strict_paper) {
        c.metric = metrics::Convention::strict_paper;
        c.clustering.features.entropy.strict_paper = true;
    }
    return c;
}

fs::path prepare_out(const Flags& f) {
    const fs::path dir(f.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory '" + f.out_dir + "': " + ec.message());
    return dir;
}

data::Dataset read_input(const Flags& f) {
    data::CsvSchema schema;
    if (f.granularity > 0) schema.granularity_minutes = f.granularity;
    return data::load_csv(f.input, schema);
}

int cmd_synth(const Flags& f, std::ostream& out, std::ostream& err) {
    const auto c = resolve_config(f);
    data::SynthConfig s = c.dataset.synth;
    if (!f.periods.empty()) s.periods = f.periods;
    if (f.users > 0) s.users_per_group = f.users;
    if (f.length > 0) s.length = f.length;
    if (f.noise >= 0.0) s.noise_sigma = f.noise;
    if (f.amplitude >= 0.0) s.amplitude = f.amplitude;
    if (f.fixed_phase) s.random_phase = false;
    s.seed = c.seed;
    s.validate();
    const data::Dataset ds = data::synth_generate(s);
    const fs::path dir = prepare_out(f);
    data::save_csv(ds, (dir / "synth.csv").string());
    std::ofstream groups(dir / "groups.csv", std::ios::binary);
    groups << "user_id,group,period\n";
    for (std::size_t i = 0; i < ds.series.size(); ++i)
        groups << ds.series[i].user_id() << ',' << ds.groups[i] << ',' << s.periods[ds.groups[i]] << '\n';
    out << "users=" << ds.series.size() << " length=" << s.length << '\n';
    log(err, LogLevel::info, "wrote " + (dir / "synth.csv").string());
    return kOk;
}

int cmd_features(const Flags& f, std::ostream& out, std::ostream& err) {
    const auto c = resolve_config(f);
    const data::Dataset ds = read_input(f);
    std::vector<std::string> ids;
    std::vector<features::FeatureVector> vectors;
    for (const auto& s : ds.series) {
        ids.push_back(s.user_id());
        vectors.push_back(features::extract_features(s, c.clustering.features));
    }
    const fs::path dir = prepare_out(f);
    features::write_features_csv((dir / "features.csv").string(), ids, vectors);
    out << "series=" << ids.size() << " dims=" << (vectors.empty() ? 0 : vectors.front().flatten().size()) << '\n';
    log(err, LogLevel::info, "wrote " + (dir / "features.csv").string());
    return kOk;
}

int cmd_cluster(const Flags& f, std::ostream& out, std::ostream& err) {
    const auto c = resolve_config(f);
    const data::Dataset ds = read_input(f);
    clustering::ClusterConfig cc = c.clustering;
    cc.seed = derive_seed(c.seed, {13});
    if (f.clusterer != "ensemble") cc.single = clustering::algorithm_from_string(f.clusterer);
    const auto x = clustering::build_feature_matrix(ds.series, cc);
    const auto result = clustering::cluster_matrix(x, cc);
    std::vector<std::string> ids;
    for (const auto& s : ds.series) ids.push_back(s.user_id());
    const fs::path dir = prepare_out(f);
    clustering::write_consensus((dir / "labels.csv").string(), (dir / "consensus.json").string(), ids, result);
    out << "k=" << result.final.k << " s_score=";
    if (result.s_score) {
        out << *result.s_score;
    } else {
        out << "nan";
    }
    out << '\n';
    log(err, LogLevel::info, "wrote " + (dir / "consensus.json").string());
    return kOk;
}

int cmd_forecast(const Flags& f, std::ostream& out, std::ostream& err) {
    auto c = resolve_config(f);
    if (f.query_start > 0) c.query_start = f.query_start;
    const data::Dataset ds = read_input(f);
    experiment::CellInputs inputs;
    inputs.dataset = &ds;
    bool found = false;
    for (std::size_t i = 0; i < ds.series.size(); ++i) {
        if (ds.series[i].user_id() == f.target) {
            inputs.target = i;
            found = true;
        } else {
            inputs.historical.push_back(i);
        }
    }
    if (!found) throw DataError("target user '" + f.target + "' not found in '" + f.input + "'");
    if (inputs.historical.empty()) throw DataError("no historical users besides the target");
    const auto cell = experiment::run_fsl_cell(c, inputs, f.k, f.method, 0, f.clusterer);
    if (!cell.ok) throw DivergedForecast(cell.error);
    const fs::path dir = prepare_out(f);
    std::ofstream csv(dir / "forecast.csv", std::ios::binary);
    csv << "step,forecast,truth\n";
    char buf[96];
    for (std::size_t i = 0; i < cell.forecast.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", i + 1, cell.forecast[i], cell.truth[i]);
        csv << buf;
    }
    std::snprintf(buf, sizeof(buf), "rmse=%.17g", cell.metric(c.metric));
    out << buf << " query_cluster=" << cell.query_cluster << '\n';
    log(err, LogLevel::info, "wrote " + (dir / "forecast.csv").string());
    return kOk;
}

int cmd_experiment(const Flags& f, std::ostream& out, std::ostream& err) {
    const auto c = resolve_config(f);
    const fs::path dir = prepare_out(f);
    log(err, LogLevel::info, "running case " + experiment::to_string(c.kind));
    const auto result = experiment::run_experiment(c);
    experiment::write_results(result, (dir / "results").string());
    {
        std::ofstream cfg(dir / "results" / "config.json", std::ios::binary);
        cfg << experiment::to_json(c).dump(2) << '\n';
    }
    std::size_t failed = 0;
    for (const auto& cell : result.cells)
        if (!cell.ok) ++failed;
    out << "cells=" << result.cells.size() << " failed=" << failed << '\n';
    for (const auto& row : result.table)
        log(err, LogLevel::info,
            row.method + " g=" + std::to_string(row.granularity) + " k=" + std::to_string(row.k) + " " +
                row.report.cell());
    return kOk;
}

struct App {
    CLI::App app{"Clustering-enabled few-shot load forecasting", "fslcast"};
    Flags flags;
    CLI::App* synth = nullptr;
    CLI::App* features = nullptr;
    CLI::App* cluster = nullptr;
    CLI::App* forecast = nullptr;
    CLI::App* experiment = nullptr;

    App() {
        app.require_subcommand(1);
        app.set_version_flag("--version", "fslcast 0.1.0");
        app.footer("Environment: FSL_LOG=error|warn|info|debug sets the stderr log level (default warn).\n"
                   "Exit codes: 0 ok, 2 config or usage, 3 data, 4 numeric.");

        synth = app.add_subcommand("synth", "Write a synthetic multi-user dataset to <out>/synth.csv");
        add_common(synth, flags);
        synth->add_option("--periods", flags.periods, "Group periods in samples, comma separated")->delimiter(',');
        synth->add_option("--users", flags.users, "Users per group")->check(CLI::PositiveNumber);
        synth->add_option("--length", flags.length, "Samples per user")->check(CLI::PositiveNumber);
        synth->add_option("--noise", flags.noise, "Gaussian noise sigma")->check(CLI::NonNegativeNumber);
        synth->add_option("--amplitude", flags.amplitude, "Sinusoid amplitude")->check(CLI::NonNegativeNumber);
        synth->add_flag("--fixed-phase", flags.fixed_phase, "Use phase 0 for every user");

        features = app.add_subcommand("features", "Write feature vectors to <out>/features.csv");
        add_common(features, flags);
        features->add_option("--input", flags.input, "Dataset CSV (user_id,timestamp,value)")->required();
        features->add_option("--granularity", flags.granularity, "Minutes per sample of the input")
            ->check(CLI::PositiveNumber);

        cluster = app.add_subcommand("cluster", "Consensus-cluster every series of a dataset");
        add_common(cluster, flags);
        cluster->add_option("--input", flags.input, "Dataset CSV (user_id,timestamp,value)")->required();
        cluster->add_option("--granularity", flags.granularity, "Minutes per sample of the input")
            ->check(CLI::PositiveNumber);
        cluster->add_option("--clusterer", flags.clusterer, "ensemble or a single base algorithm");

        forecast = app.add_subcommand("forecast", "Run one few-shot forecasting cell");
        add_common(forecast, flags);
        forecast->add_option("--input", flags.input, "Dataset CSV (user_id,timestamp,value)")->required();
        forecast->add_option("--granularity", flags.granularity, "Minutes per sample of the input")
            ->check(CLI::PositiveNumber);
        forecast->add_option("--target", flags.target, "User id of the new user")->required();
        forecast->add_option("--k", flags.k, "Shots taken from the target")->required()->check(CLI::Range(2, 1 << 20));
        forecast->add_option("--method", flags.method, "fsl or baseline")->check(CLI::IsMember({"fsl", "baseline"}));
        forecast->add_option("--clusterer", flags.clusterer, "ensemble or a single base algorithm");
        forecast->add_option("--query-start", flags.query_start, "Index where the few-shot window starts");

        experiment = app.add_subcommand("experiment", "Run a case study and write <out>/results/");
        add_common(experiment, flags);
    }
};

}  // namespace

std::string full_help() {
    App a;
    std::string text = a.app.help();
    for (CLI::App* sub : {a.synth, a.features, a.cluster, a.forecast, a.experiment})
        text += "\n" + sub->help();
    return text;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    App a;
    try {
        a.app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        const auto parsed = a.app.get_subcommands();
        out << (parsed.empty() ? a.app.help() : parsed.front()->help());
        return kOk;
    } catch (const CLI::CallForVersion& e) {
        out << e.what() << '\n';
        return kOk;
    } catch (const CLI::ParseError& e) {
        return report(err, kConfig, "usage", e.what());
    }
    try {
        if (*a.synth) return cmd_synth(a.flags, out, err);
        if (*a.features) return cmd_features(a.flags, out, err);
        if (*a.cluster) return cmd_cluster(a.flags, out, err);
        if (*a.forecast) return cmd_forecast(a.flags, out, err);
        if (*a.experiment) return cmd_experiment(a.flags, out, err);
    } catch (const ConfigError& e) {
        return report(err, kConfig, "config", e.what());
    } catch (const DataError& e) {
        return report(err, kData, "data", e.what());
    } catch (const Error& e) {
        return report(err, kNumeric, "numeric", e.what());
    } catch (const std::exception& e) {
        return report(err, kNumeric, "internal", e.what());
    }
    return report(err, kConfig, "usage", "no subcommand");
}

}  // namespace fslcast::cli
