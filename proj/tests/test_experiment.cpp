#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "fslcast/error.hpp"
#include "fslcast/experiment.hpp"
#include "test_support.hpp"

using namespace fslcast;
using namespace fslcast::experiment;

namespace {

ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.dataset.synth.users_per_group = 4;
    c.dataset.synth.length = 200;
    c.shots = {12};
    c.target_groups = {0};
    c.methods = {"fsl"};
    c.clustering.k_max = 4;
    c.train.hidden_size = 6;
    c.train.pretrain_steps = 8;
    c.train.finetune_steps = 4;
    c.train.batch_size = 16;
    c.jobs = 1;
    c.seed = 9;
    return c;
}

std::size_t count_lines(const std::string& text) {
    std::size_t n = 0;
    for (char ch : text) n += ch == '\n';
    return n;
}

}  // namespace

TEST_CASE("config json round trip") {
    ExperimentConfig c = tiny_config();
    c.kind = CaseKind::granularity;
    c.granularities = {1, 2};
    c.denoise->mode = wavelet::ThresholdMode::hard;
    c.denoise->threshold_override = 0.25;
    c.metric = metrics::Convention::strict_paper;
    c.dataset.schema.window_start = 5;
    const auto j = to_json(c);
    const auto back = config_from_json(nlohmann::json::parse(j.dump()));
    CHECK(to_json(back).dump() == j.dump());

    ExperimentConfig no_denoise;
    no_denoise.denoise.reset();
    CHECK_FALSE(config_from_json(nlohmann::json::parse(to_json(no_denoise).dump())).denoise.has_value());

    CHECK(to_json(config_from_json(nlohmann::json::object())).dump() == to_json(ExperimentConfig{}).dump());
}

TEST_CASE("config rejects unknown keys and wrong types") {
    using nlohmann::json;
    CHECK_THROWS_AS(config_from_json(json{{"sed", 1}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"train", {{"hidden", 4}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"seed", "one"}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"train", {{"hidden_size", 2.5}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"case", "nope"}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"shots", {24, 12}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"methods", {"magic"}}}), ConfigError);
    CHECK(config_from_json(json{{"train", {{"learning_rate", 1}}}}).train.learning_rate == 1.0);
}

TEST_CASE("dotted overrides") {
    auto j = apply_overrides(nlohmann::json::object(),
                             {"train.hidden_size=8", "case=compactness", "shots=[12,24]", "denoise.mode=hard"});
    const auto c = config_from_json(j);
    CHECK(c.train.hidden_size == 8);
    CHECK(c.kind == CaseKind::compactness);
    CHECK(c.shots == std::vector<int>{12, 24});
    CHECK(c.denoise->mode == wavelet::ThresholdMode::hard);
    CHECK_THROWS_AS(apply_overrides({}, {"train.hidden=8"}), ConfigError);
    CHECK_THROWS_AS(apply_overrides({}, {"train.hidden_size=big"}), ConfigError);
    CHECK_THROWS_AS(apply_overrides({}, {"noequals"}), ConfigError);
}

TEST_CASE("target selection holds out the last users of each group") {
    ExperimentConfig c;
    c.dataset.synth.users_per_group = 3;
    c.targets_per_group = 1;
    const auto ds = load_dataset(c, 0);
    const auto all = select_targets(c, ds);
    REQUIRE(all.size() == 3);
    CHECK(all[0].target == 2);
    CHECK(all[1].target == 5);
    CHECK(all[2].target == 8);
    CHECK(all[0].historical == std::vector<std::size_t>{0, 1, 3, 4, 6, 7});

    c.target_groups = {1};
    const auto one = select_targets(c, ds);
    REQUIRE(one.size() == 1);
    CHECK(one[0].target == 5);
    CHECK(one[0].historical == std::vector<std::size_t>{0, 1, 3, 4, 6, 7});

    c.targets_per_group = 3;
    CHECK_THROWS_AS(select_targets(c, ds), ConfigError);
}

TEST_CASE("replicates draw different data from one global seed") {
    ExperimentConfig c;
    c.seed = 4;
    CHECK(load_dataset(c, 0).series[0].values() != load_dataset(c, 1).series[0].values());
    CHECK(load_dataset(c, 1).series[0].values() == load_dataset(c, 1).series[0].values());
}

TEST_CASE("one-cell experiment") {
    const auto c = tiny_config();
    const auto result = run_experiment(c);
    REQUIRE(result.cells.size() == 1);
    const Cell& cell = result.cells[0];
    CHECK(cell.ok);
    CHECK(cell.method == "fsl");
    CHECK(cell.k == 12);
    CHECK(cell.target_group == 0);
    CHECK(cell.forecast.size() == kTestHorizon);
    CHECK(cell.truth.size() == kTestHorizon);
    CHECK(std::isfinite(cell.rmse));
    double sq = 0.0, abs_sum = 0.0;
    for (std::size_t i = 0; i < kTestHorizon; ++i) {
        const double e = cell.truth[i] - cell.forecast[i];
        sq += e * e;
        abs_sum += std::abs(e);
    }
    CHECK(cell.rmse == doctest::Approx(std::sqrt(sq / 72.0)).epsilon(1e-12));
    CHECK(cell.rmse_strict == doctest::Approx(abs_sum / 72.0).epsilon(1e-12));
    CHECK(cell.s_score.has_value());
    CHECK(cell.assignment_correct.has_value());
    REQUIRE(result.table.size() == 1);
    CHECK(result.table[0].report.mrmse == doctest::Approx(cell.rmse));

    testing::TempDir dir("experiment_one");
    write_results(result, dir.file("results"));
    const auto cells = testing::slurp(dir.path() / "results" / "cells.csv");
    CHECK(count_lines(cells) == 2);
    CHECK(cells.rfind("granularity_minutes,method,k,replicate,target,group,status,rmse", 0) == 0);
    CHECK(count_lines(testing::slurp(dir.path() / "results" / "table.csv")) == 2);

    // Same seed, same numbers; thread count does not matter.
    auto parallel = c;
    parallel.jobs = 4;
    CHECK(run_experiment(parallel).cells[0].rmse == cell.rmse);
}

TEST_CASE("aggregation is recomputable from cells") {
    auto c = tiny_config();
    c.methods = {"fsl", "baseline"};
    c.replicates = 2;
    auto result = run_experiment(c);
    REQUIRE(result.cells.size() == 4);
    const auto table = result.table;
    result.table.clear();
    aggregate(result);
    REQUIRE(result.table.size() == table.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
        CHECK(result.table[i].method == table[i].method);
        CHECK(result.table[i].report.cell() == table[i].report.cell());
    }
    for (const auto& cell : result.cells)
        if (cell.method == "baseline") CHECK_FALSE(cell.s_score.has_value());

    Cell broken = result.cells[0];
    broken.ok = false;
    result.cells.push_back(broken);
    aggregate(result);
    CHECK(result.table[0].failures == 1);
    CHECK(result.table[0].cells == 3);
}

TEST_CASE("compactness rows are the clusterer names") {
    auto c = tiny_config();
    c.kind = CaseKind::compactness;
    c.clusterers = {"kmeans", "ensemble"};
    const auto result = run_experiment(c);
    REQUIRE(result.sscores.size() == 2);
    CHECK(result.sscores[0].clusterer == "kmeans");
    CHECK(result.sscores[1].clusterer == "ensemble");
    for (const auto& s : result.sscores) CHECK(s.mean_s_score <= 1.0);
}

TEST_CASE("an uncovered query window fails the cell, not the run") {
    auto c = tiny_config();
    c.query_start = 150;  // 150 + 12 + 72 > 200
    const auto result = run_experiment(c);
    REQUIRE(result.cells.size() == 1);
    CHECK_FALSE(result.cells[0].ok);
    CHECK_FALSE(result.cells[0].error.empty());
}
