#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fslcast/cli.hpp"
#include "test_support.hpp"

using namespace fslcast;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "fslcast");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("help text matches the golden file") {
    const std::string golden_path = std::string(FSLCAST_GOLDEN_DIR) + "/help.txt";
    const std::string help = cli::full_help();
    if (std::getenv("FSLCAST_UPDATE_GOLDEN")) {
        std::ofstream(golden_path, std::ios::binary) << help;
    }
    CHECK(help == testing::slurp(golden_path));
    for (const char* flag : {"--config", "--out", "--seed", "--jobs", "--strict-paper", "--set", "--periods",
                             "--users", "--length", "--noise", "--amplitude", "--fixed-phase", "--input",
                             "--granularity", "--clusterer", "--target", "--k", "--method", "--query-start",
                             "--version", "--help"})
        CHECK_MESSAGE(help.find(flag) != std::string::npos, flag);
    for (const char* sub : {"synth", "features", "cluster", "forecast", "experiment"})
        CHECK(help.find(sub) != std::string::npos);

    const auto r = invoke({"synth", "--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("--periods") != std::string::npos);
}

TEST_CASE("synth is byte-identical for the same seed") {
    testing::TempDir dir("cli_synth");
    const auto a = invoke({"synth", "--periods", "10,20", "--users", "30", "--seed", "7", "--out", dir.file("a")});
    const auto b = invoke({"synth", "--periods", "10,20", "--users", "30", "--seed", "7", "--out", dir.file("b")});
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    const auto text = testing::slurp(dir.path() / "a" / "synth.csv");
    CHECK(text.size() > 1000);
    CHECK(text == testing::slurp(dir.path() / "b" / "synth.csv"));
    CHECK(testing::slurp(dir.path() / "a" / "groups.csv") == testing::slurp(dir.path() / "b" / "groups.csv"));
    const auto c = invoke({"synth", "--periods", "10,20", "--users", "30", "--seed", "8", "--out", dir.file("c")});
    CHECK(testing::slurp(dir.path() / "c" / "synth.csv") != text);
}

TEST_CASE("exit codes") {
    testing::TempDir dir("cli_codes");
    auto config_err = invoke({"synth", "--out", dir.file("x"), "--set", "train.nonsense=1"});
    CHECK(config_err.code == cli::kConfig);
    CHECK(config_err.err.rfind("error code=2 kind=config message=", 0) == 0);
    CHECK(std::count(config_err.err.begin(), config_err.err.end(), '\n') == 1);

    CHECK(invoke({"synth"}).code == cli::kConfig);
    CHECK(invoke({"bogus"}).code == cli::kConfig);
    CHECK(invoke({"synth", "--out", dir.file("x"), "--set", "seed=\"abc\""}).code == cli::kConfig);
    CHECK(invoke({"synth", "--out", dir.file("x"), "--periods", "1"}).code == cli::kConfig);

    dir.write("bad.json", "{ not json");
    CHECK(invoke({"experiment", "--out", dir.file("x"), "--config", dir.file("bad.json")}).code == cli::kConfig);

    const auto missing = invoke({"cluster", "--out", dir.file("x"), "--input", dir.file("nope.csv")});
    CHECK(missing.code == cli::kData);
    CHECK(missing.err.find("kind=data") != std::string::npos);
    dir.write("broken.csv", "user_id,timestamp,value\nu,0,1\nu,1,xyz\n");
    CHECK(invoke({"features", "--out", dir.file("x"), "--input", dir.file("broken.csv")}).code == cli::kData);

    REQUIRE(invoke({"synth", "--out", dir.file("s"), "--users", "3", "--length", "200"}).code == 0);
    const auto no_user =
        invoke({"forecast", "--out", dir.file("x"), "--input", dir.file("s/synth.csv"), "--target", "ghost", "--k", "12"});
    CHECK(no_user.code == cli::kData);
}

TEST_CASE("one-cell experiment writes one data row") {
    testing::TempDir dir("cli_experiment");
    const nlohmann::json config = {
        {"dataset", {{"synth", {{"users_per_group", 3}, {"length", 200}}}}},
        {"shots", {12}},
        {"target_groups", {0}},
        {"methods", {"fsl"}},
        {"clustering", {{"k_max", 3}}},
        {"train", {{"hidden_size", 6}, {"pretrain_steps", 6}, {"finetune_steps", 3}, {"batch_size", 16}}}};
    dir.write("one.json", config.dump());
    const auto r = invoke({"experiment", "--config", dir.file("one.json"), "--out", dir.file("run"), "--jobs", "1"});
    REQUIRE(r.code == 0);
    CHECK(r.out == "cells=1 failed=0\n");
    const auto cells = testing::slurp(dir.path() / "run" / "results" / "cells.csv");
    CHECK(std::count(cells.begin(), cells.end(), '\n') == 2);
    for (const char* f : {"table.csv", "sscore.csv", "curves.csv", "config.json"})
        CHECK(std::filesystem::exists(dir.path() / "run" / "results" / f));
    const auto written = nlohmann::json::parse(testing::slurp(dir.path() / "run" / "results" / "config.json"));
    CHECK(written["train"]["hidden_size"] == 6);
    CHECK(written["jobs"] == 1);

    // Everything stays under --out.
    std::size_t entries = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir.path())) {
        (void)e;
        ++entries;
    }
    CHECK(entries == 2);
}

TEST_CASE("forecast prints rmse and writes the horizon") {
    testing::TempDir dir("cli_forecast");
    REQUIRE(invoke({"synth", "--out", dir.file("s"), "--users", "3", "--length", "200", "--seed", "2"}).code == 0);
    const auto r = invoke({"forecast", "--out", dir.file("f"), "--input", dir.file("s/synth.csv"), "--target",
                           "g1_u2", "--k", "12", "--set", "train.hidden_size=6", "--set",
                           "train.pretrain_steps=6", "--set", "train.finetune_steps=3", "--set",
                           "clustering.k_max=3"});
    REQUIRE(r.code == 0);
    CHECK(r.out.rfind("rmse=", 0) == 0);
    CHECK(r.out.find("query_cluster=") != std::string::npos);
    const auto csv = testing::slurp(dir.path() / "f" / "forecast.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 73);
}

TEST_CASE("cluster reports a high S-score on well-separated groups") {
    testing::TempDir dir("cli_cluster");
    REQUIRE(invoke({"synth", "--periods", "10,20", "--users", "30", "--noise", "0.05", "--seed", "7", "--out",
                    dir.file("s")})
                .code == 0);
    const auto r = invoke({"cluster", "--input", dir.file("s/synth.csv"), "--out", dir.file("c"), "--seed", "7"});
    REQUIRE(r.code == 0);
    const auto consensus = nlohmann::json::parse(testing::slurp(dir.path() / "c" / "consensus.json"));
    CHECK(consensus["k"] == 2);
    CHECK(consensus["s_score"].get<double>() > 0.5);
    const auto labels = testing::slurp(dir.path() / "c" / "labels.csv");
    CHECK(std::count(labels.begin(), labels.end(), '\n') == 61);
}
