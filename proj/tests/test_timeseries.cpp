#include <doctest.h>

#include <cmath>
#include <random>

#include "fslcast/error.hpp"
#include "fslcast/timeseries.hpp"

using namespace fslcast;

namespace {
std::vector<double> iota_values(std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<double>(i);
    return v;
}
}  // namespace

TEST_CASE("series rejects empty, non-finite and bad granularity") {
    CHECK_THROWS_AS(Series(std::vector<double>{}), InvalidArgument);
    CHECK_THROWS_AS(Series(std::vector<double>{1.0, NAN}), InvalidArgument);
    CHECK_THROWS_AS(Series("u", 0, 0, {1.0}), InvalidArgument);
}

TEST_CASE("resample examples") {
    CHECK(resample(Series({1, 2, 3, 4}), 2).values() == std::vector<double>{1.5, 3.5});
    CHECK(resample(Series({2, 2, 2, 2, 2, 2}), 3).values() == std::vector<double>{2, 2});
    CHECK(resample(Series({1, 2, 3, 4, 5, 6}), 3).values() == std::vector<double>{2, 5});
    CHECK(resample(Series({1, 2, 3, 4, 5, 6, 7}), 3).size() == 2);
    CHECK(resample(Series("u", 6, 5, {1, 2, 3, 4}), 2).granularity_minutes() == 10);
    CHECK_THROWS_AS(resample(Series({1, 2}), 0), InvalidArgument);
}

TEST_CASE("resample composes") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    std::vector<double> v(48);
    for (auto& x : v) x = n(rng);
    const Series s(v);
    const auto a = resample(resample(s, 2), 3).values();
    const auto b = resample(s, 6).values();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));
}

TEST_CASE("standardize examples") {
    CHECK(standardize(Series({1, 3})).values() == std::vector<double>{-1, 1});
    CHECK_THROWS_AS(standardize(Series({5, 5, 5})), DegenerateSeries);
    const auto z = standardize(Series({0, 1, 2, 3})).values();
    const double expected[] = {-1.3416, -0.4472, 0.4472, 1.3416};
    for (int i = 0; i < 4; ++i) CHECK(z[i] == doctest::Approx(expected[i]).epsilon(1e-3));
    CHECK(mean(z) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(population_std(z) == doctest::Approx(1.0).epsilon(1e-12));
    const auto twice = standardize(Series(z)).values();
    for (int i = 0; i < 4; ++i) CHECK(std::abs(twice[i] - z[i]) < 1e-10);
}

TEST_CASE("few-shot split") {
    const Series s(iota_values(100));
    const auto split = split_few_shot(s, 12);
    CHECK(split.train.size() == 12);
    CHECK(split.test.size() == 72);
    CHECK(split.test[0] == 12.0);
    CHECK(split.test.values().back() == 83.0);
    CHECK(split.test.start_index() == 12);
    CHECK_NOTHROW(split_few_shot(Series(iota_values(84)), 12));
    CHECK_THROWS_AS(split_few_shot(Series(iota_values(83)), 12), InvalidArgument);

    auto joined = split.train.values();
    joined.insert(joined.end(), split.test.values().begin(), split.test.values().end());
    CHECK(joined == std::vector<double>(s.values().begin(), s.values().begin() + 84));
}

TEST_CASE("slice window") {
    const Series s("u", 10, 1, {1, 2, 3, 4});
    const auto w = slice_window(s, 1, 2);
    CHECK(w.values() == std::vector<double>{2, 3});
    CHECK(w.start_index() == 11);
    CHECK(slice_window(Series({1, 2}), 0, 2).values() == std::vector<double>{1, 2});
    CHECK_THROWS_AS(slice_window(Series({1, 2}), 1, 2), InvalidArgument);
}
