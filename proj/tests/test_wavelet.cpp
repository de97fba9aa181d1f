#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fslcast/error.hpp"
#include "fslcast/wavelet.hpp"

using namespace fslcast;
using namespace fslcast::wavelet;

namespace {

std::vector<double> random_signal(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist;
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("filters are orthonormal quadrature mirrors") {
    for (Family f : {Family::haar, Family::db2, Family::db4}) {
        const auto spec = WaveletSpec::make(f);
        double s2 = 0.0;
        double sum = 0.0;
        for (double h : spec.lowpass) {
            s2 += h * h;
            sum += h;
        }
        CHECK(s2 == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(sum == doctest::Approx(std::sqrt(2.0)).epsilon(1e-10));
        const std::size_t n = spec.filter_length();
        for (std::size_t k = 0; k < n; ++k) {
            const double sign = k % 2 == 0 ? 1.0 : -1.0;
            CHECK(spec.highpass[k] == doctest::Approx(sign * spec.lowpass[n - 1 - k]));
        }
        CHECK(family_from_string(to_string(f)) == f);
    }
    CHECK_THROWS_AS(family_from_string("sym8"), InvalidArgument);
}

TEST_CASE("max level examples") {
    CHECK(max_level(1000, 8) == 6);
    CHECK(max_level(8, 8) == 0);
    CHECK(max_level(16, 2) == 3);
    CHECK_THROWS_AS(max_level(7, 8), InvalidArgument);
}

TEST_CASE("haar packet oracles") {
    const auto haar = WaveletSpec::make(Family::haar);
    const auto flat = dwpt(std::vector<double>{1, 1, 1, 1}, 1, haar);
    CHECK(energy(flat.leaves()[0]) == doctest::Approx(4.0));
    CHECK(energy(flat.leaves()[1]) == doctest::Approx(0.0));
    const auto alt = dwpt(std::vector<double>{1, -1, 1, -1}, 1, haar);
    CHECK(energy(alt.leaves()[0]) == doctest::Approx(0.0));
    CHECK(energy(alt.leaves()[1]) == doctest::Approx(4.0));

    // Direct filtering: a = (x0+x1)/sqrt2, d = (x0-x1)/sqrt2 on each pair.
    const std::vector<double> x = {3, 1, -2, 5};
    const auto tree = dwpt(x, 1, haar);
    const double r = std::sqrt(0.5);
    CHECK(tree.leaves()[0][0] == doctest::Approx(4 * r));
    CHECK(tree.leaves()[0][1] == doctest::Approx(3 * r));
    CHECK(std::abs(tree.leaves()[1][0]) == doctest::Approx(2 * r));
    CHECK(std::abs(tree.leaves()[1][1]) == doctest::Approx(7 * r));
}

TEST_CASE("packet tree shape, energy and reconstruction") {
    for (Family f : {Family::haar, Family::db2, Family::db4}) {
        const auto spec = WaveletSpec::make(f);
        const auto x = random_signal(128, 5);
        const auto tree = dwpt(x, 3, spec);
        for (int j = 0; j <= 3; ++j) {
            CHECK(tree.nodes[j].size() == (std::size_t{1} << j));
            double e = 0.0;
            for (const auto& node : tree.nodes[j]) e += energy(node);
            CHECK(e == doctest::Approx(energy(x)).epsilon(1e-10));
        }
        CHECK(tree.total_energy == doctest::Approx(energy(x)).epsilon(1e-10));
        CHECK(max_abs_diff(idwpt(tree, spec), x) < 1e-10);
    }
    CHECK_THROWS_AS(dwpt(std::vector<double>{1, 2, 3}, 2, WaveletSpec::make(Family::haar)), InvalidArgument);
    CHECK_THROWS_AS(dwpt(std::vector<double>(12, 1.0), 3, WaveletSpec::make(Family::haar)), InvalidArgument);
}

TEST_CASE("dwt oracles and round trip") {
    const auto haar = WaveletSpec::make(Family::haar);
    const auto p = dwt(std::vector<double>{1, 1, 1, 1}, 2, haar);
    REQUIRE(p.approximation.size() == 1);
    CHECK(p.approximation[0] == doctest::Approx(2.0));
    for (const auto& d : p.details)
        for (double v : d) CHECK(v == doctest::Approx(0.0));
    CHECK_THROWS_AS(dwt(std::vector<double>{1, 1, 1, 1}, 3, haar), InvalidArgument);

    const auto alt = dwt(std::vector<double>{1, -1, 1, -1}, 1, haar);
    CHECK(alt.approximation == std::vector<double>{0.0, 0.0});
    CHECK(std::abs(alt.details[0][0]) == doctest::Approx(std::sqrt(2.0)));
    CHECK(max_abs_diff(idwt(alt, haar), {1, -1, 1, -1}) < 1e-12);

    const auto c = dwt(std::vector<double>(8, 3.0), 2, haar);
    CHECK(max_abs_diff(idwt(c, haar), std::vector<double>(8, 3.0)) < 1e-12);

    for (std::size_t n : {37u, 100u, 201u, 256u}) {
        for (Family f : {Family::haar, Family::db2, Family::db4}) {
            const auto spec = WaveletSpec::make(f);
            const auto x = random_signal(n, n);
            const int levels = max_level(n, spec.filter_length());
            for (int l = 1; l <= levels; ++l) CHECK(max_abs_diff(idwt(dwt(x, l, spec), spec), x) < 1e-10);
        }
    }
}

TEST_CASE("threshold rule") {
    CHECK(threshold(5.0, 2.0) == 3.0);
    CHECK(threshold(-5.0, 2.0) == -3.0);
    CHECK(threshold(1.0, 2.0) == 0.0);
    CHECK(threshold(2.0, 2.0) == 0.0);
    CHECK(threshold(-0.7, 0.0) == -0.7);
    CHECK(threshold(5.0, 2.0, ThresholdMode::hard) == 5.0);
    CHECK(threshold(1.5, 2.0, ThresholdMode::hard) == 0.0);
    CHECK_THROWS_AS(threshold(std::vector<double>{1.0}, -1.0), InvalidArgument);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-10, 10);
    for (int i = 0; i < 200; ++i) {
        const double x = u(rng);
        const double t = std::abs(u(rng));
        CHECK(threshold(-x, t) == -threshold(x, t));
        CHECK(std::abs(threshold(x, t)) <= std::abs(x));
    }
}

TEST_CASE("denoise") {
    const std::vector<double> constant(64, 2.5);
    CHECK(max_abs_diff(denoise(std::span<const double>(constant)), constant) < 1e-10);

    std::vector<double> sine(200);
    for (std::size_t t = 0; t < sine.size(); ++t) sine[t] = std::sin(2 * std::numbers::pi * t / 20.0);
    const auto d = denoise(std::span<const double>(sine));
    double se = 0.0;
    for (std::size_t t = 0; t < sine.size(); ++t) se += (d[t] - sine[t]) * (d[t] - sine[t]);
    CHECK(std::sqrt(se / 200.0) < 0.05);

    DenoiseConfig zero;
    zero.threshold_override = 0.0;
    const auto x = random_signal(150, 9);
    CHECK(max_abs_diff(denoise(std::span<const double>(x), zero), x) < 1e-10);

    // Below the filter length there is nothing to decompose.
    const std::vector<double> tiny = {1, 2, 3, 4, 5, 6, 7, 8};
    CHECK(denoise(std::span<const double>(tiny)) == tiny);
    CHECK_THROWS_AS(denoise(std::span<const double>(std::vector<double>{1, 2, 3})), InvalidArgument);
}

TEST_CASE("hard-threshold denoise reduces noise on a noisy sinusoid") {
    DenoiseConfig hard;
    hard.mode = ThresholdMode::hard;
    int better = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> noise(0.0, 0.3);
        std::vector<double> clean(256);
        std::vector<double> noisy(256);
        for (std::size_t t = 0; t < 256; ++t) {
            clean[t] = std::sin(2 * std::numbers::pi * t / 32.0);
            noisy[t] = clean[t] + noise(rng);
        }
        const auto d = denoise(std::span<const double>(noisy), hard);
        double before = 0.0;
        double after = 0.0;
        for (std::size_t t = 0; t < 256; ++t) {
            before += (noisy[t] - clean[t]) * (noisy[t] - clean[t]);
            after += (d[t] - clean[t]) * (d[t] - clean[t]);
        }
        if (after < before) ++better;
    }
    CHECK(better == 20);
}
