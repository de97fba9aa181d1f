#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fslcast/error.hpp"
#include "fslcast/forecaster.hpp"
#include "fslcast/metrics.hpp"

using namespace fslcast;
using namespace fslcast::forecaster;

namespace {

std::vector<double> sine(std::size_t n, double period, double amplitude = 1.0, double offset = 0.0) {
    std::vector<double> v(n);
    for (std::size_t t = 0; t < n; ++t) v[t] = offset + amplitude * std::sin(2 * std::numbers::pi * t / period);
    return v;
}

TrainConfig small_config(std::uint64_t seed) {
    TrainConfig c;
    c.hidden_size = 8;
    c.batch_size = 16;
    c.pretrain_steps = 20;
    c.finetune_steps = 10;
    c.seed = seed;
    return c;
}

double max_rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double denom = std::max({a.norm(), b.norm(), 1e-12});
    return (a - b).norm() / denom;
}

}  // namespace

TEST_CASE("dead network predicts its output bias") {
    LstmParams p = LstmParams::zeros(5);
    CHECK(forward(p, std::vector<double>{0.3, 0.9, -2.0}).prediction == 0.0);
    p.b_out = 0.42;
    CHECK(forward(p, std::vector<double>{7.0}).prediction == 0.42);
    CHECK(forward(p, std::vector<double>{-1.0, 1.0}).prediction == 0.42);
    CHECK_THROWS_AS(forward(p, std::vector<double>{}), InvalidArgument);
    CHECK_THROWS_AS(forward(p, std::vector<double>{NAN}), InvalidArgument);

    Model m{p, MinMaxScaler{2.0, 4.0}, 2};
    const auto f = forecast(m, std::vector<double>{1.0, 3.0}, 72);
    REQUIRE(f.size() == 72);
    for (double v : f) CHECK(v == doctest::Approx(2.0 + 0.42 * 4.0));
}

TEST_CASE("random init is seeded and bounded") {
    const auto a = LstmParams::random(6, 3, 0.08, 1.0);
    const auto b = LstmParams::random(6, 3, 0.08, 1.0);
    CHECK(a == b);
    CHECK_FALSE(a == LstmParams::random(6, 4, 0.08, 1.0));
    CHECK(a.w_recurrent.cwiseAbs().maxCoeff() <= 0.08);
    CHECK(a.bias.segment(6, 6).minCoeff() >= 0.92);
    CHECK(a.parameter_count() == static_cast<std::size_t>(a.flatten().size()));
    LstmParams c = LstmParams::zeros(6);
    c.assign(a.flatten());
    CHECK(c == a);
}

TEST_CASE("gradient matches central differences for every tensor") {
    const LstmParams p = LstmParams::random(4, 21, 0.5, 1.0);
    Eigen::MatrixXd x(2, 3);
    x << 0.1, 0.7, -0.4, 0.9, 0.2, 0.5;
    Eigen::VectorXd y(2);
    y << 0.3, -0.6;
    LstmParams g;
    loss_and_gradient(p, x, y, g);
    const Eigen::VectorXd theta = p.flatten();
    const Eigen::VectorXd analytic = g.flatten();
    Eigen::VectorXd numeric(theta.size());
    const double h = 1e-5;
    LstmParams probe = p;
    LstmParams unused;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        Eigen::VectorXd t = theta;
        t(i) += h;
        probe.assign(t);
        const double up = loss_and_gradient(probe, x, y, unused);
        t(i) -= 2 * h;
        probe.assign(t);
        const double down = loss_and_gradient(probe, x, y, unused);
        numeric(i) = (up - down) / (2 * h);
    }
    LstmParams num = p;
    num.assign(numeric);
    CHECK(max_rel_error(g.w_input, num.w_input) < 1e-4);
    CHECK(max_rel_error(g.w_recurrent.reshaped(), num.w_recurrent.reshaped()) < 1e-4);
    CHECK(max_rel_error(g.bias, num.bias) < 1e-4);
    CHECK(max_rel_error(g.w_out, num.w_out) < 1e-4);
    CHECK(std::abs(g.b_out - num.b_out) < 1e-4 * std::max(1.0, std::abs(num.b_out)));
    CHECK(max_rel_error(analytic, numeric) < 1e-4);
}

TEST_CASE("loss agrees with forward predictions") {
    const LstmParams p = LstmParams::random(5, 2, 0.3, 1.0);
    Eigen::MatrixXd x(3, 4);
    x << 0.1, 0.2, 0.3, 0.4, 0.9, 0.8, 0.7, 0.6, 0.5, 0.5, 0.5, 0.5;
    Eigen::VectorXd y(3);
    y << 0.5, 0.5, 0.0;
    LstmParams g;
    const double loss = loss_and_gradient(p, x, y, g);
    double expected = 0.0;
    for (int r = 0; r < 3; ++r) {
        std::vector<double> window;
        for (int c = 0; c < 4; ++c) window.push_back(x(r, c));
        const double e = forward(p, window).prediction - y(r);
        expected += e * e;
    }
    CHECK(loss == doctest::Approx(expected / 3.0).epsilon(1e-12));
}

TEST_CASE("adam leaves parameters alone under a zero gradient") {
    Adam adam(4, 0.01);
    Eigen::VectorXd theta(4);
    theta << 1, -2, 3, 0.5;
    const Eigen::VectorXd before = theta;
    adam.step(theta, Eigen::VectorXd::Zero(4));
    CHECK(theta == before);
    // The zero step still advances the bias-correction clock: at t=2,
    // m_hat = 0.1/(1-0.9^2), v_hat = 0.001/(1-0.999^2).
    adam.step(theta, Eigen::VectorXd::Ones(4));
    const double m_hat = 0.1 / (1.0 - 0.81);
    const double v_hat = 0.001 / (1.0 - 0.999 * 0.999);
    CHECK(theta(0) == doctest::Approx(1.0 - 0.01 * m_hat / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-12));
}

TEST_CASE("scaler") {
    const auto s = MinMaxScaler::fit(std::vector<double>{2.0, 6.0, 4.0});
    CHECK(s.transform(2.0) == 0.0);
    CHECK(s.transform(6.0) == 1.0);
    CHECK(s.inverse(0.5) == 4.0);
    const auto c = MinMaxScaler::fit(std::vector<double>{3.0, 3.0});
    CHECK(c.transform(3.0) == 0.5);
}

TEST_CASE("pairs and window sizing") {
    const std::vector<std::vector<double>> s = {{0, 1, 2, 3, 4}};
    const auto p = make_pairs(s, 3);
    REQUIRE(p.size() == 2);
    CHECK(p.inputs(1, 0) == 1.0);
    CHECK(p.targets(1) == 4.0);
    CHECK(effective_window(12, 12) == 6);
    CHECK(effective_window(13, 12) == 12);
    CHECK(effective_window(3, 12) == 1);
    CHECK_THROWS_AS(effective_window(1, 12), InvalidArgument);
}

TEST_CASE("training contract") {
    const Series s(sine(60, 10));
    TrainConfig c = small_config(1);
    const LstmParams init = initial_params(c);
    const auto zero = train(init, s, 0, c, 4, 9);
    CHECK(zero.model.params == init);
    CHECK_THROWS_AS(train(init, Series({1, 2, 3}), 1, c, 4, 9), InvalidArgument);

    const auto a = train(init, s, 15, c, 4, 9);
    const auto b = train(init, s, 15, c, 4, 9);
    CHECK(a.model.params == b.model.params);
    CHECK(a.losses.size() == 15);
    CHECK(a.pairs == 56);

    c.step_unit = StepUnit::epochs;
    const auto e = train(init, s, 2, c, 4, 9);
    CHECK(e.losses.size() == 2 * 4);
}

TEST_CASE("pretraining on a clean sinusoid cuts the loss tenfold") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        TrainConfig c;
        c.seed = seed;
        const Series s(sine(240, 20));
        const auto r = train(initial_params(c), s, c.pretrain_steps, c, c.window_len, seed);
        const Model before{initial_params(c), r.model.scaler, c.window_len};
        CHECK(one_step_mse(r.model, s) < 0.1 * one_step_mse(before, s));
    }
}

TEST_CASE("scale handling") {
    const Series s(sine(80, 10));
    const Series scaled(sine(80, 10, 30.0, 100.0));
    const TrainConfig c = small_config(4);
    const Model a = pretrain(s, c, 5);
    const Model b = pretrain(scaled, c, 5);
    const std::vector<double> wa(s.values().end() - 5, s.values().end());
    const std::vector<double> wb(scaled.values().end() - 5, scaled.values().end());
    const auto fa = forecast(a, wa, 20);
    const auto fb = forecast(b, wb, 20);
    for (std::size_t i = 0; i < fa.size(); ++i) CHECK(std::abs((100.0 + 30.0 * fa[i]) - fb[i]) < 1e-6);
}

TEST_CASE("prototype series") {
    const std::vector<Series> two = {Series({1, 2, 3}), Series({3, 4, 5})};
    CHECK(prototype_series(two, std::nullopt).values() == std::vector<double>{2, 3, 4});
    const std::vector<Series> one = {Series({1, 5, 2})};
    CHECK(prototype_series(one, std::nullopt).values() == std::vector<double>{1, 5, 2});
    const std::vector<Series> bad = {Series({1, 2, 3}), Series({1, 2})};
    CHECK_THROWS_AS(prototype_series(bad, std::nullopt), InvalidArgument);

    int better = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> n(0.0, 0.3);
        const auto clean = sine(128, 16);
        std::vector<double> m1(clean), m2(clean);
        for (auto& v : m1) v += n(rng);
        for (auto& v : m2) v += n(rng);
        const std::vector<Series> members = {Series(m1), Series(m2)};
        wavelet::DenoiseConfig hard;
        hard.mode = wavelet::ThresholdMode::hard;
        const auto proto = prototype_series(members, hard).values();
        const double e = metrics::rmse(clean, proto);
        if (e < metrics::rmse(clean, m1) && e < metrics::rmse(clean, m2)) ++better;
    }
    CHECK(better == 20);
}

TEST_CASE("pretrain and fine-tune contracts") {
    const Series proto(sine(120, 12));
    TrainConfig c = small_config(2);
    const Model a = pretrain(proto, c, 6);
    CHECK(a.params == pretrain(proto, c, 6).params);
    CHECK(a.window_len == 6);

    c.finetune_steps = 0;
    const Series few(sine(12, 12));
    CHECK(fine_tune(a, few, c).params == a.params);

    c.finetune_steps = 10;
    const Model tuned = fine_tune(a, few, c);
    CHECK_FALSE(tuned.params == a.params);
    CHECK(tuned.params.all_finite());

    // A constant prototype pulls predictions toward the constant.
    TrainConfig cc;
    cc.seed = 5;
    const Series flat(std::vector<double>(100, 3.0));
    const Model m = pretrain(flat, cc, 12);
    const double pred = forward(m.params, std::vector<double>(12, 0.5)).prediction;
    CHECK(std::abs(pred - 0.5) < 0.05);

    const Series held(sine(200, 12));
    TrainConfig hc;
    hc.seed = 6;
    const Model trained = pretrain(Series(std::vector<double>(held.values().begin(), held.values().begin() + 150)), hc, 12);
    const Series tail(std::vector<double>(held.values().begin() + 150, held.values().end()));
    Model untrained = trained;
    untrained.params = initial_params(hc);
    CHECK(one_step_mse(trained, tail) < one_step_mse(untrained, tail));
}

TEST_CASE("forecast contract") {
    const TrainConfig c = small_config(3);
    const Model m = pretrain(Series(sine(60, 10)), c, 4);
    CHECK_THROWS_AS(forecast(m, std::vector<double>{0.1, 0.2}, 5), InvalidArgument);
    const std::vector<double> w = {0.1, 0.5, 0.9, 0.3};
    const auto one = forecast(m, w, 1);
    std::vector<double> scaled;
    for (double v : w) scaled.push_back(m.scaler.transform(v));
    CHECK(one[0] == doctest::Approx(m.scaler.inverse(forward(m.params, scaled).prediction)).epsilon(1e-15));
    CHECK(forecast(m, w, 72).size() == 72);

    Model broken = m;
    broken.params.b_out = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(forecast(broken, w, 3), DivergedForecast);
}

TEST_CASE("two-phase training beats the constant-mean predictor on a clean sinusoid") {
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        TrainConfig c;
        c.seed = seed;
        const auto full = sine(300, 20);
        const Series proto(std::vector<double>(full.begin(), full.begin() + 200));
        const Series few(std::vector<double>(full.begin() + 200, full.begin() + 228));
        const std::vector<double> truth(full.begin() + 228, full.begin() + 300);
        const Model m = fine_tune(pretrain(proto, c, 12), few, c);
        const std::vector<double> seed_window(few.values().end() - 12, few.values().end());
        const auto f = forecast(m, seed_window, 72);
        const std::vector<double> flat(72, mean(few.values()));
        if (metrics::rmse(truth, f) < metrics::rmse(truth, flat)) ++wins;
    }
    CHECK(wins >= 9);
}

TEST_CASE("checkpoint round trip") {
    const TrainConfig c = small_config(8);
    const Model m = pretrain(Series(sine(60, 10)), c, 4);
    const auto text = checkpoint_json(m, c);
    CHECK(text.find(kCheckpointSchema) != std::string::npos);
    const Model back = model_from_checkpoint(text);
    CHECK(back.params == m.params);
    CHECK(back.window_len == m.window_len);
    CHECK(back.scaler.lo == m.scaler.lo);
    CHECK(back.scaler.span == m.scaler.span);
    CHECK_THROWS_AS(model_from_checkpoint("{\"schema\":\"other\"}"), DataError);
    CHECK_THROWS_AS(model_from_checkpoint("not json"), DataError);
}
