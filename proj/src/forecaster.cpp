#include "fslcast/forecaster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "fslcast/error.hpp"
#include "fslcast/seed.hpp"

namespace fslcast::forecaster {

namespace {

enum SeedStage : std::uint64_t { kInit = 1, kPretrainBatches = 2, kFinetuneBatches = 3 };

Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& z) { return 1.0 / (1.0 + (-z).exp()); }

std::vector<double> scaled_values(const Series& s, const MinMaxScaler& scaler) {
    std::vector<double> out(s.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = scaler.transform(s[i]);
    return out;
}

}  // namespace

LstmParams LstmParams::zeros(int hidden) {
    if (hidden < 1) throw InvalidArgument("hidden size must be >= 1");
    LstmParams p;
    p.hidden = hidden;
    p.w_input = Eigen::VectorXd::Zero(4 * hidden);
    p.w_recurrent = Eigen::MatrixXd::Zero(4 * hidden, hidden);
    p.bias = Eigen::VectorXd::Zero(4 * hidden);
    p.w_out = Eigen::VectorXd::Zero(hidden);
    p.b_out = 0.0;
    return p;
}

LstmParams LstmParams::random(int hidden, std::uint64_t seed, double scale, double forget_bias) {
    LstmParams p = zeros(hidden);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    Eigen::VectorXd flat = p.flatten();
    for (Eigen::Index i = 0; i < flat.size(); ++i) flat(i) = u(rng);
    p.assign(flat);
    p.bias.segment(hidden, hidden).array() += forget_bias;
    return p;
}

std::size_t LstmParams::parameter_count() const {
    const auto h = static_cast<std::size_t>(hidden);
    return 4 * h + 4 * h * h + 4 * h + h + 1;
}

Eigen::VectorXd LstmParams::flatten() const {
    Eigen::VectorXd flat(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index at = 0;
    flat.segment(at, w_input.size()) = w_input;
    at += w_input.size();
    flat.segment(at, w_recurrent.size()) = w_recurrent.reshaped();
    at += w_recurrent.size();
    flat.segment(at, bias.size()) = bias;
    at += bias.size();
    flat.segment(at, w_out.size()) = w_out;
    at += w_out.size();
    flat(at) = b_out;
    return flat;
}

void LstmParams::assign(const Eigen::VectorXd& flat) {
    if (static_cast<std::size_t>(flat.size()) != parameter_count())
        throw InvalidArgument("parameter vector has the wrong size");
    Eigen::Index at = 0;
    w_input = flat.segment(at, w_input.size());
    at += w_input.size();
    w_recurrent = flat.segment(at, w_recurrent.size()).reshaped(w_recurrent.rows(), w_recurrent.cols());
    at += w_recurrent.size();
    bias = flat.segment(at, bias.size());
    at += bias.size();
    w_out = flat.segment(at, w_out.size());
    at += w_out.size();
    b_out = flat(at);
}

bool LstmParams::all_finite() const { return flatten().allFinite(); }

bool LstmParams::operator==(const LstmParams& other) const {
    return hidden == other.hidden && flatten() == other.flatten();
}

MinMaxScaler MinMaxScaler::fit(std::span<const double> values) {
    if (values.empty()) throw InvalidArgument("cannot fit a scaler on no data");
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (!(*hi > *lo)) return MinMaxScaler{*lo - 0.5, 1.0};
    return MinMaxScaler{*lo, *hi - *lo};
}

void TrainConfig::validate() const {
    if (batch_size < 1 || learning_rate <= 0.0 || pretrain_steps < 0 || finetune_steps < 0 ||
        window_len < 1 || hidden_size < 1 || epsilon <= 0.0 || beta1 < 0.0 || beta1 >= 1.0 ||
        beta2 < 0.0 || beta2 >= 1.0 || init_scale < 0.0)
        throw ConfigError("invalid training configuration");
}

ForwardState forward(const LstmParams& p, std::span<const double> window) {
    if (window.empty()) throw InvalidArgument("forward needs a non-empty window");
    const int h = p.hidden;
    ForwardState state;
    Eigen::VectorXd hs = Eigen::VectorXd::Zero(h);
    Eigen::VectorXd cs = Eigen::VectorXd::Zero(h);
    for (double x : window) {
        if (!std::isfinite(x)) throw InvalidArgument("forward: non-finite input");
        const Eigen::VectorXd z = p.w_input * x + p.w_recurrent * hs + p.bias;
        const Eigen::ArrayXd i = sigmoid(z.segment(0, h).array());
        const Eigen::ArrayXd f = sigmoid(z.segment(h, h).array());
        const Eigen::ArrayXd g = z.segment(2 * h, h).array().tanh();
        const Eigen::ArrayXd o = sigmoid(z.segment(3 * h, h).array());
        cs = (f * cs.array() + i * g).matrix();
        hs = (o * cs.array().tanh()).matrix();
        state.hidden.push_back(hs);
        state.cell.push_back(cs);
    }
    state.prediction = p.w_out.dot(hs) + p.b_out;
    return state;
}

double loss_and_gradient(const LstmParams& p, const Eigen::MatrixXd& inputs,
                         const Eigen::VectorXd& targets, LstmParams& grad) {
    const int h = p.hidden;
    const auto batch = inputs.rows();
    const auto steps = inputs.cols();
    if (batch == 0 || steps == 0 || targets.size() != batch)
        throw InvalidArgument("loss_and_gradient: inconsistent batch shapes");

    // Per-step activations, each h x batch.
    std::vector<Eigen::ArrayXXd> gi(steps), gf(steps), gg(steps), go(steps), c(steps), tc(steps);
    std::vector<Eigen::MatrixXd> hs(steps + 1);
    hs[0] = Eigen::MatrixXd::Zero(h, batch);
    Eigen::ArrayXXd c_prev = Eigen::ArrayXXd::Zero(h, batch);
    for (Eigen::Index t = 0; t < steps; ++t) {
        Eigen::MatrixXd z = p.w_recurrent * hs[t] + p.w_input * inputs.col(t).transpose();
        z.colwise() += p.bias;
        gi[t] = sigmoid(z.topRows(h).array());
        gf[t] = sigmoid(z.middleRows(h, h).array());
        gg[t] = z.middleRows(2 * h, h).array().tanh();
        go[t] = sigmoid(z.bottomRows(h).array());
        c[t] = gf[t] * c_prev + gi[t] * gg[t];
        tc[t] = c[t].tanh();
        hs[t + 1] = (go[t] * tc[t]).matrix();
        c_prev = c[t];
    }
    const Eigen::VectorXd pred = (p.w_out.transpose() * hs[steps]).transpose().array() + p.b_out;
    const Eigen::VectorXd err = pred - targets;
    const double loss = err.squaredNorm() / static_cast<double>(batch);

    grad = LstmParams::zeros(h);
    const Eigen::RowVectorXd dpred = (2.0 / static_cast<double>(batch)) * err.transpose();
    grad.w_out = hs[steps] * dpred.transpose();
    grad.b_out = dpred.sum();
    Eigen::MatrixXd dh = p.w_out * dpred;
    Eigen::ArrayXXd dc = Eigen::ArrayXXd::Zero(h, batch);
    Eigen::MatrixXd dz(4 * h, batch);
    for (Eigen::Index t = steps - 1; t >= 0; --t) {
        const Eigen::ArrayXXd dha = dh.array();
        const Eigen::ArrayXXd d_o = dha * tc[t];
        dc += dha * go[t] * (1.0 - tc[t].square());
        const Eigen::ArrayXXd cp = t > 0 ? c[t - 1] : Eigen::ArrayXXd::Zero(h, batch);
        dz.topRows(h) = (dc * gg[t] * gi[t] * (1.0 - gi[t])).matrix();
        dz.middleRows(h, h) = (dc * cp * gf[t] * (1.0 - gf[t])).matrix();
        dz.middleRows(2 * h, h) = (dc * gi[t] * (1.0 - gg[t].square())).matrix();
        dz.bottomRows(h) = (d_o * go[t] * (1.0 - go[t])).matrix();
        grad.w_input += dz * inputs.col(t);
        grad.w_recurrent.noalias() += dz * hs[t].transpose();
        grad.bias += dz.rowwise().sum();
        dh.noalias() = p.w_recurrent.transpose() * dz;
        dc = dc * gf[t];
    }
    return loss;
}

Adam::Adam(std::size_t size, double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      eps_(epsilon),
      m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size))),
      v_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size))) {}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& gradient) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * gradient;
    v_ = beta2_ * v_ + (1.0 - beta2_) * gradient.cwiseProduct(gradient);
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

PairSet make_pairs(std::span<const std::vector<double>> scaled_series, int window_len) {
    if (window_len < 1) throw InvalidArgument("window length must be >= 1");
    const auto w = static_cast<std::size_t>(window_len);
    std::size_t total = 0;
    for (const auto& s : scaled_series)
        if (s.size() > w) total += s.size() - w;
    PairSet pairs;
    pairs.inputs.resize(static_cast<Eigen::Index>(total), window_len);
    pairs.targets.resize(static_cast<Eigen::Index>(total));
    Eigen::Index row = 0;
    for (const auto& s : scaled_series) {
        for (std::size_t start = 0; start + w < s.size(); ++start, ++row) {
            for (std::size_t j = 0; j < w; ++j) pairs.inputs(row, static_cast<Eigen::Index>(j)) = s[start + j];
            pairs.targets(row) = s[start + w];
        }
    }
    return pairs;
}

TrainResult train(const LstmParams& init, std::span<const Series> series, int steps,
                  const TrainConfig& config, int window_len, std::uint64_t seed) {
    config.validate();
    if (steps < 0) throw InvalidArgument("training steps must be non-negative");
    if (series.empty()) throw InvalidArgument("no training series");
    std::vector<double> pooled;
    for (const auto& s : series) {
        if (s.size() < static_cast<std::size_t>(window_len) + 1)
            throw InvalidArgument("series '" + s.user_id() + "' of length " + std::to_string(s.size()) +
                                  " is too short for window " + std::to_string(window_len));
        pooled.insert(pooled.end(), s.values().begin(), s.values().end());
    }
    TrainResult result;
    result.model.params = init;
    result.model.scaler = MinMaxScaler::fit(pooled);
    result.model.window_len = window_len;

    std::vector<std::vector<double>> scaled;
    for (const auto& s : series) scaled.push_back(scaled_values(s, result.model.scaler));
    const PairSet pairs = make_pairs(scaled, window_len);
    result.pairs = pairs.size();

    const auto batch = static_cast<std::size_t>(config.batch_size);
    std::size_t updates = static_cast<std::size_t>(steps);
    if (config.step_unit == StepUnit::epochs)
        updates *= (pairs.size() + batch - 1) / batch;

    std::mt19937_64 rng(seed);
    Adam adam(init.parameter_count(), config.learning_rate, config.beta1, config.beta2, config.epsilon);
    Eigen::VectorXd theta = init.flatten();
    LstmParams current = init;
    LstmParams grad;
    Eigen::MatrixXd bx(static_cast<Eigen::Index>(batch), window_len);
    Eigen::VectorXd by(static_cast<Eigen::Index>(batch));
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);

    for (std::size_t u = 0; u < updates; ++u) {
        if (pairs.size() >= batch) {
            // Partial Fisher-Yates: the first `batch` slots become a sample without replacement.
            for (std::size_t b = 0; b < batch; ++b) {
                std::uniform_int_distribution<std::size_t> tail(b, order.size() - 1);
                std::swap(order[b], order[tail(rng)]);
            }
            for (std::size_t b = 0; b < batch; ++b) {
                bx.row(static_cast<Eigen::Index>(b)) = pairs.inputs.row(static_cast<Eigen::Index>(order[b]));
                by(static_cast<Eigen::Index>(b)) = pairs.targets(static_cast<Eigen::Index>(order[b]));
            }
        } else {
            for (std::size_t b = 0; b < batch; ++b) {
                const auto idx = static_cast<Eigen::Index>(pick(rng));
                bx.row(static_cast<Eigen::Index>(b)) = pairs.inputs.row(idx);
                by(static_cast<Eigen::Index>(b)) = pairs.targets(idx);
            }
        }
        result.losses.push_back(loss_and_gradient(current, bx, by, grad));
        adam.step(theta, grad.flatten());
        current.assign(theta);
    }
    result.model.params = current;
    return result;
}

TrainResult train(const LstmParams& init, const Series& series, int steps, const TrainConfig& config,
                  int window_len, std::uint64_t seed) {
    return train(init, std::span<const Series>(&series, 1), steps, config, window_len, seed);
}

double one_step_mse(const Model& model, const Series& series) {
    const std::vector<std::vector<double>> scaled{scaled_values(series, model.scaler)};
    const PairSet pairs = make_pairs(scaled, model.window_len);
    if (pairs.size() == 0) throw InvalidArgument("series too short for one-step evaluation");
    LstmParams unused;
    return loss_and_gradient(model.params, pairs.inputs, pairs.targets, unused);
}

int effective_window(std::size_t k, int window_len) {
    if (k < 2) throw InvalidArgument("few-shot training needs at least 2 samples");
    if (k < static_cast<std::size_t>(window_len) + 1) return std::max(1, static_cast<int>(k / 2));
    return window_len;
}

Series prototype_series(std::span<const Series> members,
                        const std::optional<wavelet::DenoiseConfig>& denoise) {
    if (members.empty()) throw InvalidArgument("prototype needs at least one member");
    const Series& first = members.front();
    std::vector<double> acc(first.size(), 0.0);
    for (const auto& m : members) {
        if (m.size() != first.size() || m.start_index() != first.start_index())
            throw InvalidArgument("prototype members must be equal-length and index-aligned ('" +
                                  m.user_id() + "')");
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m[i];
    }
    for (double& v : acc) v /= static_cast<double>(members.size());
    Series proto("prototype", first.start_index(), first.granularity_minutes(), std::move(acc));
    if (denoise) return wavelet::denoise(proto, *denoise);
    return proto;
}

LstmParams initial_params(const TrainConfig& config) {
    return LstmParams::random(config.hidden_size, derive_seed(config.seed, {kInit}), config.init_scale,
                              config.forget_bias);
}

Model pretrain(const Series& prototype, const TrainConfig& config, int window_len,
               std::span<const Series> members) {
    config.validate();
    const LstmParams init = initial_params(config);
    const std::uint64_t batches = derive_seed(config.seed, {kPretrainBatches});
    if (config.pretrain_on_members && !members.empty())
        return train(init, members, config.pretrain_steps, config, window_len, batches).model;
    return train(init, prototype, config.pretrain_steps, config, window_len, batches).model;
}

Model fine_tune(const Model& pretrained, const Series& few_shot, const TrainConfig& config) {
    return train(pretrained.params, few_shot, config.finetune_steps, config, pretrained.window_len,
                 derive_seed(config.seed, {kFinetuneBatches}))
        .model;
}

std::vector<double> forecast(const Model& model, std::span<const double> seed_window, std::size_t horizon) {
    if (seed_window.size() != static_cast<std::size_t>(model.window_len))
        throw InvalidArgument("seed window length " + std::to_string(seed_window.size()) +
                              " does not match model window " + std::to_string(model.window_len));
    std::vector<double> window(seed_window.size());
    for (std::size_t i = 0; i < window.size(); ++i) window[i] = model.scaler.transform(seed_window[i]);
    std::vector<double> out;
    out.reserve(horizon);
    for (std::size_t step = 0; step < horizon; ++step) {
        const double next = forward(model.params, window).prediction;
        if (!std::isfinite(next)) throw DivergedForecast("forecast diverged at step " + std::to_string(step));
        out.push_back(model.scaler.inverse(next));
        window.erase(window.begin());
        window.push_back(next);
    }
    return out;
}

std::string checkpoint_json(const Model& model, const TrainConfig& config) {
    const LstmParams& p = model.params;
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    std::vector<double> recurrent;
    recurrent.reserve(static_cast<std::size_t>(p.w_recurrent.size()));
    for (Eigen::Index r = 0; r < p.w_recurrent.rows(); ++r)
        for (Eigen::Index c = 0; c < p.w_recurrent.cols(); ++c) recurrent.push_back(p.w_recurrent(r, c));
    nlohmann::ordered_json j;
    j["schema"] = kCheckpointSchema;
    j["hidden_size"] = p.hidden;
    j["window_len"] = model.window_len;
    j["scaler"] = {{"lo", model.scaler.lo}, {"span", model.scaler.span}};
    j["config"] = {{"batch_size", config.batch_size},
                   {"learning_rate", config.learning_rate},
                   {"pretrain_steps", config.pretrain_steps},
                   {"finetune_steps", config.finetune_steps},
                   {"seed", config.seed}};
    j["tensors"] = {{"w_input", vec(p.w_input)},
                    {"w_recurrent", recurrent},
                    {"bias", vec(p.bias)},
                    {"w_out", vec(p.w_out)},
                    {"b_out", std::vector<double>{p.b_out}}};
    return j.dump();
}

Model model_from_checkpoint(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint is not valid JSON: ") + e.what());
    }
    if (j.value("schema", "") != kCheckpointSchema)
        throw DataError("checkpoint schema tag is missing or unsupported");
    try {
        Model m;
        const int h = j.at("hidden_size").get<int>();
        m.params = LstmParams::zeros(h);
        m.window_len = j.at("window_len").get<int>();
        m.scaler.lo = j.at("scaler").at("lo").get<double>();
        m.scaler.span = j.at("scaler").at("span").get<double>();
        const auto& t = j.at("tensors");
        auto load = [&](const char* name, std::size_t expected) {
            auto v = t.at(name).get<std::vector<double>>();
            if (v.size() != expected) throw DataError(std::string("checkpoint tensor '") + name + "' has wrong size");
            return v;
        };
        const auto hh = static_cast<std::size_t>(h);
        const auto wi = load("w_input", 4 * hh);
        const auto wr = load("w_recurrent", 4 * hh * hh);
        const auto b = load("bias", 4 * hh);
        const auto wo = load("w_out", hh);
        const auto bo = load("b_out", 1);
        for (std::size_t i = 0; i < 4 * hh; ++i) {
            m.params.w_input(static_cast<Eigen::Index>(i)) = wi[i];
            m.params.bias(static_cast<Eigen::Index>(i)) = b[i];
            for (std::size_t c = 0; c < hh; ++c)
                m.params.w_recurrent(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = wr[i * hh + c];
        }
        for (std::size_t i = 0; i < hh; ++i) m.params.w_out(static_cast<Eigen::Index>(i)) = wo[i];
        m.params.b_out = bo[0];
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint: ") + e.what());
    }
}

}  // namespace fslcast::forecaster
