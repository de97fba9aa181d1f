#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fslcast/timeseries.hpp"
#include "fslcast/wavelet.hpp"

namespace fslcast::forecaster {

/**
 * @brief Weights of a single-layer LSTM with scalar input and a linear
 * scalar head.
 *
 * Gate rows are stacked as [input; forget; candidate; output], each block
 * `hidden` rows tall.
 */
struct LstmParams {
    int hidden = 0;
    Eigen::VectorXd w_input;      ///< 4h x 1
    Eigen::MatrixXd w_recurrent;  ///< 4h x h
    Eigen::VectorXd bias;         ///< 4h
    Eigen::VectorXd w_out;        ///< h
    double b_out = 0.0;

    static LstmParams zeros(int hidden);
    /// Uniform(-scale, scale) weights, forget-gate bias shifted by `forget_bias`.
    static LstmParams random(int hidden, std::uint64_t seed, double scale = 0.08,
                             double forget_bias = 1.0);

    std::size_t parameter_count() const;
    Eigen::VectorXd flatten() const;
    void assign(const Eigen::VectorXd& flat);
    bool all_finite() const;
    bool operator==(const LstmParams& other) const;
};

/// Affine map of a training range onto [0, 1].
struct MinMaxScaler {
    double lo = 0.0;
    double span = 1.0;

    /// A constant input maps to 0.5.
    static MinMaxScaler fit(std::span<const double> values);
    double transform(double x) const { return (x - lo) / span; }
    double inverse(double s) const { return lo + s * span; }
};

enum class StepUnit { updates, epochs };

struct TrainConfig {
    int batch_size = 72;
    double learning_rate = 0.001;
    int pretrain_steps = 130;
    int finetune_steps = 70;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int window_len = 12;
    int hidden_size = 64;
    double init_scale = 0.08;
    double forget_bias = 1.0;
    StepUnit step_unit = StepUnit::updates;
    /// Phase 1 trains on every member series instead of the prototype only.
    bool pretrain_on_members = false;
    std::uint64_t seed = 0;

    void validate() const;
};

struct ForwardState {
    double prediction = 0.0;
    /// Hidden and cell states after each step of the window.
    std::vector<Eigen::VectorXd> hidden;
    std::vector<Eigen::VectorXd> cell;
};

/// Runs the recurrence from zero states over a (scaled) window.
ForwardState forward(const LstmParams& params, std::span<const double> window);

/// Mean squared error of a batch (rows = samples, columns = time steps) and
/// its exact gradient by backpropagation through time.
double loss_and_gradient(const LstmParams& params, const Eigen::MatrixXd& inputs,
                         const Eigen::VectorXd& targets, LstmParams& gradient);

class Adam {
public:
    Adam(std::size_t size, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
         double epsilon = 1e-8);
    void step(Eigen::VectorXd& params, const Eigen::VectorXd& gradient);

private:
    double lr_, beta1_, beta2_, eps_;
    Eigen::VectorXd m_, v_;
    long t_ = 0;
};

/// Sliding (window -> next value) pairs over scaled values.
struct PairSet {
    Eigen::MatrixXd inputs;
    Eigen::VectorXd targets;
    std::size_t size() const { return static_cast<std::size_t>(targets.size()); }
};

PairSet make_pairs(std::span<const std::vector<double>> scaled_series, int window_len);

struct Model {
    LstmParams params;
    MinMaxScaler scaler;
    int window_len = 0;
};

struct TrainResult {
    Model model;
    /// Batch loss before each update.
    std::vector<double> losses;
    std::size_t pairs = 0;
};

/// Runs exactly `steps` Adam updates (or epochs) on batches drawn from the
/// sliding-window pairs of the given series, after fitting a fresh scaler.
TrainResult train(const LstmParams& init, std::span<const Series> series, int steps,
                  const TrainConfig& config, int window_len, std::uint64_t seed);
TrainResult train(const LstmParams& init, const Series& series, int steps, const TrainConfig& config,
                  int window_len, std::uint64_t seed);

/// MSE of one-step predictions over every pair in `series`, in the model's scale.
double one_step_mse(const Model& model, const Series& series);

/// Window length used for a k-shot series: the configured length, or
/// floor(k/2) when k leaves no room for a single pair.
int effective_window(std::size_t k, int window_len);

/// Pointwise mean of equal-length aligned members, optionally denoised.
Series prototype_series(std::span<const Series> members,
                        const std::optional<wavelet::DenoiseConfig>& denoise = wavelet::DenoiseConfig{});

/// Seeded random initialization shared by pretraining and the plain baseline.
LstmParams initial_params(const TrainConfig& config);

/// Phase 1: seeded random init, then `pretrain_steps` on the prototype
/// (or on every member when configured).
Model pretrain(const Series& prototype, const TrainConfig& config, int window_len,
               std::span<const Series> members = {});

/// Phase 2: continue from a pretrained model for `finetune_steps` on the
/// few-shot sample with a scaler refit on that sample.
Model fine_tune(const Model& pretrained, const Series& few_shot, const TrainConfig& config);

/// Recursive multi-step forecast in original units.
std::vector<double> forecast(const Model& model, std::span<const double> seed_window,
                             std::size_t horizon = kTestHorizon);

inline constexpr const char* kCheckpointSchema = "fslcast.lstm.v1";

std::string checkpoint_json(const Model& model, const TrainConfig& config);
Model model_from_checkpoint(const std::string& json_text);

}  // namespace fslcast::forecaster
