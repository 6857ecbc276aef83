#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <utility>
#include <vector>

#include "threebody/integrators.hpp"

namespace threebody {

// full: features are flattened states (positions then velocities);
// positions: features are positions only, so inputs and outputs are both 3d.
enum class LstmTargetMode { full, positions };

std::string_view to_string(LstmTargetMode m);
LstmTargetMode lstm_target_mode_from_string(std::string_view s);

struct LstmConfig {
    int hidden = 64;
    LstmTargetMode target = LstmTargetMode::full;
    // Predict the standardized increment over the current input.
    bool residual = true;
    double learning_rate = 1e-3;
    // Learning rate multiplier applied after every epoch.
    double lr_decay = 1.0;
    std::size_t epochs = 200;
    // Sequences per optimizer step.
    std::size_t batch_size = 16;
    double clip_norm = 1.0;
    std::size_t warmup = 20;
    std::uint64_t seed = 0;

    void validate() const;
};

// Single-layer LSTM with gates stacked as [input, forget, candidate, output]
// and a linear head. Flat parameter layout: W (4H x D), U (4H x H), b (4H),
// V (D x H), a (D), each column-major.
struct LstmModel {
    int features = 0;
    int hidden = 0;
    LstmTargetMode target = LstmTargetMode::full;
    bool residual = true;
    std::size_t warmup = 20;
    std::uint64_t seed = 0;
    Eigen::VectorXd params;
    // Affine standardization: network input (x - in_mean) / in_scale; the head
    // output is mapped back with out_scale * y + out_mean (plus x if residual).
    Eigen::VectorXd in_mean, in_scale, out_mean, out_scale;
    std::size_t epochs_trained = 0;
    std::size_t training_size = 0;
    std::vector<double> loss_history;

    Eigen::Map<const Eigen::MatrixXd> w() const;
    Eigen::Map<const Eigen::MatrixXd> u() const;
    Eigen::Map<const Eigen::VectorXd> b() const;
    Eigen::Map<const Eigen::MatrixXd> v() const;
    Eigen::Map<const Eigen::VectorXd> a() const;
    Eigen::Map<Eigen::VectorXd> b();
};

std::size_t lstm_param_count(int features, int hidden);

LstmModel init_lstm(int features, const LstmConfig& config);

// One step in network units (standardized input).
std::pair<Eigen::VectorXd, Eigen::VectorXd> cell_step(const LstmModel& model, const Eigen::VectorXd& h_prev,
                                                      const Eigen::VectorXd& c_prev, const Eigen::VectorXd& x);

// Teacher-forced one-step predictions: column t predicts the successor of
// input column t. Inputs and predictions are in physical units.
Eigen::MatrixXd forward_sequence(const LstmModel& model, const Eigen::MatrixXd& inputs);

// Mean squared error in standardized target units over every sequence,
// step and feature.
double lstm_loss(const LstmModel& model, const std::vector<Eigen::MatrixXd>& inputs,
                 const std::vector<Eigen::MatrixXd>& targets);

// Exact gradient of lstm_loss by backpropagation through the full sequence.
Eigen::VectorXd bptt_gradient(const LstmModel& model, const std::vector<Eigen::MatrixXd>& inputs,
                              const std::vector<Eigen::MatrixXd>& targets);

// Sets the standardization from training data (population statistics; a
// zero spread becomes 1).
void fit_standardization(LstmModel& model, const std::vector<Eigen::MatrixXd>& inputs,
                         const std::vector<Eigen::MatrixXd>& targets);

// Adam with global gradient-norm clipping; one step per minibatch of
// sequences, reshuffled every epoch.
LstmModel train_lstm(LstmModel model, const std::vector<Eigen::MatrixXd>& inputs,
                     const std::vector<Eigen::MatrixXd>& targets, const LstmConfig& config);

// Features of a state under the model's target mode.
Eigen::VectorXd lstm_features(const State& state, LstmTargetMode mode);
Eigen::MatrixXd lstm_features(const Trajectory& traj, LstmTargetMode mode);

struct SequencePairs {
    std::vector<Eigen::MatrixXd> inputs;
    std::vector<Eigen::MatrixXd> targets;
};
SequencePairs lstm_sequences(const std::vector<Trajectory>& trajectories, LstmTargetMode mode);

// Teacher-forces through the warmup columns, then feeds predictions back.
Eigen::MatrixXd rollout(const LstmModel& model, const Eigen::MatrixXd& warmup, std::size_t n_steps);

void save_lstm(const LstmModel& model, const std::filesystem::path& path);
LstmModel load_lstm(const std::filesystem::path& path);

}  // namespace threebody
