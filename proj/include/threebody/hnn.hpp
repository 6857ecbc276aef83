#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "threebody/dataset.hpp"

namespace threebody {

// squared: per point, mean(r_q^2) + mean(r_p^2); norm: |r_q| + |r_p|, where
// r_q = dH/dp - dq/dt and r_p = dH/dq + dp/dt. Both are averaged over the batch.
enum class HnnLossMode { squared, norm };

std::string_view to_string(HnnLossMode m);
HnnLossMode hnn_loss_mode_from_string(std::string_view s);

struct HnnConfig {
    std::vector<int> hidden{64, 64};
    HnnLossMode loss = HnnLossMode::squared;
    double learning_rate = 1e-3;
    std::size_t batch_size = 128;
    std::size_t epochs = 500;
    std::uint64_t seed = 0;

    void validate() const;
};

// Scalar tanh MLP H(q, p). Parameters live in one flat vector, layer by
// layer: W_l (column-major, out x in) followed by b_l.
struct HnnModel {
    std::vector<int> layers;  // [6d, hidden..., 1]
    Eigen::VectorXd params;
    HnnLossMode loss = HnnLossMode::squared;
    std::uint64_t seed = 0;
    std::size_t epochs_trained = 0;
    std::size_t training_size = 0;
    // Full-data loss before training, then after every epoch.
    std::vector<double> loss_history;

    int input_dim() const { return layers.front(); }
    int n_layers() const { return static_cast<int>(layers.size()) - 1; }
    Eigen::Map<Eigen::MatrixXd> weight(int l);
    Eigen::Map<const Eigen::MatrixXd> weight(int l) const;
    Eigen::Map<Eigen::VectorXd> bias(int l);
    Eigen::Map<const Eigen::VectorXd> bias(int l) const;
};

std::size_t hnn_param_count(const std::vector<int>& layers);

HnnModel init_hnn(int input_dim, const HnnConfig& config);

double forward(const HnnModel& model, const Eigen::VectorXd& input);
// One output per column.
Eigen::VectorXd forward(const HnnModel& model, const Eigen::MatrixXd& inputs);

// (dH/dq, dH/dp) by reverse mode.
Eigen::VectorXd input_gradient(const HnnModel& model, const Eigen::VectorXd& input);
Eigen::MatrixXd input_gradient(const HnnModel& model, const Eigen::MatrixXd& inputs);

// Columns of inputs are canonical (q, p); columns of targets (dq/dt, dp/dt).
double hnn_loss(const HnnModel& model, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets);

// Exact gradient of hnn_loss in the layout of model.params. The loss depends
// on the parameters through dH/dx, so this runs a tangent pass along
// u = dL/d(dH/dx) and back-propagates through both passes.
Eigen::VectorXd param_gradient(const HnnModel& model, const Eigen::MatrixXd& inputs,
                               const Eigen::MatrixXd& targets);

// Adam on shuffled minibatches, starting from `model`.
HnnModel train_hnn(HnnModel model, const SupervisedPairs& data, const HnnConfig& config);

// dq/dt = dH/dp, dp/dt = -dH/dq at the canonical coordinates of `state`.
PhaseDerivative symplectic_field(const HnnModel& model, const State& state);
CanonicalField learned_field(const HnnModel& model);

struct HnnRollout {
    Trajectory trajectory;
    // H evaluated at every sample.
    std::vector<double> learned_energy;
    double max_relative_energy_drift() const;
};

// RK4 on the learned field (it is not separable, so leapfrog does not apply).
// dt is the sample spacing; each sample is reached in `substeps` RK4 steps.
HnnRollout rollout(const HnnModel& model, const State& initial, std::size_t n_steps, double dt,
                   std::size_t substeps = 1);

void save_hnn(const HnnModel& model, const std::filesystem::path& path);
HnnModel load_hnn(const std::filesystem::path& path);

}  // namespace threebody
