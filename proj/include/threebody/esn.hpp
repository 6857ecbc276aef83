#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "threebody/integrators.hpp"

namespace threebody {

enum class ReadoutActivation { identity, tanh };

std::string_view to_string(ReadoutActivation a);
ReadoutActivation readout_activation_from_string(std::string_view s);

struct EsnConfig {
    int reservoir_size = 300;
    double density = 0.05;
    double spectral_radius = 0.9;
    double input_scale = 0.5;
    double ridge = 1e-6;
    std::size_t washout = 20;
    double leak = 1.0;
    ReadoutActivation readout = ReadoutActivation::identity;
    std::uint64_t seed = 0;

    void validate() const;
};

using SparseMatrixd = Eigen::SparseMatrix<double>;

struct EsnModel {
    EsnConfig config;
    int input_dim = 0;
    Eigen::MatrixXd w_in;   // N_h x input_dim
    SparseMatrixd w;        // N_h x N_h
    Eigen::MatrixXd w_out;  // input_dim x N_h, empty until trained
    double achieved_radius = 0.0;
    double training_mse = std::numeric_limits<double>::quiet_NaN();
    // Trajectories behind the readout, for report provenance.
    std::size_t training_size = 0;

    bool trained() const { return w_out.size() > 0; }
    int reservoir_size() const { return static_cast<int>(w.rows()); }
};

// Largest eigenvalue modulus by power iteration. A single dominant real
// eigenvalue is read off a one-term fit x_{k+1} = lambda x_k; a dominant
// complex pair (or a +-lambda pair) from the two-term recurrence
// x_{k+2} + a x_{k+1} + b x_k = 0. Restarts from a fresh vector when the
// residual stagnates. After 1e4 iterations falls back to subspace iteration
// on a 16-vector block; throws NoConvergence if that also stalls.
double spectral_radius(const Eigen::MatrixXd& m);
double spectral_radius(const SparseMatrixd& m);

EsnModel init_reservoir(const EsnConfig& config, int input_dim);

// h = (1 - leak) h_prev + leak tanh(W h_prev + W_in x)
Eigen::VectorXd advance(const EsnModel& model, const Eigen::VectorXd& h_prev, const Eigen::VectorXd& x);

Eigen::VectorXd readout(const EsnModel& model, const Eigen::VectorXd& h);

// Sequence s pairs column k of inputs[s] with column k of targets[s]. The
// reservoir starts at zero for every sequence and is driven by the inputs;
// states from step `washout` on enter the ridge regression. A tanh readout
// is fitted on atanh of the targets clipped to (-1, 1).
EsnModel fit_readout(EsnModel model, const std::vector<Eigen::MatrixXd>& inputs,
                     const std::vector<Eigen::MatrixXd>& targets);

// Next-state training on whole trajectories (flattened states).
EsnModel fit_readout(EsnModel model, const std::vector<Trajectory>& trajectories);

// Teacher-forces through the warmup columns, then runs closed loop. Column j
// of the result predicts the state j + 1 samples after the last warmup state.
Eigen::MatrixXd forecast(const EsnModel& model, const Eigen::MatrixXd& warmup, std::size_t n_steps);

void save_esn(const EsnModel& model, const std::filesystem::path& path);
EsnModel load_esn(const std::filesystem::path& path);

}  // namespace threebody
