#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "threebody/integrators.hpp"

namespace threebody {

inline constexpr int kDatasetFormatVersion = 1;

enum class VelocityMode { zero, uniform };

struct SamplerConfig {
    int dimension = 2;
    Eigen::Vector3d masses = Eigen::Vector3d::Ones();
    // Rejection threshold on the minimum pairwise separation.
    double min_separation = 0.1;
    std::uint64_t base_seed = 0;
    VelocityMode velocity_mode = VelocityMode::zero;
    // Radius of the velocity disc/ball for VelocityMode::uniform.
    double velocity_scale = 0.0;

    void validate() const;
};

inline constexpr std::size_t kMaxRejections = 10'000;

std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t index, std::uint64_t attempt = 0);

// Three positions i.i.d. uniform in the unit disc (d = 2) or ball (d = 3),
// recentred on the centre of mass, redrawn until every pair is at least
// min_separation apart. Deterministic in (base_seed, index, attempt); a
// nonzero attempt is used to resample an index whose trajectory was rejected.
State sample_initial(const SamplerConfig& config, std::uint64_t index, std::uint64_t attempt = 0);

enum class NonConvergedPolicy { resample, keep };

// Bulirsch-Stoer in long double at tol 1e-15, dt_sample 0.1.
IntegratorConfig generation_integrator_defaults();

struct DatasetConfig {
    std::size_t n_train = 500;
    std::size_t n_test = 50;
    std::size_t steps = 100;
    SamplerConfig sampler;
    IntegratorConfig integrator = generation_integrator_defaults();
    double convergence_threshold = 1e-6;
    NonConvergedPolicy policy = NonConvergedPolicy::resample;
    std::size_t max_attempts = 200;
    std::size_t workers = 1;

    void validate() const;
};

struct TrajectoryRecord {
    std::string file;  // relative to the manifest directory
    std::uint64_t index = 0;
    std::uint64_t seed = 0;
    std::size_t attempts = 1;
    bool converged = false;
    double divergence_time = std::numeric_limits<double>::quiet_NaN();

    bool operator==(const TrajectoryRecord& o) const;
};

struct DatasetManifest {
    int format_version = kDatasetFormatVersion;
    std::size_t steps = 0;
    double dt_sample = 0.0;
    IntegratorConfig integrator;
    SamplerConfig sampler;
    double convergence_threshold = 1e-6;
    NonConvergedPolicy policy = NonConvergedPolicy::resample;
    std::size_t max_attempts = 0;
    std::vector<TrajectoryRecord> train;
    std::vector<TrajectoryRecord> test;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<Trajectory> train;
    std::vector<Trajectory> test;
};

// Writes <out_dir>/manifest.json plus train/ and test/ trajectory CSVs.
// Train indices are 0..n_train-1 and test indices n_train..n_train+n_test-1.
DatasetManifest generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

// Ground truth for a single index under the dataset's rules; exposed so that
// evaluation can regenerate a reference trajectory exactly.
Trajectory generate_trajectory(const DatasetConfig& config, std::uint64_t index, TrajectoryRecord& record);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& manifest_path);

// CSV: '#'-prefixed key=value metadata lines, a header row
// t,q1x,q1y[,q1z],...,q3*,v1x,...,v3*, then one row per sample with 17
// significant digits.
void write_trajectory(const Trajectory& traj, const std::filesystem::path& path);
Trajectory read_trajectory(const std::filesystem::path& path);
std::vector<std::string> trajectory_columns(int dim);

// Column k of inputs/targets is one supervised pair.
struct SupervisedPairs {
    Eigen::MatrixXd inputs;
    Eigen::MatrixXd targets;

    Eigen::Index size() const { return inputs.cols(); }
};

// flatten(state_k) -> flatten(state_{k+1}) for k = 0..n-2.
SupervisedPairs to_next_state_pairs(const Trajectory& traj);
// canonical (q, p) of state_k -> exact (dq/dt, dp/dt) for every sample.
SupervisedPairs to_hnn_pairs(const Trajectory& traj);

SupervisedPairs concatenate(const std::vector<SupervisedPairs>& parts);

std::string_view to_string(VelocityMode mode);
std::string_view to_string(NonConvergedPolicy policy);
VelocityMode velocity_mode_from_string(std::string_view s);
NonConvergedPolicy policy_from_string(std::string_view s);

}  // namespace threebody
