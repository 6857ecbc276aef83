#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "threebody/dataset.hpp"

namespace threebody {

// Time-mean of a per-step position MAE curve. Columns are samples; only the
// first position_rows rows (the positions) enter the error.
Eigen::VectorXd mae_curve(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth, Eigen::Index position_rows);
Eigen::VectorXd mae_curve(const Trajectory& pred, const Trajectory& truth);
double trajectory_mae(const Eigen::VectorXd& curve);
double trajectory_mae(const Trajectory& pred, const Trajectory& truth);

// Entry 0 of the curve is the forecast origin. With k the first later entry
// above threshold, T = (k - 1) dt; T = (size - 1) dt if none is.
double horizon_from_curve(const Eigen::VectorXd& curve, double dt, double threshold);
double prediction_horizon(const Trajectory& pred, const Trajectory& truth, double threshold);

enum class Tier { fail, tier1, tier2, tier3 };
inline constexpr std::array<Tier, 4> kTiers{Tier::fail, Tier::tier1, Tier::tier2, Tier::tier3};

std::string_view to_string(Tier t);
Tier tier_from_string(std::string_view s);

// T < 3 fail, [3, 10) tier1, [10, 100) tier2, >= 100 tier3.
Tier tier_classify(double horizon);

struct Interval {
    double level = 0.0;
    double low = 0.0;
    double high = 0.0;

    bool operator==(const Interval&) const = default;
};

inline const std::vector<double> kDefaultLevels{0.90, 0.95, 0.98};

// Percentile bootstrap intervals for the mean: `resamples` resamples with
// replacement from a seeded mt19937_64, quantiles interpolated linearly
// between order statistics.
std::vector<Interval> confidence_intervals(const std::vector<double>& values, const std::vector<double>& levels,
                                           std::size_t resamples = 1000, std::uint64_t seed = 0);

// Linear-interpolation quantile of sorted data.
double quantile_sorted(const std::vector<double>& sorted, double p);

struct EnergyDrift {
    double value = 0.0;
    // The scan stopped at a singular or non-finite state.
    bool truncated = false;
    std::size_t valid_states = 0;
};

// max |E(t) - E(0)| / |E(0)| over the leading nonsingular states (absolute
// drift if E(0) = 0).
EnergyDrift energy_drift(const Trajectory& traj, double separation_floor = kDefaultSeparationFloor);

// T / t_lyap, or nothing when t_lyap is infinite (regular orbit) or unknown.
std::optional<double> lyapunov_normalized_horizon(double horizon, double t_lyap);

enum class ModelKind { esn, hnn, lstm, oracle, constant };
std::string_view to_string(ModelKind k);
ModelKind model_kind_from_string(std::string_view s);

struct EvalConfig {
    double error_threshold = 0.1;
    std::vector<double> levels = kDefaultLevels;
    std::size_t resamples = 1000;
    std::uint64_t bootstrap_seed = 0;
    // Teacher-forced prefix for ESN/LSTM; 0 takes the model's own setting.
    std::size_t warmup = 0;
    // RK4 substeps per sample for HNN rollouts.
    std::size_t hnn_substeps = 10;
    // Per-trajectory Lyapunov estimates (long double Bulirsch-Stoer at tol
    // 1e-14); a horizon of 0 skips them.
    double lyapunov_horizon = 100.0;
    std::size_t workers = 1;

    void validate() const;
};

struct TrajectoryResult {
    std::uint64_t index = 0;
    double horizon = 0.0;
    Tier tier = Tier::fail;
    // +inf for a regular orbit, NaN if the estimate was skipped or failed.
    double t_lyap = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> normalized_horizon;
    double mean_mae = 0.0;
    // NaN when the prediction carries no velocities.
    double velocity_mae = std::numeric_limits<double>::quiet_NaN();
    EnergyDrift energy;
    std::vector<double> mae;

    bool operator==(const TrajectoryResult& o) const;
};

struct Summary {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double median = std::numeric_limits<double>::quiet_NaN();
    double max = std::numeric_limits<double>::quiet_NaN();
    std::size_t count = 0;

    bool operator==(const Summary& o) const;
};

Summary summarize(std::vector<double> values);

struct EvalReport {
    static constexpr int kVersion = 1;
    std::string model_kind;
    std::string model_id;
    std::string dataset_id;
    std::size_t training_size = 0;
    double dt_sample = 0.0;
    double error_threshold = 0.1;
    std::size_t warmup = 0;
    std::size_t resamples = 0;
    std::uint64_t bootstrap_seed = 0;
    std::vector<TrajectoryResult> trajectories;
    Summary horizon;
    std::array<std::size_t, 4> tier_counts{};
    std::vector<Interval> horizon_ci;
    Summary energy_drift;
    Summary normalized_horizon;

    bool operator==(const EvalReport& o) const;
};

// Fills the aggregate fields from the per-trajectory results.
void aggregate(EvalReport& report, const EvalConfig& config);

// Runs the model against every test trajectory of the dataset. model_path
// is ignored for the oracle and constant baselines.
EvalReport evaluate_model(ModelKind kind, const std::filesystem::path& model_path,
                          const std::filesystem::path& manifest_path, const EvalConfig& config);

// report.json, trajectories.csv and summary.svg under out_dir.
void write_report(const EvalReport& report, const std::filesystem::path& out_dir);
EvalReport read_report(const std::filesystem::path& json_path);
std::string report_svg(const EvalReport& report);

}  // namespace threebody
