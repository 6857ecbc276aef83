#include "threebody/eval.hpp"

#include <algorithm>
#include <random>

#include "threebody/esn.hpp"
#include "threebody/hnn.hpp"
#include "threebody/json_io.hpp"
#include "threebody/lstm.hpp"
#include "threebody/parallel.hpp"

namespace threebody {

namespace {

bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

Eigen::MatrixXd flat_states(const Trajectory& traj) {
    Eigen::MatrixXd out(traj.front().flat_size(), static_cast<Eigen::Index>(traj.size()));
    for (std::size_t k = 0; k < traj.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = flatten(traj.states[k]);
    return out;
}

}  // namespace

Eigen::VectorXd mae_curve(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth, Eigen::Index position_rows) {
    if (pred.cols() != truth.cols())
        throw LengthMismatch("prediction has " + std::to_string(pred.cols()) + " samples, truth " +
                             std::to_string(truth.cols()));
    if (position_rows < 1 || pred.rows() < position_rows || truth.rows() < position_rows)
        throw DimensionMismatch("prediction and truth must both carry the position rows");
    return (pred.topRows(position_rows) - truth.topRows(position_rows)).cwiseAbs().colwise().mean().transpose();
}

Eigen::VectorXd mae_curve(const Trajectory& pred, const Trajectory& truth) {
    if (pred.size() != truth.size())
        throw LengthMismatch("prediction has " + std::to_string(pred.size()) + " samples, truth " +
                             std::to_string(truth.size()));
    if (pred.size() == 0) return {};
    if (pred.dim() != truth.dim()) throw DimensionMismatch("prediction and truth differ in dimension");
    return mae_curve(flat_states(pred), flat_states(truth), kBodies * pred.dim());
}

double trajectory_mae(const Eigen::VectorXd& curve) {
    return curve.size() == 0 ? std::numeric_limits<double>::quiet_NaN() : curve.mean();
}

double trajectory_mae(const Trajectory& pred, const Trajectory& truth) {
    return trajectory_mae(mae_curve(pred, truth));
}

double horizon_from_curve(const Eigen::VectorXd& curve, double dt, double threshold) {
    if (curve.size() == 0) return 0.0;
    for (Eigen::Index k = 1; k < curve.size(); ++k)
        if (!(curve(k) <= threshold)) return static_cast<double>(k - 1) * dt;
    return static_cast<double>(curve.size() - 1) * dt;
}

double prediction_horizon(const Trajectory& pred, const Trajectory& truth, double threshold) {
    const Eigen::VectorXd curve = mae_curve(pred, truth);
    if (curve.size() == 0) return 0.0;
    for (Eigen::Index k = 1; k < curve.size(); ++k)
        if (!(curve(k) <= threshold))
            return truth.states[static_cast<std::size_t>(k) - 1].time - truth.front().time;
    return truth.back().time - truth.front().time;
}

std::string_view to_string(Tier t) {
    switch (t) {
        case Tier::fail: return "fail";
        case Tier::tier1: return "tier1";
        case Tier::tier2: return "tier2";
        case Tier::tier3: return "tier3";
    }
    return "fail";
}

Tier tier_from_string(std::string_view s) {
    for (Tier t : kTiers)
        if (to_string(t) == s) return t;
    throw FormatError("unknown tier '" + std::string(s) + "'");
}

Tier tier_classify(double horizon) {
    if (!(horizon >= 0.0)) throw std::invalid_argument("horizon must be non-negative");
    if (horizon < 3.0) return Tier::fail;
    if (horizon < 10.0) return Tier::tier1;
    if (horizon < 100.0) return Tier::tier2;
    return Tier::tier3;
}

double quantile_sorted(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw TooFewValues("quantile of an empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * std::clamp(p, 0.0, 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<Interval> confidence_intervals(const std::vector<double>& values, const std::vector<double>& levels,
                                           std::size_t resamples, std::uint64_t seed) {
    if (values.size() < 2) throw TooFewValues("bootstrap needs at least 2 values, got " + std::to_string(values.size()));
    if (resamples < 1) throw ConfigError("resamples must be at least 1");
    for (double l : levels)
        if (!(l > 0.0 && l < 1.0)) throw ConfigError("confidence levels must lie in (0, 1)");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
    std::vector<double> means(resamples);
    for (double& m : means) {
        double sum = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) sum += values[pick(rng)];
        m = sum / static_cast<double>(values.size());
    }
    std::sort(means.begin(), means.end());
    std::vector<Interval> out;
    for (double l : levels)
        out.push_back({l, quantile_sorted(means, 0.5 * (1.0 - l)), quantile_sorted(means, 0.5 * (1.0 + l))});
    return out;
}

EnergyDrift energy_drift(const Trajectory& traj, double separation_floor) {
    EnergyDrift out;
    double e0 = 0.0;
    for (const State& s : traj.states) {
        if (!is_finite(s) || !(min_separation(s) >= separation_floor)) {
            out.truncated = true;
            break;
        }
        const double e = total_energy(s);
        if (out.valid_states == 0) e0 = e;
        out.value = std::max(out.value, std::abs(e - e0));
        ++out.valid_states;
    }
    if (out.valid_states == 0) out.value = std::numeric_limits<double>::quiet_NaN();
    else if (e0 != 0.0) out.value /= std::abs(e0);
    return out;
}

std::optional<double> lyapunov_normalized_horizon(double horizon, double t_lyap) {
    if (!std::isfinite(t_lyap) || !(t_lyap > 0.0)) return std::nullopt;
    return horizon / t_lyap;
}

std::string_view to_string(ModelKind k) {
    switch (k) {
        case ModelKind::esn: return "esn";
        case ModelKind::hnn: return "hnn";
        case ModelKind::lstm: return "lstm";
        case ModelKind::oracle: return "oracle";
        case ModelKind::constant: return "constant";
    }
    return "esn";
}

ModelKind model_kind_from_string(std::string_view s) {
    for (ModelKind k : {ModelKind::esn, ModelKind::hnn, ModelKind::lstm, ModelKind::oracle, ModelKind::constant})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown model kind '" + std::string(s) + "'");
}

void EvalConfig::validate() const {
    if (!(error_threshold > 0.0)) throw ConfigError("error_threshold must be positive");
    for (double l : levels)
        if (!(l > 0.0 && l < 1.0)) throw ConfigError("confidence levels must lie in (0, 1)");
    if (resamples < 1) throw ConfigError("resamples must be at least 1");
    if (hnn_substeps < 1) throw ConfigError("hnn_substeps must be at least 1");
    if (!(lyapunov_horizon >= 0.0)) throw ConfigError("lyapunov_horizon must be non-negative");
}

bool TrajectoryResult::operator==(const TrajectoryResult& o) const {
    if (mae.size() != o.mae.size()) return false;
    for (std::size_t k = 0; k < mae.size(); ++k)
        if (!same(mae[k], o.mae[k])) return false;
    const bool same_norm = normalized_horizon.has_value() == o.normalized_horizon.has_value() &&
                           (!normalized_horizon || same(*normalized_horizon, *o.normalized_horizon));
    return index == o.index && same(horizon, o.horizon) && tier == o.tier && same(t_lyap, o.t_lyap) && same_norm &&
           same(mean_mae, o.mean_mae) && same(velocity_mae, o.velocity_mae) && same(energy.value, o.energy.value) &&
           energy.truncated == o.energy.truncated && energy.valid_states == o.energy.valid_states;
}

bool Summary::operator==(const Summary& o) const {
    return same(mean, o.mean) && same(median, o.median) && same(max, o.max) && count == o.count;
}

bool EvalReport::operator==(const EvalReport& o) const {
    return model_kind == o.model_kind && model_id == o.model_id && dataset_id == o.dataset_id &&
           training_size == o.training_size && same(dt_sample, o.dt_sample) &&
           same(error_threshold, o.error_threshold) && warmup == o.warmup && resamples == o.resamples &&
           bootstrap_seed == o.bootstrap_seed && trajectories == o.trajectories && horizon == o.horizon &&
           tier_counts == o.tier_counts && horizon_ci == o.horizon_ci && energy_drift == o.energy_drift &&
           normalized_horizon == o.normalized_horizon;
}

Summary summarize(std::vector<double> values) {
    values.erase(std::remove_if(values.begin(), values.end(), [](double v) { return !std::isfinite(v); }),
                 values.end());
    Summary s;
    s.count = values.size();
    if (values.empty()) return s;
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    s.median = quantile_sorted(values, 0.5);
    s.max = values.back();
    return s;
}

void aggregate(EvalReport& report, const EvalConfig& config) {
    std::vector<double> horizons, drifts, normalized;
    report.tier_counts.fill(0);
    for (const auto& r : report.trajectories) {
        horizons.push_back(r.horizon);
        drifts.push_back(r.energy.value);
        if (r.normalized_horizon) normalized.push_back(*r.normalized_horizon);
        ++report.tier_counts[static_cast<std::size_t>(r.tier)];
    }
    report.horizon = summarize(horizons);
    report.energy_drift = summarize(drifts);
    report.normalized_horizon = summarize(normalized);
    report.error_threshold = config.error_threshold;
    report.resamples = config.resamples;
    report.bootstrap_seed = config.bootstrap_seed;
    report.horizon_ci.clear();
    if (horizons.size() >= 2)
        report.horizon_ci = confidence_intervals(horizons, config.levels, config.resamples, config.bootstrap_seed);
}

namespace {

// A forecast in feature space together with the ground truth over the same
// window; column 0 is the origin, which the forecast shares with the truth.
struct Window {
    Eigen::MatrixXd pred;
    Eigen::MatrixXd truth;
};

struct LoadedModel {
    ModelKind kind;
    EsnModel esn;
    HnnModel hnn;
    LstmModel lstm;
    std::size_t warmup = 1;
    std::size_t training_size = 0;
};

Window window_from(const Trajectory& truth, std::size_t origin, Eigen::MatrixXd forecast_cols, Eigen::Index rows) {
    const Eigen::MatrixXd all = flat_states(truth);
    const auto first = static_cast<Eigen::Index>(origin);
    Window w;
    w.truth = all.rightCols(all.cols() - first).topRows(rows);
    w.pred.resize(rows, w.truth.cols());
    w.pred.col(0) = w.truth.col(0);
    w.pred.rightCols(forecast_cols.cols()) = forecast_cols;
    return w;
}

Window hnn_window(const HnnModel& model, const Trajectory& truth, std::size_t substeps) {
    const std::size_t n = truth.size() - 1;
    const double dt = truth.sample_interval();
    Eigen::MatrixXd cols(truth.front().flat_size(), static_cast<Eigen::Index>(n));
    try {
        const HnnRollout r = rollout(model, truth.front(), n, dt, substeps);
        for (std::size_t k = 1; k <= n; ++k) cols.col(static_cast<Eigen::Index>(k) - 1) = flatten(r.trajectory.states[k]);
    } catch (const IntegrationError&) {
        // Keep the prefix the learned field could still resolve.
        cols.setConstant(std::numeric_limits<double>::quiet_NaN());
        State s = truth.front();
        for (std::size_t k = 1; k <= n; ++k) {
            try {
                s = rollout(model, s, 1, dt, substeps).trajectory.back();
            } catch (const IntegrationError&) {
                break;
            }
            cols.col(static_cast<Eigen::Index>(k) - 1) = flatten(s);
        }
    }
    return window_from(truth, 0, cols, cols.rows());
}

Window predict(const LoadedModel& m, const Trajectory& truth, const DatasetManifest& manifest,
               const EvalConfig& config) {
    const std::size_t n = truth.size();
    switch (m.kind) {
        case ModelKind::oracle: {
            IntegratorConfig tighter = manifest.integrator;
            tighter.tolerance /= 10.0;
            const Trajectory again = integrate(truth.front(), truth.back().time, tighter);
            const Eigen::MatrixXd cols = flat_states(again);
            return window_from(truth, 0, cols.rightCols(cols.cols() - 1), cols.rows());
        }
        case ModelKind::constant: {
            const Eigen::VectorXd origin = flatten(truth.front());
            return window_from(truth, 0, origin.replicate(1, static_cast<Eigen::Index>(n) - 1), origin.size());
        }
        case ModelKind::hnn:
            return hnn_window(m.hnn, truth, config.hnn_substeps);
        case ModelKind::esn: {
            const Eigen::MatrixXd all = flat_states(truth);
            const auto w = static_cast<Eigen::Index>(m.warmup);
            const Eigen::MatrixXd cols = forecast(m.esn, all.leftCols(w), n - m.warmup);
            return window_from(truth, m.warmup - 1, cols, all.rows());
        }
        case ModelKind::lstm: {
            const Eigen::MatrixXd feats = lstm_features(truth, m.lstm.target);
            const auto w = static_cast<Eigen::Index>(m.warmup);
            const Eigen::MatrixXd cols = rollout(m.lstm, feats.leftCols(w), n - m.warmup);
            return window_from(truth, m.warmup - 1, cols, feats.rows());
        }
    }
    throw Error("unhandled model kind");
}

LoadedModel load_model(ModelKind kind, const std::filesystem::path& path, const DatasetManifest& manifest,
                       const EvalConfig& config) {
    const int d = manifest.sampler.dimension;
    const int full = 2 * kBodies * d;
    LoadedModel m;
    m.kind = kind;
    const auto mismatch = [&](int got, int want) {
        throw ModelDatasetMismatch(std::string(to_string(kind)) + " model expects width " + std::to_string(got) +
                                   " but the dataset is " + std::to_string(d) + "D (width " +
                                   std::to_string(want) + ")");
    };
    switch (kind) {
        case ModelKind::esn:
            m.esn = load_esn(path);
            if (m.esn.input_dim != full) mismatch(m.esn.input_dim, full);
            m.warmup = config.warmup ? config.warmup : std::max<std::size_t>(1, m.esn.config.washout);
            if (m.warmup < m.esn.config.washout) throw ConfigError("warmup is shorter than the ESN washout");
            m.training_size = m.esn.training_size;
            break;
        case ModelKind::hnn:
            m.hnn = load_hnn(path);
            if (m.hnn.input_dim() != full) mismatch(m.hnn.input_dim(), full);
            m.warmup = 1;
            m.training_size = m.hnn.training_size;
            break;
        case ModelKind::lstm: {
            m.lstm = load_lstm(path);
            const int want = m.lstm.target == LstmTargetMode::full ? full : kBodies * d;
            if (m.lstm.features != want) mismatch(m.lstm.features, want);
            m.warmup = config.warmup ? config.warmup : std::max<std::size_t>(1, m.lstm.warmup);
            m.training_size = m.lstm.training_size;
            break;
        }
        case ModelKind::oracle:
        case ModelKind::constant:
            m.warmup = 1;
            m.training_size = manifest.train.size();
            break;
    }
    if (m.warmup >= manifest.steps)
        throw ConfigError("warmup of " + std::to_string(m.warmup) + " leaves nothing to forecast in " +
                          std::to_string(manifest.steps) + "-sample trajectories");
    return m;
}

TrajectoryResult score(const Window& w, const Trajectory& truth, double dt, const EvalConfig& config) {
    const int d = truth.dim();
    const Eigen::Index pos_rows = kBodies * d;
    TrajectoryResult r;
    const Eigen::VectorXd curve = mae_curve(w.pred, w.truth, pos_rows);
    r.mae.assign(curve.data(), curve.data() + curve.size());
    r.horizon = horizon_from_curve(curve, dt, config.error_threshold);
    r.tier = tier_classify(r.horizon);
    r.mean_mae = trajectory_mae(curve);
    if (w.pred.rows() == 2 * pos_rows) {
        r.velocity_mae = (w.pred.bottomRows(pos_rows) - w.truth.bottomRows(pos_rows)).cwiseAbs().mean();
        Trajectory predicted;
        for (Eigen::Index k = 0; k < w.pred.cols(); ++k)
            predicted.states.push_back(unflatten<double>(w.pred.col(k), truth.front().masses, 0.0));
        r.energy = energy_drift(predicted);
    } else {
        r.energy.value = std::numeric_limits<double>::quiet_NaN();
    }
    return r;
}

}  // namespace

EvalReport evaluate_model(ModelKind kind, const std::filesystem::path& model_path,
                          const std::filesystem::path& manifest_path, const EvalConfig& config) {
    config.validate();
    const Dataset ds = read_dataset(manifest_path);
    const LoadedModel model = load_model(kind, model_path, ds.manifest, config);

    EvalReport report;
    report.model_kind = std::string(to_string(kind));
    report.model_id = (kind == ModelKind::oracle || kind == ModelKind::constant) ? report.model_kind
                                                                                  : file_fingerprint(model_path);
    report.dataset_id = file_fingerprint(manifest_path);
    report.training_size = model.training_size;
    report.dt_sample = ds.manifest.dt_sample;
    report.warmup = model.warmup;

    IntegratorConfig lyap_integrator;
    lyap_integrator.method = Method::bulirsch_stoer;
    lyap_integrator.tolerance = 1e-14;
    lyap_integrator.extended_precision = true;
    lyap_integrator.separation_floor = ds.manifest.integrator.separation_floor;
    LyapunovOptions lyap;
    lyap.horizon = config.lyapunov_horizon;
    lyap.transient = std::min(lyap.transient, 0.5 * config.lyapunov_horizon);

    report.trajectories.resize(ds.test.size());
    parallel_for(ds.test.size(), config.workers, [&](std::size_t i) {
        const Trajectory& truth = ds.test[i];
        TrajectoryResult r = score(predict(model, truth, ds.manifest, config), truth, ds.manifest.dt_sample, config);
        r.index = ds.manifest.test[i].index;
        if (config.lyapunov_horizon > 0.0) {
            try {
                r.t_lyap = estimate_lyapunov(truth.front(), lyap_integrator, lyap).lyapunov_time;
            } catch (const IntegrationError&) {
                r.t_lyap = std::numeric_limits<double>::quiet_NaN();
            }
        }
        r.normalized_horizon = lyapunov_normalized_horizon(r.horizon, r.t_lyap);
        report.trajectories[i] = std::move(r);
    });
    aggregate(report, config);
    return report;
}

}  // namespace threebody
