#include "threebody/esn.hpp"

#include <complex>
#include <optional>
#include <random>

#include "threebody/json_io.hpp"

namespace threebody {

namespace {

constexpr int kPowerIterationCap = 10'000;
constexpr int kBlockSize = 16;
constexpr int kBlockIterationCap = 10'000;
constexpr int kStagnationWindow = 2'000;
constexpr double kResidualTol = 1e-11;
constexpr int kReservoirAttempts = 100;
constexpr double kTanhClip = 1.0 - 1e-6;
constexpr int kEsnFileVersion = 1;

struct RadiusFit {
    double estimate;
    double residual;
};

// One power-iteration probe from unit vector x: tries both recurrence fits
// and keeps the better-determined one.
RadiusFit fit_radius(const Eigen::VectorXd& x, const Eigen::VectorXd& u1, const Eigen::VectorXd& u2) {
    const double n1 = u1.norm();
    const double lambda = x.dot(u1);
    RadiusFit one{std::abs(lambda), (u1 - lambda * x).norm() / n1};
    if (one.residual <= kResidualTol) return one;

    Eigen::Matrix<double, Eigen::Dynamic, 2> basis(x.size(), 2);
    basis.col(0) = u1;
    basis.col(1) = x;
    const Eigen::ColPivHouseholderQR<Eigen::Matrix<double, Eigen::Dynamic, 2>> qr(basis);
    const auto& r = qr.matrixR();
    if (std::abs(r(1, 1)) <= 1e-8 * std::abs(r(0, 0))) return one;
    const Eigen::Vector2d ab = qr.solve(-u2);
    const double a = ab(0), b = ab(1);
    const double scale = u2.norm() + std::abs(a) * n1 + std::abs(b);
    const double residual = (u2 + a * u1 + b * x).norm() / scale;
    const std::complex<double> disc = std::sqrt(std::complex<double>(a * a - 4.0 * b, 0.0));
    const double modulus = std::max(std::abs((-a + disc) / 2.0), std::abs((-a - disc) / 2.0));
    RadiusFit two{modulus, residual};
    return two.residual < one.residual ? two : one;
}

// Subspace iteration with Rayleigh-Ritz for matrices whose leading moduli are
// too close for a single vector; converges like |lambda_{k+1} / lambda_1|.
template <typename Apply>
std::optional<double> block_radius(Eigen::Index n, Apply&& apply, std::mt19937_64& rng) {
    const Eigen::Index k = std::min<Eigen::Index>(n, kBlockSize);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd q(n, k);
    for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = normal(rng);
    const auto orthonormal = [&](const Eigen::MatrixXd& m) {
        const Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
        return Eigen::MatrixXd(qr.householderQ() * Eigen::MatrixXd::Identity(n, k));
    };
    q = orthonormal(q);
    double previous = std::numeric_limits<double>::quiet_NaN();
    for (int it = 0; it < kBlockIterationCap; ++it) {
        Eigen::MatrixXd z(n, k);
        for (Eigen::Index j = 0; j < k; ++j) z.col(j) = apply(Eigen::VectorXd(q.col(j)));
        const Eigen::MatrixXd h = q.transpose() * z;
        const Eigen::EigenSolver<Eigen::MatrixXd> es(h);
        Eigen::Index top = 0;
        es.eigenvalues().cwiseAbs().maxCoeff(&top);
        const std::complex<double> theta = es.eigenvalues()(top);
        const double estimate = std::abs(theta);
        if (estimate == 0.0) return 0.0;
        const Eigen::VectorXcd y = es.eigenvectors().col(top);
        const Eigen::VectorXcd qy = q.cast<std::complex<double>>() * y;
        const double residual = (z.cast<std::complex<double>>() * y - theta * qy).norm() / (estimate * qy.norm());
        if (residual <= kResidualTol && std::abs(estimate - previous) <= 1e-12 * estimate) return estimate;
        previous = estimate;
        q = orthonormal(z);
    }
    return std::nullopt;
}

template <typename Apply>
double power_radius(Eigen::Index n, Apply&& apply) {
    if (n == 0) throw std::invalid_argument("spectral radius of an empty matrix");
    std::mt19937_64 rng(0x243F6A8885A308D3ULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto fresh = [&] {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
        return Eigen::VectorXd(v.normalized());
    };

    Eigen::VectorXd x = fresh();
    RadiusFit best{std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::infinity()};
    double window_start_residual = best.residual;
    double previous = std::numeric_limits<double>::quiet_NaN();
    int since_window = 0;
    for (int it = 0; it < kPowerIterationCap; ++it) {
        Eigen::VectorXd u1 = apply(x);
        const double n1 = u1.norm();
        if (n1 == 0.0) return 0.0;
        const Eigen::VectorXd u2 = apply(u1);
        if (u2.norm() == 0.0) return 0.0;
        const RadiusFit fit = fit_radius(x, u1, u2);
        if (fit.residual < best.residual) best = fit;
        if (fit.residual <= kResidualTol && std::abs(fit.estimate - previous) <= 1e-12 * fit.estimate)
            return fit.estimate;
        previous = fit.estimate;
        x = u1 / n1;
        if (++since_window == kStagnationWindow) {
            if (!(best.residual < 0.5 * window_start_residual)) x = fresh();
            window_start_residual = best.residual;
            since_window = 0;
        }
    }
    if (best.residual <= kResidualTol) return best.estimate;
    if (const auto block = block_radius(n, apply, rng)) return *block;
    throw NoConvergence("power and subspace iteration did not converge (best residual " + format_real(best.residual) + ")",
                        best.estimate);
}

double uniform_sym(std::mt19937_64& rng, double scale) {
    return std::uniform_real_distribution<double>(-scale, scale)(rng);
}

}  // namespace

std::string_view to_string(ReadoutActivation a) { return a == ReadoutActivation::identity ? "identity" : "tanh"; }

ReadoutActivation readout_activation_from_string(std::string_view s) {
    if (s == "identity") return ReadoutActivation::identity;
    if (s == "tanh") return ReadoutActivation::tanh;
    throw ConfigError("unknown readout activation '" + std::string(s) + "'");
}

void EsnConfig::validate() const {
    if (reservoir_size < 1) throw ConfigError("reservoir_size must be at least 1");
    if (!(density > 0.0 && density <= 1.0)) throw ConfigError("density must be in (0, 1]");
    if (!(spectral_radius > 0.0) || !std::isfinite(spectral_radius))
        throw ConfigError("spectral_radius must be positive");
    if (!(input_scale >= 0.0) || !std::isfinite(input_scale)) throw ConfigError("input_scale must be non-negative");
    if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw ConfigError("ridge must be non-negative");
    if (!(leak > 0.0 && leak <= 1.0)) throw ConfigError("leak must be in (0, 1]");
}

double spectral_radius(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols()) throw DimensionMismatch("spectral radius needs a square matrix");
    return power_radius(m.rows(), [&](const Eigen::VectorXd& v) { return Eigen::VectorXd(m * v); });
}

double spectral_radius(const SparseMatrixd& m) {
    if (m.rows() != m.cols()) throw DimensionMismatch("spectral radius needs a square matrix");
    return power_radius(m.rows(), [&](const Eigen::VectorXd& v) { return Eigen::VectorXd(m * v); });
}

EsnModel init_reservoir(const EsnConfig& config, int input_dim) {
    config.validate();
    if (input_dim < 1) throw DimensionMismatch("input dimension must be at least 1");
    const int n = config.reservoir_size;
    std::mt19937_64 rng(config.seed);
    std::bernoulli_distribution keep(config.density);

    EsnModel model;
    model.config = config;
    model.input_dim = input_dim;
    for (int attempt = 0; attempt < kReservoirAttempts; ++attempt) {
        std::vector<Eigen::Triplet<double>> entries;
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i)
                if (keep(rng)) entries.emplace_back(i, j, uniform_sym(rng, 1.0));
        SparseMatrixd w(n, n);
        w.setFromTriplets(entries.begin(), entries.end());
        const double rho = spectral_radius(w);
        if (rho == 0.0) continue;
        model.w = w * (config.spectral_radius / rho);
        model.achieved_radius = spectral_radius(model.w);
        model.w_in.resize(n, input_dim);
        for (int j = 0; j < input_dim; ++j)
            for (int i = 0; i < n; ++i) model.w_in(i, j) = uniform_sym(rng, config.input_scale);
        return model;
    }
    throw DegenerateReservoir("reservoir had zero spectral radius in " + std::to_string(kReservoirAttempts) +
                              " draws; increase density or size");
}

Eigen::VectorXd advance(const EsnModel& model, const Eigen::VectorXd& h_prev, const Eigen::VectorXd& x) {
    if (h_prev.size() != model.reservoir_size() || x.size() != model.input_dim)
        throw DimensionMismatch("reservoir state or input has the wrong length");
    const Eigen::VectorXd pre = model.w * h_prev + model.w_in * x;
    const double a = model.config.leak;
    if (a == 1.0) return pre.array().tanh();
    return (1.0 - a) * h_prev + a * pre.array().tanh().matrix();
}

Eigen::VectorXd readout(const EsnModel& model, const Eigen::VectorXd& h) {
    if (!model.trained()) throw Untrained("ESN readout has not been fitted");
    Eigen::VectorXd y = model.w_out * h;
    if (model.config.readout == ReadoutActivation::tanh) y = y.array().tanh();
    return y;
}

EsnModel fit_readout(EsnModel model, const std::vector<Eigen::MatrixXd>& inputs,
                     const std::vector<Eigen::MatrixXd>& targets) {
    if (inputs.empty()) throw EmptyBatch("fit_readout needs at least one sequence");
    if (inputs.size() != targets.size()) throw LengthMismatch("input and target sequence counts differ");
    const std::size_t washout = model.config.washout;
    Eigen::Index samples = 0;
    for (std::size_t s = 0; s < inputs.size(); ++s) {
        if (inputs[s].cols() != targets[s].cols())
            throw LengthMismatch("sequence " + std::to_string(s) + ": input and target lengths differ");
        if (inputs[s].rows() != model.input_dim || targets[s].rows() != model.input_dim)
            throw DimensionMismatch("sequence " + std::to_string(s) + " has the wrong state width");
        if (static_cast<std::size_t>(inputs[s].cols()) <= washout)
            throw LengthMismatch("sequence " + std::to_string(s) + " is not longer than the washout");
        samples += inputs[s].cols() - static_cast<Eigen::Index>(washout);
    }

    const int n = model.reservoir_size();
    Eigen::MatrixXd states(n, samples);
    Eigen::MatrixXd wanted(model.input_dim, samples);
    Eigen::Index at = 0;
    for (std::size_t s = 0; s < inputs.size(); ++s) {
        Eigen::VectorXd h = Eigen::VectorXd::Zero(n);
        for (Eigen::Index k = 0; k < inputs[s].cols(); ++k) {
            h = advance(model, h, inputs[s].col(k));
            if (static_cast<std::size_t>(k) < washout) continue;
            states.col(at) = h;
            wanted.col(at) = targets[s].col(k);
            ++at;
        }
    }
    Eigen::MatrixXd fit_targets = wanted;
    if (model.config.readout == ReadoutActivation::tanh)
        fit_targets = wanted.array().max(-kTanhClip).min(kTanhClip).atanh();

    Eigen::MatrixXd w_out_t;
    if (model.config.ridge > 0.0) {
        Eigen::MatrixXd normal = states * states.transpose();
        normal.diagonal().array() += model.config.ridge;
        const Eigen::LLT<Eigen::MatrixXd> llt(normal);
        if (llt.info() != Eigen::Success) throw IllConditioned("regularized normal matrix is not positive definite");
        w_out_t = llt.solve(states * fit_targets.transpose());
    } else {
        w_out_t = states.transpose().completeOrthogonalDecomposition().solve(fit_targets.transpose());
    }
    if (!w_out_t.allFinite()) throw IllConditioned("readout solve produced non-finite weights");
    model.w_out = w_out_t.transpose();

    Eigen::MatrixXd predicted = model.w_out * states;
    if (model.config.readout == ReadoutActivation::tanh) predicted = predicted.array().tanh();
    model.training_mse = (predicted - wanted).array().square().mean();
    return model;
}

EsnModel fit_readout(EsnModel model, const std::vector<Trajectory>& trajectories) {
    std::vector<Eigen::MatrixXd> inputs, targets;
    for (const auto& traj : trajectories) {
        const Eigen::Index n = static_cast<Eigen::Index>(traj.size());
        if (n < 2) throw LengthMismatch("trajectory needs at least 2 states");
        Eigen::MatrixXd flat(traj.front().flat_size(), n);
        for (Eigen::Index k = 0; k < n; ++k) flat.col(k) = flatten(traj.states[static_cast<std::size_t>(k)]);
        inputs.push_back(flat.leftCols(n - 1));
        targets.push_back(flat.rightCols(n - 1));
    }
    model = fit_readout(std::move(model), inputs, targets);
    model.training_size = trajectories.size();
    return model;
}

Eigen::MatrixXd forecast(const EsnModel& model, const Eigen::MatrixXd& warmup, std::size_t n_steps) {
    if (!model.trained()) throw Untrained("ESN readout has not been fitted");
    if (warmup.rows() != model.input_dim) throw DimensionMismatch("warmup states have the wrong width");
    if (warmup.cols() < 1 || static_cast<std::size_t>(warmup.cols()) < model.config.washout)
        throw LengthMismatch("warmup must cover the washout");
    Eigen::MatrixXd out(model.input_dim, static_cast<Eigen::Index>(n_steps));
    if (n_steps == 0) return out;
    Eigen::VectorXd h = Eigen::VectorXd::Zero(model.reservoir_size());
    for (Eigen::Index k = 0; k < warmup.cols(); ++k) h = advance(model, h, warmup.col(k));
    Eigen::VectorXd y = readout(model, h);
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        out.col(j) = y;
        if (j + 1 < out.cols()) {
            h = advance(model, h, y);
            y = readout(model, h);
        }
    }
    return out;
}

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
    std::vector<double> data(static_cast<std::size_t>(m.size()));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(data.data(), m.rows(),
                                                                                        m.cols()) = m;
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"row_major", data}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    auto data = j.at("row_major").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw FormatError("matrix data has the wrong length");
    return Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(data.data(), rows,
                                                                                               cols);
}

}  // namespace

void save_esn(const EsnModel& model, const std::filesystem::path& path) {
    json coo{{"rows", model.w.rows()}, {"cols", model.w.cols()}};
    std::vector<Eigen::Index> ri, ci;
    std::vector<double> vals;
    for (int k = 0; k < model.w.outerSize(); ++k)
        for (SparseMatrixd::InnerIterator it(model.w, k); it; ++it) {
            ri.push_back(it.row());
            ci.push_back(it.col());
            vals.push_back(it.value());
        }
    coo["row"] = ri;
    coo["col"] = ci;
    coo["value"] = vals;
    const EsnConfig& c = model.config;
    json j{{"model", "esn"},
           {"version", kEsnFileVersion},
           {"config",
            {{"reservoir_size", c.reservoir_size},
             {"density", c.density},
             {"spectral_radius", c.spectral_radius},
             {"input_scale", c.input_scale},
             {"ridge", c.ridge},
             {"washout", c.washout},
             {"leak", c.leak},
             {"readout", std::string(to_string(c.readout))},
             {"seed", c.seed}}},
           {"input_dim", model.input_dim},
           {"achieved_radius", model.achieved_radius},
           {"training_mse", number_or_null(model.training_mse)},
           {"training_size", model.training_size},
           {"w_in", matrix_to_json(model.w_in)},
           {"w", coo},
           {"w_out", matrix_to_json(model.w_out)}};
    write_json_file(j, path);
}

EsnModel load_esn(const std::filesystem::path& path) {
    const json j = read_json_file(path);
    if (j.value("model", "") != "esn") throw FormatError(path.string() + ": not an ESN model file");
    if (j.value("version", 0) != kEsnFileVersion)
        throw VersionMismatch(path.string() + ": ESN file version " + std::to_string(j.value("version", 0)) +
                              ", expected " + std::to_string(kEsnFileVersion));
    try {
        EsnModel m;
        const json& c = j.at("config");
        m.config.reservoir_size = c.at("reservoir_size").get<int>();
        m.config.density = c.at("density").get<double>();
        m.config.spectral_radius = c.at("spectral_radius").get<double>();
        m.config.input_scale = c.at("input_scale").get<double>();
        m.config.ridge = c.at("ridge").get<double>();
        m.config.washout = c.at("washout").get<std::size_t>();
        m.config.leak = c.at("leak").get<double>();
        m.config.readout = readout_activation_from_string(c.at("readout").get<std::string>());
        m.config.seed = c.at("seed").get<std::uint64_t>();
        m.input_dim = j.at("input_dim").get<int>();
        m.achieved_radius = j.at("achieved_radius").get<double>();
        m.training_mse = number_or(j.at("training_mse"), std::numeric_limits<double>::quiet_NaN());
        m.training_size = j.value("training_size", std::size_t{0});
        m.w_in = matrix_from_json(j.at("w_in"));
        m.w_out = matrix_from_json(j.at("w_out"));
        const json& coo = j.at("w");
        const auto ri = coo.at("row").get<std::vector<int>>();
        const auto ci = coo.at("col").get<std::vector<int>>();
        const auto vals = coo.at("value").get<std::vector<double>>();
        if (ri.size() != ci.size() || ri.size() != vals.size()) throw FormatError("sparse arrays differ in length");
        std::vector<Eigen::Triplet<double>> entries;
        for (std::size_t k = 0; k < vals.size(); ++k) entries.emplace_back(ri[k], ci[k], vals[k]);
        m.w.resize(coo.at("rows").get<Eigen::Index>(), coo.at("cols").get<Eigen::Index>());
        m.w.setFromTriplets(entries.begin(), entries.end());
        m.config.validate();
        if (m.w_in.rows() != m.w.rows() || m.w_in.cols() != m.input_dim ||
            (m.w_out.size() > 0 && (m.w_out.rows() != m.input_dim || m.w_out.cols() != m.w.rows())))
            throw FormatError("matrix shapes are inconsistent");
        return m;
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    } catch (const Error& e) {
        if (dynamic_cast<const FormatError*>(&e)) throw FormatError(path.string() + ": " + e.what());
        throw;
    }
}

}  // namespace threebody
