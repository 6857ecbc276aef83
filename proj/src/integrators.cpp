#include "threebody/integrators.hpp"

#include <algorithm>
#include <array>
#include <vector>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace threebody {

std::string_view to_string(Method m) {
    switch (m) {
        case Method::rk4: return "rk4";
        case Method::leapfrog: return "leapfrog";
        case Method::bulirsch_stoer: return "bulirsch_stoer";
    }
    return "unknown";
}

Method method_from_string(std::string_view name) {
    if (name == "rk4") return Method::rk4;
    if (name == "leapfrog") return Method::leapfrog;
    if (name == "bulirsch_stoer") return Method::bulirsch_stoer;
    throw ConfigError("unknown integrator method '" + std::string(name) + "'");
}

void IntegratorConfig::validate() const {
    if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("integrator step must be positive");
    if (!(sample_interval > 0.0) || !std::isfinite(sample_interval))
        throw ConfigError("sample interval must be positive");
    if (method == Method::bulirsch_stoer) {
        if (!(tolerance > 0.0)) throw ConfigError("tolerance must be positive");
    } else {
        const double ratio = sample_interval / step;
        if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio) || std::round(ratio) < 1.0)
            throw ConfigError("sample interval must be an integer multiple of the fixed step");
    }
    if (max_internal_steps == 0) throw ConfigError("max_internal_steps must be at least 1");
}

double Trajectory::sample_interval() const {
    return states.size() < 2 ? 0.0 : states[1].time - states[0].time;
}

void Trajectory::validate(double separation_floor) const {
    if (states.size() < 2) throw FormatError("trajectory needs at least 2 states");
    const double dt = sample_interval();
    if (!(dt > 0.0)) throw FormatError("trajectory times are not increasing");
    const int d = states.front().dim();
    for (std::size_t k = 0; k < states.size(); ++k) {
        const State& s = states[k];
        if (s.dim() != d) throw FormatError("state " + std::to_string(k) + " changes dimension");
        if (!is_finite(s)) throw FormatError("state " + std::to_string(k) + " is not finite");
        if (!(min_separation(s) >= separation_floor))
            throw FormatError("state " + std::to_string(k) + " is singular");
        if (k > 0) {
            const double step = s.time - states[k - 1].time;
            if (!(step > 0.0) || std::abs(step - dt) > 1e-9 * dt * 10.0 + 1e-9 * std::abs(s.time))
                throw FormatError("state " + std::to_string(k) + " breaks uniform sampling");
        }
    }
}

namespace {

void require_step(double h) {
    if (!(h != 0.0) || !std::isfinite(h)) throw std::invalid_argument("step size must be finite and nonzero");
}

}  // namespace

State step_rk4(const State& state, double h, double separation_floor) {
    require_step(h);
    const auto acc = [&](const BodyMatrix<double>& q) {
        State tmp = state;
        tmp.positions = q;
        return accelerations(tmp, separation_floor);
    };
    const BodyMatrix<double>& q0 = state.positions;
    const BodyMatrix<double>& v0 = state.velocities;

    const BodyMatrix<double> a1 = acc(q0);
    const BodyMatrix<double> q2 = q0 + 0.5 * h * v0;
    const BodyMatrix<double> v2 = v0 + 0.5 * h * a1;
    const BodyMatrix<double> a2 = acc(q2);
    const BodyMatrix<double> q3 = q0 + 0.5 * h * v2;
    const BodyMatrix<double> v3 = v0 + 0.5 * h * a2;
    const BodyMatrix<double> a3 = acc(q3);
    const BodyMatrix<double> q4 = q0 + h * v3;
    const BodyMatrix<double> v4 = v0 + h * a3;
    const BodyMatrix<double> a4 = acc(q4);

    State out = state;
    out.positions = q0 + (h / 6.0) * (v0 + 2.0 * v2 + 2.0 * v3 + v4);
    out.velocities = v0 + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
    out.time = state.time + h;
    return out;
}

// Kick-drift-kick velocity Verlet.
State step_leapfrog(const State& state, double h, double separation_floor) {
    require_step(h);
    State out = state;
    out.velocities += 0.5 * h * accelerations(out, separation_floor);
    out.positions += h * out.velocities;
    out.velocities += 0.5 * h * accelerations(out, separation_floor);
    out.time = state.time + h;
    return out;
}

namespace {

constexpr int kMaxColumns = 8;
constexpr int kTargetColumn = 6;
constexpr std::array<int, kMaxColumns> kSubsteps = {2, 4, 6, 8, 10, 12, 14, 16};
constexpr double kUnderflowFraction = 1e-14;

template <typename Scalar>
using Flat = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// First-order form y = [q; v] over flattened body-major blocks.
template <typename Scalar>
class GravityRhs {
public:
    GravityRhs(const BasicState<Scalar>& prototype, Scalar floor)
        : scratch_(prototype), n_(prototype.positions.size()), floor_(floor) {}

    Flat<Scalar> operator()(const Flat<Scalar>& y) {
        scratch_.positions.reshaped() = y.head(n_);
        Flat<Scalar> dy(2 * n_);
        dy.head(n_) = y.tail(n_);
        dy.tail(n_) = accelerations(scratch_, floor_).reshaped();
        return dy;
    }

private:
    BasicState<Scalar> scratch_;
    Eigen::Index n_;
    Scalar floor_;
};

template <typename Scalar>
Flat<Scalar> modified_midpoint(GravityRhs<Scalar>& rhs, const Flat<Scalar>& y0, const Flat<Scalar>& dy0,
                               Scalar big_h, int n) {
    const Scalar h = big_h / n;
    Flat<Scalar> zm = y0;
    Flat<Scalar> zn = y0 + h * dy0;
    for (int m = 1; m < n; ++m) {
        Flat<Scalar> next = zm + Scalar(2) * h * rhs(zn);
        zm = std::move(zn);
        zn = std::move(next);
    }
    return Scalar(0.5) * (zm + zn + h * rhs(zn));
}

template <typename Scalar>
struct BsResult {
    BasicState<Scalar> state;
    Scalar h_next;
};

// `underflow_ref` sets the StepUnderflow floor (kUnderflowFraction * ref).
template <typename Scalar>
BsResult<Scalar> bs_step(const BasicState<Scalar>& state, Scalar h_target, Scalar tol, Scalar separation_floor,
                         Scalar underflow_ref) {
    using std::abs;
    using std::pow;
    GravityRhs<Scalar> rhs(state, separation_floor);
    const Flat<Scalar> y0 = flatten(state);
    const Flat<Scalar> scale = (Scalar(1) + y0.array().abs()).matrix();
    const Scalar floor_h = Scalar(kUnderflowFraction) * abs(underflow_ref);

    Scalar h = h_target;
    bool start_ok = true;
    Flat<Scalar> dy0;
    try {
        dy0 = rhs(y0);
    } catch (const IntegrationError&) {
        start_ok = false;
    }

    std::vector<Flat<Scalar>> prev, row;
    for (;;) {
        if (abs(h) < floor_h)
            throw StepUnderflow("Bulirsch-Stoer step fell below " + format_real(static_cast<double>(floor_h)),
                                static_cast<double>(state.time));
        if (!start_ok) {
            h *= Scalar(0.25);
            continue;
        }

        bool accepted = false;
        Scalar err = std::numeric_limits<Scalar>::infinity();
        int column = 0;
        Flat<Scalar> best;
        prev.clear();
        try {
            for (int k = 0; k < kMaxColumns; ++k) {
                row.assign(static_cast<std::size_t>(k) + 1, Flat<Scalar>());
                row[0] = modified_midpoint(rhs, y0, dy0, h, kSubsteps[k]);
                // Polynomial extrapolation in h^2 (Neville).
                for (int j = 1; j <= k; ++j) {
                    const Scalar ratio = Scalar(kSubsteps[k]) / Scalar(kSubsteps[k - j]);
                    row[j] = row[j - 1] + (row[j - 1] - prev[j - 1]) / (ratio * ratio - Scalar(1));
                }
                if (k >= 1) {
                    err = ((row[k] - row[k - 1]).array().abs() / scale.array()).maxCoeff();
                    if (!std::isfinite(static_cast<double>(err))) break;
                    if (k + 1 >= kTargetColumn && err <= tol) {
                        accepted = true;
                        column = k + 1;
                        best = std::move(row[k]);
                        break;
                    }
                }
                prev.swap(row);
            }
        } catch (const IntegrationError&) {
            err = std::numeric_limits<Scalar>::infinity();
        }

        if (accepted && best.allFinite()) {
            const int order = 2 * column - 1;
            Scalar factor = Scalar(0.9) * pow(tol / std::max(err, std::numeric_limits<Scalar>::min()),
                                              Scalar(1) / Scalar(order));
            factor = std::clamp(factor, Scalar(0.2), Scalar(4));
            if (column > kTargetColumn) factor = std::min(factor, Scalar(1));
            BasicState<Scalar> out = state;
            const Eigen::Index n = state.positions.size();
            out.positions.reshaped() = best.head(n);
            out.velocities.reshaped() = best.tail(n);
            out.time = state.time + h;
            return {out, h * factor};
        }

        Scalar shrink = Scalar(0.25);
        if (std::isfinite(static_cast<double>(err)) && err > Scalar(0))
            shrink = std::clamp(Scalar(0.9) * pow(tol / err, Scalar(1) / Scalar(2 * kMaxColumns - 1)), Scalar(0.1),
                                Scalar(0.5));
        h *= shrink;
    }
}

// Adaptive stepping that lands exactly on every sample time. The working
// state stays in `Scalar` between samples; only the samples are rounded.
template <typename Scalar>
void integrate_bs(Trajectory& traj, const State& start, long intervals, double interval,
                  const IntegratorConfig& config) {
    BasicState<Scalar> cur = state_cast<Scalar>(start);
    const Scalar t0 = cur.time;
    const Scalar tol = static_cast<Scalar>(config.tolerance);
    const Scalar floor = static_cast<Scalar>(config.separation_floor);
    const Scalar dt = static_cast<Scalar>(interval);
    Scalar h = std::min(static_cast<Scalar>(config.step), dt);
    for (long k = 1; k <= intervals; ++k) {
        const Scalar target = t0 + Scalar(k) * dt;
        std::size_t steps_here = 0;
        while (target - cur.time > Scalar(1e-12) * dt) {
            if (++steps_here > config.max_internal_steps)
                throw StepLimitExceeded("too many internal steps within one sample interval",
                                        static_cast<double>(cur.time));
            const Scalar remaining = target - cur.time;
            const bool clipped = h >= remaining;
            const Scalar attempt = clipped ? remaining : h;
            BsResult<Scalar> r = bs_step<Scalar>(cur, attempt, tol, floor, dt);
            const Scalar taken = r.state.time - cur.time;
            cur = std::move(r.state);
            h = (clipped && taken == attempt) ? std::max(h, r.h_next) : r.h_next;
        }
        traj.meta.internal_steps += steps_here;
        cur.time = target;
        State sample = state_cast<double>(cur);
        sample.time = start.time + static_cast<double>(k) * interval;
        traj.states.push_back(std::move(sample));
    }
}

}  // namespace

BsStep step_bulirsch_stoer(const State& state, double h_target, double tol, double separation_floor) {
    require_step(h_target);
    if (!(tol > 0.0)) throw std::invalid_argument("tolerance must be positive");
    BsResult<double> r = bs_step<double>(state, h_target, tol, separation_floor, h_target);
    return {std::move(r.state), r.h_next};
}

Trajectory integrate(const State& state, double t_end, const IntegratorConfig& config) {
    config.validate();
    if (!(t_end > state.time)) throw std::invalid_argument("t_end must exceed the start time");
    require_nonsingular(state, config.separation_floor);

    const double t0 = state.time;
    const double span = t_end - t0;
    const long intervals = std::max<long>(1, std::lround(span / config.sample_interval));
    const double interval = span / static_cast<double>(intervals);

    Trajectory traj;
    traj.meta.integrator = std::string(to_string(config.method));
    traj.meta.tolerance = config.method == Method::bulirsch_stoer ? config.tolerance : 0.0;
    traj.meta.step = config.step;
    traj.states.reserve(static_cast<std::size_t>(intervals) + 1);
    traj.states.push_back(state);

    State cur = state;
    std::size_t total_steps = 0;

    if (config.method != Method::bulirsch_stoer) {
        const long substeps = std::max<long>(1, std::lround(interval / config.step));
        if (static_cast<std::size_t>(substeps) > config.max_internal_steps)
            throw StepLimitExceeded("fixed step needs more internal steps per sample than allowed", t0);
        const double h = interval / static_cast<double>(substeps);
        for (long k = 1; k <= intervals; ++k) {
            for (long s = 0; s < substeps; ++s) {
                cur = config.method == Method::rk4 ? step_rk4(cur, h, config.separation_floor)
                                                   : step_leapfrog(cur, h, config.separation_floor);
            }
            total_steps += static_cast<std::size_t>(substeps);
            cur.time = t0 + static_cast<double>(k) * interval;
            traj.states.push_back(cur);
        }
    } else if (config.extended_precision) {
        integrate_bs<long double>(traj, state, intervals, interval, config);
        total_steps = traj.meta.internal_steps;
    } else {
        integrate_bs<double>(traj, state, intervals, interval, config);
        total_steps = traj.meta.internal_steps;
    }
    traj.meta.internal_steps = total_steps;
    return traj;
}

NotConverged::NotConverged(Trajectory loose, Trajectory tight, double divergence_time, double discrepancy)
    : Error("solutions at tol and tol/10 diverge at t = " + format_real(divergence_time) +
            " (max position discrepancy " + format_real(discrepancy) + ")"),
      loose_(std::move(loose)),
      tight_(std::move(tight)),
      divergence_time_(divergence_time),
      discrepancy_(discrepancy) {}

Trajectory converged_integrate(const State& state, double t_end, const IntegratorConfig& config,
                               double threshold) {
    if (config.method != Method::bulirsch_stoer)
        throw std::invalid_argument("converged_integrate requires the bulirsch_stoer method");
    Trajectory loose = integrate(state, t_end, config);
    IntegratorConfig tighter = config;
    tighter.tolerance = config.tolerance / 10.0;
    Trajectory tight = integrate(state, t_end, tighter);

    double worst = 0.0;
    double divergence = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t k = 0; k < tight.size(); ++k) {
        const double gap = max_position_distance(loose.states[k], tight.states[k]);
        worst = std::max(worst, gap);
        if (gap > threshold && std::isnan(divergence)) divergence = tight.states[k].time;
    }
    if (!std::isnan(divergence)) throw NotConverged(std::move(loose), std::move(tight), divergence, worst);
    tight.meta.converged = true;
    return tight;
}

Trajectory rollout_field(const CanonicalField& field, const State& initial, std::size_t n_steps, double dt,
                         std::size_t substeps) {
    require_step(dt);
    if (substeps == 0) throw std::invalid_argument("substeps must be at least 1");
    Trajectory traj;
    traj.meta.integrator = "rk4_field";
    traj.meta.step = dt / static_cast<double>(substeps);
    traj.states.reserve(n_steps + 1);
    traj.states.push_back(initial);

    const double h = dt / static_cast<double>(substeps);
    Eigen::VectorXd y = to_canonical(initial);
    for (std::size_t k = 1; k <= n_steps; ++k) {
        for (std::size_t s = 0; s < substeps; ++s) {
            const Eigen::VectorXd k1 = field(y);
            const Eigen::VectorXd k2 = field(y + 0.5 * h * k1);
            const Eigen::VectorXd k3 = field(y + 0.5 * h * k2);
            const Eigen::VectorXd k4 = field(y + h * k3);
            y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        const double t = initial.time + static_cast<double>(k) * dt;
        if (!y.allFinite()) throw NonFiniteState("learned field produced a non-finite state", t);
        traj.states.push_back(from_canonical<double>(y, initial.masses, t));
        ++traj.meta.internal_steps;
    }
    traj.meta.internal_steps *= substeps;
    return traj;
}

}  // namespace threebody
