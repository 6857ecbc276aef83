#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "threebody/dynamics.hpp"

namespace threebody {

enum class Method { rk4, leapfrog, bulirsch_stoer };

std::string_view to_string(Method m);
Method method_from_string(std::string_view name);

struct IntegratorConfig {
    Method method = Method::bulirsch_stoer;
    // Fixed step for rk4/leapfrog; initial step guess for bulirsch_stoer.
    double step = 1e-2;
    // Local extrapolation tolerance (bulirsch_stoer only).
    double tolerance = 1e-12;
    double sample_interval = 0.1;
    std::size_t max_internal_steps = 1'000'000;
    double separation_floor = kDefaultSeparationFloor;
    // bulirsch_stoer only: carry the working state in long double.
    bool extended_precision = false;

    void validate() const;
};

struct TrajectoryMeta {
    std::string integrator;
    double tolerance = 0.0;
    double step = 0.0;
    std::uint64_t seed = 0;
    bool converged = false;
    std::size_t internal_steps = 0;

    bool operator==(const TrajectoryMeta&) const = default;
};

struct Trajectory {
    std::vector<State> states;
    TrajectoryMeta meta;

    std::size_t size() const { return states.size(); }
    const State& front() const { return states.front(); }
    const State& back() const { return states.back(); }
    double sample_interval() const;
    int dim() const { return states.empty() ? 0 : states.front().dim(); }

    // Throws FormatError naming the first violated invariant.
    void validate(double separation_floor = kDefaultSeparationFloor) const;

    bool operator==(const Trajectory&) const = default;
};

State step_rk4(const State& state, double h, double separation_floor = kDefaultSeparationFloor);
State step_leapfrog(const State& state, double h, double separation_floor = kDefaultSeparationFloor);

struct BsStep {
    State state;
    double h_next;
};

// One accepted Gragg-Bulirsch-Stoer step of at most h_target. Trial substeps
// that hit a singular configuration are retried with a smaller step; once the
// step drops below 1e-14 * h_target the step fails with StepUnderflow.
BsStep step_bulirsch_stoer(const State& state, double h_target, double tol,
                           double separation_floor = kDefaultSeparationFloor);

// Uniformly sampled solution from state.time to t_end. The span is cut into
// max(1, round(span / sample_interval)) equal intervals whose endpoints are
// hit exactly.
Trajectory integrate(const State& state, double t_end, const IntegratorConfig& config);

// Integrates at tol and tol/10 and certifies agreement of positions at every
// sample to within `threshold`. Returns the tighter solution with
// meta.converged = true, or throws NotConverged.
Trajectory converged_integrate(const State& state, double t_end, const IntegratorConfig& config,
                               double threshold = 1e-6);

class NotConverged : public Error {
public:
    NotConverged(Trajectory loose, Trajectory tight, double divergence_time, double discrepancy);
    const Trajectory& loose() const noexcept { return loose_; }
    const Trajectory& tight() const noexcept { return tight_; }
    double divergence_time() const noexcept { return divergence_time_; }
    double max_discrepancy() const noexcept { return discrepancy_; }
    const char* kind() const noexcept override { return "NotConverged"; }

private:
    Trajectory loose_;
    Trajectory tight_;
    double divergence_time_;
    double discrepancy_;
};

// Integrates an arbitrary canonical field (q, p) -> (dq/dt, dp/dt) with
// classic RK4. Used for learned Hamiltonian fields and, with the true field,
// to validate that machinery against integrate().
using CanonicalField = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

Trajectory rollout_field(const CanonicalField& field, const State& initial, std::size_t n_steps, double dt,
                         std::size_t substeps = 1);

struct LyapunovOptions {
    double delta0 = 1e-8;
    // Longest stretch between renormalizations.
    double renorm_interval = 1.0;
    double horizon = 100.0;
    double regular_floor = 1e-3;
    // Leading time (whole renormalization windows) excluded from the average
    // while the offset aligns with the dominant direction.
    double transient = 10.0;
    // The offset is inspected every check_interval and renormalized early once
    // it has grown by more than growth_cap, keeping it in the linear regime.
    double check_interval = 0.1;
    double growth_cap = 1e3;
    std::uint64_t direction_seed = 12345;
};

struct LyapunovEstimate {
    double lambda_max = 0.0;
    // +inf when lambda_max <= regular_floor.
    double lyapunov_time = 0.0;
    // Estimate after each completed renormalization window past the transient.
    std::vector<double> running_lambda;
};

// Benettin two-trajectory estimate of the largest Lyapunov exponent in the
// (q, v) phase space with Euclidean distance.
LyapunovEstimate estimate_lyapunov(const State& state, const IntegratorConfig& config,
                                   const LyapunovOptions& options = {});

}  // namespace threebody
