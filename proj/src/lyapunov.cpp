#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "threebody/integrators.hpp"

namespace threebody {

namespace {

// Draws internal steps from `budget`, shared by the whole estimate so that a
// stiff stretch cannot restart the step limit every window.
State advance_to(const State& s, double t_end, const IntegratorConfig& config, std::size_t& budget) {
    if (budget == 0) throw StepLimitExceeded("Lyapunov estimate exhausted its internal step budget", s.time);
    IntegratorConfig one_sample = config;
    one_sample.max_internal_steps = budget;
    one_sample.sample_interval = t_end - s.time;
    if (config.method != Method::bulirsch_stoer) {
        // Keep the fixed step commensurate with the inspection window.
        const double n = std::max(1.0, std::round(one_sample.sample_interval / config.step));
        one_sample.step = one_sample.sample_interval / n;
    }
    const Trajectory t = integrate(s, t_end, one_sample);
    budget -= std::min(budget, t.meta.internal_steps);
    return t.back();
}

}  // namespace

LyapunovEstimate estimate_lyapunov(const State& state, const IntegratorConfig& config,
                                   const LyapunovOptions& options) {
    if (!(options.delta0 > 0.0) || !(options.renorm_interval > 0.0) || !(options.horizon > 0.0) ||
        !(options.check_interval > 0.0) || !(options.growth_cap > 1.0) || !(options.transient >= 0.0))
        throw std::invalid_argument("invalid Lyapunov options");
    require_nonsingular(state, config.separation_floor);

    const long windows = std::max<long>(1, std::lround(options.horizon / options.renorm_interval));
    const long transient_windows =
        std::min(windows - 1, std::lround(options.transient / options.renorm_interval));
    const long checks = std::max<long>(1, std::lround(options.renorm_interval / options.check_interval));
    const double window = options.horizon / static_cast<double>(windows);
    const double check = window / static_cast<double>(checks);

    // Fixed pseudo-random unit direction in (q, v) space.
    std::mt19937_64 rng(options.direction_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd direction(state.flat_size());
    for (Eigen::Index i = 0; i < direction.size(); ++i) direction(i) = normal(rng);
    direction.normalize();

    State ref = state;
    State shadow = unflatten<double>(flatten(state) + options.delta0 * direction, state.masses, state.time);

    std::size_t budget = config.max_internal_steps;
    LyapunovEstimate out;
    double log_sum = 0.0;
    double averaged_time = 0.0;
    for (long w = 0; w < windows; ++w) {
        const bool counted = w >= transient_windows;
        for (long c = 1; c <= checks; ++c) {
            const double t_next = state.time + static_cast<double>(w) * window + static_cast<double>(c) * check;
            ref = advance_to(ref, t_next, config, budget);
            shadow = advance_to(shadow, t_next, config, budget);
            const Eigen::VectorXd gap = flatten(shadow) - flatten(ref);
            const double dist = gap.norm();
            if (!(dist > 0.0) || !std::isfinite(dist))
                throw NonFiniteState("shadow trajectory separation degenerated", t_next);
            if (c == checks || dist > options.growth_cap * options.delta0) {
                if (counted) log_sum += std::log(dist / options.delta0);
                shadow = unflatten<double>(flatten(ref) + (options.delta0 / dist) * gap, state.masses, t_next);
            }
        }
        if (counted) {
            averaged_time += window;
            out.running_lambda.push_back(log_sum / averaged_time);
        }
    }
    out.lambda_max = out.running_lambda.back();
    out.lyapunov_time = out.lambda_max > options.regular_floor ? 1.0 / out.lambda_max
                                                               : std::numeric_limits<double>::infinity();
    return out;
}

}  // namespace threebody
