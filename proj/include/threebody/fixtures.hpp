#pragma once

#include <cmath>
#include <numbers>

#include "threebody/dynamics.hpp"

namespace threebody::fixtures {

// Equal-mass figure-eight choreography (Moore 1993; Chenciner & Montgomery
// 2000) with the widely tabulated Simo coordinates. The period constant is
// re-checked by the periodicity tests rather than trusted.
inline constexpr double kFigureEightPeriod = 6.32591398;

inline State figure_eight() {
    State s(2);
    s.positions.col(0) << 0.97000436, -0.24308753;
    s.positions.col(1) << -0.97000436, 0.24308753;
    s.positions.col(2) << 0.0, 0.0;
    s.velocities.col(2) << -0.93240737, -0.86473146;
    s.velocities.col(0) = -0.5 * s.velocities.col(2);
    s.velocities.col(1) = -0.5 * s.velocities.col(2);
    s.masses << 1.0, 1.0, 1.0;
    return s;
}

// Two unit masses on a circular orbit of separation `separation` about the
// origin, plus a zero-mass test particle parked far away at rest.
struct CircularBinary {
    double separation = 1.0;
    double far_distance = 1e6;

    double angular_rate() const { return std::sqrt(2.0 / (separation * separation * separation)); }
    double period() const { return 2.0 * std::numbers::pi / angular_rate(); }

    State initial(int dim = 2) const { return at(0.0, dim); }

    // Exact positions/velocities of the binary at time t (the test particle
    // is left at its initial position; it is not part of the analytic solution).
    State at(double t, int dim = 2) const {
        const double r = 0.5 * separation;
        const double w = angular_rate();
        const double c = std::cos(w * t), s = std::sin(w * t);
        State st(dim);
        st.positions(0, 0) = r * c;
        st.positions(1, 0) = r * s;
        st.positions(0, 1) = -r * c;
        st.positions(1, 1) = -r * s;
        st.positions(0, 2) = far_distance;
        st.velocities(0, 0) = -r * w * s;
        st.velocities(1, 0) = r * w * c;
        st.velocities(0, 1) = r * w * s;
        st.velocities(1, 1) = -r * w * c;
        st.masses << 1.0, 1.0, 0.0;
        st.time = t;
        return st;
    }
};

// Tight inner binary with a distant circular-ish outer companion.
inline State hierarchical_triple(int dim = 2) {
    State s(dim);
    const double inner = 0.2;
    const double outer = 3.0;
    const double w_in = std::sqrt(2.0 / (inner * inner * inner));
    s.positions(0, 0) = 0.5 * inner;
    s.positions(0, 1) = -0.5 * inner;
    s.velocities(1, 0) = 0.5 * inner * w_in;
    s.velocities(1, 1) = -0.5 * inner * w_in;
    s.positions(0, 2) = outer;
    s.velocities(1, 2) = std::sqrt(3.0 / outer);
    s.masses << 1.0, 1.0, 1.0;
    return recenter_to_com(s);
}

}  // namespace threebody::fixtures
