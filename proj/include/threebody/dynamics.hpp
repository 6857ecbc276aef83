#pragma once

// Three-body Newtonian gravity in N-body units (G = 1).
//
// A state stores one column per body in d x 3 matrices (d = 2 or 3), so the
// column-major storage is already the body-major flattening used by the
// learners: [q1, q2, q3] followed by [v1, v2, v3].

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

#include "threebody/errors.hpp"

namespace threebody {

inline constexpr int kBodies = 3;
inline constexpr double kDefaultSeparationFloor = 1e-12;

template <typename Scalar>
using BodyMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, kBodies, Eigen::ColMajor, 3, kBodies>;

template <typename Scalar>
using SpaceVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1, Eigen::ColMajor, 3, 1>;

template <typename Scalar>
using MassVector = Eigen::Matrix<Scalar, kBodies, 1>;

template <typename Scalar>
struct BasicState {
    BodyMatrix<Scalar> positions;
    BodyMatrix<Scalar> velocities;
    MassVector<Scalar> masses = MassVector<Scalar>::Ones();
    Scalar time{0};

    BasicState() = default;
    explicit BasicState(int dim)
        : positions(BodyMatrix<Scalar>::Zero(dim, kBodies)),
          velocities(BodyMatrix<Scalar>::Zero(dim, kBodies)) {}

    int dim() const { return static_cast<int>(positions.rows()); }
    int flat_size() const { return 2 * kBodies * dim(); }

    friend bool operator==(const BasicState& a, const BasicState& b) {
        return a.dim() == b.dim() && a.positions == b.positions && a.velocities == b.velocities &&
               a.masses == b.masses && a.time == b.time;
    }
};

template <typename Scalar>
struct BasicPhaseDerivative {
    BodyMatrix<Scalar> dq_dt;
    BodyMatrix<Scalar> dp_dt;
};

using State = BasicState<double>;
using PhaseDerivative = BasicPhaseDerivative<double>;

template <typename To, typename From>
BasicState<To> state_cast(const BasicState<From>& s) {
    BasicState<To> out;
    out.positions = s.positions.template cast<To>();
    out.velocities = s.velocities.template cast<To>();
    out.masses = s.masses.template cast<To>();
    out.time = static_cast<To>(s.time);
    return out;
}

template <typename Scalar>
Scalar min_separation(const BasicState<Scalar>& state) {
    using std::sqrt;
    Scalar best = std::numeric_limits<Scalar>::infinity();
    for (int i = 0; i < kBodies; ++i)
        for (int j = i + 1; j < kBodies; ++j)
            best = std::min<Scalar>(best, (state.positions.col(i) - state.positions.col(j)).norm());
    return best;
}

template <typename Scalar>
bool is_finite(const BasicState<Scalar>& state) {
    return state.positions.allFinite() && state.velocities.allFinite() &&
           state.masses.allFinite() && std::isfinite(state.time);
}

template <typename Scalar>
void require_nonsingular(const BasicState<Scalar>& state, Scalar floor) {
    if (!is_finite(state))
        throw NonFiniteState("state contains non-finite entries", static_cast<double>(state.time));
    const Scalar sep = min_separation(state);
    if (!(sep >= floor))
        throw SingularState("pairwise separation " + std::to_string(static_cast<double>(sep)) +
                                " below floor",
                            static_cast<double>(state.time));
}

// a_i = sum_{j != i} m_j (q_j - q_i) / |q_j - q_i|^3
template <typename Scalar>
BodyMatrix<Scalar> accelerations(const BasicState<Scalar>& state,
                                 Scalar separation_floor = Scalar(kDefaultSeparationFloor)) {
    require_nonsingular(state, separation_floor);
    BodyMatrix<Scalar> acc = BodyMatrix<Scalar>::Zero(state.dim(), kBodies);
    for (int i = 0; i < kBodies; ++i) {
        for (int j = i + 1; j < kBodies; ++j) {
            const SpaceVector<Scalar> rij = state.positions.col(j) - state.positions.col(i);
            const Scalar r2 = rij.squaredNorm();
            const Scalar inv_r3 = Scalar(1) / (r2 * std::sqrt(r2));
            acc.col(i) += state.masses(j) * inv_r3 * rij;
            acc.col(j) -= state.masses(i) * inv_r3 * rij;
        }
    }
    return acc;
}

// Canonical field: dq/dt = v (= p/m for massive bodies), dp/dt = m a.
// Zero-mass bodies report dq/dt = v and dp/dt = 0.
template <typename Scalar>
BasicPhaseDerivative<Scalar> phase_derivative(const BasicState<Scalar>& state,
                                              Scalar separation_floor = Scalar(kDefaultSeparationFloor)) {
    const BodyMatrix<Scalar> acc = accelerations(state, separation_floor);
    return {state.velocities, acc * state.masses.asDiagonal()};
}

template <typename Scalar>
Scalar kinetic_energy(const BasicState<Scalar>& state) {
    return Scalar(0.5) * (state.velocities.colwise().squaredNorm().transpose().array() *
                          state.masses.array())
                             .sum();
}

template <typename Scalar>
Scalar potential_energy(const BasicState<Scalar>& state,
                        Scalar separation_floor = Scalar(kDefaultSeparationFloor)) {
    require_nonsingular(state, separation_floor);
    Scalar u{0};
    for (int i = 0; i < kBodies; ++i)
        for (int j = i + 1; j < kBodies; ++j)
            u -= state.masses(i) * state.masses(j) /
                 (state.positions.col(i) - state.positions.col(j)).norm();
    return u;
}

template <typename Scalar>
Scalar total_energy(const BasicState<Scalar>& state,
                    Scalar separation_floor = Scalar(kDefaultSeparationFloor)) {
    return kinetic_energy(state) + potential_energy(state, separation_floor);
}

template <typename Scalar>
SpaceVector<Scalar> linear_momentum(const BasicState<Scalar>& state) {
    return state.velocities * state.masses;
}

// Returns a 1-vector (L_z) in 2D and the full 3-vector in 3D.
template <typename Scalar>
SpaceVector<Scalar> angular_momentum(const BasicState<Scalar>& state) {
    const int d = state.dim();
    SpaceVector<Scalar> total = SpaceVector<Scalar>::Zero(d == 2 ? 1 : 3);
    for (int i = 0; i < kBodies; ++i) {
        const auto q = state.positions.col(i);
        const SpaceVector<Scalar> p = state.masses(i) * state.velocities.col(i);
        if (d == 2) {
            total(0) += q(0) * p(1) - q(1) * p(0);
        } else {
            total += Eigen::Matrix<Scalar, 3, 1>(q).cross(Eigen::Matrix<Scalar, 3, 1>(p));
        }
    }
    return total;
}

template <typename Scalar>
SpaceVector<Scalar> center_of_mass(const BasicState<Scalar>& state) {
    const Scalar total = state.masses.sum();
    if (!(total > Scalar(0))) throw ZeroTotalMass("total mass is zero");
    return state.positions * state.masses / total;
}

template <typename Scalar>
BasicState<Scalar> recenter_to_com(BasicState<Scalar> state) {
    const Scalar total = state.masses.sum();
    if (!(total > Scalar(0))) throw ZeroTotalMass("total mass is zero");
    const SpaceVector<Scalar> com = state.positions * state.masses / total;
    const SpaceVector<Scalar> vcom = state.velocities * state.masses / total;
    state.positions.colwise() -= com;
    state.velocities.colwise() -= vcom;
    return state;
}

// [q1 .. q3, v1 .. v3], body-major.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> flatten(const BasicState<Scalar>& state) {
    const Eigen::Index n = state.positions.size();
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(2 * n);
    out.head(n) = state.positions.reshaped();
    out.tail(n) = state.velocities.reshaped();
    return out;
}

template <typename Scalar, typename Derived>
BasicState<Scalar> unflatten(const Eigen::MatrixBase<Derived>& flat, const MassVector<Scalar>& masses,
                             Scalar time) {
    const Eigen::Index n = flat.size() / 2;
    if (flat.size() % (2 * kBodies) != 0 || (n / kBodies != 2 && n / kBodies != 3))
        throw DimensionMismatch("flattened state length " + std::to_string(flat.size()) +
                                " is not 12 or 18");
    const int d = static_cast<int>(n / kBodies);
    BasicState<Scalar> state(d);
    state.positions.reshaped() = flat.head(n);
    state.velocities.reshaped() = flat.tail(n);
    state.masses = masses;
    state.time = time;
    return state;
}

// [q1 .. q3, p1 .. p3] with p_i = m_i v_i.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> to_canonical(const BasicState<Scalar>& state) {
    const Eigen::Index n = state.positions.size();
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(2 * n);
    out.head(n) = state.positions.reshaped();
    out.tail(n) = (state.velocities * state.masses.asDiagonal()).reshaped();
    return out;
}

// Inverse of to_canonical; zero-mass bodies come back with zero velocity.
template <typename Scalar, typename Derived>
BasicState<Scalar> from_canonical(const Eigen::MatrixBase<Derived>& flat, const MassVector<Scalar>& masses,
                                  Scalar time) {
    BasicState<Scalar> state = unflatten<Scalar>(flat, masses, time);
    for (int i = 0; i < kBodies; ++i)
        state.velocities.col(i) = masses(i) > Scalar(0) ? SpaceVector<Scalar>(state.velocities.col(i) / masses(i))
                                                        : SpaceVector<Scalar>::Zero(state.dim());
    return state;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> flatten(const BasicPhaseDerivative<Scalar>& deriv) {
    const Eigen::Index n = deriv.dq_dt.size();
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(2 * n);
    out.head(n) = deriv.dq_dt.reshaped();
    out.tail(n) = deriv.dp_dt.reshaped();
    return out;
}

template <typename Scalar>
Scalar max_position_distance(const BasicState<Scalar>& a, const BasicState<Scalar>& b) {
    return (a.positions - b.positions).cwiseAbs().maxCoeff();
}

}  // namespace threebody
