#include <Eigen/Eigenvalues>

#include "helpers.hpp"
#include "threebody/esn.hpp"
#include "threebody/eval.hpp"
#include "threebody/fixtures.hpp"

using namespace threebody;
using testing::TempDir;

namespace {

double eigen_oracle(const Eigen::MatrixXd& m) {
    return Eigen::EigenSolver<Eigen::MatrixXd>(m, false).eigenvalues().cwiseAbs().maxCoeff();
}

Eigen::MatrixXd random_matrix(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::MatrixXd m(n, n);
    for (Eigen::Index k = 0; k < m.size(); ++k) m(k) = u(rng);
    return m;
}

Eigen::MatrixXd random_inputs(int rows, int cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m(k) = u(rng);
    return m;
}

Eigen::MatrixXd trajectory_matrix(const Trajectory& t) {
    Eigen::MatrixXd m(t.front().flat_size(), static_cast<Eigen::Index>(t.size()));
    for (std::size_t k = 0; k < t.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = flatten(t.states[k]);
    return m;
}

// Largest distance between two reservoir runs from different starts after
// `steps` shared inputs.
double echo_gap(const EsnModel& m, const Eigen::MatrixXd& inputs) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(m.reservoir_size());
    Eigen::VectorXd b = Eigen::VectorXd::Constant(m.reservoir_size(), 0.9);
    for (Eigen::Index k = 0; k < inputs.cols(); ++k) {
        a = advance(m, a, inputs.col(k));
        b = advance(m, b, inputs.col(k));
    }
    return (a - b).norm();
}

}  // namespace

TEST_CASE("spectral radius of simple matrices") {
    CHECK(spectral_radius(Eigen::MatrixXd::Identity(5, 5)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(spectral_radius(Eigen::Vector3d(0.5, -0.9, 0.1).asDiagonal().toDenseMatrix()) ==
          doctest::Approx(0.9).epsilon(1e-10));
    Eigen::MatrixXd rot(2, 2);
    rot << 0.0, -0.7, 0.7, 0.0;
    CHECK(spectral_radius(rot) == doctest::Approx(0.7).epsilon(1e-10));
    CHECK(spectral_radius(Eigen::Vector2d(0.8, -0.8).asDiagonal().toDenseMatrix()) ==
          doctest::Approx(0.8).epsilon(1e-10));
    CHECK_THROWS_AS(spectral_radius(Eigen::MatrixXd(2, 3)), DimensionMismatch);
}

TEST_CASE("spectral radius matches a dense eigensolver") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Eigen::MatrixXd m = random_matrix(50, seed);
        const double expected = eigen_oracle(m);
        CHECK(std::abs(spectral_radius(m) - expected) <= 1e-6 * expected);
        CHECK(std::abs(spectral_radius(SparseMatrixd(m.sparseView())) - expected) <= 1e-6 * expected);
    }
}

TEST_CASE("reservoir initialization") {
    EsnConfig c;
    c.reservoir_size = 120;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        c.seed = seed;
        const EsnModel m = init_reservoir(c, 12);
        CHECK(std::abs(eigen_oracle(Eigen::MatrixXd(m.w)) - 0.9) <= 1e-6);
        CHECK(std::abs(m.achieved_radius - 0.9) <= 1e-6);
        CHECK(m.w_in.rows() == 120);
        CHECK(m.w_in.cols() == 12);
        CHECK(m.w_in.cwiseAbs().maxCoeff() <= 0.5);
        const double density = static_cast<double>(m.w.nonZeros()) / (120.0 * 120.0);
        CHECK(density == doctest::Approx(0.05).epsilon(0.2));
        CHECK_FALSE(m.trained());
    }
    c.seed = 3;
    const EsnModel a = init_reservoir(c, 12), b = init_reservoir(c, 12);
    CHECK(Eigen::MatrixXd(a.w) == Eigen::MatrixXd(b.w));
    CHECK(a.w_in == b.w_in);

    EsnConfig one;
    one.reservoir_size = 1;
    one.density = 1.0;
    const EsnModel single = init_reservoir(one, 2);
    CHECK(std::abs(single.w.coeff(0, 0)) == doctest::Approx(0.9).epsilon(1e-12));

    EsnConfig bad;
    bad.density = 0.0;
    CHECK_THROWS_AS(init_reservoir(bad, 2), ConfigError);
}

TEST_CASE("rescaling is a projection onto the target radius") {
    EsnConfig c;
    c.reservoir_size = 80;
    c.seed = 8;
    const EsnModel m = init_reservoir(c, 3);
    for (double scale : {0.01, 3.0, 250.0}) {
        const SparseMatrixd stretched = m.w * scale;
        const SparseMatrixd projected = stretched * (0.9 / spectral_radius(stretched));
        CHECK((Eigen::MatrixXd(projected) - Eigen::MatrixXd(m.w)).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("reservoir update") {
    EsnConfig c;
    c.reservoir_size = 50;
    EsnModel m = init_reservoir(c, 4);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(50);
    CHECK(advance(m, zero, Eigen::VectorXd::Zero(4)).isZero(0.0));

    const Eigen::VectorXd h = Eigen::VectorXd::LinSpaced(50, -1.0, 1.0);
    const Eigen::VectorXd x = Eigen::Vector4d(3.0, -2.0, 1.0, 5.0);
    const Eigen::VectorXd full = advance(m, h, x);
    CHECK(full.cwiseAbs().maxCoeff() <= 1.0);
    const Eigen::VectorXd literal = (Eigen::MatrixXd(m.w) * h + m.w_in * x).array().tanh();
    CHECK((full - literal).cwiseAbs().maxCoeff() < 1e-14);

    m.config.leak = 0.3;
    CHECK((advance(m, h, x) - (0.7 * h + 0.3 * literal)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("echo state contraction probe") {
    EsnConfig c;
    c.seed = 1;
    for (double rho : {0.5, 0.9}) {
        c.spectral_radius = rho;
        const EsnModel m = init_reservoir(c, 12);
        for (std::uint64_t s = 0; s < 3; ++s) CHECK(echo_gap(m, random_inputs(12, 200, s)) < 1e-6);
        CHECK(echo_gap(m, Eigen::MatrixXd::Zero(12, 200)) < 1e-6);
    }
    c.spectral_radius = 1.5;
    const EsnModel wild = init_reservoir(c, 12);
    double widest = 0;
    for (std::uint64_t s = 0; s < 3; ++s) widest = std::max(widest, echo_gap(wild, 0.1 * random_inputs(12, 200, s)));
    widest = std::max(widest, echo_gap(wild, Eigen::MatrixXd::Zero(12, 200)));
    CHECK(widest > 1e-3);
}

TEST_CASE("exact linear targets are recovered without regularization") {
    EsnConfig c;
    c.reservoir_size = 20;
    c.density = 0.3;
    c.ridge = 0.0;
    c.washout = 10;
    c.seed = 2;
    EsnModel m = init_reservoir(c, 3);
    const Eigen::MatrixXd in = random_inputs(3, 200, 5);
    const Eigen::MatrixXd map = random_inputs(3, 20, 6);
    Eigen::MatrixXd states(20, 200);
    Eigen::VectorXd h = Eigen::VectorXd::Zero(20);
    for (Eigen::Index k = 0; k < 200; ++k) states.col(k) = h = advance(m, h, in.col(k));
    const Eigen::MatrixXd targets = map * states;

    const EsnModel fitted = fit_readout(m, {in}, {targets});
    CHECK((fitted.w_out - map).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(fitted.training_mse < 1e-16);
    for (Eigen::Index k = 10; k < 200; k += 37)
        CHECK((readout(fitted, states.col(k)) - targets.col(k)).cwiseAbs().maxCoeff() < 1e-8);

    m.config.ridge = 1e6;
    const EsnModel shrunk = fit_readout(m, {in}, {targets});
    CHECK(shrunk.w_out.cwiseAbs().maxCoeff() < 1e-3 * fitted.w_out.cwiseAbs().maxCoeff());

    // No randomness after initialization.
    m.config.ridge = 1e-6;
    CHECK(fit_readout(m, {in}, {targets}).w_out == fit_readout(m, {in}, {targets}).w_out);

    CHECK_THROWS_AS(readout(m, states.col(0)), Untrained);
    CHECK_THROWS_AS(fit_readout(m, {in.leftCols(10)}, {targets.leftCols(10)}), LengthMismatch);
}

TEST_CASE("constant input at a fixed point gives a constant forecast") {
    EsnConfig c;
    c.reservoir_size = 40;
    c.washout = 150;
    const EsnModel m = init_reservoir(c, 2);
    const Eigen::Vector2d star(0.3, -0.2);
    const Eigen::MatrixXd seq = star.replicate(1, 300);
    const EsnModel fitted = fit_readout(m, {seq}, {seq});
    const Eigen::MatrixXd out = forecast(fitted, seq.leftCols(150), 50);
    CHECK((out.colwise() - star).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(forecast(fitted, seq.leftCols(150), 0).cols() == 0);
    CHECK_THROWS_AS(forecast(m, seq.leftCols(150), 5), Untrained);
}

TEST_CASE("figure eight: training fit and closed-loop forecast") {
    IntegratorConfig ic;
    const Trajectory t = integrate(fixtures::figure_eight(), 9.9, ic);
    EsnConfig c;
    const EsnModel m = fit_readout(init_reservoir(c, 12), std::vector<Trajectory>{t});
    CHECK(m.training_mse < 1e-4);
    CHECK(m.training_size == 1);

    const Eigen::MatrixXd truth = trajectory_matrix(t);
    const std::size_t warm = 20;
    const Eigen::MatrixXd pred = forecast(m, truth.leftCols(warm), 79);
    const Eigen::VectorXd curve = mae_curve(pred, truth.rightCols(79), 6);
    CHECK(horizon_from_curve(curve, 0.1, 0.1) >= 1.0);

    TempDir dir("esn");
    save_esn(m, dir.path / "m.json");
    const EsnModel back = load_esn(dir.path / "m.json");
    CHECK(back.w_out == m.w_out);
    CHECK(forecast(back, truth.leftCols(warm), 30) == forecast(m, truth.leftCols(warm), 30));
}
