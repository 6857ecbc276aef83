#include "helpers.hpp"
#include "threebody/fixtures.hpp"
#include "threebody/lstm.hpp"

using namespace threebody;
using testing::TempDir;

namespace {

LstmModel random_lstm(int features, int hidden, std::uint64_t seed, bool residual = true) {
    LstmConfig c;
    c.hidden = hidden;
    c.seed = seed;
    c.residual = residual;
    LstmModel m = init_lstm(features, c);
    std::mt19937_64 rng(seed + 77);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (Eigen::Index k = 0; k < m.params.size(); ++k) m.params(k) += u(rng);
    for (Eigen::Index k = 0; k < features; ++k) {
        m.in_mean(k) = 0.1 * u(rng);
        m.in_scale(k) = 1.0 + u(rng);
        m.out_mean(k) = 0.1 * u(rng);
        m.out_scale(k) = 1.0 + u(rng);
    }
    return m;
}

Eigen::MatrixXd random_matrix(int rows, int cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m(k) = u(rng);
    return m;
}

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Gate equations written out element by element from the flat layout.
std::pair<std::vector<double>, std::vector<double>> oracle_step(const LstmModel& m, const std::vector<double>& h,
                                                                const std::vector<double>& c,
                                                                const std::vector<double>& x) {
    const int H = m.hidden, D = m.features;
    const double* W = m.params.data();
    const double* U = W + 4 * H * D;
    const double* b = U + 4 * H * H;
    std::vector<double> z(static_cast<std::size_t>(4 * H));
    for (int r = 0; r < 4 * H; ++r) {
        double s = b[r];
        for (int j = 0; j < D; ++j) s += W[j * 4 * H + r] * x[j];
        for (int j = 0; j < H; ++j) s += U[j * 4 * H + r] * h[j];
        z[r] = s;
    }
    std::vector<double> h2(H), c2(H);
    for (int k = 0; k < H; ++k) {
        const double i = sig(z[k]), f = sig(z[H + k]), g = std::tanh(z[2 * H + k]), o = sig(z[3 * H + k]);
        c2[k] = f * c[k] + i * g;
        h2[k] = o * std::tanh(c2[k]);
    }
    return {h2, c2};
}

double fd_error(const LstmModel& m, const std::vector<Eigen::MatrixXd>& in, const std::vector<Eigen::MatrixXd>& out) {
    const Eigen::VectorXd g = bptt_gradient(m, in, out);
    LstmModel probe = m;
    double worst = 0, scale = 0;
    Eigen::VectorXd fd(g.size());
    for (Eigen::Index k = 0; k < g.size(); ++k) {
        const double keep = probe.params(k);
        probe.params(k) = keep + 1e-6;
        const double up = lstm_loss(probe, in, out);
        probe.params(k) = keep - 1e-6;
        const double down = lstm_loss(probe, in, out);
        probe.params(k) = keep;
        fd(k) = (up - down) / 2e-6;
    }
    scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-8);
    worst = (g - fd).cwiseAbs().maxCoeff();
    return worst / scale;
}

}  // namespace

TEST_CASE("zero cell") {
    LstmModel m = init_lstm(3, LstmConfig{});
    m.params.setZero();
    const auto [h, c] = cell_step(m, Eigen::VectorXd::Zero(64), Eigen::VectorXd::Zero(64), Eigen::Vector3d(5, -2, 1));
    CHECK(h.isZero(0.0));
    CHECK(c.isZero(0.0));
}

TEST_CASE("saturated forget gate with a closed input gate keeps the cell") {
    LstmModel m = random_lstm(3, 5, 1);
    auto b = m.b();
    b.head(5).setConstant(-1e3);
    b.segment(5, 5).setConstant(1e3);
    const Eigen::VectorXd c_prev = Eigen::VectorXd::LinSpaced(5, -2.0, 2.0);
    const auto [h, c] = cell_step(m, Eigen::VectorXd::Constant(5, 0.1), c_prev, Eigen::Vector3d(0.3, 0.1, -0.2));
    CHECK((c - c_prev).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cell step matches the gate-equation oracle") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const LstmModel m = random_lstm(6, 7, seed);
        const Eigen::VectorXd h = 0.5 * random_matrix(7, 1, seed + 1), c = random_matrix(7, 1, seed + 2),
                              x = 2.0 * random_matrix(6, 1, seed + 3);
        const auto [h2, c2] = cell_step(m, h, c, x);
        const auto [oh, oc] = oracle_step(m, {h.data(), h.data() + 7}, {c.data(), c.data() + 7}, {x.data(), x.data() + 6});
        for (int k = 0; k < 7; ++k) {
            CHECK(std::abs(h2(k) - oh[k]) < 1e-12);
            CHECK(std::abs(c2(k) - oc[k]) < 1e-12);
        }
    }
}

TEST_CASE("hidden state stays inside (-1, 1)") {
    const LstmModel m = random_lstm(4, 16, 3);
    Eigen::VectorXd h = Eigen::VectorXd::Zero(16), c = Eigen::VectorXd::Zero(16);
    for (int t = 0; t < 200; ++t) {
        std::tie(h, c) = cell_step(m, h, c, 50.0 * random_matrix(4, 1, static_cast<std::uint64_t>(t)));
        CHECK(h.cwiseAbs().maxCoeff() < 1.0);
        CHECK(c.allFinite());
    }
}

TEST_CASE("zero model on a constant sequence") {
    LstmConfig cfg;
    cfg.residual = false;
    cfg.hidden = 5;
    LstmModel m = init_lstm(3, cfg);
    m.params.setZero();
    const Eigen::MatrixXd in = Eigen::Vector3d(0.2, 0.4, -0.1).replicate(1, 6);
    const Eigen::MatrixXd target = random_matrix(3, 6, 1);
    CHECK(forward_sequence(m, in).isZero(0.0));
    CHECK(lstm_loss(m, {in}, {target}) == doctest::Approx(target.array().square().mean()).epsilon(1e-14));
}

TEST_CASE("BPTT gradient matches central differences") {
    int configs = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const int features = seed % 2 ? 6 : 4;
        const LstmModel m = random_lstm(features, 4, seed, seed % 3 != 0);
        std::vector<Eigen::MatrixXd> in, out;
        const int lengths[] = {3, 3, 4};
        for (int s = 0; s < 3; ++s) {
            in.push_back(random_matrix(features, lengths[s], seed * 10 + s));
            out.push_back(random_matrix(features, lengths[s], seed * 10 + s + 5));
        }
        CHECK(fd_error(m, in, out) < 1e-4);
        ++configs;
    }
    CHECK(configs == 20);
}

TEST_CASE("loss ignores the order of independent sequences") {
    const LstmModel m = random_lstm(4, 6, 9);
    std::vector<Eigen::MatrixXd> in, out;
    for (int s = 0; s < 4; ++s) {
        in.push_back(random_matrix(4, 3 + s % 2, s));
        out.push_back(random_matrix(4, 3 + s % 2, s + 10));
    }
    const double loss = lstm_loss(m, in, out);
    std::reverse(in.begin(), in.end());
    std::reverse(out.begin(), out.end());
    CHECK(lstm_loss(m, in, out) == doctest::Approx(loss).epsilon(1e-14));
    CHECK_THROWS_AS(lstm_loss(m, {}, {}), EmptyBatch);
}

TEST_CASE("initialization") {
    LstmConfig c;
    c.hidden = 8;
    const LstmModel m = init_lstm(12, c);
    CHECK(m.params.size() == static_cast<Eigen::Index>(lstm_param_count(12, 8)));
    CHECK(m.b().segment(8, 8).isOnes(0.0));
    CHECK(m.a().isZero(0.0));
}

TEST_CASE("training, rollout and persistence") {
    IntegratorConfig ic;
    const Trajectory t = integrate(fixtures::figure_eight(), 9.9, ic);
    const SequencePairs seqs = lstm_sequences({t}, LstmTargetMode::full);
    REQUIRE(seqs.inputs.front().cols() == 99);
    LstmConfig c;
    c.hidden = 16;
    c.epochs = 300;
    c.learning_rate = 5e-3;
    c.seed = 4;
    LstmModel m = init_lstm(12, c);
    fit_standardization(m, seqs.inputs, seqs.targets);
    const LstmModel a = train_lstm(m, seqs.inputs, seqs.targets, c);
    const LstmModel b = train_lstm(m, seqs.inputs, seqs.targets, c);
    CHECK(a.params == b.params);
    CHECK(a.loss_history.size() == 301);
    CHECK(a.loss_history.back() < 0.1 * a.loss_history.front());

    const Eigen::MatrixXd warm = lstm_features(t, LstmTargetMode::full).leftCols(20);
    CHECK(rollout(a, warm, 0).cols() == 0);
    const Eigen::MatrixXd pred = rollout(a, warm, 10);
    CHECK(pred.cols() == 10);
    CHECK(pred.allFinite());

    TempDir dir("lstm");
    save_lstm(a, dir.path / "l.json");
    const LstmModel back = load_lstm(dir.path / "l.json");
    CHECK(back.params == a.params);
    CHECK(back.in_scale == a.in_scale);
    CHECK(rollout(back, warm, 10) == pred);

    const SequencePairs pos = lstm_sequences({t}, LstmTargetMode::positions);
    CHECK(pos.inputs.front().rows() == 6);
    CHECK(pos.targets.front().rows() == 6);
}
