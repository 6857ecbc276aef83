#include "helpers.hpp"
#include "threebody/eval.hpp"
#include "threebody/fixtures.hpp"

using namespace threebody;
using testing::TempDir;

namespace {

double type7(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

DatasetConfig eval_config() {
    DatasetConfig c;
    c.n_train = 2;
    c.n_test = 3;
    c.steps = 30;
    c.sampler.base_seed = 5;
    c.integrator.tolerance = 1e-13;
    c.policy = NonConvergedPolicy::keep;
    return c;
}

}  // namespace

TEST_CASE("position MAE curve") {
    const Eigen::MatrixXd truth = Eigen::MatrixXd::Random(12, 8);
    CHECK(mae_curve(truth, truth, 6).isZero(0.0));
    Eigen::MatrixXd off = truth;
    off.topRows(6).array() += 0.2;
    off.bottomRows(6).array() += 5.0;
    const Eigen::VectorXd c = mae_curve(off, truth, 6);
    for (Eigen::Index k = 0; k < c.size(); ++k) CHECK(c(k) == doctest::Approx(0.2).epsilon(1e-12));

    const Eigen::MatrixXd pred = Eigen::MatrixXd::Random(12, 8);
    const Eigen::VectorXd curve = mae_curve(pred, truth, 6);
    for (Eigen::Index k = 0; k < 8; ++k) {
        double s = 0.0;
        for (int r = 0; r < 6; ++r) s += std::abs(pred(r, k) - truth(r, k));
        CHECK(curve(k) == doctest::Approx(s / 6.0).epsilon(1e-14));
    }
    CHECK_THROWS_AS(mae_curve(pred.leftCols(7), truth, 6), LengthMismatch);
}

TEST_CASE("horizon from an error curve") {
    Eigen::VectorXd flat = Eigen::VectorXd::Constant(11, 0.01);
    CHECK(horizon_from_curve(flat, 0.1, 0.1) == doctest::Approx(1.0));
    Eigen::VectorXd jump = flat;
    jump(1) = 1.0;
    CHECK(horizon_from_curve(jump, 0.1, 0.1) == 0.0);
    const Eigen::VectorXd ramp = Eigen::VectorXd::LinSpaced(101, 0.0, 1.0);
    // First entry above 0.255 is k = 26.
    CHECK(horizon_from_curve(ramp, 0.1, 0.255) == doctest::Approx(2.5));
    double last = -1.0;
    for (double theta : {0.01, 0.05, 0.1, 0.3, 0.7, 2.0}) {
        const double h = horizon_from_curve(ramp, 0.1, theta);
        CHECK(h >= last);
        last = h;
    }
}

TEST_CASE("tier boundaries") {
    CHECK(tier_classify(0.0) == Tier::fail);
    CHECK(tier_classify(2.9) == Tier::fail);
    CHECK(tier_classify(3.0) == Tier::tier1);
    CHECK(tier_classify(9.9) == Tier::tier1);
    CHECK(tier_classify(10.0) == Tier::tier2);
    CHECK(tier_classify(99.9) == Tier::tier2);
    CHECK(tier_classify(100.0) == Tier::tier3);
    CHECK(tier_classify(250.0) == Tier::tier3);
    for (Tier t : kTiers) CHECK(tier_from_string(to_string(t)) == t);
}

TEST_CASE("bootstrap intervals") {
    const auto constant = confidence_intervals(std::vector<double>(30, 4.2), kDefaultLevels, 500, 1);
    for (const auto& i : constant) {
        CHECK(i.high == i.low);
        CHECK(i.low == doctest::Approx(4.2).epsilon(1e-14));
    }

    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(5.0, 2.0);
    std::vector<double> v(40);
    for (double& x : v) x = n(rng);
    const auto ci = confidence_intervals(v, kDefaultLevels, 2000, 7);
    REQUIRE(ci.size() == 3);
    for (std::size_t k = 1; k < ci.size(); ++k) {
        CHECK(ci[k].low <= ci[k - 1].low);
        CHECK(ci[k].high >= ci[k - 1].high);
    }
    CHECK(confidence_intervals(v, kDefaultLevels, 2000, 7) == ci);

    CHECK_THROWS_AS(confidence_intervals({1.0}, kDefaultLevels), TooFewValues);
    CHECK_THROWS_AS(confidence_intervals({}, kDefaultLevels), TooFewValues);
}

TEST_CASE("bootstrap agrees with the exhaustive resampling distribution") {
    const std::vector<double> v{1.0, 2.5, 3.0, 7.0, 11.0};
    std::vector<double> means;
    for (int a = 0; a < 5; ++a)
        for (int b = 0; b < 5; ++b)
            for (int c = 0; c < 5; ++c)
                for (int d = 0; d < 5; ++d)
                    for (int e = 0; e < 5; ++e) means.push_back((v[a] + v[b] + v[c] + v[d] + v[e]) / 5.0);
    REQUIRE(means.size() == 3125);
    const auto ci = confidence_intervals(v, kDefaultLevels, 20000, 11);
    const double spread = 10.0;
    for (const auto& i : ci) {
        CHECK(std::abs(i.low - type7(means, 0.5 * (1 - i.level))) < 0.05 * spread);
        CHECK(std::abs(i.high - type7(means, 0.5 * (1 + i.level))) < 0.05 * spread);
    }
}

TEST_CASE("interval width shrinks with sample size") {
    int narrower = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        std::exponential_distribution<double> e(0.2);
        std::vector<double> small(10), large(200);
        for (double& x : small) x = e(rng);
        for (double& x : large) x = e(rng);
        const Interval a = confidence_intervals(small, {0.95}, 1000, seed).front();
        const Interval b = confidence_intervals(large, {0.95}, 1000, seed).front();
        if (b.high - b.low < a.high - a.low) ++narrower;
    }
    CHECK(narrower == 20);
}

TEST_CASE("quantiles interpolate between order statistics") {
    const std::vector<double> s{1, 2, 3, 4};
    CHECK(quantile_sorted(s, 0.0) == 1.0);
    CHECK(quantile_sorted(s, 1.0) == 4.0);
    CHECK(quantile_sorted(s, 0.5) == doctest::Approx(2.5));
    CHECK(quantile_sorted(s, 0.25) == doctest::Approx(1.75));
}

TEST_CASE("energy drift") {
    Trajectory still;
    for (int k = 0; k < 5; ++k) {
        State s = fixtures::figure_eight();
        s.time = 0.1 * k;
        still.states.push_back(s);
    }
    const EnergyDrift none = energy_drift(still);
    CHECK(none.value == 0.0);
    CHECK_FALSE(none.truncated);
    CHECK(none.valid_states == 5);

    IntegratorConfig ic;
    ic.method = Method::leapfrog;
    ic.step = 1e-3;
    CHECK(energy_drift(integrate(fixtures::figure_eight(), 20.0, ic)).value <= 1e-6);

    Trajectory broken = still;
    broken.states[3].positions.col(1) = broken.states[3].positions.col(0);
    const EnergyDrift cut = energy_drift(broken);
    CHECK(cut.truncated);
    CHECK(cut.valid_states == 3);
}

TEST_CASE("Lyapunov-normalized horizon") {
    CHECK(*lyapunov_normalized_horizon(8.0 * 2.5, 2.5) == doctest::Approx(8.0));
    CHECK_FALSE(lyapunov_normalized_horizon(5.0, std::numeric_limits<double>::infinity()).has_value());
    CHECK_FALSE(lyapunov_normalized_horizon(5.0, std::numeric_limits<double>::quiet_NaN()).has_value());
}

TEST_CASE("oracle and constant baselines end to end") {
    TempDir dir("eval");
    generate_dataset(eval_config(), dir.path / "ds");
    const auto manifest = dir.path / "ds" / "manifest.json";
    EvalConfig cfg;
    cfg.resamples = 200;
    cfg.lyapunov_horizon = 20.0;

    const EvalReport oracle = evaluate_model(ModelKind::oracle, "", manifest, cfg);
    REQUIRE(oracle.trajectories.size() == 3);
    for (const auto& r : oracle.trajectories) {
        CHECK(r.horizon == doctest::Approx(2.9));
        CHECK(r.mean_mae < 1e-6);
        CHECK(r.mae.size() == 30);
    }
    CHECK(oracle.trajectories[0].index == 2);
    CHECK(oracle.horizon_ci.size() == 3);

    const EvalReport constant = evaluate_model(ModelKind::constant, "", manifest, cfg);
    for (const auto& r : constant.trajectories) {
        CHECK(r.mae.front() == 0.0);
        CHECK(r.energy.value >= 0.0);
    }

    write_report(oracle, dir.path / "r");
    CHECK(read_report(dir.path / "r" / "report.json") == oracle);
    CHECK(std::filesystem::exists(dir.path / "r" / "trajectories.csv"));
    CHECK(std::filesystem::exists(dir.path / "r" / "summary.svg"));
    CHECK(evaluate_model(ModelKind::oracle, "", manifest, cfg) == oracle);
}
