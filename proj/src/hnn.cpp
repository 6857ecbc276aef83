#include "threebody/hnn.hpp"

#include <numeric>
#include <random>

#include "threebody/json_io.hpp"

namespace threebody {

namespace {

constexpr int kHnnFileVersion = 1;

std::size_t layer_offset(const std::vector<int>& layers, int l) {
    std::size_t off = 0;
    for (int k = 0; k < l; ++k)
        off += static_cast<std::size_t>(layers[static_cast<std::size_t>(k) + 1]) *
               static_cast<std::size_t>(layers[static_cast<std::size_t>(k)] + 1);
    return off;
}

// Activations of every layer for a batch (one column per point). acts[0] is
// the input; acts[l] for 1 <= l < L are tanh outputs; the scalar output is
// returned separately.
struct ForwardPass {
    std::vector<Eigen::MatrixXd> acts;
    Eigen::RowVectorXd output;
};

ForwardPass run_forward(const HnnModel& model, const Eigen::MatrixXd& x) {
    if (x.rows() != model.input_dim())
        throw DimensionMismatch("input length " + std::to_string(x.rows()) + ", expected " +
                                std::to_string(model.input_dim()));
    ForwardPass pass;
    pass.acts.reserve(static_cast<std::size_t>(model.n_layers()));
    pass.acts.push_back(x);
    const int L = model.n_layers();
    for (int l = 0; l < L - 1; ++l) {
        Eigen::MatrixXd z = model.weight(l) * pass.acts.back();
        z.colwise() += model.bias(l);
        pass.acts.push_back(z.array().tanh());
    }
    Eigen::MatrixXd out = model.weight(L - 1) * pass.acts.back();
    out.colwise() += model.bias(L - 1);
    pass.output = out.row(0);
    return pass;
}

// Reverse sweep for dH/dx given a completed forward pass.
Eigen::MatrixXd run_input_gradient(const HnnModel& model, const ForwardPass& pass) {
    const int L = model.n_layers();
    const Eigen::Index batch = pass.acts.front().cols();
    Eigen::MatrixXd e = model.weight(L - 1).transpose().replicate(1, batch);
    for (int l = L - 2; l >= 0; --l) {
        const Eigen::MatrixXd& a = pass.acts[static_cast<std::size_t>(l) + 1];
        const Eigen::MatrixXd delta = e.array() * (1.0 - a.array().square());
        e = model.weight(l).transpose() * delta;
    }
    return e;
}

void check_batch(const HnnModel& model, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) {
    if (inputs.cols() == 0) throw EmptyBatch("HNN batch is empty");
    if (inputs.cols() != targets.cols()) throw LengthMismatch("HNN inputs and targets differ in count");
    if (inputs.rows() != model.input_dim() || targets.rows() != model.input_dim())
        throw DimensionMismatch("HNN batch width does not match the input layer");
    if (model.input_dim() % 2 != 0) throw DimensionMismatch("HNN input layer must hold (q, p) halves");
}

// Residuals r = (r_q; r_p) with r_q = dH/dp - dq/dt and r_p = dH/dq + dp/dt.
Eigen::MatrixXd residuals(const Eigen::MatrixXd& grad, const Eigen::MatrixXd& targets) {
    const Eigen::Index n = grad.rows() / 2;
    Eigen::MatrixXd r(grad.rows(), grad.cols());
    r.topRows(n) = grad.bottomRows(n) - targets.topRows(n);
    r.bottomRows(n) = grad.topRows(n) + targets.bottomRows(n);
    return r;
}

double loss_from_residuals(const Eigen::MatrixXd& r, HnnLossMode mode) {
    const Eigen::Index n = r.rows() / 2;
    if (mode == HnnLossMode::squared) return r.array().square().sum() / static_cast<double>(n * r.cols());
    return (r.topRows(n).colwise().norm().sum() + r.bottomRows(n).colwise().norm().sum()) /
           static_cast<double>(r.cols());
}

}  // namespace

std::string_view to_string(HnnLossMode m) { return m == HnnLossMode::squared ? "squared" : "norm"; }

HnnLossMode hnn_loss_mode_from_string(std::string_view s) {
    if (s == "squared") return HnnLossMode::squared;
    if (s == "norm") return HnnLossMode::norm;
    throw ConfigError("unknown HNN loss mode '" + std::string(s) + "'");
}

void HnnConfig::validate() const {
    for (int h : hidden)
        if (h < 1) throw ConfigError("hidden layer sizes must be at least 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
}

std::size_t hnn_param_count(const std::vector<int>& layers) {
    return layer_offset(layers, static_cast<int>(layers.size()) - 1);
}

Eigen::Map<Eigen::MatrixXd> HnnModel::weight(int l) {
    const auto i = static_cast<std::size_t>(l);
    return {params.data() + layer_offset(layers, l), layers[i + 1], layers[i]};
}

Eigen::Map<const Eigen::MatrixXd> HnnModel::weight(int l) const {
    const auto i = static_cast<std::size_t>(l);
    return {params.data() + layer_offset(layers, l), layers[i + 1], layers[i]};
}

Eigen::Map<Eigen::VectorXd> HnnModel::bias(int l) {
    const auto i = static_cast<std::size_t>(l);
    return {params.data() + layer_offset(layers, l) + static_cast<std::size_t>(layers[i + 1] * layers[i]),
            layers[i + 1]};
}

Eigen::Map<const Eigen::VectorXd> HnnModel::bias(int l) const {
    const auto i = static_cast<std::size_t>(l);
    return {params.data() + layer_offset(layers, l) + static_cast<std::size_t>(layers[i + 1] * layers[i]),
            layers[i + 1]};
}

HnnModel init_hnn(int input_dim, const HnnConfig& config) {
    config.validate();
    if (input_dim < 2 || input_dim % 2 != 0) throw DimensionMismatch("HNN input must be (q, p) of even length");
    HnnModel model;
    model.layers.push_back(input_dim);
    model.layers.insert(model.layers.end(), config.hidden.begin(), config.hidden.end());
    model.layers.push_back(1);
    model.loss = config.loss;
    model.seed = config.seed;
    model.params.resize(static_cast<Eigen::Index>(hnn_param_count(model.layers)));
    std::mt19937_64 rng(config.seed);
    for (int l = 0; l < model.n_layers(); ++l) {
        const double s = 1.0 / std::sqrt(static_cast<double>(model.layers[static_cast<std::size_t>(l)]));
        std::uniform_real_distribution<double> u(-s, s);
        auto w = model.weight(l);
        for (Eigen::Index j = 0; j < w.cols(); ++j)
            for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
        auto b = model.bias(l);
        for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = u(rng);
    }
    return model;
}

double forward(const HnnModel& model, const Eigen::VectorXd& input) {
    return run_forward(model, input).output(0);
}

Eigen::VectorXd forward(const HnnModel& model, const Eigen::MatrixXd& inputs) {
    return run_forward(model, inputs).output.transpose();
}

Eigen::VectorXd input_gradient(const HnnModel& model, const Eigen::VectorXd& input) {
    return run_input_gradient(model, run_forward(model, input));
}

Eigen::MatrixXd input_gradient(const HnnModel& model, const Eigen::MatrixXd& inputs) {
    return run_input_gradient(model, run_forward(model, inputs));
}

double hnn_loss(const HnnModel& model, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) {
    check_batch(model, inputs, targets);
    return loss_from_residuals(residuals(input_gradient(model, inputs), targets), model.loss);
}

Eigen::VectorXd param_gradient(const HnnModel& model, const Eigen::MatrixXd& inputs,
                               const Eigen::MatrixXd& targets) {
    check_batch(model, inputs, targets);
    const ForwardPass pass = run_forward(model, inputs);
    const Eigen::MatrixXd r = residuals(run_input_gradient(model, pass), targets);
    const Eigen::Index n = r.rows() / 2;
    const double batch = static_cast<double>(inputs.cols());

    // u = dL/dg with g = (dH/dq, dH/dp): the q half feeds r_p, the p half r_q.
    Eigen::MatrixXd u(r.rows(), r.cols());
    if (model.loss == HnnLossMode::squared) {
        const double c = 2.0 / (static_cast<double>(n) * batch);
        u.topRows(n) = c * r.bottomRows(n);
        u.bottomRows(n) = c * r.topRows(n);
    } else {
        for (Eigen::Index j = 0; j < r.cols(); ++j) {
            const double nq = r.col(j).head(n).norm();
            const double np = r.col(j).tail(n).norm();
            u.col(j).head(n) = np > 0.0 ? Eigen::VectorXd(r.col(j).tail(n) / (np * batch)) : Eigen::VectorXd::Zero(n);
            u.col(j).tail(n) = nq > 0.0 ? Eigen::VectorXd(r.col(j).head(n) / (nq * batch)) : Eigen::VectorXd::Zero(n);
        }
    }

    // Tangent pass: derivative of H along input direction u, i.e. u . dH/dx.
    const int L = model.n_layers();
    std::vector<Eigen::MatrixXd> tangent_z(static_cast<std::size_t>(L));
    std::vector<Eigen::MatrixXd> tangent_a(static_cast<std::size_t>(L));
    tangent_a[0] = u;
    for (int l = 1; l < L; ++l) {
        const auto li = static_cast<std::size_t>(l);
        tangent_z[li] = model.weight(l - 1) * tangent_a[li - 1];
        tangent_a[li] = tangent_z[li].array() * (1.0 - pass.acts[li].array().square());
    }

    // Reverse sweep over the joint primal/tangent graph of u . dH/dx.
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(model.params.size());
    const auto weight_grad = [&](int l) {
        const auto i = static_cast<std::size_t>(l);
        return Eigen::Map<Eigen::MatrixXd>(grad.data() + layer_offset(model.layers, l), model.layers[i + 1],
                                           model.layers[i]);
    };
    const auto bias_grad = [&](int l) {
        const auto i = static_cast<std::size_t>(l);
        return Eigen::Map<Eigen::VectorXd>(
            grad.data() + layer_offset(model.layers, l) + static_cast<std::size_t>(model.layers[i + 1] * model.layers[i]),
            model.layers[i + 1]);
    };

    weight_grad(L - 1) = tangent_a[static_cast<std::size_t>(L) - 1].rowwise().sum().transpose();
    Eigen::MatrixXd adj_tangent = model.weight(L - 1).transpose().replicate(1, inputs.cols());
    Eigen::MatrixXd adj_primal = Eigen::MatrixXd::Zero(adj_tangent.rows(), adj_tangent.cols());
    for (int l = L - 1; l >= 1; --l) {
        const auto li = static_cast<std::size_t>(l);
        const Eigen::ArrayXXd a = pass.acts[li].array();
        const Eigen::ArrayXXd slope = 1.0 - a.square();
        const Eigen::MatrixXd adj_tz = (adj_tangent.array() * slope).matrix();
        adj_primal.array() += adj_tangent.array() * tangent_z[li].array() * (-2.0 * a);
        const Eigen::MatrixXd adj_z = (adj_primal.array() * slope).matrix();
        weight_grad(l - 1) = adj_tz * tangent_a[li - 1].transpose() + adj_z * pass.acts[li - 1].transpose();
        bias_grad(l - 1) = adj_z.rowwise().sum();
        if (l > 1) {
            adj_tangent = model.weight(l - 1).transpose() * adj_tz;
            adj_primal = model.weight(l - 1).transpose() * adj_z;
        }
    }
    return grad;
}

HnnModel train_hnn(HnnModel model, const SupervisedPairs& data, const HnnConfig& config) {
    config.validate();
    check_batch(model, data.inputs, data.targets);
    model.loss = config.loss;
    const Eigen::Index n = data.size();
    if (model.loss_history.empty()) model.loss_history.push_back(hnn_loss(model, data.inputs, data.targets));
    if (config.epochs == 0) return model;

    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    Eigen::VectorXd m = Eigen::VectorXd::Zero(model.params.size());
    Eigen::VectorXd v = Eigen::VectorXd::Zero(model.params.size());
    long t = 0;
    std::mt19937_64 rng(config.seed);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const auto batch = static_cast<Eigen::Index>(config.batch_size);
    Eigen::MatrixXd xb, yb;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (Eigen::Index start = 0; start < n; start += batch) {
            const Eigen::Index count = std::min(batch, n - start);
            xb.resize(data.inputs.rows(), count);
            yb.resize(data.targets.rows(), count);
            for (Eigen::Index j = 0; j < count; ++j) {
                xb.col(j) = data.inputs.col(order[static_cast<std::size_t>(start + j)]);
                yb.col(j) = data.targets.col(order[static_cast<std::size_t>(start + j)]);
            }
            const Eigen::VectorXd g = param_gradient(model, xb, yb);
            if (!g.allFinite())
                throw NonFiniteLoss("HNN gradient is not finite", static_cast<long>(model.epochs_trained + 1));
            ++t;
            m = beta1 * m + (1.0 - beta1) * g;
            v = beta2 * v + (1.0 - beta2) * g.cwiseAbs2();
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
            model.params.array() -=
                config.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
        }
        ++model.epochs_trained;
        const double loss = hnn_loss(model, data.inputs, data.targets);
        if (!std::isfinite(loss)) throw NonFiniteLoss("HNN loss is not finite", static_cast<long>(model.epochs_trained));
        model.loss_history.push_back(loss);
    }
    return model;
}

PhaseDerivative symplectic_field(const HnnModel& model, const State& state) {
    const Eigen::VectorXd y = to_canonical(state);
    if (y.size() != model.input_dim()) throw DimensionMismatch("state dimension does not match the HNN input");
    const Eigen::VectorXd g = input_gradient(model, y);
    const Eigen::Index n = g.size() / 2;
    PhaseDerivative out;
    out.dq_dt = Eigen::Map<const BodyMatrix<double>>(g.data() + n, state.dim(), kBodies);
    out.dp_dt = -Eigen::Map<const BodyMatrix<double>>(g.data(), state.dim(), kBodies);
    return out;
}

CanonicalField learned_field(const HnnModel& model) {
    return [model](const Eigen::VectorXd& y) {
        const Eigen::VectorXd g = input_gradient(model, y);
        const Eigen::Index n = g.size() / 2;
        Eigen::VectorXd f(g.size());
        f.head(n) = g.tail(n);
        f.tail(n) = -g.head(n);
        return f;
    };
}

double HnnRollout::max_relative_energy_drift() const {
    if (learned_energy.empty()) return 0.0;
    const double h0 = learned_energy.front();
    double worst = 0.0;
    for (double h : learned_energy) worst = std::max(worst, std::abs(h - h0));
    return worst / std::abs(h0);
}

HnnRollout rollout(const HnnModel& model, const State& initial, std::size_t n_steps, double dt,
                   std::size_t substeps) {
    if (initial.flat_size() != model.input_dim())
        throw DimensionMismatch("state dimension does not match the HNN input");
    HnnRollout out;
    out.trajectory = rollout_field(learned_field(model), initial, n_steps, dt, substeps);
    out.trajectory.meta.integrator = "rk4_learned_hamiltonian";
    out.learned_energy.reserve(out.trajectory.size());
    for (const State& s : out.trajectory.states) out.learned_energy.push_back(forward(model, to_canonical(s)));
    return out;
}

void save_hnn(const HnnModel& model, const std::filesystem::path& path) {
    std::vector<double> params(model.params.data(), model.params.data() + model.params.size());
    json history = json::array();
    for (double l : model.loss_history) history.push_back(number_or_null(l));
    const json j{{"model", "hnn"},
                 {"version", kHnnFileVersion},
                 {"layers", model.layers},
                 {"activation", "tanh"},
                 {"loss_mode", std::string(to_string(model.loss))},
                 {"seed", model.seed},
                 {"epochs_trained", model.epochs_trained},
                 {"training_size", model.training_size},
                 {"loss_history", history},
                 {"params", params}};
    write_json_file(j, path);
}

HnnModel load_hnn(const std::filesystem::path& path) {
    const json j = read_json_file(path);
    if (j.value("model", "") != "hnn") throw FormatError(path.string() + ": not an HNN model file");
    if (j.value("version", 0) != kHnnFileVersion)
        throw VersionMismatch(path.string() + ": HNN file version " + std::to_string(j.value("version", 0)) +
                              ", expected " + std::to_string(kHnnFileVersion));
    try {
        HnnModel m;
        m.layers = j.at("layers").get<std::vector<int>>();
        if (m.layers.size() < 2 || m.layers.back() != 1) throw FormatError("HNN must end in a scalar layer");
        if (j.at("activation").get<std::string>() != "tanh") throw FormatError("unsupported activation");
        m.loss = hnn_loss_mode_from_string(j.at("loss_mode").get<std::string>());
        m.seed = j.at("seed").get<std::uint64_t>();
        m.epochs_trained = j.at("epochs_trained").get<std::size_t>();
        m.training_size = j.value("training_size", std::size_t{0});
        for (const auto& l : j.at("loss_history")) m.loss_history.push_back(number_or(l, std::nan("")));
        const auto params = j.at("params").get<std::vector<double>>();
        if (params.size() != hnn_param_count(m.layers)) throw FormatError("parameter count does not match layers");
        m.params = Eigen::Map<const Eigen::VectorXd>(params.data(), static_cast<Eigen::Index>(params.size()));
        return m;
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace threebody
