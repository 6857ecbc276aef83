#include "threebody/lstm.hpp"

#include <numeric>
#include <random>

#include "threebody/json_io.hpp"

namespace threebody {

namespace {

constexpr int kLstmFileVersion = 1;
constexpr const char* kArchitecture = "lstm-1layer-linear-head";

struct Layout {
    Eigen::Index w, u, b, v, a, total;
};

Layout layout(int d, int h) {
    Layout l{};
    l.w = 0;
    l.u = l.w + 4 * h * d;
    l.b = l.u + 4 * h * h;
    l.v = l.b + 4 * h;
    l.a = l.v + d * h;
    l.total = l.a + d;
    return l;
}

Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& z) { return 1.0 / (1.0 + (-z).exp()); }

// Everything the backward sweep needs, for a batch of equal-length sequences
// stored one per column.
struct Unrolled {
    std::vector<Eigen::MatrixXd> x;  // standardized inputs
    std::vector<Eigen::ArrayXXd> i, f, g, o, c, tc, h;
    std::vector<Eigen::MatrixXd> y;  // head output, standardized target units
};

Unrolled unroll(const LstmModel& m, const std::vector<Eigen::MatrixXd>& steps) {
    const int H = m.hidden;
    const Eigen::Index batch = steps.front().cols();
    Unrolled u;
    Eigen::ArrayXXd h = Eigen::ArrayXXd::Zero(H, batch);
    Eigen::ArrayXXd c = Eigen::ArrayXXd::Zero(H, batch);
    for (const auto& raw : steps) {
        Eigen::MatrixXd x = (raw.colwise() - m.in_mean).array().colwise() / m.in_scale.array();
        Eigen::MatrixXd z = m.w() * x + m.u() * h.matrix();
        z.colwise() += m.b();
        Eigen::ArrayXXd ig = sigmoid(z.topRows(H).array());
        Eigen::ArrayXXd fg = sigmoid(z.middleRows(H, H).array());
        Eigen::ArrayXXd gg = z.middleRows(2 * H, H).array().tanh();
        Eigen::ArrayXXd og = sigmoid(z.bottomRows(H).array());
        c = fg * c + ig * gg;
        Eigen::ArrayXXd tc = c.tanh();
        h = og * tc;
        Eigen::MatrixXd y = m.v() * h.matrix();
        y.colwise() += m.a();
        u.x.push_back(std::move(x));
        u.i.push_back(std::move(ig));
        u.f.push_back(std::move(fg));
        u.g.push_back(std::move(gg));
        u.o.push_back(std::move(og));
        u.c.push_back(c);
        u.tc.push_back(std::move(tc));
        u.h.push_back(h);
        u.y.push_back(std::move(y));
    }
    return u;
}

// Head target in standardized units for physical input x and target t.
Eigen::MatrixXd standardized_target(const LstmModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& t) {
    Eigen::MatrixXd r = m.residual ? Eigen::MatrixXd(t - x) : t;
    return (r.colwise() - m.out_mean).array().colwise() / m.out_scale.array();
}

Eigen::MatrixXd to_physical(const LstmModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    Eigen::MatrixXd out = (y.array().colwise() * m.out_scale.array()).matrix();
    out.colwise() += m.out_mean;
    if (m.residual) out += x;
    return out;
}

void check_sequences(const LstmModel& m, const std::vector<Eigen::MatrixXd>& inputs,
                     const std::vector<Eigen::MatrixXd>& targets) {
    if (inputs.empty()) throw EmptyBatch("no sequences");
    if (inputs.size() != targets.size()) throw LengthMismatch("input and target sequence counts differ");
    for (std::size_t s = 0; s < inputs.size(); ++s) {
        if (inputs[s].cols() == 0) throw EmptyBatch("sequence " + std::to_string(s) + " is empty");
        if (inputs[s].cols() != targets[s].cols())
            throw LengthMismatch("sequence " + std::to_string(s) + ": input and target lengths differ");
        if (inputs[s].rows() != m.features || targets[s].rows() != m.features)
            throw DimensionMismatch("sequence " + std::to_string(s) + " has the wrong feature width");
    }
}

// Sequences grouped by length; each group is processed as one matrix batch.
std::vector<std::vector<std::size_t>> length_groups(const std::vector<Eigen::MatrixXd>& inputs,
                                                    const std::vector<std::size_t>& members) {
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t s : members) {
        auto it = std::find_if(groups.begin(), groups.end(),
                               [&](const auto& g) { return inputs[g.front()].cols() == inputs[s].cols(); });
        if (it == groups.end())
            groups.push_back({s});
        else
            it->push_back(s);
    }
    return groups;
}

std::vector<Eigen::MatrixXd> time_major(const std::vector<Eigen::MatrixXd>& seqs, const std::vector<std::size_t>& ids) {
    const Eigen::Index steps = seqs[ids.front()].cols();
    std::vector<Eigen::MatrixXd> out(static_cast<std::size_t>(steps),
                                     Eigen::MatrixXd(seqs[ids.front()].rows(), static_cast<Eigen::Index>(ids.size())));
    for (Eigen::Index t = 0; t < steps; ++t)
        for (std::size_t j = 0; j < ids.size(); ++j)
            out[static_cast<std::size_t>(t)].col(static_cast<Eigen::Index>(j)) = seqs[ids[j]].col(t);
    return out;
}

// Sum of squared standardized errors and, optionally, its gradient scaled
// by `weight`, accumulated into grad.
double accumulate(const LstmModel& m, const std::vector<Eigen::MatrixXd>& inputs,
                  const std::vector<Eigen::MatrixXd>& targets, const std::vector<std::size_t>& ids,
                  Eigen::VectorXd* grad, double weight) {
    const std::vector<Eigen::MatrixXd> xs = time_major(inputs, ids);
    const std::vector<Eigen::MatrixXd> ts = time_major(targets, ids);
    const Unrolled u = unroll(m, xs);
    const int H = m.hidden;
    const int D = m.features;
    const std::size_t T = xs.size();
    std::vector<Eigen::MatrixXd> err(T);
    double sse = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        err[t] = u.y[t] - standardized_target(m, xs[t], ts[t]);
        sse += err[t].squaredNorm();
    }
    if (!grad) return sse;

    const Layout L = layout(D, H);
    Eigen::Map<Eigen::MatrixXd> gw(grad->data() + L.w, 4 * H, D);
    Eigen::Map<Eigen::MatrixXd> gu(grad->data() + L.u, 4 * H, H);
    Eigen::Map<Eigen::VectorXd> gb(grad->data() + L.b, 4 * H);
    Eigen::Map<Eigen::MatrixXd> gv(grad->data() + L.v, D, H);
    Eigen::Map<Eigen::VectorXd> ga(grad->data() + L.a, D);

    const Eigen::Index batch = xs.front().cols();
    Eigen::MatrixXd dh_next = Eigen::MatrixXd::Zero(H, batch);
    Eigen::ArrayXXd dc_next = Eigen::ArrayXXd::Zero(H, batch);
    Eigen::MatrixXd dz(4 * H, batch);
    for (std::size_t k = T; k-- > 0;) {
        const Eigen::MatrixXd dy = 2.0 * weight * err[k];
        gv += dy * u.h[k].matrix().transpose();
        ga += dy.rowwise().sum();
        const Eigen::ArrayXXd dh = (m.v().transpose() * dy + dh_next).array();
        const Eigen::ArrayXXd dc = dh * u.o[k] * (1.0 - u.tc[k].square()) + dc_next;
        const Eigen::ArrayXXd c_prev = k > 0 ? u.c[k - 1] : Eigen::ArrayXXd::Zero(H, batch);
        dz.topRows(H) = (dc * u.g[k] * u.i[k] * (1.0 - u.i[k])).matrix();
        dz.middleRows(H, H) = (dc * c_prev * u.f[k] * (1.0 - u.f[k])).matrix();
        dz.middleRows(2 * H, H) = (dc * u.i[k] * (1.0 - u.g[k].square())).matrix();
        dz.bottomRows(H) = (dh * u.tc[k] * u.o[k] * (1.0 - u.o[k])).matrix();
        dc_next = dc * u.f[k];
        gw += dz * u.x[k].transpose();
        if (k > 0) gu += dz * u.h[k - 1].matrix().transpose();
        gb += dz.rowwise().sum();
        dh_next = m.u().transpose() * dz;
    }
    return sse;
}

double element_count(const std::vector<Eigen::MatrixXd>& targets, const std::vector<std::size_t>& ids) {
    double n = 0.0;
    for (std::size_t s : ids) n += static_cast<double>(targets[s].size());
    return n;
}

std::vector<std::size_t> all_ids(std::size_t n) {
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    return ids;
}

}  // namespace

std::string_view to_string(LstmTargetMode m) { return m == LstmTargetMode::full ? "full" : "positions"; }

LstmTargetMode lstm_target_mode_from_string(std::string_view s) {
    if (s == "full") return LstmTargetMode::full;
    if (s == "positions") return LstmTargetMode::positions;
    throw ConfigError("unknown LSTM target mode '" + std::string(s) + "'");
}

void LstmConfig::validate() const {
    if (hidden < 1) throw ConfigError("hidden must be at least 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must be in (0, 1]");
    if (warmup < 1) throw ConfigError("warmup must be at least 1");
}

std::size_t lstm_param_count(int features, int hidden) {
    return static_cast<std::size_t>(layout(features, hidden).total);
}

Eigen::Map<const Eigen::MatrixXd> LstmModel::w() const {
    return {params.data() + layout(features, hidden).w, 4 * hidden, features};
}
Eigen::Map<const Eigen::MatrixXd> LstmModel::u() const {
    return {params.data() + layout(features, hidden).u, 4 * hidden, hidden};
}
Eigen::Map<const Eigen::VectorXd> LstmModel::b() const {
    return {params.data() + layout(features, hidden).b, 4 * hidden};
}
Eigen::Map<Eigen::VectorXd> LstmModel::b() { return {params.data() + layout(features, hidden).b, 4 * hidden}; }
Eigen::Map<const Eigen::MatrixXd> LstmModel::v() const {
    return {params.data() + layout(features, hidden).v, features, hidden};
}
Eigen::Map<const Eigen::VectorXd> LstmModel::a() const {
    return {params.data() + layout(features, hidden).a, features};
}

LstmModel init_lstm(int features, const LstmConfig& config) {
    config.validate();
    if (features < 1) throw DimensionMismatch("feature width must be at least 1");
    LstmModel m;
    m.features = features;
    m.hidden = config.hidden;
    m.target = config.target;
    m.residual = config.residual;
    m.warmup = config.warmup;
    m.seed = config.seed;
    const Layout L = layout(features, config.hidden);
    m.params.resize(L.total);
    std::mt19937_64 rng(config.seed);
    const double s = 1.0 / std::sqrt(static_cast<double>(config.hidden));
    std::uniform_real_distribution<double> uni(-s, s);
    for (Eigen::Index k = 0; k < L.a; ++k) m.params(k) = uni(rng);
    m.params.tail(features).setZero();
    m.b().segment(config.hidden, config.hidden).setOnes();
    m.in_mean = Eigen::VectorXd::Zero(features);
    m.in_scale = Eigen::VectorXd::Ones(features);
    m.out_mean = Eigen::VectorXd::Zero(features);
    m.out_scale = Eigen::VectorXd::Ones(features);
    return m;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> cell_step(const LstmModel& model, const Eigen::VectorXd& h_prev,
                                                      const Eigen::VectorXd& c_prev, const Eigen::VectorXd& x) {
    const int H = model.hidden;
    if (h_prev.size() != H || c_prev.size() != H || x.size() != model.features)
        throw DimensionMismatch("LSTM cell inputs have the wrong length");
    const Eigen::VectorXd z = model.w() * x + model.u() * h_prev + model.b();
    const Eigen::ArrayXd ig = sigmoid(z.head(H).array());
    const Eigen::ArrayXd fg = sigmoid(z.segment(H, H).array());
    const Eigen::ArrayXd gg = z.segment(2 * H, H).array().tanh();
    const Eigen::ArrayXd og = sigmoid(z.tail(H).array());
    Eigen::VectorXd c = (fg * c_prev.array() + ig * gg).matrix();
    Eigen::VectorXd h = (og * c.array().tanh()).matrix();
    return {std::move(h), std::move(c)};
}

Eigen::MatrixXd forward_sequence(const LstmModel& model, const Eigen::MatrixXd& inputs) {
    if (inputs.rows() != model.features) throw DimensionMismatch("sequence has the wrong feature width");
    Eigen::MatrixXd out(model.features, inputs.cols());
    if (inputs.cols() == 0) return out;
    std::vector<Eigen::MatrixXd> steps;
    for (Eigen::Index t = 0; t < inputs.cols(); ++t) steps.emplace_back(inputs.col(t));
    const Unrolled u = unroll(model, steps);
    for (Eigen::Index t = 0; t < inputs.cols(); ++t)
        out.col(t) = to_physical(model, inputs.col(t), u.y[static_cast<std::size_t>(t)]);
    return out;
}

double lstm_loss(const LstmModel& model, const std::vector<Eigen::MatrixXd>& inputs,
                 const std::vector<Eigen::MatrixXd>& targets) {
    check_sequences(model, inputs, targets);
    const auto ids = all_ids(inputs.size());
    double sse = 0.0;
    for (const auto& group : length_groups(inputs, ids)) sse += accumulate(model, inputs, targets, group, nullptr, 0.0);
    const double loss = sse / element_count(targets, ids);
    if (!std::isfinite(loss))
        throw NonFiniteLoss("LSTM loss is not finite", static_cast<long>(model.epochs_trained));
    return loss;
}

Eigen::VectorXd bptt_gradient(const LstmModel& model, const std::vector<Eigen::MatrixXd>& inputs,
                              const std::vector<Eigen::MatrixXd>& targets) {
    check_sequences(model, inputs, targets);
    const auto ids = all_ids(inputs.size());
    const double weight = 1.0 / element_count(targets, ids);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(model.params.size());
    for (const auto& group : length_groups(inputs, ids)) accumulate(model, inputs, targets, group, &grad, weight);
    if (!grad.allFinite())
        throw NonFiniteLoss("LSTM gradient is not finite", static_cast<long>(model.epochs_trained));
    return grad;
}

void fit_standardization(LstmModel& model, const std::vector<Eigen::MatrixXd>& inputs,
                         const std::vector<Eigen::MatrixXd>& targets) {
    check_sequences(model, inputs, targets);
    const auto stats = [&](auto&& column_source, Eigen::VectorXd& mean, Eigen::VectorXd& scale) {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(model.features);
        Eigen::VectorXd sq = Eigen::VectorXd::Zero(model.features);
        double n = 0.0;
        for (std::size_t s = 0; s < inputs.size(); ++s) {
            const Eigen::MatrixXd cols = column_source(s);
            sum += cols.rowwise().sum();
            n += static_cast<double>(cols.cols());
        }
        mean = sum / n;
        for (std::size_t s = 0; s < inputs.size(); ++s)
            sq += (column_source(s).colwise() - mean).array().square().matrix().rowwise().sum();
        scale = (sq / n).cwiseSqrt();
        for (Eigen::Index i = 0; i < scale.size(); ++i)
            if (!(scale(i) > 0.0)) scale(i) = 1.0;
    };
    stats([&](std::size_t s) { return inputs[s]; }, model.in_mean, model.in_scale);
    stats(
        [&](std::size_t s) { return model.residual ? Eigen::MatrixXd(targets[s] - inputs[s]) : targets[s]; },
        model.out_mean, model.out_scale);
}

LstmModel train_lstm(LstmModel model, const std::vector<Eigen::MatrixXd>& inputs,
                     const std::vector<Eigen::MatrixXd>& targets, const LstmConfig& config) {
    config.validate();
    check_sequences(model, inputs, targets);
    if (model.loss_history.empty()) model.loss_history.push_back(lstm_loss(model, inputs, targets));
    if (config.epochs == 0) return model;

    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    Eigen::VectorXd m = Eigen::VectorXd::Zero(model.params.size());
    Eigen::VectorXd v = Eigen::VectorXd::Zero(model.params.size());
    long t = 0;
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order = all_ids(inputs.size());
    double rate = config.learning_rate;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::vector<std::size_t> members(
                order.begin() + static_cast<std::ptrdiff_t>(start),
                order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + config.batch_size)));
            const double weight = 1.0 / element_count(targets, members);
            Eigen::VectorXd g = Eigen::VectorXd::Zero(model.params.size());
            for (const auto& group : length_groups(inputs, members))
                accumulate(model, inputs, targets, group, &g, weight);
            if (!g.allFinite())
                throw NonFiniteLoss("LSTM gradient is not finite", static_cast<long>(model.epochs_trained + 1));
            const double norm = g.norm();
            if (norm > config.clip_norm) g *= config.clip_norm / norm;
            ++t;
            m = beta1 * m + (1.0 - beta1) * g;
            v = beta2 * v + (1.0 - beta2) * g.cwiseAbs2();
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
            model.params.array() -= rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
        }
        rate *= config.lr_decay;
        ++model.epochs_trained;
        model.loss_history.push_back(lstm_loss(model, inputs, targets));
    }
    return model;
}

Eigen::VectorXd lstm_features(const State& state, LstmTargetMode mode) {
    const Eigen::VectorXd flat = flatten(state);
    return mode == LstmTargetMode::full ? flat : Eigen::VectorXd(flat.head(flat.size() / 2));
}

Eigen::MatrixXd lstm_features(const Trajectory& traj, LstmTargetMode mode) {
    if (traj.states.empty()) return {};
    Eigen::MatrixXd out(lstm_features(traj.front(), mode).size(), static_cast<Eigen::Index>(traj.size()));
    for (std::size_t k = 0; k < traj.size(); ++k)
        out.col(static_cast<Eigen::Index>(k)) = lstm_features(traj.states[k], mode);
    return out;
}

SequencePairs lstm_sequences(const std::vector<Trajectory>& trajectories, LstmTargetMode mode) {
    SequencePairs pairs;
    for (const auto& traj : trajectories) {
        if (traj.size() < 2) throw LengthMismatch("trajectory needs at least 2 states");
        const Eigen::MatrixXd f = lstm_features(traj, mode);
        pairs.inputs.push_back(f.leftCols(f.cols() - 1));
        pairs.targets.push_back(f.rightCols(f.cols() - 1));
    }
    return pairs;
}

Eigen::MatrixXd rollout(const LstmModel& model, const Eigen::MatrixXd& warmup, std::size_t n_steps) {
    if (warmup.rows() != model.features) throw DimensionMismatch("warmup has the wrong feature width");
    if (warmup.cols() < 1) throw LengthMismatch("warmup needs at least one state");
    Eigen::MatrixXd out(model.features, static_cast<Eigen::Index>(n_steps));
    if (n_steps == 0) return out;
    Eigen::VectorXd h = Eigen::VectorXd::Zero(model.hidden);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(model.hidden);
    Eigen::VectorXd x;
    const auto step = [&](const Eigen::VectorXd& raw) {
        const Eigen::VectorXd xs = (raw - model.in_mean).cwiseQuotient(model.in_scale);
        std::tie(h, c) = cell_step(model, h, c, xs);
        const Eigen::VectorXd y = model.v() * h + model.a();
        return Eigen::VectorXd(to_physical(model, raw, y));
    };
    for (Eigen::Index k = 0; k < warmup.cols(); ++k) x = step(warmup.col(k));
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        out.col(j) = x;
        if (j + 1 < out.cols()) x = step(x);
    }
    return out;
}

void save_lstm(const LstmModel& model, const std::filesystem::path& path) {
    const auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    json history = json::array();
    for (double l : model.loss_history) history.push_back(number_or_null(l));
    const json j{{"model", "lstm"},
                 {"version", kLstmFileVersion},
                 {"architecture", kArchitecture},
                 {"features", model.features},
                 {"hidden", model.hidden},
                 {"target", std::string(to_string(model.target))},
                 {"residual", model.residual},
                 {"warmup", model.warmup},
                 {"seed", model.seed},
                 {"epochs_trained", model.epochs_trained},
                 {"training_size", model.training_size},
                 {"loss_history", history},
                 {"in_mean", vec(model.in_mean)},
                 {"in_scale", vec(model.in_scale)},
                 {"out_mean", vec(model.out_mean)},
                 {"out_scale", vec(model.out_scale)},
                 {"params", vec(model.params)}};
    write_json_file(j, path);
}

LstmModel load_lstm(const std::filesystem::path& path) {
    const json j = read_json_file(path);
    if (j.value("model", "") != "lstm") throw FormatError(path.string() + ": not an LSTM model file");
    if (j.value("version", 0) != kLstmFileVersion)
        throw VersionMismatch(path.string() + ": LSTM file version " + std::to_string(j.value("version", 0)) +
                              ", expected " + std::to_string(kLstmFileVersion));
    try {
        if (j.at("architecture").get<std::string>() != kArchitecture) throw FormatError("unknown architecture");
        LstmModel m;
        m.features = j.at("features").get<int>();
        m.hidden = j.at("hidden").get<int>();
        m.target = lstm_target_mode_from_string(j.at("target").get<std::string>());
        m.residual = j.at("residual").get<bool>();
        m.warmup = j.at("warmup").get<std::size_t>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.epochs_trained = j.at("epochs_trained").get<std::size_t>();
        m.training_size = j.value("training_size", std::size_t{0});
        for (const auto& l : j.at("loss_history")) m.loss_history.push_back(number_or(l, std::nan("")));
        const auto vec = [&](const char* key, Eigen::Index n) {
            const auto v = j.at(key).get<std::vector<double>>();
            if (static_cast<Eigen::Index>(v.size()) != n) throw FormatError(std::string(key) + " has the wrong length");
            return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), n));
        };
        m.in_mean = vec("in_mean", m.features);
        m.in_scale = vec("in_scale", m.features);
        m.out_mean = vec("out_mean", m.features);
        m.out_scale = vec("out_scale", m.features);
        m.params = vec("params", static_cast<Eigen::Index>(lstm_param_count(m.features, m.hidden)));
        return m;
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace threebody
