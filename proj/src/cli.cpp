#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>

#include "threebody/cli.hpp"
#include "threebody/esn.hpp"
#include "threebody/eval.hpp"
#include "threebody/fixtures.hpp"
#include "threebody/hnn.hpp"
#include "threebody/json_io.hpp"
#include "threebody/lstm.hpp"

namespace threebody::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kToolVersion = "1.0.0";

struct Invocation {
    const CommandSpec* command = nullptr;
    json values = json::object();  // command options, resolved
    json common = json::object();  // --seed, --out, --workers, --quiet, --config
    std::vector<std::string> argv;
};

class Run {
public:
    Run(const Invocation& inv, std::ostream& out) : inv_(inv), out_(out) {}

    double real(const std::string& k) const { return inv_.values.at(k).get<double>(); }
    long long integer(const std::string& k) const { return inv_.values.at(k).get<long long>(); }
    std::size_t count(const std::string& k) const { return inv_.values.at(k).get<std::size_t>(); }
    std::string text(const std::string& k) const { return inv_.values.at(k).get<std::string>(); }
    bool flag(const std::string& k) const { return inv_.values.at(k).get<bool>(); }
    std::vector<double> reals(const std::string& k) const { return inv_.values.at(k).get<std::vector<double>>(); }
    std::vector<long long> integers(const std::string& k) const {
        return inv_.values.at(k).get<std::vector<long long>>();
    }

    std::uint64_t seed() const { return inv_.common.at("seed").get<std::uint64_t>(); }
    std::size_t workers() const { return inv_.common.at("workers").get<std::size_t>(); }
    fs::path root() const { return inv_.common.at("out").get<std::string>(); }
    bool quiet() const { return inv_.common.at("quiet").get<bool>(); }

    std::ostream& log() {
        static std::ostream null(nullptr);
        return quiet() ? null : out_;
    }

    void artifact(const fs::path& p) { artifacts_.push_back(p); }
    json& extra() { return extra_; }

    // runs/<command>-<UTC time>.json with the resolved configuration.
    void write_record(const std::string& status, const json& error) const {
        const auto now = std::chrono::system_clock::now();
        const std::time_t tt = std::chrono::system_clock::to_time_t(now);
        std::tm tm{};
        gmtime_r(&tt, &tm);
        char stamp[32];
        std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
        char iso[32];
        std::strftime(iso, sizeof iso, "%Y-%m-%dT%H:%M:%SZ", &tm);

        std::string base = inv_.command->path;
        std::replace(base.begin(), base.end(), ' ', '-');
        const fs::path dir = root() / "runs";
        fs::create_directories(dir);
        fs::path path = dir / (base + "-" + stamp + ".json");
        for (int n = 1; fs::exists(path); ++n) path = dir / (base + "-" + stamp + "-" + std::to_string(n) + ".json");

        json arts = json::array();
        for (const auto& a : artifacts_)
            arts.push_back({{"path", fs::relative(a, root()).generic_string()}, {"fnv1a64", file_fingerprint(a)}});
        json rec{{"command", inv_.command->path},
                 {"argv", inv_.argv},
                 {"config", inv_.values},
                 {"common", inv_.common},
                 {"seeds", {{"base", seed()}}},
                 {"versions",
                  {{"threebody", kToolVersion},
                   {"dataset_format", kDatasetFormatVersion},
                   {"report", EvalReport::kVersion},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                   {"cli11", CLI11_VERSION}}},
                 {"artifacts", arts},
                 {"status", status},
                 {"timestamp", iso}};
        if (!extra_.empty()) rec["results"] = extra_;
        if (!error.is_null()) rec["error"] = error;
        write_json_file(rec, path);
    }

private:
    const Invocation& inv_;
    std::ostream& out_;
    std::vector<fs::path> artifacts_;
    json extra_ = json::object();
};

json error_line(const std::string& kind, const std::string& message) {
    return json{{"error", kind}, {"message", message}};
}

// Fixture initial conditions shared by simulate and lyapunov.
State fixture_state(const Run& r) {
    const std::string name = r.text("fixture");
    const int dim = static_cast<int>(r.integer("dimension"));
    if (dim != 2 && dim != 3) throw ConfigError("dimension must be 2 or 3");
    if (name == "figure8") {
        const State s2 = fixtures::figure_eight();
        if (dim == 2) return s2;
        State s3(3);
        s3.positions.topRows(2) = s2.positions;
        s3.velocities.topRows(2) = s2.velocities;
        s3.masses = s2.masses;
        return s3;
    }
    if (name == "hierarchical") return fixtures::hierarchical_triple(dim);
    if (name == "random") {
        SamplerConfig c;
        c.dimension = dim;
        c.base_seed = r.seed();
        c.validate();
        return sample_initial(c, r.count("index"));
    }
    throw ConfigError("unknown fixture '" + name + "' (figure8, hierarchical, random)");
}

std::string trajectory_svg(const Trajectory& traj) {
    constexpr double size = 480, pad = 30;
    double lo_x = INFINITY, hi_x = -INFINITY, lo_y = INFINITY, hi_y = -INFINITY;
    for (const auto& s : traj.states) {
        lo_x = std::min(lo_x, s.positions.row(0).minCoeff());
        hi_x = std::max(hi_x, s.positions.row(0).maxCoeff());
        lo_y = std::min(lo_y, s.positions.row(1).minCoeff());
        hi_y = std::max(hi_y, s.positions.row(1).maxCoeff());
    }
    const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-12});
    const auto px = [&](double x) { return pad + (size - 2 * pad) * (x - lo_x) / span; };
    const auto py = [&](double y) { return size - pad - (size - 2 * pad) * (y - lo_y) / span; };
    static const char* colors[kBodies] = {"firebrick", "seagreen", "navy"};
    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"480\">\n"
                      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    char buf[64];
    for (int b = 0; b < kBodies; ++b) {
        out += "<polyline fill=\"none\" stroke=\"";
        out += colors[b];
        out += "\" points=\"";
        for (const auto& s : traj.states) {
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(s.positions(0, b)), py(s.positions(1, b)));
            out += buf;
        }
        out += "\"/>\n";
        std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"4\" fill=\"", px(traj.front().positions(0, b)),
                      py(traj.front().positions(1, b)));
        out += buf;
        out += colors[b];
        out += "\"/>\n";
    }
    out += "</svg>\n";
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path.string());
    f << text;
}

fs::path manifest_path(const Run& r) {
    const std::string p = r.text("dataset");
    return p.empty() ? r.root() / "dataset" / "manifest.json" : fs::path(p);
}

void cmd_generate(Run& r) {
    DatasetConfig c;
    c.n_train = r.count("n_train");
    c.n_test = r.count("n_test");
    c.steps = r.count("steps");
    c.sampler.dimension = static_cast<int>(r.integer("dimension"));
    const auto masses = r.reals("masses");
    if (masses.size() != kBodies) throw ConfigError("masses needs exactly 3 values");
    for (int i = 0; i < kBodies; ++i) c.sampler.masses(i) = masses[static_cast<std::size_t>(i)];
    c.sampler.min_separation = r.real("min_separation");
    c.sampler.base_seed = r.seed();
    c.sampler.velocity_mode = velocity_mode_from_string(r.text("velocity_mode"));
    c.sampler.velocity_scale = r.real("velocity_scale");
    c.integrator.sample_interval = r.real("dt_sample");
    c.integrator.tolerance = r.real("tolerance");
    c.integrator.extended_precision = r.flag("extended_precision");
    c.integrator.max_internal_steps = r.count("max_internal_steps");
    c.convergence_threshold = r.real("convergence_threshold");
    c.policy = policy_from_string(r.text("policy"));
    c.max_attempts = r.count("max_attempts");
    c.workers = r.workers();
    c.validate();

    const fs::path dir = r.root() / "dataset";
    const DatasetManifest m = generate_dataset(c, dir);
    r.artifact(dir / "manifest.json");
    std::size_t kept = 0;
    for (const auto* split : {&m.train, &m.test})
        for (const auto& rec : *split) kept += rec.converged ? 0 : 1;
    r.extra() = {{"train", m.train.size()}, {"test", m.test.size()}, {"non_converged", kept}};
    r.log() << "generated " << m.train.size() << " train and " << m.test.size() << " test trajectories ("
            << kept << " not converged) in " << dir.string() << '\n';
}

struct TrainingData {
    std::vector<Trajectory> trajectories;
    int dim = 2;
};

TrainingData training_data(Run& r) {
    const std::string recipe = r.text("recipe");
    TrainingData d;
    if (recipe == "periodic") {
        const std::size_t n = r.count("fixture_steps");
        if (n < 2) throw ConfigError("fixture_steps must be at least 2");
        IntegratorConfig ic;
        ic.tolerance = 1e-12;
        ic.sample_interval = 0.1;
        d.trajectories.push_back(
            converged_integrate(fixtures::figure_eight(), static_cast<double>(n - 1) * ic.sample_interval, ic));
        d.dim = 2;
        return d;
    }
    if (recipe != "general2d" && recipe != "general3d")
        throw ConfigError("unknown recipe '" + recipe + "' (periodic, general2d, general3d)");
    const int want = recipe == "general2d" ? 2 : 3;
    Dataset ds = read_dataset(manifest_path(r));
    if (ds.manifest.sampler.dimension != want)
        throw ConfigError("recipe " + recipe + " needs a " + std::to_string(want) + "D dataset, got " +
                          std::to_string(ds.manifest.sampler.dimension) + "D");
    d.trajectories = std::move(ds.train);
    d.dim = want;
    return d;
}

fs::path model_path(const Run& r, const std::string& kind) {
    std::string name = r.text("name");
    if (name.empty()) name = kind + "_" + r.text("recipe");
    return r.root() / "models" / (name + ".json");
}

void cmd_train_esn(Run& r) {
    EsnConfig c;
    c.reservoir_size = static_cast<int>(r.integer("reservoir_size"));
    c.density = r.real("density");
    c.spectral_radius = r.real("spectral_radius");
    c.input_scale = r.real("input_scale");
    c.ridge = r.real("ridge");
    c.washout = r.count("washout");
    c.leak = r.real("leak");
    c.readout = readout_activation_from_string(r.text("readout"));
    c.seed = r.seed();
    c.validate();

    const TrainingData data = training_data(r);
    const int width = 2 * kBodies * data.dim;
    EsnModel model;
    if (const std::string init = r.text("init"); !init.empty()) {
        model = load_esn(init);
        if (model.input_dim != width)
            throw ModelDatasetMismatch("initial model expects " + std::to_string(model.input_dim) +
                                       " features, data has " + std::to_string(width));
        // The reservoir is kept; only readout settings follow the flags.
        model.config.ridge = c.ridge;
        model.config.washout = c.washout;
        model.config.readout = c.readout;
    } else {
        model = init_reservoir(c, width);
    }
    model = fit_readout(std::move(model), data.trajectories);
    const fs::path path = model_path(r, "esn");
    fs::create_directories(path.parent_path());
    save_esn(model, path);
    r.artifact(path);
    r.extra() = {{"training_mse", model.training_mse}, {"achieved_radius", model.achieved_radius}};
    r.log() << "esn: " << data.trajectories.size() << " trajectories, training MSE " << model.training_mse
            << ", rho(W) " << model.achieved_radius << " -> " << path.string() << '\n';
}

void cmd_train_hnn(Run& r) {
    HnnConfig c;
    c.hidden.clear();
    for (long long h : r.integers("hidden")) c.hidden.push_back(static_cast<int>(h));
    c.loss = hnn_loss_mode_from_string(r.text("loss"));
    c.learning_rate = r.real("learning_rate");
    c.batch_size = r.count("batch_size");
    c.epochs = r.count("epochs");
    c.seed = r.seed();
    c.validate();

    const TrainingData data = training_data(r);
    std::vector<SupervisedPairs> parts;
    for (const auto& t : data.trajectories) parts.push_back(to_hnn_pairs(t));
    const SupervisedPairs pairs = concatenate(parts);
    const int width = 2 * kBodies * data.dim;

    HnnModel model;
    std::size_t previous = 0;
    if (const std::string init = r.text("init"); !init.empty()) {
        model = load_hnn(init);
        if (model.input_dim() != width)
            throw ModelDatasetMismatch("initial model expects " + std::to_string(model.input_dim()) +
                                       " inputs, data has " + std::to_string(width));
        previous = model.training_size;
    } else {
        model = init_hnn(width, c);
    }
    model = train_hnn(std::move(model), pairs, c);
    model.training_size = previous + data.trajectories.size();
    const fs::path path = model_path(r, "hnn");
    fs::create_directories(path.parent_path());
    save_hnn(model, path);
    r.artifact(path);
    const double first = model.loss_history.front(), last = model.loss_history.back();
    r.extra() = {{"initial_loss", first}, {"final_loss", last}};
    r.log() << "hnn: " << pairs.size() << " pairs, loss " << first << " -> " << last << " -> " << path.string()
            << '\n';
}

void cmd_train_lstm(Run& r) {
    LstmConfig c;
    c.hidden = static_cast<int>(r.integer("hidden"));
    c.target = lstm_target_mode_from_string(r.text("target"));
    c.residual = r.flag("residual");
    c.learning_rate = r.real("learning_rate");
    c.lr_decay = r.real("lr_decay");
    c.epochs = r.count("epochs");
    c.batch_size = r.count("batch_size");
    c.clip_norm = r.real("clip_norm");
    c.warmup = r.count("warmup");
    c.seed = r.seed();
    c.validate();

    const TrainingData data = training_data(r);
    const SequencePairs seqs = lstm_sequences(data.trajectories, c.target);
    const int features = static_cast<int>(seqs.inputs.front().rows());

    LstmModel model;
    std::size_t previous = 0;
    if (const std::string init = r.text("init"); !init.empty()) {
        // Warm starts keep the initial model's standardization.
        model = load_lstm(init);
        if (model.features != features || model.target != c.target)
            throw ModelDatasetMismatch("initial model expects " + std::to_string(model.features) + " " +
                                       std::string(to_string(model.target)) + " features, data has " +
                                       std::to_string(features) + " " + std::string(to_string(c.target)));
        previous = model.training_size;
        model.loss_history.clear();
    } else {
        model = init_lstm(features, c);
        fit_standardization(model, seqs.inputs, seqs.targets);
    }
    model = train_lstm(std::move(model), seqs.inputs, seqs.targets, c);
    model.training_size = previous + data.trajectories.size();
    const fs::path path = model_path(r, "lstm");
    fs::create_directories(path.parent_path());
    save_lstm(model, path);
    r.artifact(path);
    const double first = model.loss_history.front(), last = model.loss_history.back();
    r.extra() = {{"initial_loss", first}, {"final_loss", last}};
    r.log() << "lstm: " << seqs.inputs.size() << " sequences, loss " << first << " -> " << last << " -> "
            << path.string() << '\n';
}

void cmd_evaluate(Run& r) {
    EvalConfig c;
    c.error_threshold = r.real("error_threshold");
    c.levels = r.reals("levels");
    c.resamples = r.count("resamples");
    c.bootstrap_seed = r.seed();
    c.warmup = r.count("warmup");
    c.hnn_substeps = r.count("hnn_substeps");
    c.lyapunov_horizon = r.real("lyapunov_horizon");
    c.workers = r.workers();
    c.validate();

    const ModelKind kind = model_kind_from_string(r.text("model"));
    const std::string kind_name(to_string(kind));
    fs::path model = r.text("model_path");
    if (model.empty()) model = r.root() / "models" / (kind_name + "_general2d.json");
    std::string name = r.text("name");
    if (name.empty()) name = kind_name;

    const EvalReport report = evaluate_model(kind, model, manifest_path(r), c);
    const fs::path dir = r.root() / "reports" / name;
    write_report(report, dir);
    for (const char* f : {"report.json", "trajectories.csv", "summary.svg"}) r.artifact(dir / f);

    json tiers = json::object();
    for (Tier t : kTiers) tiers[std::string(to_string(t))] = report.tier_counts[static_cast<std::size_t>(t)];
    r.extra() = {{"median_horizon", number_or_null(report.horizon.median)}, {"tier_counts", tiers}};
    auto& log = r.log();
    log << kind_name << ": " << report.trajectories.size() << " test trajectories, horizon mean "
        << report.horizon.mean << " median " << report.horizon.median << "; tiers";
    for (Tier t : kTiers) log << ' ' << to_string(t) << '=' << report.tier_counts[static_cast<std::size_t>(t)];
    log << '\n';
    for (const auto& ci : report.horizon_ci)
        log << "  " << ci.level * 100 << "% CI of mean horizon: [" << ci.low << ", " << ci.high << "]\n";
    log << "report -> " << dir.string() << '\n';
}

void cmd_simulate(Run& r) {
    const State s = fixture_state(r);
    IntegratorConfig ic;
    ic.method = method_from_string(r.text("method"));
    ic.step = r.real("step");
    ic.tolerance = r.real("tolerance");
    ic.sample_interval = r.real("dt_sample");
    ic.validate();
    const double t_end = r.real("t_end");
    if (!(t_end > s.time)) throw ConfigError("t_end must be positive");
    const double threshold = r.real("threshold");
    if (!(threshold > 0.0)) throw ConfigError("threshold must be positive");

    const fs::path dir = r.root() / "reports" / "simulate";
    const fs::path csv = dir / (r.text("name") + ".csv");
    const fs::path svg = dir / (r.text("name") + ".svg");
    const auto emit = [&](const Trajectory& t) {
        fs::create_directories(dir);
        write_trajectory(t, csv);
        write_text(svg, trajectory_svg(t));
        r.artifact(csv);
        r.artifact(svg);
    };

    Trajectory traj;
    if (r.flag("certify") && ic.method == Method::bulirsch_stoer) {
        try {
            traj = converged_integrate(s, t_end, ic, threshold);
        } catch (const NotConverged& e) {
            emit(e.tight());
            throw;
        }
    } else {
        traj = integrate(s, t_end, ic);
    }
    emit(traj);
    const double closure = max_position_distance(traj.front(), traj.back());
    const EnergyDrift drift = energy_drift(traj);
    r.extra() = {{"samples", traj.size()},
                 {"converged", traj.meta.converged},
                 {"return_distance", closure},
                 {"energy_drift", number_or_null(drift.value)}};
    r.log() << "simulate: " << traj.size() << " samples to t = " << traj.back().time
            << ", |q(end) - q(0)|_max = " << closure << ", energy drift " << drift.value << " -> " << csv.string()
            << '\n';
}

void cmd_lyapunov(Run& r) {
    const State s = fixture_state(r);
    IntegratorConfig ic;
    ic.tolerance = r.real("tolerance");
    ic.extended_precision = r.flag("extended_precision");
    ic.validate();
    LyapunovOptions o;
    o.delta0 = r.real("delta0");
    o.horizon = r.real("horizon");
    o.renorm_interval = r.real("renorm_interval");
    o.transient = r.real("transient");
    if (!(o.delta0 > 0.0) || !(o.horizon > 0.0) || !(o.renorm_interval > 0.0) || !(o.transient >= 0.0) ||
        !(o.transient < o.horizon))
        throw ConfigError("need delta0, horizon, renorm_interval > 0 and 0 <= transient < horizon");

    const LyapunovEstimate e = estimate_lyapunov(s, ic, o);
    const fs::path path = r.root() / "reports" / "lyapunov" / (r.text("name") + ".json");
    fs::create_directories(path.parent_path());
    const json j{{"fixture", r.text("fixture")},
                 {"initial", flatten(s)},
                 {"masses", {s.masses(0), s.masses(1), s.masses(2)}},
                 {"lambda_max", e.lambda_max},
                 {"lyapunov_time", number_or_null(e.lyapunov_time)},
                 {"regular", std::isinf(e.lyapunov_time)},
                 {"running_lambda", e.running_lambda}};
    write_json_file(j, path);
    r.artifact(path);
    r.extra() = {{"lambda_max", e.lambda_max}, {"lyapunov_time", number_or_null(e.lyapunov_time)}};
    r.log() << "lambda_max = " << e.lambda_max << ", t_lyap = " << e.lyapunov_time << " -> " << path.string()
            << '\n';
}

const std::map<std::string, void (*)(Run&)>& handlers() {
    static const std::map<std::string, void (*)(Run&)> h{
        {"generate", cmd_generate},     {"train esn", cmd_train_esn}, {"train hnn", cmd_train_hnn},
        {"train lstm", cmd_train_lstm}, {"evaluate", cmd_evaluate},   {"simulate", cmd_simulate},
        {"lyapunov", cmd_lyapunov},
    };
    return h;
}

const OptionSpec* find_option(const std::vector<OptionSpec>& opts, const std::string& key) {
    for (const auto& o : opts)
        if (o.key == key) return &o;
    return nullptr;
}

// Defaults, then the config file, then flags.
Invocation resolve(const CommandSpec& cmd, const std::map<std::string, std::pair<CLI::Option*, std::string>>& given) {
    Invocation inv;
    inv.command = &cmd;
    for (const auto& o : cmd.options) inv.values[o.key] = json::parse(o.default_value);
    for (const auto& o : common_options()) inv.common[o.key] = json::parse(o.default_value);

    const auto is_set = [&](const std::string& key) {
        const auto it = given.find(key);
        return it != given.end() && it->second.first->count() > 0;
    };

    if (is_set("config")) {
        const fs::path path = given.at("config").second;
        inv.common["config"] = path.string();
        json file;
        try {
            file = read_json_file(path);
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
        if (!file.is_object()) throw ConfigError(path.string() + ": expected a JSON object of option values");
        for (const auto& [key, value] : file.items()) {
            if (const OptionSpec* o = find_option(cmd.options, key)) {
                inv.values[key] = check_config_value(*o, value);
            } else if (const OptionSpec* c = find_option(common_options(), key); c && key != "config") {
                inv.common[key] = check_config_value(*c, value);
            } else {
                throw ConfigError(path.string() + ": unknown key '" + key + "' for " + cmd.path);
            }
        }
    }
    try {
        for (const auto& o : cmd.options)
            if (is_set(o.key)) inv.values[o.key] = parse_flag_value(o, given.at(o.key).second);
        for (const auto& o : common_options()) {
            if (o.key == "config" || !is_set(o.key)) continue;
            inv.common[o.key] =
                o.type == ValueType::boolean ? json(true) : parse_flag_value(o, given.at(o.key).second);
        }
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    if (inv.common["workers"].get<std::size_t>() < 1) throw ConfigError("--workers must be at least 1");
    return inv;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Three-body trajectory generation, learned forecasters and horizon evaluation", "threebody"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    std::map<std::string, CLI::App*> apps;
    std::map<std::string, std::map<std::string, std::pair<CLI::Option*, std::string>>> given;
    CLI::App* train = nullptr;
    for (const auto& cmd : command_specs()) {
        CLI::App* sub = nullptr;
        if (cmd.path.rfind("train ", 0) == 0) {
            if (!train) {
                train = app.add_subcommand("train", "Train a forecaster (esn, hnn or lstm)");
                train->require_subcommand(1);
            }
            sub = train->add_subcommand(cmd.path.substr(6), cmd.help);
        } else {
            sub = app.add_subcommand(cmd.path, cmd.help);
        }
        apps[cmd.path] = sub;
        if (cmd.path == "flags") continue;
        auto& slots = given[cmd.path];
        for (const auto& o : common_options()) {
            auto& slot = slots[o.key];
            if (o.type == ValueType::boolean) {
                slot.first = sub->add_flag(flag_name(o.key), o.help);
            } else {
                slot.first = sub->add_option(flag_name(o.key), slot.second, o.help);
                slot.first->default_str(o.default_value)->type_name(type_name(o.type));
            }
        }
        for (const auto& o : cmd.options) {
            auto& slot = slots[o.key];
            slot.first = sub->add_option(flag_name(o.key), slot.second, o.help);
            slot.first->default_str(o.default_value)->type_name(type_name(o.type));
        }
    }

    if (!args.empty() && !args.front().empty() && args.front().front() != '-' && !app.get_subcommand_no_throw(args.front())) {
        const std::string msg = "unknown subcommand '" + args.front() + "'";
        err << app.help() << msg << '\n' << error_line("UsageError", msg).dump() << '\n';
        return kUsage;
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
            app.exit(e, out, err);
            return kOk;
        }
        err << app.help() << e.what() << '\n' << error_line("UsageError", e.what()).dump() << '\n';
        return kUsage;
    }

    const CommandSpec* chosen = nullptr;
    for (const auto& cmd : command_specs())
        if (apps[cmd.path]->parsed()) chosen = &cmd;
    if (!chosen) {
        err << app.help() << error_line("UsageError", "no subcommand given").dump() << '\n';
        return kUsage;
    }
    if (chosen->path == "flags") {
        out << flags_markdown();
        return kOk;
    }

    Invocation inv;
    try {
        inv = resolve(*chosen, given[chosen->path]);
        inv.argv = args;
    } catch (const Error& e) {
        err << error_line(e.kind(), e.what()).dump() << '\n';
        return dynamic_cast<const UsageError*>(&e) ? kUsage : kConfig;
    }

    Run r(inv, out);
    try {
        handlers().at(chosen->path)(r);
    } catch (const ConfigError& e) {
        err << error_line(e.kind(), e.what()).dump() << '\n';
        return kConfig;
    } catch (const UsageError& e) {
        err << error_line(e.kind(), e.what()).dump() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        const auto* domain = dynamic_cast<const Error*>(&e);
        const json line = error_line(domain ? domain->kind() : "RuntimeError", e.what());
        err << line.dump() << '\n';
        try {
            r.write_record("failed", line);
        } catch (const std::exception&) {
        }
        return kRuntimeFailure;
    }
    r.write_record("ok", nullptr);
    return kOk;
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace threebody::cli
