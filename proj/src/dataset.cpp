#include "threebody/dataset.hpp"

#include <cstdio>
#include <random>
#include <sstream>

#include "threebody/json_io.hpp"
#include "threebody/parallel.hpp"

namespace threebody {

namespace fs = std::filesystem;

std::string_view to_string(VelocityMode mode) {
    return mode == VelocityMode::zero ? "zero" : "uniform";
}

std::string_view to_string(NonConvergedPolicy policy) {
    return policy == NonConvergedPolicy::resample ? "resample" : "keep";
}

VelocityMode velocity_mode_from_string(std::string_view s) {
    if (s == "zero") return VelocityMode::zero;
    if (s == "uniform") return VelocityMode::uniform;
    throw ConfigError("unknown velocity mode '" + std::string(s) + "'");
}

NonConvergedPolicy policy_from_string(std::string_view s) {
    if (s == "resample") return NonConvergedPolicy::resample;
    if (s == "keep") return NonConvergedPolicy::keep;
    throw ConfigError("unknown non-converged policy '" + std::string(s) + "'");
}

void SamplerConfig::validate() const {
    if (dimension != 2 && dimension != 3) throw ConfigError("dimension must be 2 or 3");
    if (!(min_separation > 0.0)) throw ConfigError("min_separation must be positive");
    if (!masses.allFinite() || (masses.array() < 0.0).any() || (masses.array() > 0.0).count() < 2)
        throw ConfigError("masses must be finite, non-negative, with at least two positive");
    if (!(velocity_scale >= 0.0)) throw ConfigError("velocity_scale must be non-negative");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

template <typename Rng>
Eigen::VectorXd uniform_in_ball(Rng& rng, int dim) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::VectorXd p(dim);
    do {
        for (int i = 0; i < dim; ++i) p(i) = u(rng);
    } while (p.squaredNorm() > 1.0);
    return p;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t index, std::uint64_t attempt) {
    return splitmix64(splitmix64(splitmix64(base_seed) ^ index) ^ (attempt * 0xD1B54A32D192ED03ULL));
}

State sample_initial(const SamplerConfig& config, std::uint64_t index, std::uint64_t attempt) {
    config.validate();
    std::mt19937_64 rng(derive_seed(config.base_seed, index, attempt));
    const int d = config.dimension;
    for (std::size_t tries = 0; tries < kMaxRejections; ++tries) {
        State s(d);
        s.masses = config.masses;
        for (int b = 0; b < kBodies; ++b) s.positions.col(b) = uniform_in_ball(rng, d);
        if (config.velocity_mode == VelocityMode::uniform)
            for (int b = 0; b < kBodies; ++b) s.velocities.col(b) = config.velocity_scale * uniform_in_ball(rng, d);
        s = recenter_to_com(s);
        if (min_separation(s) >= config.min_separation) return s;
    }
    throw RejectionExhausted("no configuration with separation >= " + format_real(config.min_separation) +
                             " after " + std::to_string(kMaxRejections) + " draws");
}

IntegratorConfig generation_integrator_defaults() {
    IntegratorConfig c;
    c.method = Method::bulirsch_stoer;
    c.tolerance = 1e-15;
    c.extended_precision = true;
    c.step = 0.1;
    c.sample_interval = 0.1;
    return c;
}

void DatasetConfig::validate() const {
    if (n_train < 1) throw ConfigError("n_train must be at least 1");
    if (n_test < 1) throw ConfigError("n_test must be at least 1");
    if (steps < 2) throw ConfigError("steps must be at least 2");
    if (max_attempts < 1) throw ConfigError("max_attempts must be at least 1");
    if (!(convergence_threshold > 0.0)) throw ConfigError("convergence_threshold must be positive");
    if (integrator.method != Method::bulirsch_stoer)
        throw ConfigError("dataset generation requires the bulirsch_stoer integrator");
    sampler.validate();
    integrator.validate();
}

bool TrajectoryRecord::operator==(const TrajectoryRecord& o) const {
    const bool same_div = (std::isnan(divergence_time) && std::isnan(o.divergence_time)) ||
                          divergence_time == o.divergence_time;
    return file == o.file && index == o.index && seed == o.seed && attempts == o.attempts &&
           converged == o.converged && same_div;
}

Trajectory generate_trajectory(const DatasetConfig& config, std::uint64_t index, TrajectoryRecord& record) {
    const double span = static_cast<double>(config.steps - 1) * config.integrator.sample_interval;
    std::string last_failure = "no attempt made";
    for (std::size_t attempt = 0; attempt < config.max_attempts; ++attempt) {
        const State start = sample_initial(config.sampler, index, attempt);
        record.index = index;
        record.seed = derive_seed(config.sampler.base_seed, index, attempt);
        record.attempts = attempt + 1;
        try {
            Trajectory traj = converged_integrate(start, start.time + span, config.integrator,
                                                  config.convergence_threshold);
            traj.meta.seed = record.seed;
            record.converged = true;
            record.divergence_time = std::numeric_limits<double>::quiet_NaN();
            return traj;
        } catch (const NotConverged& e) {
            last_failure = e.what();
            if (config.policy == NonConvergedPolicy::keep) {
                Trajectory traj = e.tight();
                traj.meta.seed = record.seed;
                traj.meta.converged = false;
                record.converged = false;
                record.divergence_time = e.divergence_time();
                return traj;
            }
        } catch (const IntegrationError& e) {
            // Close encounters the integrator cannot resolve are always resampled.
            last_failure = e.what();
        }
    }
    throw Error("index " + std::to_string(index) + ": retry budget of " + std::to_string(config.max_attempts) +
                " attempts exhausted; last failure: " + last_failure);
}

DatasetManifest generate_dataset(const DatasetConfig& config, const fs::path& out_dir) {
    config.validate();
    fs::create_directories(out_dir / "train");
    fs::create_directories(out_dir / "test");

    DatasetManifest manifest;
    manifest.steps = config.steps;
    manifest.dt_sample = config.integrator.sample_interval;
    manifest.integrator = config.integrator;
    manifest.sampler = config.sampler;
    manifest.convergence_threshold = config.convergence_threshold;
    manifest.policy = config.policy;
    manifest.max_attempts = config.max_attempts;

    const std::size_t total = config.n_train + config.n_test;
    std::vector<TrajectoryRecord> records(total);
    parallel_for(total, config.workers, [&](std::size_t i) {
        const bool is_train = i < config.n_train;
        const std::size_t local = is_train ? i : i - config.n_train;
        char name[64];
        std::snprintf(name, sizeof name, "%s/traj_%05zu.csv", is_train ? "train" : "test", local);
        TrajectoryRecord& rec = records[i];
        Trajectory traj = generate_trajectory(config, i, rec);
        rec.file = name;
        write_trajectory(traj, out_dir / name);
    });
    manifest.train.assign(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(config.n_train));
    manifest.test.assign(records.begin() + static_cast<std::ptrdiff_t>(config.n_train), records.end());
    write_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
    write_json_file(json(manifest), path);
}

DatasetManifest read_manifest(const fs::path& path) {
    const json j = read_json_file(path);
    if (!j.is_object() || !j.contains("format_version"))
        throw FormatError(path.string() + ": missing format_version");
    const int version = j.at("format_version").get<int>();
    if (version != kDatasetFormatVersion)
        throw VersionMismatch(path.string() + ": manifest format_version " + std::to_string(version) +
                              ", expected " + std::to_string(kDatasetFormatVersion));
    try {
        return j.get<DatasetManifest>();
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

Dataset read_dataset(const fs::path& manifest_path) {
    Dataset ds;
    ds.manifest = read_manifest(manifest_path);
    const fs::path root = manifest_path.parent_path();
    const auto load = [&](const std::vector<TrajectoryRecord>& records, std::vector<Trajectory>& out) {
        out.reserve(records.size());
        for (const auto& rec : records) {
            const fs::path file = root / rec.file;
            if (!fs::exists(file))
                throw FormatError(manifest_path.string() + ": listed trajectory file missing: " + file.string());
            Trajectory traj = read_trajectory(file);
            try {
                traj.validate(ds.manifest.integrator.separation_floor);
            } catch (const FormatError& e) {
                throw FormatError(file.string() + ": " + e.what());
            }
            if (traj.size() != ds.manifest.steps)
                throw FormatError(file.string() + ": expected " + std::to_string(ds.manifest.steps) +
                                  " samples, found " + std::to_string(traj.size()));
            out.push_back(std::move(traj));
        }
    };
    load(ds.manifest.train, ds.train);
    load(ds.manifest.test, ds.test);
    return ds;
}

SupervisedPairs to_next_state_pairs(const Trajectory& traj) {
    if (traj.size() < 2) throw std::invalid_argument("trajectory needs at least 2 states");
    const Eigen::Index n = static_cast<Eigen::Index>(traj.size()) - 1;
    const Eigen::Index width = traj.front().flat_size();
    SupervisedPairs pairs{Eigen::MatrixXd(width, n), Eigen::MatrixXd(width, n)};
    for (Eigen::Index k = 0; k < n; ++k) {
        pairs.inputs.col(k) = flatten(traj.states[static_cast<std::size_t>(k)]);
        pairs.targets.col(k) = flatten(traj.states[static_cast<std::size_t>(k) + 1]);
    }
    return pairs;
}

SupervisedPairs to_hnn_pairs(const Trajectory& traj) {
    if (traj.size() < 2) throw std::invalid_argument("trajectory needs at least 2 states");
    const Eigen::Index n = static_cast<Eigen::Index>(traj.size());
    const Eigen::Index width = traj.front().flat_size();
    SupervisedPairs pairs{Eigen::MatrixXd(width, n), Eigen::MatrixXd(width, n)};
    for (Eigen::Index k = 0; k < n; ++k) {
        const State& s = traj.states[static_cast<std::size_t>(k)];
        pairs.inputs.col(k) = to_canonical(s);
        pairs.targets.col(k) = flatten(phase_derivative(s));
    }
    return pairs;
}

SupervisedPairs concatenate(const std::vector<SupervisedPairs>& parts) {
    if (parts.empty()) return {};
    Eigen::Index total = 0;
    for (const auto& p : parts) total += p.size();
    SupervisedPairs out{Eigen::MatrixXd(parts.front().inputs.rows(), total),
                        Eigen::MatrixXd(parts.front().targets.rows(), total)};
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        if (p.inputs.rows() != out.inputs.rows() || p.targets.rows() != out.targets.rows())
            throw DimensionMismatch("supervised pairs of different widths cannot be concatenated");
        out.inputs.middleCols(at, p.size()) = p.inputs;
        out.targets.middleCols(at, p.size()) = p.targets;
        at += p.size();
    }
    return out;
}

// ---- JSON mappings -------------------------------------------------------

void to_json(json& j, const IntegratorConfig& c) {
    j = json{{"method", std::string(to_string(c.method))},
             {"step", c.step},
             {"tolerance", c.tolerance},
             {"sample_interval", c.sample_interval},
             {"max_internal_steps", c.max_internal_steps},
             {"separation_floor", c.separation_floor},
             {"extended_precision", c.extended_precision}};
}

void from_json(const json& j, IntegratorConfig& c) {
    c.method = method_from_string(j.at("method").get<std::string>());
    c.step = j.at("step").get<double>();
    c.tolerance = j.at("tolerance").get<double>();
    c.sample_interval = j.at("sample_interval").get<double>();
    c.max_internal_steps = j.at("max_internal_steps").get<std::size_t>();
    c.separation_floor = j.at("separation_floor").get<double>();
    c.extended_precision = j.value("extended_precision", false);
}

void to_json(json& j, const SamplerConfig& c) {
    j = json{{"law", "uniform_ball_com_recentred"},
             {"dimension", c.dimension},
             {"masses", {c.masses(0), c.masses(1), c.masses(2)}},
             {"min_separation", c.min_separation},
             {"base_seed", c.base_seed},
             {"velocity_mode", std::string(to_string(c.velocity_mode))},
             {"velocity_scale", c.velocity_scale}};
}

void from_json(const json& j, SamplerConfig& c) {
    c.dimension = j.at("dimension").get<int>();
    const auto m = j.at("masses").get<std::vector<double>>();
    if (m.size() != 3) throw FormatError("sampler masses must have 3 entries");
    c.masses << m[0], m[1], m[2];
    c.min_separation = j.at("min_separation").get<double>();
    c.base_seed = j.at("base_seed").get<std::uint64_t>();
    c.velocity_mode = velocity_mode_from_string(j.at("velocity_mode").get<std::string>());
    c.velocity_scale = j.at("velocity_scale").get<double>();
}

void to_json(json& j, const TrajectoryRecord& r) {
    j = json{{"file", r.file},
             {"index", r.index},
             {"seed", r.seed},
             {"attempts", r.attempts},
             {"converged", r.converged},
             {"divergence_time", number_or_null(r.divergence_time)}};
}

void from_json(const json& j, TrajectoryRecord& r) {
    r.file = j.at("file").get<std::string>();
    r.index = j.at("index").get<std::uint64_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.attempts = j.at("attempts").get<std::size_t>();
    r.converged = j.at("converged").get<bool>();
    r.divergence_time = number_or(j.at("divergence_time"), std::numeric_limits<double>::quiet_NaN());
}

void to_json(json& j, const DatasetManifest& m) {
    j = json{{"format_version", m.format_version},
             {"counts", {{"train", m.train.size()}, {"test", m.test.size()}}},
             {"steps", m.steps},
             {"dt_sample", m.dt_sample},
             {"integrator", m.integrator},
             {"convergence_threshold", m.convergence_threshold},
             {"sampler", m.sampler},
             {"policy", std::string(to_string(m.policy))},
             {"max_attempts", m.max_attempts},
             {"train", m.train},
             {"test", m.test}};
}

void from_json(const json& j, DatasetManifest& m) {
    m.format_version = j.at("format_version").get<int>();
    m.steps = j.at("steps").get<std::size_t>();
    m.dt_sample = j.at("dt_sample").get<double>();
    m.integrator = j.at("integrator").get<IntegratorConfig>();
    m.convergence_threshold = j.at("convergence_threshold").get<double>();
    m.sampler = j.at("sampler").get<SamplerConfig>();
    m.policy = policy_from_string(j.at("policy").get<std::string>());
    m.max_attempts = j.at("max_attempts").get<std::size_t>();
    m.train = j.at("train").get<std::vector<TrajectoryRecord>>();
    m.test = j.at("test").get<std::vector<TrajectoryRecord>>();
    const auto& counts = j.at("counts");
    if (counts.at("train").get<std::size_t>() != m.train.size() ||
        counts.at("test").get<std::size_t>() != m.test.size())
        throw FormatError("manifest counts disagree with the listed trajectories");
    if (m.train.empty() || m.test.empty()) throw FormatError("manifest counts must be at least 1");
}

}  // namespace threebody
