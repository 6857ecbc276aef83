#include <charconv>
#include <cstdio>
#include <fstream>

#include "threebody/eval.hpp"
#include "threebody/json_io.hpp"

namespace threebody {

namespace {

json summary_json(const Summary& s) {
    return json{{"mean", number_or_null(s.mean)},
                {"median", number_or_null(s.median)},
                {"max", number_or_null(s.max)},
                {"count", s.count}};
}

Summary summary_from(const json& j) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    Summary s;
    s.mean = number_or(j.at("mean"), nan);
    s.median = number_or(j.at("median"), nan);
    s.max = number_or(j.at("max"), nan);
    s.count = j.at("count").get<std::size_t>();
    return s;
}

const char* lyap_status(double t) {
    if (std::isnan(t)) return "unavailable";
    if (std::isinf(t)) return "regular";
    return "estimated";
}

std::string num(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace

void write_report(const EvalReport& report, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    json per = json::array();
    for (const auto& r : report.trajectories) {
        json mae = json::array();
        for (double m : r.mae) mae.push_back(number_or_null(m));
        per.push_back({{"index", r.index},
                       {"horizon", r.horizon},
                       {"tier", std::string(to_string(r.tier))},
                       {"t_lyap", number_or_null(r.t_lyap)},
                       {"t_lyap_status", lyap_status(r.t_lyap)},
                       {"normalized_horizon", r.normalized_horizon ? json(*r.normalized_horizon) : json(nullptr)},
                       {"mean_mae", number_or_null(r.mean_mae)},
                       {"velocity_mae", number_or_null(r.velocity_mae)},
                       {"energy_drift", number_or_null(r.energy.value)},
                       {"energy_truncated", r.energy.truncated},
                       {"energy_valid_states", r.energy.valid_states},
                       {"mae", mae}});
    }
    json tiers = json::object();
    for (Tier t : kTiers) tiers[std::string(to_string(t))] = report.tier_counts[static_cast<std::size_t>(t)];
    json ci = json::array();
    for (const auto& i : report.horizon_ci) ci.push_back({{"level", i.level}, {"low", i.low}, {"high", i.high}});
    const json j{{"report_version", EvalReport::kVersion},
                 {"model", {{"kind", report.model_kind}, {"id", report.model_id}, {"training_size", report.training_size}}},
                 {"dataset", {{"id", report.dataset_id}, {"dt_sample", report.dt_sample}}},
                 {"config",
                  {{"error_threshold", report.error_threshold},
                   {"warmup", report.warmup},
                   {"resamples", report.resamples},
                   {"bootstrap_seed", report.bootstrap_seed}}},
                 {"aggregate",
                  {{"horizon", summary_json(report.horizon)},
                   {"tier_counts", tiers},
                   {"horizon_ci", ci},
                   {"energy_drift", summary_json(report.energy_drift)},
                   {"normalized_horizon", summary_json(report.normalized_horizon)}}},
                 {"trajectories", per}};
    write_json_file(j, out_dir / "report.json");

    std::ofstream csv(out_dir / "trajectories.csv", std::ios::binary);
    if (!csv) throw Error("cannot write " + (out_dir / "trajectories.csv").string());
    csv << "index,horizon,tier,t_lyap,normalized_horizon,mean_mae,energy_drift\n";
    for (const auto& r : report.trajectories) {
        csv << r.index << ',' << num(r.horizon) << ',' << to_string(r.tier) << ',' << num(r.t_lyap) << ','
            << (r.normalized_horizon ? num(*r.normalized_horizon) : std::string()) << ',' << num(r.mean_mae) << ','
            << num(r.energy.value) << '\n';
    }

    std::ofstream svg(out_dir / "summary.svg", std::ios::binary);
    if (!svg) throw Error("cannot write " + (out_dir / "summary.svg").string());
    svg << report_svg(report);
}

EvalReport read_report(const std::filesystem::path& json_path) {
    const json j = read_json_file(json_path);
    const int version = j.value("report_version", 0);
    if (version != EvalReport::kVersion)
        throw VersionMismatch(json_path.string() + ": report_version " + std::to_string(version) + ", expected " +
                              std::to_string(EvalReport::kVersion));
    try {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        EvalReport r;
        r.model_kind = j.at("model").at("kind").get<std::string>();
        r.model_id = j.at("model").at("id").get<std::string>();
        r.training_size = j.at("model").at("training_size").get<std::size_t>();
        r.dataset_id = j.at("dataset").at("id").get<std::string>();
        r.dt_sample = j.at("dataset").at("dt_sample").get<double>();
        const json& c = j.at("config");
        r.error_threshold = c.at("error_threshold").get<double>();
        r.warmup = c.at("warmup").get<std::size_t>();
        r.resamples = c.at("resamples").get<std::size_t>();
        r.bootstrap_seed = c.at("bootstrap_seed").get<std::uint64_t>();
        const json& a = j.at("aggregate");
        r.horizon = summary_from(a.at("horizon"));
        r.energy_drift = summary_from(a.at("energy_drift"));
        r.normalized_horizon = summary_from(a.at("normalized_horizon"));
        for (Tier t : kTiers)
            r.tier_counts[static_cast<std::size_t>(t)] = a.at("tier_counts").at(std::string(to_string(t))).get<std::size_t>();
        for (const auto& i : a.at("horizon_ci"))
            r.horizon_ci.push_back({i.at("level").get<double>(), i.at("low").get<double>(), i.at("high").get<double>()});
        for (const auto& t : j.at("trajectories")) {
            TrajectoryResult x;
            x.index = t.at("index").get<std::uint64_t>();
            x.horizon = t.at("horizon").get<double>();
            x.tier = tier_from_string(t.at("tier").get<std::string>());
            const std::string status = t.at("t_lyap_status").get<std::string>();
            x.t_lyap = status == "regular" ? std::numeric_limits<double>::infinity() : number_or(t.at("t_lyap"), nan);
            if (!t.at("normalized_horizon").is_null()) x.normalized_horizon = t.at("normalized_horizon").get<double>();
            x.mean_mae = number_or(t.at("mean_mae"), nan);
            x.velocity_mae = number_or(t.at("velocity_mae"), nan);
            x.energy.value = number_or(t.at("energy_drift"), nan);
            x.energy.truncated = t.at("energy_truncated").get<bool>();
            x.energy.valid_states = t.at("energy_valid_states").get<std::size_t>();
            for (const auto& m : t.at("mae")) x.mae.push_back(number_or(m, nan));
            r.trajectories.push_back(std::move(x));
        }
        return r;
    } catch (const json::exception& e) {
        throw FormatError(json_path.string() + ": " + e.what());
    }
}

std::string report_svg(const EvalReport& report) {
    constexpr double W = 900, H = 360, pad = 50, panel = (W - 3 * pad) / 2, plot_h = H - 2 * pad;
    std::string out;
    char buf[512];
    const auto emit = [&](const char* fmt, auto... args) {
        std::snprintf(buf, sizeof buf, fmt, args...);
        out += buf;
    };
    emit("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" font-family=\"sans-serif\" "
         "font-size=\"12\">\n",
         W, H);
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    // Horizon histogram.
    std::size_t longest = 0;
    for (const auto& r : report.trajectories) longest = std::max(longest, r.mae.size());
    const double span = longest > 1 ? static_cast<double>(longest - 1) * report.dt_sample : 1.0;
    constexpr int bins = 20;
    std::array<int, bins> counts{};
    for (const auto& r : report.trajectories) {
        const int b = std::min(bins - 1, static_cast<int>(r.horizon / span * bins));
        ++counts[static_cast<std::size_t>(std::max(0, b))];
    }
    const int peak = std::max(1, *std::max_element(counts.begin(), counts.end()));
    emit("<text x=\"%g\" y=\"%g\">prediction horizon (n = %zu)</text>\n", pad, pad - 15,
         report.trajectories.size());
    for (int b = 0; b < bins; ++b) {
        const double h = plot_h * counts[static_cast<std::size_t>(b)] / peak;
        emit("<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"steelblue\"/>\n",
             pad + panel * b / bins, pad + plot_h - h, panel / bins - 1, h);
    }
    emit("<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", pad, pad + plot_h, pad + panel,
         pad + plot_h);
    emit("<text x=\"%g\" y=\"%g\">0</text><text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.3g</text>\n", pad,
         pad + plot_h + 15, pad + panel, pad + plot_h + 15, span);

    // Median MAE with interquartile band.
    const double x0 = 2 * pad + panel;
    std::vector<double> lo, med, hi;
    double top = report.error_threshold;
    for (std::size_t k = 0; k < longest; ++k) {
        std::vector<double> col;
        for (const auto& r : report.trajectories)
            if (k < r.mae.size() && std::isfinite(r.mae[k])) col.push_back(r.mae[k]);
        std::sort(col.begin(), col.end());
        const double nan = std::numeric_limits<double>::quiet_NaN();
        lo.push_back(col.empty() ? nan : quantile_sorted(col, 0.25));
        med.push_back(col.empty() ? nan : quantile_sorted(col, 0.5));
        hi.push_back(col.empty() ? nan : quantile_sorted(col, 0.75));
        if (!col.empty()) top = std::max(top, hi.back());
    }
    top = std::min(top, 10 * report.error_threshold);
    const auto px = [&](std::size_t k) { return x0 + panel * static_cast<double>(k) / std::max<double>(1, longest - 1); };
    const auto py = [&](double v) { return pad + plot_h * (1.0 - std::min(v, top) / top); };
    emit("<text x=\"%g\" y=\"%g\">position MAE: median and IQR</text>\n", x0, pad - 15);
    std::string band, line;
    for (std::size_t k = 0; k < longest; ++k)
        if (std::isfinite(hi[k])) {
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(k), py(hi[k]));
            band += buf;
        }
    for (std::size_t k = longest; k-- > 0;)
        if (std::isfinite(lo[k])) {
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(k), py(lo[k]));
            band += buf;
        }
    for (std::size_t k = 0; k < longest; ++k)
        if (std::isfinite(med[k])) {
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(k), py(med[k]));
            line += buf;
        }
    out += "<polygon points=\"" + band + "\" fill=\"lightsteelblue\" stroke=\"none\"/>\n";
    out += "<polyline points=\"" + line + "\" fill=\"none\" stroke=\"navy\"/>\n";
    emit("<line x1=\"%g\" y1=\"%.2f\" x2=\"%g\" y2=\"%.2f\" stroke=\"firebrick\" stroke-dasharray=\"4 3\"/>\n", x0,
         py(report.error_threshold), x0 + panel, py(report.error_threshold));
    emit("<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", x0, pad + plot_h, x0 + panel,
         pad + plot_h);
    emit("<text x=\"%g\" y=\"%g\">0</text><text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.3g</text>\n", x0,
         pad + plot_h + 15, x0 + panel, pad + plot_h + 15, span);
    emit("<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.3g</text>\n", x0 - 4, pad + 4, top);
    out += "</svg>\n";
    return out;
}

}  // namespace threebody
