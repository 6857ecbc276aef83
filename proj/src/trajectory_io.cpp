#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "threebody/dataset.hpp"
#include "threebody/json_io.hpp"

namespace threebody {

namespace fs = std::filesystem;

namespace {

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t at = line.find(sep, start);
        out.push_back(trim(line.substr(start, at == std::string_view::npos ? std::string_view::npos : at - start)));
        if (at == std::string_view::npos) break;
        start = at + 1;
    }
    return out;
}

class Diagnostics {
public:
    explicit Diagnostics(const fs::path& path) : path_(path.string()) {}

    [[noreturn]] void fail(std::size_t line, const std::string& field, const std::string& what) const {
        std::string msg = path_ + ":" + std::to_string(line);
        if (!field.empty()) msg += ": field '" + field + "'";
        throw FormatError(msg + ": " + what);
    }

    double parse_double(std::string_view text, std::size_t line, const std::string& field) const {
        double v = 0.0;
        // from_chars does not accept a leading '+'.
        if (!text.empty() && text.front() == '+') text.remove_prefix(1);
        const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
        if (res.ec != std::errc() || res.ptr != text.data() + text.size())
            fail(line, field, "not a number: '" + std::string(text) + "'");
        return v;
    }

    std::uint64_t parse_uint(std::string_view text, std::size_t line, const std::string& field) const {
        std::uint64_t v = 0;
        const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
        if (res.ec != std::errc() || res.ptr != text.data() + text.size())
            fail(line, field, "not an unsigned integer: '" + std::string(text) + "'");
        return v;
    }

private:
    std::string path_;
};

}  // namespace

std::vector<std::string> trajectory_columns(int dim) {
    static constexpr const char* axes[] = {"x", "y", "z"};
    std::vector<std::string> cols{"t"};
    for (const char* kind : {"q", "v"})
        for (int b = 1; b <= kBodies; ++b)
            for (int a = 0; a < dim; ++a) cols.push_back(kind + std::to_string(b) + axes[a]);
    return cols;
}

void write_trajectory(const Trajectory& traj, const fs::path& path) {
    if (traj.states.empty()) throw std::invalid_argument("cannot write an empty trajectory");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    const State& s0 = traj.front();
    out << "# format_version=" << kDatasetFormatVersion << '\n';
    out << "# masses=" << format_double(s0.masses(0)) << ' ' << format_double(s0.masses(1)) << ' '
        << format_double(s0.masses(2)) << '\n';
    out << "# integrator=" << traj.meta.integrator << '\n';
    out << "# tolerance=" << format_double(traj.meta.tolerance) << '\n';
    out << "# step=" << format_double(traj.meta.step) << '\n';
    out << "# seed=" << traj.meta.seed << '\n';
    out << "# converged=" << (traj.meta.converged ? 1 : 0) << '\n';
    out << "# internal_steps=" << traj.meta.internal_steps << '\n';

    const auto cols = trajectory_columns(s0.dim());
    for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
    out << '\n';
    for (const State& s : traj.states) {
        const Eigen::VectorXd flat = flatten(s);
        out << format_double(s.time);
        for (Eigen::Index i = 0; i < flat.size(); ++i) out << ',' << format_double(flat(i));
        out << '\n';
    }
    if (!out) throw Error("write failed for " + path.string());
}

Trajectory read_trajectory(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path.string() + ": cannot open");
    const Diagnostics diag(path);

    std::map<std::string, std::string, std::less<>> meta;
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string_view> header;
    std::string header_line;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        if (line.front() == '#') {
            const std::string_view body = trim(std::string_view(line).substr(1));
            const std::size_t eq = body.find('=');
            if (eq == std::string_view::npos) diag.fail(line_no, "", "metadata line without '='");
            meta.emplace(std::string(trim(body.substr(0, eq))), std::string(trim(body.substr(eq + 1))));
            continue;
        }
        header_line = line;
        header = split(header_line, ',');
        break;
    }
    const auto version = meta.find("format_version");
    if (version == meta.end()) diag.fail(line_no, "format_version", "missing metadata");
    const std::uint64_t v = diag.parse_uint(version->second, line_no, "format_version");
    if (v != static_cast<std::uint64_t>(kDatasetFormatVersion))
        throw VersionMismatch(path.string() + ": trajectory format_version " + version->second + ", expected " +
                              std::to_string(kDatasetFormatVersion));
    if (header.empty()) diag.fail(line_no, "", "missing header row");

    int dim = 0;
    for (int d : {2, 3}) {
        const auto expected = trajectory_columns(d);
        if (header.size() == expected.size() && std::equal(header.begin(), header.end(), expected.begin()))
            dim = d;
    }
    if (dim == 0) diag.fail(line_no, "", "header does not match the 2D or 3D column layout");
    const auto cols = trajectory_columns(dim);

    const auto need = [&](const char* key) -> const std::string& {
        const auto it = meta.find(key);
        if (it == meta.end()) diag.fail(line_no, key, "missing metadata");
        return it->second;
    };
    Eigen::Vector3d masses;
    {
        const auto parts = split(need("masses"), ' ');
        if (parts.size() != 3) diag.fail(line_no, "masses", "expected 3 values");
        for (int b = 0; b < 3; ++b) masses(b) = diag.parse_double(parts[static_cast<std::size_t>(b)], line_no, "masses");
    }
    Trajectory traj;
    traj.meta.integrator = need("integrator");
    traj.meta.tolerance = diag.parse_double(need("tolerance"), line_no, "tolerance");
    traj.meta.step = diag.parse_double(need("step"), line_no, "step");
    traj.meta.seed = diag.parse_uint(need("seed"), line_no, "seed");
    traj.meta.converged = diag.parse_uint(need("converged"), line_no, "converged") != 0;
    traj.meta.internal_steps = diag.parse_uint(need("internal_steps"), line_no, "internal_steps");

    Eigen::VectorXd flat(static_cast<Eigen::Index>(cols.size()) - 1);
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split(line, ',');
        if (fields.size() != cols.size())
            diag.fail(line_no, "", "record " + std::to_string(traj.size()) + " has " + std::to_string(fields.size()) +
                                       " fields, expected " + std::to_string(cols.size()));
        const double t = diag.parse_double(fields[0], line_no, cols[0]);
        for (std::size_t c = 1; c < cols.size(); ++c)
            flat(static_cast<Eigen::Index>(c) - 1) = diag.parse_double(fields[c], line_no, cols[c]);
        traj.states.push_back(unflatten<double>(flat, masses, t));
    }
    if (traj.states.empty()) diag.fail(line_no, "", "no records");
    return traj;
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path.string() + ": cannot open");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_json_file(const json& j, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw Error("write failed for " + path.string());
}

std::string file_fingerprint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

}  // namespace threebody
