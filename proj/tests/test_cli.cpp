#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "threebody/cli.hpp"
#include "threebody/dataset.hpp"
#include "threebody/json_io.hpp"

using namespace threebody;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

std::vector<std::string> tiny_generate(const fs::path& out) {
    return {"generate", "--out", out.string(), "--n-train", "2", "--n-test", "1", "--steps", "15", "--seed", "3",
            "--tolerance", "1e-13", "--policy", "keep", "--quiet"};
}

std::vector<fs::path> run_records(const fs::path& root) {
    std::vector<fs::path> out;
    if (fs::exists(root / "runs"))
        for (const auto& e : fs::directory_iterator(root / "runs")) out.push_back(e.path());
    return out;
}

}  // namespace

TEST_CASE("exit codes") {
    TempDir dir("cli_codes");
    CHECK(invoke({"simulate", "--out", dir.path.string(), "--quiet"}).code == cli::kOk);

    const Result unknown = invoke({"bogus"});
    CHECK(unknown.code == cli::kUsage);
    CHECK(unknown.err.find("\"error\":\"UsageError\"") != std::string::npos);
    CHECK(invoke({"generate", "--n-train", "many"}).code == cli::kUsage);
    CHECK(invoke({"generate", "--no-such-flag", "1"}).code == cli::kUsage);
    CHECK(invoke({}).code == cli::kUsage);

    const fs::path cfg = dir.path / "bad.json";
    std::ofstream(cfg) << R"({"n_trian": 4})";
    const Result config = invoke({"generate", "--config", cfg.string(), "--out", dir.path.string()});
    CHECK(config.code == cli::kConfig);
    CHECK(config.err.find("n_trian") != std::string::npos);
    std::ofstream(cfg) << R"({"steps": "ten"})";
    CHECK(invoke({"generate", "--config", cfg.string(), "--out", dir.path.string()}).code == cli::kConfig);
    CHECK(invoke({"generate", "--config", (dir.path / "missing.json").string()}).code == cli::kConfig);
    CHECK(invoke({"generate", "--out", dir.path.string(), "--masses", "1,1"}).code == cli::kConfig);

    const Result runtime = invoke({"evaluate", "--model", "oracle", "--dataset", (dir.path / "none.json").string(),
                                   "--out", dir.path.string(), "--quiet"});
    CHECK(runtime.code == cli::kRuntimeFailure);
    CHECK(runtime.err.find("\"error\"") != std::string::npos);
}

TEST_CASE("simulate writes a periodic figure-eight") {
    TempDir dir("cli_sim");
    REQUIRE(invoke({"simulate", "--out", dir.path.string(), "--quiet"}).code == 0);
    const Trajectory t = read_trajectory(dir.path / "reports" / "simulate" / "simulate.csv");
    CHECK(t.size() == 64);
    CHECK((t.back().positions - t.front().positions).cwiseAbs().maxCoeff() < 1e-3);
    CHECK(fs::exists(dir.path / "reports" / "simulate" / "simulate.svg"));
    const auto records = run_records(dir.path);
    REQUIRE(records.size() == 1);
    const nlohmann::json rec = read_json_file(records.front());
    CHECK(rec.at("status") == "ok");
    CHECK(rec.at("command") == "simulate");
    CHECK(rec.at("artifacts").size() == 2);
}

TEST_CASE("generate is reproducible and recorded") {
    TempDir a("cli_gen_a"), b("cli_gen_b");
    REQUIRE(invoke(tiny_generate(a.path)).code == 0);
    REQUIRE(invoke(tiny_generate(b.path)).code == 0);
    const DatasetManifest m = read_manifest(a.path / "dataset" / "manifest.json");
    CHECK(m.train.size() == 2);
    CHECK(m.test.size() == 1);
    CHECK(m.steps == 15);
    CHECK(m.sampler.base_seed == 3);
    for (const auto& e : fs::recursive_directory_iterator(a.path / "dataset")) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), a.path);
        CHECK(slurp(e.path()) == slurp(b.path / rel));
    }
    const auto records = run_records(a.path);
    REQUIRE(records.size() == 1);
    const nlohmann::json rec = read_json_file(records.front());
    CHECK(rec.at("config").at("n_train") == 2);
    CHECK(rec.at("seeds").at("base") == 3);
    CHECK(rec.at("artifacts").size() >= 1);
}

TEST_CASE("flags override the config file, which overrides defaults") {
    TempDir dir("cli_precedence");
    const fs::path cfg = dir.path / "c.json";
    std::ofstream(cfg) << R"({"steps": 12, "n_test": 1, "n_train": 1, "policy": "keep", "tolerance": 1e-13})";
    REQUIRE(invoke({"generate", "--config", cfg.string(), "--steps", "9", "--out", dir.path.string(), "--quiet"})
                .code == 0);
    const DatasetManifest m = read_manifest(dir.path / "dataset" / "manifest.json");
    CHECK(m.steps == 9);
    CHECK(m.train.size() == 1);
    CHECK(m.dt_sample == 0.1);
}

TEST_CASE("help and the flags table cover every option") {
    const std::string table = invoke({"flags"}).out;
    for (const auto& cmd : cli::command_specs()) {
        if (cmd.path == "flags") continue;
        std::vector<std::string> args;
        std::istringstream words(cmd.path);
        for (std::string w; words >> w;) args.push_back(w);
        args.push_back("--help");
        const Result help = invoke(args);
        CHECK(help.code == 0);
        for (const auto& o : cmd.options) {
            CHECK_MESSAGE(help.out.find(cli::flag_name(o.key)) != std::string::npos, cmd.path, " ", o.key);
            CHECK(table.find("`" + cli::flag_name(o.key) + "`") != std::string::npos);
        }
        for (const auto& o : cli::common_options()) CHECK(help.out.find(cli::flag_name(o.key)) != std::string::npos);
    }
}

TEST_CASE("training and evaluation through the command line") {
    TempDir dir("cli_train");
    const std::string out = dir.path.string();
    REQUIRE(invoke({"train", "esn", "--recipe", "periodic", "--reservoir-size", "50", "--out", out, "--quiet"}).code ==
            0);
    CHECK(fs::exists(dir.path / "models" / "esn_periodic.json"));
    REQUIRE(invoke(tiny_generate(dir.path)).code == 0);
    CHECK(invoke({"train", "hnn", "--hidden", "8,8", "--epochs", "2", "--out", out, "--quiet"}).code == 0);
    CHECK(invoke({"train", "lstm", "--hidden", "4", "--epochs", "2", "--warmup", "5", "--out", out, "--quiet"}).code ==
          0);
    CHECK(invoke({"evaluate", "--model", "hnn", "--resamples", "50", "--lyapunov-horizon", "0", "--out", out,
                  "--quiet"})
              .code == 0);
    CHECK(fs::exists(dir.path / "reports" / "hnn" / "report.json"));
    // A 2D model on a 3D dataset is refused.
    TempDir d3("cli_train3");
    auto gen3 = tiny_generate(d3.path);
    gen3.insert(gen3.end(), {"--dimension", "3"});
    REQUIRE(invoke(gen3).code == 0);
    fs::copy(dir.path / "models", d3.path / "models");
    const Result mismatch = invoke({"evaluate", "--model", "hnn", "--model-path",
                                    (d3.path / "models" / "hnn_general2d.json").string(), "--out",
                                    d3.path.string(), "--quiet"});
    CHECK(mismatch.code == cli::kRuntimeFailure);
    CHECK(mismatch.err.find("ModelDatasetMismatch") != std::string::npos);
}
