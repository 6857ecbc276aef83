#include <charconv>
#include <sstream>

#include "threebody/cli.hpp"
#include "threebody/errors.hpp"

namespace threebody::cli {

using nlohmann::json;

namespace {

using V = ValueType;

std::vector<OptionSpec> training_common() {
    return {
        {"recipe", V::text, "\"general2d\"", "periodic (figure-8 fixture), general2d or general3d"},
        {"dataset", V::text, "\"\"", "manifest for the general recipes [default: <out>/dataset/manifest.json]"},
        {"init", V::text, "\"\"", "model file to continue from"},
        {"fixture_steps", V::unsigned_integer, "100", "samples of the figure-8 fixture for the periodic recipe"},
        {"name", V::text, "\"\"", "model file stem [default: <model>_<recipe>]"},
    };
}

std::vector<OptionSpec> with(std::vector<OptionSpec> base, std::vector<OptionSpec> more) {
    base.insert(base.end(), more.begin(), more.end());
    return base;
}

}  // namespace

const char* type_name(ValueType t) {
    switch (t) {
        case V::integer: return "int";
        case V::unsigned_integer: return "uint";
        case V::real: return "real";
        case V::text: return "string";
        case V::boolean: return "bool";
        case V::real_list: return "real list";
        case V::integer_list: return "int list";
    }
    return "?";
}

namespace {

template <typename T>
bool parse_number(std::string_view s, T& out) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size() && !s.empty();
}

[[noreturn]] void bad_value(const OptionSpec& spec, const std::string& text) {
    throw ConfigError(flag_name(spec.key) + ": expected " + type_name(spec.type) + ", got '" + text + "'");
}

}  // namespace

const std::vector<OptionSpec>& common_options() {
    static const std::vector<OptionSpec> opts{
        {"config", V::text, "\"\"", "JSON file of option values; flags override it"},
        {"seed", V::unsigned_integer, "0", "base seed for sampling, initialization and bootstrap"},
        {"out", V::text, "\".\"", "root of dataset/, models/, reports/ and runs/"},
        {"workers", V::unsigned_integer, "1", "worker threads for per-trajectory work"},
        {"quiet", V::boolean, "false", "suppress progress output"},
    };
    return opts;
}

const std::vector<CommandSpec>& command_specs() {
    static const std::vector<CommandSpec> specs{
        {"generate",
         "Generate a ground-truth dataset under <out>/dataset",
         {
             {"n_train", V::unsigned_integer, "500", "training trajectories"},
             {"n_test", V::unsigned_integer, "50", "test trajectories"},
             {"steps", V::unsigned_integer, "100", "samples per trajectory"},
             {"dt_sample", V::real, "0.1", "sample spacing"},
             {"dimension", V::integer, "2", "spatial dimension (2 or 3)"},
             {"masses", V::real_list, "[1.0,1.0,1.0]", "body masses"},
             {"min_separation", V::real, "0.1", "rejection threshold on initial pairwise distance"},
             {"velocity_mode", V::text, "\"zero\"", "zero or uniform initial velocities"},
             {"velocity_scale", V::real, "0.0", "radius of the uniform velocity ball"},
             {"tolerance", V::real, "1e-15", "Bulirsch-Stoer tolerance of the looser certificate run"},
             {"extended_precision", V::boolean, "true", "integrate in long double"},
             {"max_internal_steps", V::unsigned_integer, "1000000", "step budget per integration"},
             {"convergence_threshold", V::real, "1e-6", "largest position disagreement accepted"},
             {"policy", V::text, "\"resample\"", "resample or keep non-converged trajectories"},
             {"max_attempts", V::unsigned_integer, "200", "resampling budget per trajectory"},
         }},
        {"train esn",
         "Fit an echo state network readout",
         with(training_common(),
              {
                  {"reservoir_size", V::integer, "300", "reservoir units"},
                  {"density", V::real, "0.05", "fraction of nonzero reservoir weights"},
                  {"spectral_radius", V::real, "0.9", "target spectral radius of W"},
                  {"input_scale", V::real, "0.5", "W_in entries uniform in [-s, s]"},
                  {"ridge", V::real, "1e-6", "ridge penalty"},
                  {"washout", V::unsigned_integer, "20", "discarded leading states per sequence"},
                  {"leak", V::real, "1.0", "leak rate in (0, 1]"},
                  {"readout", V::text, "\"identity\"", "identity or tanh"},
              })},
        {"train hnn",
         "Train a Hamiltonian neural network",
         with(training_common(),
              {
                  {"hidden", V::integer_list, "[64,64]", "hidden layer widths"},
                  {"loss", V::text, "\"squared\"", "squared or norm"},
                  {"learning_rate", V::real, "1e-3", "Adam step size"},
                  {"batch_size", V::unsigned_integer, "128", "pairs per step"},
                  {"epochs", V::unsigned_integer, "500", "passes over the pairs"},
              })},
        {"train lstm",
         "Train the LSTM baseline",
         with(training_common(),
              {
                  {"hidden", V::integer, "64", "hidden units"},
                  {"target", V::text, "\"full\"", "full or positions"},
                  {"residual", V::boolean, "true", "predict the increment over the input"},
                  {"learning_rate", V::real, "1e-3", "Adam step size"},
                  {"lr_decay", V::real, "1.0", "per-epoch learning rate factor"},
                  {"epochs", V::unsigned_integer, "200", "passes over the sequences"},
                  {"batch_size", V::unsigned_integer, "16", "sequences per step"},
                  {"clip_norm", V::real, "1.0", "gradient norm cap"},
                  {"warmup", V::unsigned_integer, "20", "teacher-forced prefix before closed loop"},
              })},
        {"evaluate",
         "Score a model on the test split and write a report",
         {
             {"model", V::text, "\"esn\"", "esn, hnn, lstm, oracle or constant"},
             {"model_path", V::text, "\"\"", "model file [default: <out>/models/<model>_general2d.json]"},
             {"dataset", V::text, "\"\"", "manifest [default: <out>/dataset/manifest.json]"},
             {"error_threshold", V::real, "0.1", "position MAE bar for the horizon"},
             {"levels", V::real_list, "[0.9,0.95,0.98]", "confidence levels"},
             {"resamples", V::unsigned_integer, "1000", "bootstrap resamples"},
             {"warmup", V::unsigned_integer, "0", "teacher-forced prefix (0: the model's own)"},
             {"hnn_substeps", V::unsigned_integer, "10", "RK4 steps per sample for HNN rollouts"},
             {"lyapunov_horizon", V::real, "100.0", "span of per-trajectory Lyapunov estimates (0 skips)"},
             {"name", V::text, "\"\"", "report directory under reports/ [default: the model kind]"},
         }},
        {"simulate",
         "Integrate one initial condition to CSV and SVG under <out>/reports/simulate",
         {
             {"fixture", V::text, "\"figure8\"", "figure8, hierarchical or random"},
             {"index", V::unsigned_integer, "0", "sampler index for the random fixture"},
             {"dimension", V::integer, "2", "spatial dimension"},
             {"t_end", V::real, "6.32591398", "final time"},
             {"dt_sample", V::real, "0.1", "sample spacing"},
             {"method", V::text, "\"bulirsch_stoer\"", "rk4, leapfrog or bulirsch_stoer"},
             {"step", V::real, "1e-2", "fixed step (rk4, leapfrog)"},
             {"tolerance", V::real, "1e-12", "Bulirsch-Stoer tolerance"},
             {"certify", V::boolean, "true", "run the two-tolerance convergence check"},
             {"threshold", V::real, "1e-6", "certificate threshold"},
             {"name", V::text, "\"simulate\"", "output file stem"},
         }},
        {"lyapunov",
         "Estimate the largest Lyapunov exponent of one initial condition",
         {
             {"fixture", V::text, "\"figure8\"", "figure8, hierarchical or random"},
             {"index", V::unsigned_integer, "0", "sampler index for the random fixture"},
             {"dimension", V::integer, "2", "spatial dimension"},
             {"tolerance", V::real, "1e-14", "Bulirsch-Stoer tolerance"},
             {"extended_precision", V::boolean, "true", "integrate in long double (double is noise-limited)"},
             {"delta0", V::real, "1e-8", "initial offset"},
             {"horizon", V::real, "100.0", "integration span"},
             {"renorm_interval", V::real, "1.0", "renormalization window"},
             {"transient", V::real, "10.0", "leading span excluded from the average"},
             {"name", V::text, "\"lyapunov\"", "output file stem"},
         }},
        {"flags", "Print the flag reference as Markdown", {}},
    };
    return specs;
}

std::string flag_name(const std::string& key) {
    std::string f = "--" + key;
    for (char& c : f)
        if (c == '_') c = '-';
    return f;
}

json parse_flag_value(const OptionSpec& spec, const std::string& text) {
    switch (spec.type) {
        case V::text: return text;
        case V::boolean:
            if (text == "true" || text == "1") return true;
            if (text == "false" || text == "0") return false;
            bad_value(spec, text);
        case V::integer: {
            long long v = 0;
            if (!parse_number(text, v)) bad_value(spec, text);
            return v;
        }
        case V::unsigned_integer: {
            unsigned long long v = 0;
            if (!parse_number(text, v)) bad_value(spec, text);
            return v;
        }
        case V::real: {
            double v = 0;
            if (!parse_number(text, v)) bad_value(spec, text);
            return v;
        }
        case V::real_list:
        case V::integer_list: {
            std::string body = text;
            if (!body.empty() && body.front() == '[' && body.back() == ']') body = body.substr(1, body.size() - 2);
            json arr = json::array();
            std::stringstream ss(body);
            std::string item;
            while (std::getline(ss, item, ',')) {
                if (spec.type == V::real_list) {
                    double v = 0;
                    if (!parse_number(item, v)) bad_value(spec, text);
                    arr.push_back(v);
                } else {
                    long long v = 0;
                    if (!parse_number(item, v)) bad_value(spec, text);
                    arr.push_back(v);
                }
            }
            if (arr.empty()) bad_value(spec, text);
            return arr;
        }
    }
    bad_value(spec, text);
}

json check_config_value(const OptionSpec& spec, const json& value) {
    const auto fail = [&] { bad_value(spec, value.dump()); };
    switch (spec.type) {
        case V::text:
            if (!value.is_string()) fail();
            break;
        case V::boolean:
            if (!value.is_boolean()) fail();
            break;
        case V::integer:
            if (!value.is_number_integer()) fail();
            break;
        case V::unsigned_integer:
            if (!value.is_number_unsigned() && !(value.is_number_integer() && value.get<long long>() >= 0)) fail();
            break;
        case V::real:
            if (!value.is_number()) fail();
            return value.get<double>();
        case V::real_list:
        case V::integer_list:
            if (!value.is_array() || value.empty()) fail();
            for (const auto& v : value)
                if (spec.type == V::real_list ? !v.is_number() : !v.is_number_integer()) fail();
            break;
    }
    return value;
}

std::string flags_markdown() {
    std::ostringstream md;
    const auto table = [&](const std::vector<OptionSpec>& opts) {
        md << "| flag | type | default | description |\n|---|---|---|---|\n";
        for (const auto& o : opts) {
            std::string def = o.default_value;
            if (def == "\"\"") def = "";
            md << "| `" << flag_name(o.key) << "` | " << type_name(o.type) << " | " << (def.empty() ? "" : "`" + def + "`")
               << " | " << o.help << " |\n";
        }
    };
    md << "### Common flags\n\n";
    table(common_options());
    for (const auto& c : command_specs()) {
        if (c.options.empty()) continue;
        md << "\n### `" << c.path << "`\n\n" << c.help << ".\n\n";
        table(c.options);
    }
    return md.str();
}

}  // namespace threebody::cli
