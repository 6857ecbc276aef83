#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace threebody::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeFailure = 1;
inline constexpr int kUsage = 2;
inline constexpr int kConfig = 3;

enum class ValueType { integer, unsigned_integer, real, text, boolean, real_list, integer_list };

// One subcommand flag; `key` is the config-file key, the flag is --key with
// underscores replaced by dashes.
struct OptionSpec {
    std::string key;
    ValueType type;
    std::string default_value;  // JSON text
    std::string help;
};

struct CommandSpec {
    std::string path;  // e.g. "generate", "train esn"
    std::string help;
    std::vector<OptionSpec> options;
};

// Every subcommand with its flags; the single source for --help, config
// validation and the generated flags table.
const std::vector<CommandSpec>& command_specs();
const std::vector<OptionSpec>& common_options();
std::string flag_name(const std::string& key);
const char* type_name(ValueType t);
std::string flags_markdown();

// Parses a flag value or checks a config-file value against the declared type.
nlohmann::json parse_flag_value(const OptionSpec& spec, const std::string& text);
nlohmann::json check_config_value(const OptionSpec& spec, const nlohmann::json& value);

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace threebody::cli
