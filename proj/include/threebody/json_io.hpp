#pragma once

// JSON mappings for configuration structs shared by the dataset manifest,
// model files, reports and the CLI.

#include <json.hpp>

#include <cmath>
#include <limits>

#include "threebody/dataset.hpp"

namespace threebody {

using json = nlohmann::json;

// NaN and infinities have no JSON spelling; they are written as null.
inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
inline double number_or(const json& j, double fallback) {
    return j.is_null() ? fallback : j.get<double>();
}

void to_json(json& j, const IntegratorConfig& c);
void from_json(const json& j, IntegratorConfig& c);
void to_json(json& j, const SamplerConfig& c);
void from_json(const json& j, SamplerConfig& c);
void to_json(json& j, const TrajectoryRecord& r);
void from_json(const json& j, TrajectoryRecord& r);
void to_json(json& j, const DatasetManifest& m);
void from_json(const json& j, DatasetManifest& m);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const json& j, const std::filesystem::path& path);

// 64-bit FNV-1a over a file's bytes, as 16 hex digits.
std::string file_fingerprint(const std::filesystem::path& path);

}  // namespace threebody
