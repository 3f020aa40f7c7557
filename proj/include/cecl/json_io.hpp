#pragma once

// nlohmann::json conversions shared by the artifact writers.

#include <json.hpp>

#include "cecl/encoder.hpp"

namespace cecl {

nlohmann::json model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace cecl
