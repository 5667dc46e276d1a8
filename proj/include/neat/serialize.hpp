#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "neat/autodiff.hpp"
#include "neat/fields.hpp"

// JSON plumbing shared by configs, checkpoints, and the CLI. All parse errors
// surface as SchemaError with the offending context in the message.
namespace neat {

using Json = nlohmann::json;

// Throws SchemaError if j contains a key outside `allowed`.
void require_keys(const Json& j, const std::vector<std::string>& allowed,
                  const std::string& context);

Json load_json_file(const std::string& path);
void save_json_file(const std::string& path, const Json& j);

namespace ad {
Json spec_to_json(const MlpSpec& spec);
// `name` overrides the stored network name (segment prefix).
MlpSpec spec_from_json(const Json& j, const std::string& name);
}  // namespace ad

namespace fields {
Json field_config_to_json(const FieldConfig& cfg);
FieldConfig field_config_from_json(const Json& j);
}  // namespace fields

}  // namespace neat
