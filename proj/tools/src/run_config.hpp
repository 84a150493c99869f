#pragma once

// Run configuration for the command-line tool: built-in defaults, merged
// with an optional JSON file, then flat dotted-key overrides.

#include <json.hpp>

#include <stdexcept>
#include <string>
#include <vector>

namespace align_teleop::cli {

using nlohmann::json;

/// Bad config file, unknown field, or a value of the wrong type.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every recognised field with its default. Fields whose default is null
/// accept a value of any type (paths, optional overrides).
json default_config();

/// Deep-merges `patch` into `base`, rejecting fields not present in `base`
/// and values whose type differs from the default's. `where` prefixes error
/// messages ("config file", "--set").
void merge_checked(json& base, const json& patch, const std::string& where);

/// Applies "a.b.c=value". The value is parsed as JSON when it parses,
/// otherwise taken as a string.
void apply_override(json& config, const std::string& assignment);

/// Defaults <- file (if path non-empty) <- overrides.
json resolve_config(const std::string& path, const std::vector<std::string>& overrides);

}  // namespace align_teleop::cli
