#include "run_config.hpp"

#include <fstream>
#include <sstream>

namespace align_teleop::cli {

json default_config() {
  return json::parse(R"({
    "task": "plane",
    "seed": 0,
    "controller": {
      "kind": "autoencoder",
      "path": null
    },
    "demo": {
      "count": 400,
      "max_steps": 40,
      "damping": 0.01,
      "path": null
    },
    "cae": {
      "hidden": 64,
      "epochs": 3000,
      "max_pairs": 1000,
      "learning_rate": 0.001,
      "heldout_demos": 50
    },
    "data": {
      "unlabeled": 0,
      "labeled": 0,
      "cv": 0.0,
      "path": null
    },
    "align": {
      "condition": "AllPriors",
      "hidden": 64,
      "epochs": 2000,
      "unlabeled_batch": 64,
      "labeled_batch": 0,
      "neighbors": 8,
      "random_pair_fraction": 0.25,
      "learning_rate": 0.001,
      "ideal_labels": 1000,
      "weights": {
        "prop": null,
        "reverse": null,
        "con": null,
        "gamma": null
      }
    },
    "eval": {
      "alignment": null,
      "condition": null,
      "test_queries": 200,
      "latent_starts": 16,
      "latent_tolerance": 1e-6
    },
    "grid": {
      "tasks": ["plane"],
      "conditions": ["NoAlign", "ManualAlign", "IdealAlign", "NoPriors", "PropOnly", "ReverseOnly", "ConOnly", "AllPriors"],
      "cvs": [0.0, 0.1, 0.5],
      "seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
      "controllers": null,
      "jobs": 1
    },
    "serve": {
      "host": "127.0.0.1",
      "port": 8080,
      "tasks": ["plane"],
      "controllers": null
    }
  })");
}

namespace {

bool same_kind(const json& def, const json& value) {
  if (def.is_null()) return true;
  if (def.is_number()) {
    if (!value.is_number()) return false;
    // Integer fields reject fractional values; float fields take any number.
    if (def.is_number_integer() || def.is_number_unsigned()) return value.is_number_integer() || value.is_number_unsigned();
    return true;
  }
  if (def.is_array()) return value.is_array();
  return def.type() == value.type();
}

std::string type_name(const json& def) {
  if (def.is_number_integer() || def.is_number_unsigned()) return "integer";
  if (def.is_number()) return "number";
  return def.type_name();
}

void merge_at(json& base, const json& patch, const std::string& prefix, const std::string& where) {
  for (const auto& [key, value] : patch.items()) {
    const std::string field = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError(where + ": unknown field '" + field + "'");
    json& slot = base[key];
    if (slot.is_object() && value.is_object()) {
      merge_at(slot, value, field, where);
    } else if (slot.is_object() && !slot.empty()) {
      throw ConfigError(where + ": field '" + field + "' must be an object");
    } else if (!same_kind(slot, value)) {
      throw ConfigError(where + ": field '" + field + "' must be " + type_name(slot) + ", got " +
                        std::string(value.type_name()));
    } else {
      slot = value;
    }
  }
}

}  // namespace

void merge_checked(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError(where + ": top level must be a JSON object");
  merge_at(base, patch, "", where);
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set: expected key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json patch = json::object();
  json* cursor = &patch;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("--set: malformed key '" + key + "'");
    if (dot == std::string::npos) {
      (*cursor)[part] = value;
      break;
    }
    cursor = &(*cursor)[part];
    start = dot + 1;
  }
  merge_checked(config, patch, "--set " + key);
}

json resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  json config = default_config();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file '" + path + "' cannot be read");
    std::stringstream ss;
    ss << in.rdbuf();
    json file = json::parse(ss.str(), nullptr, false);
    if (file.is_discarded()) throw ConfigError("config file '" + path + "' is not valid JSON");
    merge_checked(config, file, "config file '" + path + "'");
  }
  for (const auto& o : overrides) apply_override(config, o);
  return config;
}

}  // namespace align_teleop::cli
