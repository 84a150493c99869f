#pragma once

// Internal JSON (de)serialization helpers shared by the checkpoint, dataset
// and config code.

#include <json.hpp>

#include <string>

#include "align_teleop/error.hpp"
#include "align_teleop/kinematics.hpp"
#include "align_teleop/mlp.hpp"

namespace align_teleop::io {

using nlohmann::json;

inline constexpr int kFormatVersion = 1;

json mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const json& j);

json arm_json(const ArmModel& model);
ArmModel arm_from(const json& j);

/// Throws IncompatibleFile unless j["format"] == format and j["version"] == kFormatVersion.
json state_json(const JointState& s);
JointState state_from(const json& j);
json pose_json(const Pose& p);

void expect_format(const json& j, const std::string& format);

json parse(const std::string& text, const std::string& what);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace align_teleop::io
