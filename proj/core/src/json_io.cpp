#include "json_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace align_teleop::io {

json mlp_to_json(const Mlp& net) {
  json layers = json::array();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto w = net.weights(l);
    const auto b = net.biases(l);
    layers.push_back({{"weights", std::vector<double>(w.begin(), w.end())},
                      {"biases", std::vector<double>(b.begin(), b.end())}});
  }
  return {{"format", "align-teleop/mlp"},
          {"version", kFormatVersion},
          {"layer_sizes", net.layer_sizes()},
          {"activations", {to_string(net.hidden_activation()), to_string(net.output_activation())}},
          {"layers", layers}};
}

Mlp mlp_from_json(const json& j) {
  expect_format(j, "align-teleop/mlp");
  const auto sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
  const auto& acts = j.at("activations");
  Mlp net(sizes, activation_from_string(acts.at(0).get<std::string>()),
          activation_from_string(acts.at(1).get<std::string>()));
  const auto& layers = j.at("layers");
  if (layers.size() != net.layer_count()) throw IncompatibleFile("mlp checkpoint: layer count mismatch");
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto w = layers[l].at("weights").get<std::vector<double>>();
    const auto b = layers[l].at("biases").get<std::vector<double>>();
    auto dw = net.weights(l);
    auto db = net.biases(l);
    if (w.size() != dw.size() || b.size() != db.size()) {
      throw IncompatibleFile("mlp checkpoint: layer " + std::to_string(l) + " shape mismatch");
    }
    std::copy(w.begin(), w.end(), dw.begin());
    std::copy(b.begin(), b.end(), db.begin());
  }
  return net;
}

json arm_json(const ArmModel& model) {
  json joints = json::array();
  for (const auto& jt : model.joints) {
    joints.push_back({{"axis", jt.axis}, {"offset", jt.offset}, {"limits", {jt.lower, jt.upper}}});
  }
  return {{"format", "align-teleop/arm"},
          {"version", kFormatVersion},
          {"joints", joints},
          {"dt", model.dt},
          {"a_max", model.a_max}};
}

ArmModel arm_from(const json& j) {
  expect_format(j, "align-teleop/arm");
  ArmModel m;
  for (const auto& jj : j.at("joints")) {
    Joint jt;
    jt.axis = jj.at("axis").get<Vec3>();
    jt.offset = jj.at("offset").get<Vec3>();
    const auto lim = jj.at("limits").get<std::array<double, 2>>();
    jt.lower = lim[0];
    jt.upper = lim[1];
    m.joints.push_back(jt);
  }
  m.dt = j.at("dt").get<double>();
  m.a_max = j.at("a_max").get<double>();
  m.validate();
  return m;
}

void expect_format(const json& j, const std::string& format) {
  if (!j.is_object() || !j.contains("format") || j["format"] != format) {
    throw IncompatibleFile("expected a '" + format + "' record");
  }
  if (!j.contains("version") || j["version"] != kFormatVersion) {
    throw IncompatibleFile("'" + format + "' version " + (j.contains("version") ? j["version"].dump() : "?") +
                           " is not supported (expected " + std::to_string(kFormatVersion) + ")");
  }
}

json parse(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidInput(what + ": " + e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write '" + path + "'");
  out << contents;
}

json state_json(const JointState& s) { return {{"q", s.angles}, {"grasp", s.grasp}}; }

JointState state_from(const json& j) {
  JointState s;
  s.angles = j.at("q").get<std::vector<double>>();
  s.grasp = j.value("grasp", false);
  return s;
}

json pose_json(const Pose& p) { return {{"position", p.position}, {"orientation", p.orientation}}; }

}  // namespace align_teleop::io
