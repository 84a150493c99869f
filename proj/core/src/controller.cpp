#include "align_teleop/controller.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "json_io.hpp"

namespace align_teleop {

namespace {

JointState sample_state(const TaskSpec& spec, std::mt19937_64& rng) {
  JointState s;
  for (std::size_t i = 0; i < spec.arm.dof(); ++i) {
    const auto iv = spec.sampling_interval(i);
    s.angles.push_back(std::uniform_real_distribution<double>(iv[0], iv[1])(rng));
  }
  if (spec.uses_grasp) s.grasp = std::bernoulli_distribution(0.5)(rng);
  return s;
}

std::optional<Demonstration> try_demo(const TaskSpec& spec, std::mt19937_64& rng, const DemoConfig& cfg) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  JointState s = sample_state(spec, rng);
  const TaskMode mode = spec.mode(s);
  const auto scale = spec.intent_scale(mode);
  const double bearing = 2.0 * std::numbers::pi * unit(rng);
  const double dist = cfg.min_goal_steps + (cfg.max_goal_steps - cfg.min_goal_steps) * unit(rng);
  const double speed = cfg.min_speed + (1.0 - cfg.min_speed) * unit(rng);
  const std::array<double, 2> goal{dist * std::cos(bearing), dist * std::sin(bearing)};
  std::array<double, 2> progress{0.0, 0.0};

  Demonstration demo;
  demo.task = spec.task;
  for (std::size_t t = 0; t < cfg.max_steps; ++t) {
    const std::array<double, 2> rem{goal[0] - progress[0], goal[1] - progress[1]};
    const double r = std::hypot(rem[0], rem[1]);
    if (r < cfg.goal_tolerance) break;
    const double mag = std::min(speed, r);
    const auto rows = task_jacobian<double>(spec, s.angles, mode);
    std::vector<double> v(rows.size(), 0.0);
    v[0] = rem[0] / r * mag * scale[0];
    v[1] = rem[1] / r * mag * scale[1];
    auto a = clip_uniform(damped_least_squares<double>(rows, v, cfg.damping), spec.arm.a_max);
    JointVelocity act{a};
    JointState next = step(spec.arm, s, act);
    if (!spec.in_sampling_region(next)) return std::nullopt;
    const auto d = task_displacement(spec, s, next);
    progress[0] += d.intent[0] / (scale[0] * spec.arm.dt);
    progress[1] += d.intent[1] / (scale[1] * spec.arm.dt);
    demo.steps.push_back({s, act});
    s = std::move(next);
  }
  const double final_r = std::hypot(goal[0] - progress[0], goal[1] - progress[1]);
  if (final_r > 10.0 * cfg.goal_tolerance || demo.steps.empty()) return std::nullopt;
  demo.net_intent = progress;
  return demo;
}

}  // namespace

std::vector<Demonstration> generate_demonstrations(const TaskSpec& spec, std::size_t count, std::mt19937_64& rng,
                                                   const DemoConfig& cfg) {
  std::vector<Demonstration> demos;
  demos.reserve(count);
  while (demos.size() < count) {
    std::optional<Demonstration> d;
    for (int attempt = 0; attempt < 10000 && !d; ++attempt) d = try_demo(spec, rng, cfg);
    if (!d) throw InfeasibleTask("no reachable demonstration goal found after 10000 attempts");
    demos.push_back(std::move(*d));
  }
  return demos;
}

LatentController LatentController::analytic(const TaskSpec& spec, const Eigen::Matrix2d& basis, double damping) {
  LatentController c;
  c.kind_ = ControllerKind::Analytic;
  c.spec_ = spec;
  c.basis_ = basis;
  c.damping_ = damping;
  return c;
}

LatentController LatentController::autoencoder(const TaskSpec& spec, Mlp encoder, Mlp decoder) {
  const std::size_t cond = spec.conditioning_size();
  if (encoder.input_size() != cond + spec.arm.dof() || encoder.output_size() != kLatentDim) {
    throw InvalidInput("encoder must map conditioning + action to a 2-D latent");
  }
  if (decoder.input_size() != kLatentDim + cond || decoder.output_size() != spec.arm.dof()) {
    throw InvalidInput("decoder must map latent + conditioning to an action");
  }
  if (decoder.output_activation() != Activation::Tanh) throw InvalidInput("decoder output must be tanh-squashed");
  LatentController c;
  c.kind_ = ControllerKind::Autoencoder;
  c.spec_ = spec;
  c.encoder_ = std::move(encoder);
  c.decoder_ = std::move(decoder);
  return c;
}

JointVelocity LatentController::decode(std::span<const double> z, const JointState& s) const {
  if (z.size() != kLatentDim) throw DimensionMismatch("latent input", kLatentDim, z.size());
  if (s.angles.size() != spec_.arm.dof()) throw DimensionMismatch("state", spec_.arm.dof(), s.angles.size());
  if (kind_ == ControllerKind::Autoencoder) {
    std::vector<double> in(z.begin(), z.end());
    const auto c = conditioning(spec_, s);
    in.insert(in.end(), c.begin(), c.end());
    auto a = decoder_(in);
    for (double& x : a) x *= spec_.arm.a_max;
    return {a};
  }
  const TaskMode mode = spec_.mode(s);
  const auto scale = spec_.intent_scale(mode);
  const auto rows = task_jacobian<double>(spec_, s.angles, mode);
  std::vector<double> v(rows.size(), 0.0);
  v[0] = scale[0] * (basis_(0, 0) * z[0] + basis_(0, 1) * z[1]);
  v[1] = scale[1] * (basis_(1, 0) * z[0] + basis_(1, 1) * z[1]);
  return {clip_uniform(damped_least_squares<double>(rows, v, damping_), spec_.arm.a_max)};
}

std::vector<ad::Var> LatentController::decode(ad::Tape& tape, std::span<const ad::Var> z,
                                              std::span<const ad::Var> angles, bool grasp) const {
  if (z.size() != kLatentDim) throw DimensionMismatch("latent input", kLatentDim, z.size());
  if (angles.size() != spec_.arm.dof()) throw DimensionMismatch("state", spec_.arm.dof(), angles.size());
  if (kind_ == ControllerKind::Autoencoder) {
    std::vector<ad::Var> in(z.begin(), z.end());
    in.insert(in.end(), angles.begin(), angles.end());
    if (spec_.uses_grasp) in.push_back(tape.constant(grasp ? 1.0 : 0.0));
    auto a = decoder_.forward(tape, in);
    for (auto& x : a) x = x * spec_.arm.a_max;
    return a;
  }
  JointState probe;
  probe.grasp = grasp;
  const TaskMode mode = spec_.mode(probe);
  const auto scale = spec_.intent_scale(mode);
  const auto rows = task_jacobian<ad::Var>(spec_, angles, mode);
  std::vector<ad::Var> v;
  v.push_back((z[0] * basis_(0, 0) + z[1] * basis_(0, 1)) * scale[0]);
  v.push_back((z[0] * basis_(1, 0) + z[1] * basis_(1, 1)) * scale[1]);
  while (v.size() < rows.size()) v.push_back(tape.constant(0.0));
  return clip_uniform(damped_least_squares<ad::Var>(rows, v, damping_), spec_.arm.a_max);
}

std::vector<double> LatentController::encode(const JointState& s, const JointVelocity& a) const {
  if (kind_ != ControllerKind::Autoencoder) throw InvalidInput("analytic controller has no encoder");
  std::vector<double> in = conditioning(spec_, s);
  if (a.rates.size() != spec_.arm.dof()) throw DimensionMismatch("action", spec_.arm.dof(), a.rates.size());
  for (double x : a.rates) in.push_back(x / spec_.arm.a_max);
  return encoder_(in);
}

std::uint64_t LatentController::checksum() const {
  if (kind_ == ControllerKind::Autoencoder) {
    const std::uint64_t h = encoder_.checksum();
    const std::uint64_t d = decoder_.checksum();
    return fnv1a(std::as_bytes(std::span(&d, 1)), h);
  }
  const std::array<double, 5> b{basis_(0, 0), basis_(0, 1), basis_(1, 0), basis_(1, 1), damping_};
  return fnv1a(std::as_bytes(std::span(b)));
}

std::vector<DemoStep> demo_pairs(std::span<const Demonstration> demos, std::size_t max_pairs) {
  std::vector<DemoStep> pairs;
  for (const auto& d : demos) {
    for (const auto& st : d.steps) {
      if (pairs.size() >= max_pairs) return pairs;
      pairs.push_back(st);
    }
  }
  return pairs;
}

CaeResult train_cae(const TaskSpec& spec, std::span<const DemoStep> pairs, const CaeConfig& cfg,
                    std::mt19937_64& rng, const std::function<void(std::size_t, double)>& progress) {
  if (pairs.empty()) throw InvalidInput("train_cae: no demonstration pairs");
  const std::size_t n = spec.arm.dof();
  const std::size_t cond = spec.conditioning_size();
  Mlp enc = Mlp::xavier({cond + n, cfg.hidden, cfg.hidden, LatentController::kLatentDim}, rng, Activation::Tanh,
                        Activation::Tanh);
  Mlp dec = Mlp::xavier({LatentController::kLatentDim + cond, cfg.hidden, cfg.hidden, n}, rng, Activation::Tanh,
                        Activation::Tanh);
  const std::size_t count = std::min(pairs.size(), cfg.max_pairs);

  // Network inputs are fixed across epochs; precompute them.
  std::vector<std::vector<double>> enc_in(count);
  std::vector<std::vector<double>> cond_in(count);
  std::vector<std::vector<double>> target(count);
  for (std::size_t p = 0; p < count; ++p) {
    cond_in[p] = conditioning(spec, pairs[p].state);
    enc_in[p] = cond_in[p];
    for (double a : pairs[p].action.rates) {
      enc_in[p].push_back(a / spec.arm.a_max);
      target[p].push_back(a / spec.arm.a_max);
    }
  }

  std::vector<double> params(enc.parameters().begin(), enc.parameters().end());
  params.insert(params.end(), dec.parameters().begin(), dec.parameters().end());
  AdamState adam(params.size(), cfg.adam);
  CaeResult result{LatentController::analytic(spec), {}};
  ad::Tape tape;
  const double norm = 1.0 / static_cast<double>(count * n);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    tape.clear();
    const ad::ParamHandle he = tape.register_parameters(enc.parameters());
    const ad::ParamHandle hd = tape.register_parameters(dec.parameters());
    ad::Var loss = tape.constant(0.0);
    for (std::size_t p = 0; p < count; ++p) {
      const auto x = tape.constants(enc_in[p]);
      auto z = enc.forward(tape, x, he);
      const auto c = tape.constants(cond_in[p]);
      z.insert(z.end(), c.begin(), c.end());
      const auto a = dec.forward(tape, z, hd);
      for (std::size_t i = 0; i < n; ++i) {
        const ad::Var e = a[i] - target[p][i];
        loss = loss + e * e;
      }
    }
    loss = loss * norm;
    const double lv = loss.value();
    if (!std::isfinite(lv)) throw TrainingDiverged("autoencoder loss is not finite", epoch);
    result.loss_per_epoch.push_back(lv * spec.arm.a_max * spec.arm.a_max);
    if (progress) progress(epoch, lv * spec.arm.a_max * spec.arm.a_max);
    const auto grads = tape.backward(loss);
    adam_step(params, grads, adam);
    std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(enc.parameter_count()),
              enc.parameters().begin());
    std::copy(params.begin() + static_cast<std::ptrdiff_t>(enc.parameter_count()), params.end(),
              dec.parameters().begin());
  }
  result.controller = LatentController::autoencoder(spec, std::move(enc), std::move(dec));
  return result;
}

double reconstruction_rmse(const LatentController& ctrl, std::span<const DemoStep> pairs) {
  if (pairs.empty()) throw InvalidInput("reconstruction_rmse: no pairs");
  double sq = 0.0;
  std::size_t m = 0;
  for (const auto& p : pairs) {
    const auto z = ctrl.encode(p.state, p.action);
    const auto a = ctrl.decode(z, p.state);
    for (std::size_t i = 0; i < a.rates.size(); ++i) {
      const double e = a.rates[i] - p.action.rates[i];
      sq += e * e;
      ++m;
    }
  }
  return std::sqrt(sq / static_cast<double>(m));
}

std::string controller_to_json(const LatentController& ctrl) {
  io::json j{{"format", "align-teleop/controller"},
             {"version", io::kFormatVersion},
             {"task", to_string(ctrl.task().task)},
             {"latent_dim", ctrl.latent_dim()},
             {"arm", io::arm_json(ctrl.task().arm)},
             {"checksum", ctrl.checksum()}};
  if (ctrl.kind() == ControllerKind::Autoencoder) {
    j["kind"] = "autoencoder";
    j["encoder"] = io::mlp_to_json(ctrl.encoder());
    j["decoder"] = io::mlp_to_json(ctrl.decoder());
  } else {
    const auto& b = ctrl.basis();
    j["kind"] = "analytic";
    j["basis"] = {b(0, 0), b(0, 1), b(1, 0), b(1, 1)};
  }
  return j.dump();
}

LatentController controller_from_json(const std::string& text) {
  const auto j = io::parse(text, "controller checkpoint");
  io::expect_format(j, "align-teleop/controller");
  TaskSpec spec = default_task(task_from_string(j.at("task").get<std::string>()));
  spec.arm = io::arm_from(j.at("arm"));
  if (j.at("latent_dim").get<std::size_t>() != LatentController::kLatentDim) {
    throw IncompatibleFile("controller checkpoint: unsupported latent_dim");
  }
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "autoencoder") {
    return LatentController::autoencoder(spec, io::mlp_from_json(j.at("encoder")), io::mlp_from_json(j.at("decoder")));
  }
  if (kind == "analytic") {
    const auto b = j.at("basis").get<std::array<double, 4>>();
    Eigen::Matrix2d basis;
    basis << b[0], b[1], b[2], b[3];
    return LatentController::analytic(spec, basis);
  }
  throw IncompatibleFile("controller checkpoint: unknown kind '" + kind + "'");
}

std::string demos_to_jsonl(std::span<const Demonstration> demos) {
  std::ostringstream out;
  out << io::json{{"format", "align-teleop/demos"}, {"version", io::kFormatVersion}, {"count", demos.size()}}.dump()
      << '\n';
  for (const auto& d : demos) {
    io::json steps = io::json::array();
    for (const auto& st : d.steps) {
      steps.push_back({{"s", st.state.angles}, {"grasp", st.state.grasp}, {"a", st.action.rates}});
    }
    out << io::json{{"task", to_string(d.task)}, {"net_intent", d.net_intent}, {"steps", steps}}.dump() << '\n';
  }
  return out.str();
}

std::vector<Demonstration> demos_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IncompatibleFile("demo file is empty");
  io::expect_format(io::parse(line, "demo header"), "align-teleop/demos");
  std::vector<Demonstration> demos;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = io::parse(line, "demo record");
    Demonstration d;
    d.task = task_from_string(j.at("task").get<std::string>());
    d.net_intent = j.at("net_intent").get<std::array<double, 2>>();
    for (const auto& st : j.at("steps")) {
      DemoStep step;
      step.state.angles = st.at("s").get<std::vector<double>>();
      step.state.grasp = st.at("grasp").get<bool>();
      step.action.rates = st.at("a").get<std::vector<double>>();
      d.steps.push_back(std::move(step));
    }
    demos.push_back(std::move(d));
  }
  return demos;
}

}  // namespace align_teleop
