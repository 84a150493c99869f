#include "align_teleop/datagen.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "align_teleop/random.hpp"
#include "json_io.hpp"

namespace align_teleop {

JointState sample_valid_state(const TaskSpec& task, std::mt19937_64& rng) {
  JointState s;
  for (std::size_t i = 0; i < task.arm.dof(); ++i) {
    const auto iv = task.sampling_interval(i);
    s.angles.push_back(std::uniform_real_distribution<double>(iv[0], iv[1])(rng));
  }
  if (task.uses_grasp) s.grasp = std::bernoulli_distribution(0.5)(rng);
  return s;
}

PreferenceSpec calibrate_preference(const LatentController& ctrl, std::size_t samples) {
  const TaskSpec& task = ctrl.task();
  PreferenceSpec pref = preference_for(task);
  auto rng = make_rng(0, "gain-calibration");
  std::uniform_real_distribution<double> latent(-1.0, 1.0);
  std::array<double, 2> reach_max{};
  std::array<double, 2> pour_max{};
  for (std::size_t i = 0; i < samples; ++i) {
    const JointState s = sample_valid_state(task, rng);
    const Input z{latent(rng), latent(rng)};
    const JointState next = step(task.arm, s, ctrl.decode(z, s));
    if (!preferred_input(pref, task, s, next)) continue;
    const auto d = task_displacement(task, s, next);
    auto& m = task.mode(s) == TaskMode::Reach ? reach_max : pour_max;
    for (std::size_t a = 0; a < 2; ++a) m[a] = std::max(m[a], std::abs(d.intent[a]));
  }
  const bool reach_seen = reach_max[0] > 0.0 && reach_max[1] > 0.0;
  const bool pour_seen = pour_max[0] > 0.0 && pour_max[1] > 0.0;
  if (reach_seen) pref.reach_gain = {1.0 / reach_max[0], 1.0 / reach_max[1]};
  if (pour_seen) pref.pour_gain = {1.0 / pour_max[0], 1.0 / pour_max[1]};
  // Pour never enters the reaching mode; its x constraint is normalized like z.
  if (!reach_seen && pour_seen) pref.reach_gain = {pref.pour_gain[0], pref.pour_gain[0]};
  return pref;
}

std::vector<UnlabeledSample> collect_unlabeled(const LatentController& ctrl, std::size_t n, std::mt19937_64& rng) {
  if (n == 0) throw InvalidInput("collect_unlabeled: N must be at least 1");
  const TaskSpec& task = ctrl.task();
  std::uniform_real_distribution<double> latent(-1.0, 1.0);
  std::vector<UnlabeledSample> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    UnlabeledSample u;
    u.s = sample_valid_state(task, rng);
    u.z = {latent(rng), latent(rng)};
    u.s_next = step(task.arm, u.s, ctrl.decode(u.z, u.s));
    pool.push_back(std::move(u));
  }
  return pool;
}

std::vector<LabeledSample> label_queries(const std::vector<UnlabeledSample>& pool, std::size_t k,
                                         const PreferenceSpec& pref, const TaskSpec& task, const NoiseModel& noise,
                                         std::mt19937_64& rng) {
  if (k < 1 || k > pool.size()) throw InvalidInput("label_queries: need 1 <= K <= N");
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<LabeledSample> labeled;
  labeled.reserve(k);
  std::size_t rejected = 0;
  for (std::size_t idx : order) {
    if (labeled.size() == k) break;
    const auto& u = pool[idx];
    const auto h = preferred_input(pref, task, u.s, u.s_next);
    if (!h) {
      if (++rejected * 10 > pool.size() * 9) {
        throw InfeasibleTask("oracle rejected more than 90% of the unlabeled pool");
      }
      continue;
    }
    labeled.push_back({u.s, apply_noise(*h, noise, rng), u.s_next, idx});
  }
  if (labeled.size() < k) {
    throw InfeasibleTask("only " + std::to_string(labeled.size()) + " of " + std::to_string(k) +
                         " queries could be labeled");
  }
  return labeled;
}

Dataset build_dataset(const LatentController& ctrl, std::size_t n, std::size_t k, double cv, std::uint64_t seed) {
  Dataset d;
  const PreferenceSpec pref = calibrate_preference(ctrl);
  d.provenance = {seed, ctrl.task().task, ctrl.checksum(), n, k, cv, pref.reach_gain, pref.pour_gain};
  auto pool_rng = make_rng(seed, "pool");
  d.unlabeled = collect_unlabeled(ctrl, n, pool_rng);
  // Query order and noise come from separate streams so that datasets at
  // different noise levels share the same queries.
  auto query_rng = make_rng(seed, "queries");
  auto noise_rng = make_rng(seed, "noise");
  d.labeled = label_queries(d.unlabeled, k, pref, ctrl.task(), NoiseModel{0.0}, query_rng);
  for (auto& l : d.labeled) l.h = apply_noise(l.h, NoiseModel{cv}, noise_rng);
  return d;
}


std::string dataset_to_jsonl(const Dataset& d) {
  std::ostringstream out;
  const auto& p = d.provenance;
  out << io::json{{"format", "align-teleop/dataset"},
                  {"version", io::kFormatVersion},
                  {"provenance",
                   {{"seed", p.seed},
                    {"task", to_string(p.task)},
                    {"controller_checksum", p.controller_checksum},
                    {"N", p.unlabeled_count},
                    {"K", p.labeled_count},
                    {"cv", p.cv},
                    {"reach_gain", p.reach_gain},
                    {"pour_gain", p.pour_gain}}}}
             .dump()
      << '\n';
  for (std::size_t i = 0; i < d.unlabeled.size(); ++i) {
    const auto& u = d.unlabeled[i];
    out << io::json{{"kind", "unlabeled"}, {"i", i}, {"s", io::state_json(u.s)}, {"z", u.z}, {"s_next", io::state_json(u.s_next)}}
               .dump()
        << '\n';
  }
  for (const auto& l : d.labeled) {
    out << io::json{{"kind", "labeled"},
                    {"pool_index", l.pool_index},
                    {"s", io::state_json(l.s)},
                    {"h", l.h},
                    {"s_next", io::state_json(l.s_next)}}
               .dump()
        << '\n';
  }
  return out.str();
}

Dataset dataset_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IncompatibleFile("dataset file is empty");
  const auto header = io::parse(line, "dataset header");
  io::expect_format(header, "align-teleop/dataset");
  Dataset d;
  const auto& p = header.at("provenance");
  d.provenance = {p.at("seed").get<std::uint64_t>(),
                  task_from_string(p.at("task").get<std::string>()),
                  p.at("controller_checksum").get<std::uint64_t>(),
                  p.at("N").get<std::size_t>(),
                  p.at("K").get<std::size_t>(),
                  p.at("cv").get<double>(),
                  p.at("reach_gain").get<std::array<double, 2>>(),
                  p.at("pour_gain").get<std::array<double, 2>>()};
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = io::parse(line, "dataset record");
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "unlabeled") {
      d.unlabeled.push_back({io::state_from(j.at("s")), io::state_from(j.at("s_next")), j.at("z").get<Input>()});
    } else if (kind == "labeled") {
      d.labeled.push_back(
          {io::state_from(j.at("s")), j.at("h").get<Input>(), io::state_from(j.at("s_next")), j.at("pool_index").get<std::size_t>()});
    } else {
      throw IncompatibleFile("dataset: unknown record kind '" + kind + "'");
    }
  }
  if (d.unlabeled.size() != d.provenance.unlabeled_count || d.labeled.size() != d.provenance.labeled_count) {
    throw IncompatibleFile("dataset: record counts disagree with the header");
  }
  return d;
}

}  // namespace align_teleop
