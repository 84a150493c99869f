#pragma once

// Data collection: the robot samples states and latent inputs on its own to
// build an unlabeled pool of transitions, then a (simulated) human labels a
// few of them with the input they would have used.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "align_teleop/controller.hpp"
#include "align_teleop/oracle.hpp"

namespace align_teleop {

struct UnlabeledSample {
  JointState s;
  JointState s_next;
  /// The latent input the robot executed. Kept for auditing the transition;
  /// learners and baselines never read it.
  Input z{};
};

struct LabeledSample {
  JointState s;
  Input h{};
  JointState s_next;
  std::size_t pool_index = 0;
};

struct Provenance {
  std::uint64_t seed = 0;
  Task task = Task::Plane;
  std::uint64_t controller_checksum = 0;
  std::size_t unlabeled_count = 0;  // N
  std::size_t labeled_count = 0;    // K
  double cv = 0.0;
  /// Oracle gains the labels were produced with.
  std::array<double, 2> reach_gain{};
  std::array<double, 2> pour_gain{};
};

struct Dataset {
  Provenance provenance;
  std::vector<UnlabeledSample> unlabeled;
  std::vector<LabeledSample> labeled;
};

/// Oracle preference with gains matched to the controller: each intent axis
/// is scaled so the largest admissible one-step displacement seen over
/// `samples` uniform latents (fixed calibration stream) maps to |h| = 1.
PreferenceSpec calibrate_preference(const LatentController& ctrl, std::size_t samples = 4000);

/// Uniform state in the task's sampling region (grasp bit uniform when used).
JointState sample_valid_state(const TaskSpec& task, std::mt19937_64& rng);

/// N transitions s -> step(s, decode(z, s)) with z uniform in [-1, 1]^2.
std::vector<UnlabeledSample> collect_unlabeled(const LatentController& ctrl, std::size_t n, std::mt19937_64& rng);

/// K pool tuples drawn without replacement, labeled by the oracle and then
/// noised. Tuples the oracle rejects are skipped. Throws InfeasibleTask when
/// more than 90% of the pool is rejected or the pool runs out.
std::vector<LabeledSample> label_queries(const std::vector<UnlabeledSample>& pool, std::size_t k,
                                         const PreferenceSpec& pref, const TaskSpec& task, const NoiseModel& noise,
                                         std::mt19937_64& rng);

/// Collects a fresh pool and labels it (with calibrate_preference(ctrl)) using the named sub-streams of `seed`:
/// "pool" for states and latents, "queries" for query order, "noise" for label noise.
Dataset build_dataset(const LatentController& ctrl, std::size_t n, std::size_t k, double cv, std::uint64_t seed);

/// JSON-lines: a header record with provenance, then one record per tuple.
std::string dataset_to_jsonl(const Dataset& d);
Dataset dataset_from_jsonl(const std::string& text);

}  // namespace align_teleop
