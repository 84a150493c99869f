#pragma once

// Learning the human's preferred input mapping.
//
// The alignment network f maps a human input h and the robot state s to a
// latent controller input z = tanh(net(h ++ cond(s))). Composed with the
// frozen controller and the transition it gives the one-step map
//     T(h, s) = step(s, decode(f(h, s), s)).
// Training minimizes a supervised pose loss on the few labeled tuples plus
// three label-free priors evaluated on the unlabeled pool:
//   proportionality  Psi(T(alpha h, s))   ~ Psi(s) + alpha (Psi(T(h, s)) - Psi(s))
//   reversibility    Psi(T(-h, T(h, s))) ~ Psi(s)
//   consistency      Delta x(s1) ~ Delta x(s2), weighted by exp(-gamma |s1 - s2|)
// Pose differences are compared componentwise: position, plus the canonical
// quaternion weighted by lambda_rot.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "align_teleop/autodiff.hpp"
#include "align_teleop/controller.hpp"
#include "align_teleop/datagen.hpp"
#include "align_teleop/mlp.hpp"

namespace align_teleop {

struct AlignmentNet {
  Mlp net;  // (h ++ cond) -> 2, tanh output

  static AlignmentNet xavier(const TaskSpec& task, std::size_t hidden, std::mt19937_64& rng);
  /// All-zero weights: z = 0 everywhere.
  static AlignmentNet zeros(const TaskSpec& task, std::size_t hidden);
};

Input align(const AlignmentNet& f, const TaskSpec& task, const Input& h, const JointState& s);

/// One composite transition s' = step(s, decode(f(h, s), s)).
JointState t_theta(const AlignmentNet& f, const LatentController& ctrl, const Input& h, const JointState& s);

/// Tape-side pieces shared by the losses. `params` is the registration of
/// f.net.parameters() on `tape`.
struct AlignmentScene {
  const AlignmentNet& f;
  const LatentController& ctrl;
  ad::ParamHandle params;
};

std::vector<ad::Var> align(ad::Tape& tape, const AlignmentScene& scene, std::span<const ad::Var> h,
                           std::span<const ad::Var> angles, bool grasp);
std::vector<ad::Var> t_theta(ad::Tape& tape, const AlignmentScene& scene, std::span<const ad::Var> h,
                             std::span<const ad::Var> angles, bool grasp);

enum class SupervisedDistance { Pose, State };

struct LossWeights {
  double prop = 1.0;
  double reverse = 1.0;
  double con = 1.0;
  double gamma = 10.0;
  double lambda_rot = 0.0;
  SupervisedDistance distance = SupervisedDistance::Pose;

  static LossWeights no_priors(double lambda_rot) { return {0.0, 0.0, 0.0, 10.0, lambda_rot}; }
  static LossWeights all_priors(double lambda_rot) { return {1.0, 1.0, 1.0, 10.0, lambda_rot}; }
};

/// Mean over the batch of |pos(Psi(T(h, s))) - pos(Psi(s*))|^2 + lambda_rot * E_r^2
/// (or |T(h, s) - s*|^2 for the state distance).
ad::Var loss_supervised(ad::Tape& tape, const AlignmentScene& scene, std::span<const LabeledSample> batch,
                        double lambda_rot, SupervisedDistance distance = SupervisedDistance::Pose);

/// alphas[i] scales probes[i] for sample i.
ad::Var loss_proportionality(ad::Tape& tape, const AlignmentScene& scene, std::span<const UnlabeledSample> batch,
                             std::span<const Input> probes, std::span<const double> alphas, double lambda_rot);
/// Draws alpha ~ U(-1, 1) per sample from rng.
ad::Var loss_proportionality(ad::Tape& tape, const AlignmentScene& scene, std::span<const UnlabeledSample> batch,
                             std::span<const Input> probes, std::mt19937_64& rng, double lambda_rot);

ad::Var loss_reversibility(ad::Tape& tape, const AlignmentScene& scene, std::span<const UnlabeledSample> batch,
                           std::span<const Input> probes, double lambda_rot);

struct StatePair {
  JointState first;
  JointState second;
};

ad::Var loss_consistency(ad::Tape& tape, const AlignmentScene& scene, std::span<const StatePair> pairs,
                         std::span<const Input> probes, double gamma, double lambda_rot);

struct LossBreakdown {
  double supervised = 0.0;
  double proportionality = 0.0;
  double reversibility = 0.0;
  double consistency = 0.0;
  double total = 0.0;
};

struct TotalLoss {
  ad::Var total;
  LossBreakdown terms;
};

/// Randomness consumed by one evaluation of the priors, drawn up front so the
/// stream position does not depend on which weights are zero.
struct PriorDraws {
  std::vector<std::size_t> batch;  // indices into the unlabeled pool
  std::vector<Input> probes;
  std::vector<double> alphas;
  std::vector<std::size_t> partners;  // consistency partner of each batch sample
};

/// total = sup + prop * L_prop + reverse * L_reverse + con * L_con. A term
/// whose weight is zero is not evaluated at all.
TotalLoss total_loss(ad::Tape& tape, const AlignmentScene& scene, std::span<const LabeledSample> labeled,
                     std::span<const UnlabeledSample> unlabeled, const PriorDraws& draws, const LossWeights& w);

struct AlignTrainConfig {
  std::size_t hidden = 64;
  std::size_t epochs = 2000;
  std::size_t unlabeled_batch = 64;
  /// Labeled minibatch size; 0 uses every labeled sample each epoch.
  std::size_t labeled_batch = 0;
  std::size_t neighbors = 8;
  double random_pair_fraction = 0.25;
  AdamConfig adam;
};

/// Consistency partners: indices of the k nearest pool states (by conditioning features) for each pool state.
std::vector<std::vector<std::size_t>> nearest_neighbors(const TaskSpec& task, std::span<const UnlabeledSample> pool,
                                                        std::size_t k);

PriorDraws draw_priors(std::span<const UnlabeledSample> pool, const std::vector<std::vector<std::size_t>>& neighbors,
                       const AlignTrainConfig& cfg, std::mt19937_64& rng);

struct EpochLog {
  std::size_t epoch = 0;
  LossBreakdown loss;
};

struct AlignTrainResult {
  AlignmentNet net;
  std::vector<EpochLog> log;
};

/// Adam on the combined objective. The network is initialized from `rng`
/// (Xavier) before any prior draws. Throws TrainingDiverged carrying the
/// epoch on a non-finite loss.
AlignTrainResult train_alignment(const LatentController& ctrl, std::span<const LabeledSample> labeled,
                                 std::span<const UnlabeledSample> unlabeled, const LossWeights& weights,
                                 const AlignTrainConfig& cfg, std::mt19937_64& rng,
                                 const std::function<void(const EpochLog&)>& progress = {});

/// CSV: epoch,L_sup,L_prop,L_reverse,L_con,total
std::string training_log_csv(std::span<const EpochLog> log);

std::string alignment_to_json(const AlignmentNet& f, const TaskSpec& task, std::uint64_t controller_checksum);
struct LoadedAlignment {
  AlignmentNet net;
  Task task;
  std::uint64_t controller_checksum;
};
LoadedAlignment alignment_from_json(const std::string& text);

}  // namespace align_teleop
