#pragma once

// The fixed latent-action controller: a map from a 2-D latent input z and the
// robot state to a bounded joint velocity. Two implementations share one
// interface:
//  - Autoencoder: the decoder of a conditional autoencoder trained on scripted
//    demonstrations, squashed to a_max * tanh(.).
//  - Analytic: damped-pseudoinverse of the task Jacobian applied to a fixed
//    basis of task-space directions, for isolating alignment bugs from
//    autoencoder quality.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "align_teleop/autodiff.hpp"
#include "align_teleop/mlp.hpp"
#include "align_teleop/tasks.hpp"

namespace align_teleop {

struct DemoStep {
  JointState state;
  JointVelocity action;
};

struct Demonstration {
  Task task = Task::Plane;
  std::vector<DemoStep> steps;
  /// Net intent displacement over the demo, in full-deflection step units.
  std::array<double, 2> net_intent{};
};

struct DemoConfig {
  double damping = 0.01;
  std::size_t max_steps = 40;
  double min_goal_steps = 4.0;  // goal distance range, full-deflection step units
  double max_goal_steps = 12.0;
  double min_speed = 0.3;  // fraction of full deflection
  double goal_tolerance = 0.05;
};

/// Straight-line task-space motions toward random goals, tracked with a
/// damped-least-squares Jacobian controller. Goals that cannot be reached
/// without leaving the sampling region are resampled.
std::vector<Demonstration> generate_demonstrations(const TaskSpec& spec, std::size_t count, std::mt19937_64& rng,
                                                   const DemoConfig& cfg = {});

enum class ControllerKind { Autoencoder, Analytic };

class LatentController {
 public:
  static constexpr std::size_t kLatentDim = 2;

  /// Analytic controller: z -> task-space velocity scale * (basis z), resolved by DLS.
  static LatentController analytic(const TaskSpec& spec, const Eigen::Matrix2d& basis = Eigen::Matrix2d::Identity(),
                                   double damping = 0.01);
  /// Encoder: (conditioning ++ action) -> z with tanh output. Decoder: (z ++ conditioning) -> a / a_max with tanh output.
  static LatentController autoencoder(const TaskSpec& spec, Mlp encoder, Mlp decoder);

  ControllerKind kind() const noexcept { return kind_; }
  const TaskSpec& task() const noexcept { return spec_; }
  std::size_t latent_dim() const noexcept { return kLatentDim; }
  const Mlp& encoder() const { return encoder_; }
  const Mlp& decoder() const { return decoder_; }
  const Eigen::Matrix2d& basis() const noexcept { return basis_; }

  JointVelocity decode(std::span<const double> z, const JointState& s) const;
  /// Tape version. `angles` may depend on trained parameters (nested transitions).
  std::vector<ad::Var> decode(ad::Tape& tape, std::span<const ad::Var> z, std::span<const ad::Var> angles,
                              bool grasp) const;
  /// Autoencoder only.
  std::vector<double> encode(const JointState& s, const JointVelocity& a) const;

  std::uint64_t checksum() const;

 private:
  LatentController() = default;

  ControllerKind kind_ = ControllerKind::Analytic;
  TaskSpec spec_;
  Mlp encoder_;
  Mlp decoder_;
  Eigen::Matrix2d basis_ = Eigen::Matrix2d::Identity();
  double damping_ = 0.01;
};

struct CaeConfig {
  std::size_t hidden = 64;
  std::size_t epochs = 3000;
  std::size_t max_pairs = 5000;
  AdamConfig adam;
};

struct CaeResult {
  LatentController controller;
  std::vector<double> loss_per_epoch;
};

/// Flattens demos into (state, action) pairs, keeping at most max_pairs.
std::vector<DemoStep> demo_pairs(std::span<const Demonstration> demos, std::size_t max_pairs);

/// Full-batch Adam on the mean squared reconstruction error. Throws
/// TrainingDiverged (epoch index) on a non-finite loss.
CaeResult train_cae(const TaskSpec& spec, std::span<const DemoStep> pairs, const CaeConfig& cfg, std::mt19937_64& rng,
                    const std::function<void(std::size_t, double)>& progress = {});

/// Root-mean-square reconstruction error over pairs (per action component).
double reconstruction_rmse(const LatentController& ctrl, std::span<const DemoStep> pairs);

/// Controller checkpoint: the MLP format plus {latent_dim, task} header.
std::string controller_to_json(const LatentController& ctrl);
LatentController controller_from_json(const std::string& text);

std::string demos_to_jsonl(std::span<const Demonstration> demos);
std::vector<Demonstration> demos_from_jsonl(const std::string& text);

}  // namespace align_teleop
