#pragma once

// Evaluation: error metrics, baseline alignments, and the ablation / noise
// experiment grid.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "align_teleop/alignment.hpp"
#include "align_teleop/controller.hpp"
#include "align_teleop/datagen.hpp"

namespace align_teleop {

inline constexpr double kDegenerateDisplacement = 1e-6;

/// |x* - x_reached| / |x* - x_t| on end-effector positions. Throws
/// DegenerateQuery when |x* - x_t| <= eps.
double relative_distance_error(const ArmModel& arm, const JointState& s_t, const JointState& reached,
                               const JointState& star, double eps = kDegenerateDisplacement);

/// Geodesic distance between the end-effector orientations, radians.
double rotation_error(const ArmModel& arm, const JointState& reached, const JointState& star);

enum class Condition { NoAlign, ManualAlign, IdealAlign, NoPriors, PropOnly, ReverseOnly, ConOnly, AllPriors };

std::string to_string(Condition c);
Condition condition_from_string(const std::string& s);
std::vector<Condition> all_conditions();
/// Loss weights of the trained conditions (IdealAlign and NoPriors train without priors).
LossWeights weights_for(Condition c, double lambda_rot);
bool is_trained(Condition c);

/// State-independent z = clamp(A h + b, [-1, 1]).
struct AffineMap {
  Eigen::Matrix2d A = Eigen::Matrix2d::Identity();
  Eigen::Vector2d b = Eigen::Vector2d::Zero();

  Input operator()(const Input& h) const;
};

/// Least-squares affine fit z ~ A h + b via the normal equations. Throws
/// DegenerateFit with fewer than 3 samples or a rank-deficient design.
AffineMap fit_affine(std::span<const Input> h, std::span<const Input> z);

struct LatentSearchConfig {
  std::size_t starts = 16;
  double tolerance = 1e-6;
  std::size_t max_iterations = 100;
};

/// Latent input whose one-step result best reaches s_star from s: minimizes
/// |Psi(step(s, decode(z, s))) - Psi(s_star)|^2 over z in [-1, 1]^2 with
/// Levenberg-Marquardt from random starts.
Input recover_latent(const LatentController& ctrl, const JointState& s, const JointState& s_star, double lambda_rot,
                     std::mt19937_64& rng, const LatentSearchConfig& cfg = {});

/// Affine map from labeled inputs to their recovered latent targets.
AffineMap fit_manual_align(const LatentController& ctrl, std::span<const LabeledSample> labeled, double lambda_rot,
                           std::mt19937_64& rng, const LatentSearchConfig& cfg = {});

/// The map from human input to latent input used at run time.
class Aligner {
 public:
  enum class Kind { Identity, Affine, Network };

  static Aligner identity();
  static Aligner affine(AffineMap map);
  static Aligner network(AlignmentNet net);

  Kind kind() const noexcept { return kind_; }
  const AffineMap& affine_map() const { return affine_; }
  const AlignmentNet& net() const { return net_; }

  Input latent(const TaskSpec& task, const Input& h, const JointState& s) const;
  /// One transition under this alignment. The network case is t_theta().
  JointState step(const LatentController& ctrl, const Input& h, const JointState& s) const;

 private:
  Kind kind_ = Kind::Identity;
  AffineMap affine_;
  AlignmentNet net_;
};

struct TestQuery {
  JointState s;
  Input h{};
  JointState s_star;
};

/// Fresh noise-free oracle queries: random state, random latent, the oracle's
/// preferred input for the result. Rejected and degenerate queries are skipped.
std::vector<TestQuery> make_test_queries(const LatentController& ctrl, std::size_t count, std::mt19937_64& rng);

struct EvalResult {
  double mean_ed = 0.0;
  double mean_er = 0.0;
  double composite = 0.0;
};

EvalResult evaluate(const Aligner& aligner, const LatentController& ctrl, std::span<const TestQuery> queries,
                    double lambda_rot);

struct GridConfig {
  std::vector<Task> tasks{Task::Plane};
  std::vector<Condition> conditions = all_conditions();
  std::vector<double> cvs{0.0, 0.1, 0.5};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::size_t test_queries = 200;
  std::size_t ideal_labels = 1000;
  /// Zero means the task's default budget.
  std::size_t labeled = 0;
  std::size_t unlabeled = 0;
  AlignTrainConfig train;
  LatentSearchConfig latent_search;
  std::size_t jobs = 1;
};

struct CellResult {
  Task task = Task::Plane;
  Condition condition = Condition::NoAlign;
  double cv = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  EvalResult metrics;
};

struct ConditionSummary {
  Task task = Task::Plane;
  double cv = 0.0;
  Condition condition = Condition::NoAlign;
  std::size_t runs = 0;
  double mean_ed = 0.0, std_ed = 0.0;
  double mean_er = 0.0, std_er = 0.0;
  double mean_composite = 0.0, std_composite = 0.0;
};

struct ExperimentReport {
  std::vector<CellResult> cells;  // task, cv, seed, condition order
  std::vector<ConditionSummary> summary;
};

/// Runs every cell of the grid. Datasets are fresh per seed and shared by all
/// conditions of that seed; test queries are shared across conditions and
/// noise levels. Failures are recorded per cell and the grid continues.
ExperimentReport run_experiment(const GridConfig& cfg, const std::map<Task, LatentController>& controllers,
                                const std::function<void(const CellResult&)>& progress = {});

std::vector<ConditionSummary> summarize(std::span<const CellResult> cells);

/// task,condition,cv,seed,mean_Ed,mean_Er,composite
std::string report_csv(const ExperimentReport& report);
/// Per (task, cv) panels with per-condition mean and std arrays.
std::string report_plot_json(const ExperimentReport& report);

}  // namespace align_teleop
