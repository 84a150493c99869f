#include <align_teleop/alignment.hpp>
#include <align_teleop/error.hpp>

#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace align_teleop;
using ad::Tape;
using ad::Var;

namespace {

// ---- Straight-line double-precision oracles for the losses ----

std::vector<double> features(const ArmModel& arm, const JointState& s, double lambda_rot) {
  const Pose p = forward_kinematics(arm, s);
  std::vector<double> f(p.position.begin(), p.position.end());
  if (lambda_rot > 0.0) f.insert(f.end(), p.orientation.begin(), p.orientation.end());
  return f;
}

double wsq(const std::vector<double>& d, double lambda_rot) {
  double acc = 0;
  for (std::size_t i = 0; i < d.size(); ++i) acc += (i < 3 ? 1.0 : lambda_rot) * d[i] * d[i];
  return acc;
}

double oracle_supervised(const AlignmentNet& f, const LatentController& ctrl, const std::vector<LabeledSample>& b,
                         double lambda_rot) {
  double acc = 0;
  for (const auto& l : b) {
    const Pose p = forward_kinematics(ctrl.task().arm, t_theta(f, ctrl, l.h, l.s));
    const Pose q = forward_kinematics(ctrl.task().arm, l.s_next);
    double e = 0;
    for (int i = 0; i < 3; ++i) e += (p.position[i] - q.position[i]) * (p.position[i] - q.position[i]);
    const double r = rotation_distance(p.orientation, q.orientation);
    acc += e + lambda_rot * r * r;
  }
  return acc / b.size();
}

double oracle_prop(const AlignmentNet& f, const LatentController& ctrl, const std::vector<UnlabeledSample>& b,
                   const std::vector<Input>& probes, const std::vector<double>& alphas, double lr) {
  const ArmModel& arm = ctrl.task().arm;
  double acc = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto base = features(arm, b[i].s, lr);
    const auto moved = features(arm, t_theta(f, ctrl, probes[i], b[i].s), lr);
    const Input scaled{alphas[i] * probes[i][0], alphas[i] * probes[i][1]};
    const auto part = features(arm, t_theta(f, ctrl, scaled, b[i].s), lr);
    std::vector<double> d(base.size());
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = part[j] - (base[j] + alphas[i] * (moved[j] - base[j]));
    acc += wsq(d, lr);
  }
  return acc / b.size();
}

double oracle_rev(const AlignmentNet& f, const LatentController& ctrl, const std::vector<UnlabeledSample>& b,
                  const std::vector<Input>& probes, double lr) {
  const ArmModel& arm = ctrl.task().arm;
  double acc = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const JointState there = t_theta(f, ctrl, probes[i], b[i].s);
    const JointState back = t_theta(f, ctrl, {-probes[i][0], -probes[i][1]}, there);
    const auto a = features(arm, back, lr);
    const auto o = features(arm, b[i].s, lr);
    std::vector<double> d(a.size());
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = a[j] - o[j];
    acc += wsq(d, lr);
  }
  return acc / b.size();
}

double oracle_con(const AlignmentNet& f, const LatentController& ctrl, const std::vector<StatePair>& pairs,
                  const std::vector<Input>& probes, double gamma, double lr) {
  const ArmModel& arm = ctrl.task().arm;
  double acc = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto delta = [&](const JointState& s) {
      const auto a = features(arm, s, lr);
      const auto b = features(arm, t_theta(f, ctrl, probes[i], s), lr);
      std::vector<double> d(a.size());
      for (std::size_t j = 0; j < d.size(); ++j) d[j] = b[j] - a[j];
      return d;
    };
    const auto d1 = delta(pairs[i].first);
    const auto d2 = delta(pairs[i].second);
    std::vector<double> d(d1.size());
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = d1[j] - d2[j];
    const auto c1 = conditioning(ctrl.task(), pairs[i].first);
    const auto c2 = conditioning(ctrl.task(), pairs[i].second);
    double sq = 0;
    for (std::size_t j = 0; j < c1.size(); ++j) sq += (c1[j] - c2[j]) * (c1[j] - c2[j]);
    acc += std::exp(-gamma * std::sqrt(sq)) * wsq(d, lr);
  }
  return acc / pairs.size();
}

struct Scene {
  LatentController ctrl;
  AlignmentNet f;
  Dataset data;
  std::vector<Input> probes;
  std::vector<double> alphas;
  std::vector<StatePair> pairs;
};

Scene make_scene(const LatentController& ctrl, std::uint64_t seed, std::size_t batch = 6) {
  Scene sc{ctrl, {}, {}, {}, {}, {}};
  auto rng = make_rng(seed, "scene");
  sc.f = AlignmentNet::xavier(ctrl.task(), 8, rng);
  sc.data = build_dataset(ctrl, 40, 5, 0.1, seed);
  std::uniform_real_distribution<double> u(-1, 1);
  for (std::size_t i = 0; i < batch; ++i) {
    sc.probes.push_back({u(rng), u(rng)});
    sc.alphas.push_back(u(rng));
    sc.pairs.push_back({sc.data.unlabeled[i].s, sc.data.unlabeled[i + batch].s});
  }
  return sc;
}

std::vector<UnlabeledSample> head(const Scene& sc, std::size_t n) {
  return {sc.data.unlabeled.begin(), sc.data.unlabeled.begin() + static_cast<std::ptrdiff_t>(n)};
}

// Network whose first two hidden units copy h through three tanh layers.
AlignmentNet near_identity(const TaskSpec& task) {
  AlignmentNet f = AlignmentNet::zeros(task, 4);
  const std::size_t in = f.net.input_size();
  auto w0 = f.net.weights(0);
  w0[0 * in + 0] = 1.0;
  w0[1 * in + 1] = 1.0;
  auto w1 = f.net.weights(1);
  w1[0 * 4 + 0] = 1.0;
  w1[1 * 4 + 1] = 1.0;
  auto w2 = f.net.weights(2);
  w2[0 * 4 + 0] = 1.0;
  w2[1 * 4 + 1] = 1.0;
  return f;
}

/// Joint configuration reaching a target EE position (planar), by Gauss-Newton.
JointState reach(const ArmModel& arm, JointState s, const std::array<double, 3>& target) {
  for (int it = 0; it < 100; ++it) {
    const Pose p = forward_kinematics(arm, s);
    const Eigen::Vector2d e(target[0] - p.position[0], target[1] - p.position[1]);
    if (e.norm() < 1e-15) break;
    const Eigen::Matrix<double, 2, Eigen::Dynamic> J = jacobian(arm, s).topRows<2>();
    const Eigen::VectorXd dq = J.transpose() * (J * J.transpose()).ldlt().solve(e);
    for (std::size_t i = 0; i < s.angles.size(); ++i) s.angles[i] += dq[static_cast<Eigen::Index>(i)];
  }
  return s;
}

}  // namespace

TEST(Align, ZeroNetGivesZeroLatent) {
  const TaskSpec spec = default_task(Task::ReachPour);
  const auto f = AlignmentNet::zeros(spec, 8);
  const Input z = align(f, spec, {0.4, -0.9}, JointState{{0.1, -0.2, 0.8, 0.3}, true});
  EXPECT_EQ(z[0], 0.0);
  EXPECT_EQ(z[1], 0.0);
}

TEST(Align, OutputStrictlyInsideUnitBox) {
  const TaskSpec spec = default_task(Task::Plane);
  auto rng = make_rng(0, "net");
  const auto f = AlignmentNet::xavier(spec, 16, rng);
  for (int i = 0; i < 10000; ++i) {
    const auto h = fx::uniform(2, -1, 1, rng);
    const auto s = JointState{fx::uniform(3, -3, 3, rng)};
    const Input z = align(f, spec, {h[0], h[1]}, s);
    ASSERT_LT(std::abs(z[0]), 1.0);
    ASSERT_LT(std::abs(z[1]), 1.0);
  }
}

TEST(Align, LatentGradientMatchesFiniteDifferences) {
  const auto ctrl = LatentController::analytic(default_task(Task::Plane));
  auto rng = make_rng(1, "net");
  const auto f = AlignmentNet::xavier(ctrl.task(), 8, rng);
  const std::vector<double> theta(f.net.parameters().begin(), f.net.parameters().end());
  for (int out = 0; out < 2; ++out) {
    ad::ScalarFunction fn = [&](Tape& t, std::span<const Var> p) {
      const AlignmentScene scene{f, ctrl, Tape::block_of(p)};
      return align(t, scene, t.constants(std::vector<double>{0.3, -0.6}),
                   t.constants(std::vector<double>{0.2, 1.0, 0.7}), false)[out];
    };
    EXPECT_LT(ad::grad_check(fn, theta), 1e-5);
  }
}

TEST(TTheta, ZeroNetWithAnalyticControllerStaysPut) {
  const auto ctrl = LatentController::analytic(default_task(Task::Plane));
  const auto f = AlignmentNet::zeros(ctrl.task(), 8);
  const JointState s{{0.2, 0.9, 1.1}};
  EXPECT_EQ(t_theta(f, ctrl, {0.7, -0.4}, s), s);
}

TEST(TTheta, TapeMatchesDoublePath) {
  const auto& ctrl = fx::small_cae();
  auto rng = make_rng(2, "net");
  const auto f = AlignmentNet::xavier(ctrl.task(), 8, rng);
  const JointState s{{0.2, 0.9, 1.1}};
  Tape t;
  const AlignmentScene scene{f, ctrl, t.register_parameters(f.net.parameters())};
  const auto next = t_theta(t, scene, t.constants(std::vector<double>{0.5, 0.1}), t.constants(s.angles), false);
  const auto want = t_theta(f, ctrl, {0.5, 0.1}, s);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(next[i].value(), want.angles[i]);
}

TEST(TTheta, CompositeGradientMatchesFiniteDifferences) {
  const auto& ctrl = fx::small_cae();
  auto rng = make_rng(3, "net");
  const auto f = AlignmentNet::xavier(ctrl.task(), 8, rng);
  const std::vector<double> theta(f.net.parameters().begin(), f.net.parameters().end());
  ad::ScalarFunction fn = [&](Tape& t, std::span<const Var> p) {
    const AlignmentScene scene{f, ctrl, Tape::block_of(p)};
    const auto next = t_theta(t, scene, t.constants(std::vector<double>{0.5, 0.1}),
                              t.constants(std::vector<double>{0.2, 0.9, 1.1}), false);
    const auto pose = forward_kinematics<Var>(ctrl.task().arm, next);
    return pose.position[0] + pose.position[1] * 0.5;
  };
  EXPECT_LT(ad::grad_check(fn, theta), 1e-4);
}

TEST(LossSupervised, SelfConsistentLabelsGiveZero) {
  const auto& ctrl = fx::small_cae();
  auto sc = make_scene(ctrl, 4);
  for (auto& l : sc.data.labeled) l.s_next = t_theta(sc.f, ctrl, l.h, l.s);
  Tape t;
  const AlignmentScene scene{sc.f, ctrl, t.register_parameters(sc.f.net.parameters())};
  EXPECT_EQ(loss_supervised(t, scene, sc.data.labeled, 0.0).value(), 0.0);
}

TEST(LossSupervised, PositionErrorPlugIn) {
  const auto ctrl = LatentController::analytic(default_task(Task::Plane));
  const auto f = AlignmentNet::zeros(ctrl.task(), 4);
  const JointState s{{0.1, 1.0, 1.0}};
  const Pose p = forward_kinematics(ctrl.task().arm, s);
  const JointState star = reach(ctrl.task().arm, s, {p.position[0] + 0.3, p.position[1] + 0.4, 0.0});
  const std::vector<LabeledSample> batch{{s, {0.5, 0.5}, star, 0}};
  Tape t;
  const AlignmentScene scene{f, ctrl, t.register_parameters(f.net.parameters())};
  EXPECT_NEAR(loss_supervised(t, scene, batch, 0.0).value(), 0.25, 1e-12);
}

TEST(LossSupervised, MatchesOracleIncludingRotation) {
  for (Task task : {Task::Plane, Task::Pour}) {
    const auto ctrl = LatentController::analytic(default_task(task));
    const auto sc = make_scene(ctrl, 5);
    for (double lr : {0.0, 1.0, 2.5}) {
      Tape t;
      const AlignmentScene scene{sc.f, ctrl, t.register_parameters(sc.f.net.parameters())};
      EXPECT_NEAR(loss_supervised(t, scene, sc.data.labeled, lr).value(),
                  oracle_supervised(sc.f, ctrl, sc.data.labeled, lr), 1e-10);
    }
  }
}

TEST(LossSupervised, StateDistance) {
  const auto& ctrl = fx::small_cae();
  const auto sc = make_scene(ctrl, 6);
  double want = 0;
  for (const auto& l : sc.data.labeled) {
    const auto next = t_theta(sc.f, ctrl, l.h, l.s);
    for (std::size_t i = 0; i < 3; ++i) want += std::pow(next.angles[i] - l.s_next.angles[i], 2);
  }
  want /= sc.data.labeled.size();
  Tape t;
  const AlignmentScene scene{sc.f, ctrl, t.register_parameters(sc.f.net.parameters())};
  EXPECT_NEAR(loss_supervised(t, scene, sc.data.labeled, 0.0, SupervisedDistance::State).value(), want, 1e-12);
}

TEST(LossSupervised, EmptyBatchRejected) {
  const auto ctrl = LatentController::analytic(default_task(Task::Plane));
  const auto f = AlignmentNet::zeros(ctrl.task(), 4);
  Tape t;
  const AlignmentScene scene{f, ctrl, t.register_parameters(f.net.parameters())};
  EXPECT_THROW(loss_supervised(t, scene, {}, 0.0), InvalidInput);
}

TEST(LossProportionality, MatchesOracle) {
  for (Task task : {Task::Plane, Task::ReachPour}) {
    const auto ctrl = LatentController::analytic(default_task(task));
    const auto sc = make_scene(ctrl, 7);
    const auto b = head(sc, 6);
    for (double lr : {0.0, 1.0}) {
      Tape t;
      const AlignmentScene scene{sc.f, ctrl, t.register_parameters(sc.f.net.parameters())};
      EXPECT_NEAR(loss_proportionality(t, scene, b, sc.probes, sc.alphas, lr).value(),
                  oracle_prop(sc.f, ctrl, b, sc.probes, sc.alphas, lr), 1e-10);
    }
  }
}

TEST(LossProportionality, UnitAlphaCollapses) {
  const auto& ctrl = fx::small_cae();
  const auto sc = make_scene(ctrl, 8);
  Tape t;
  const AlignmentScene scene{sc.f, ctrl, t.register_parameters(sc.f.net.parameters())};
  const std::vector<double> ones(6, 1.0);
  EXPECT_EQ(loss_proportionality(t, scene, head(sc, 6), sc.probes, ones, 0.0).value(), 0.0);
}

TEST(LossProportionality, ZeroAlphaWithZeroNet) {
  const auto ctrl = LatentController::analytic(default_task(Task::Plane));
  auto sc = make_scene(ctrl, 9);
  sc.f = AlignmentNet::zeros(ctrl.task(), 8);
  Tape t;
  const AlignmentScene scene{sc.f, ctrl, t.register_parameters(sc.f.net.parameters())};
  const std::vector<double> zeros(6, 0.0);
  EXPECT_EQ(loss_proportionality(t, scene, head(sc, 6), sc.probes, zeros, 0.0).value(), 0.0);
}

TEST(LossProportionality, NearlyLinearSystemHasTinyLoss) {
  const auto ctrl = LatentController::analytic(default_task(Task::Plane));
  auto sc = make_scene(ctrl, 10);
  sc.f = near_identity(ctrl.task());
  for (auto& p : sc.probes) p = {0.05 * p[0], 0.05 * p[1]};
  Tape t;
  const AlignmentScene scene{sc.f, ctrl, t.register_parameters(sc.f.net.parameters())};
  EXPECT_LT(loss_proportionality(t, scene, head(sc, 6), sc.probes, sc.alphas, 0.0).value(), 1e-6);
}

TEST(LossProportionality, RngOverloadDrawsUniformAlphas) {
  const auto ctrl = LatentController::analytic(default_task(Task::Plane));
  const auto sc = make_scene(ctrl, 11);
  std::mt19937_64 r1(3), r2(3);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> alphas(6);
  for (auto& a : alphas) a = u(r2);
  Tape t;
  const AlignmentScene scene{sc.f, ctrl, t.register_parameters(sc.f.net.parameters())};
  EXPECT_EQ(loss_proportionality(t, scene, head(sc, 6), sc.probes, r1, 0.0).value(),
            loss_proportionality(t, scene, head(sc, 6), sc.probes, alphas, 0.0).value());
}

TEST(LossReversibility, MatchesOracle) {
  const auto& ctrl = fx::small_cae();
  const auto sc = make_scene(ctrl, 12);
  Tape t;
  const AlignmentScene scene{sc.f, ctrl, t.register_parameters(sc.f.net.parameters())};
  EXPECT_NEAR(loss_reversibility(t, scene, head(sc, 6), sc.probes, 0.0).value(),
              oracle_rev(sc.f, ctrl, head(sc, 6), sc.probes, 0.0), 1e-10);
}

TEST(LossReversibility, ZeroProbeWithZeroActionIsZero) {
  const auto ctrl = LatentController::analytic(default_task(Task::Plane));
  auto sc = make_scene(ctrl, 13);
  sc.f = AlignmentNet::zeros(ctrl.task(), 8);
  const std::vector<Input> zero(6, Input{0.0, 0.0});
  Tape t;
  const AlignmentScene scene{sc.f, ctrl, t.register_parameters(sc.f.net.parameters())};
  EXPECT_EQ(loss_reversibility(t, scene, head(sc, 6), zero, 0.0).value(), 0.0);
}

TEST(LossReversibility, NearlyLinearSystemCancels) {
  const auto ctrl = LatentController::analytic(default_task(Task::Plane));
  auto sc = make_scene(ctrl, 14);
  sc.f = near_identity(ctrl.task());
  for (auto& p : sc.probes) p = {0.05 * p[0], 0.05 * p[1]};
  Tape t;
  const AlignmentScene scene{sc.f, ctrl, t.register_parameters(sc.f.net.parameters())};
  EXPECT_LT(loss_reversibility(t, scene, head(sc, 6), sc.probes, 0.0).value(), 1e-6);
}

TEST(LossReversibility, NestedGradientMatchesFiniteDifferences) {
  const auto& ctrl = fx::small_cae();
  for (std::uint64_t seed : {15u, 16u, 17u}) {
    const auto sc = make_scene(ctrl, seed, 3);
    const auto b = head(sc, 3);
    const std::vector<double> theta(sc.f.net.parameters().begin(), sc.f.net.parameters().end());
    ad::ScalarFunction fn = [&](Tape& t, std::span<const Var> p) {
      const AlignmentScene scene{sc.f, ctrl, Tape::block_of(p)};
      return loss_reversibility(t, scene, b, sc.probes, 0.0);
    };
    EXPECT_LT(ad::grad_check(fn, theta), 1e-4) << "seed " << seed;
  }
}

TEST(LossConsistency, MatchesOracle) {
  const auto ctrl = LatentController::analytic(default_task(Task::Pour));
  const auto sc = make_scene(ctrl, 18);
  for (double lr : {0.0, 1.0}) {
    Tape t;
    const AlignmentScene scene{sc.f, ctrl, t.register_parameters(sc.f.net.parameters())};
    EXPECT_NEAR(loss_consistency(t, scene, sc.pairs, sc.probes, 2.0, lr).value(),
                oracle_con(sc.f, ctrl, sc.pairs, sc.probes, 2.0, lr), 1e-10);
  }
}

TEST(LossConsistency, IdenticalStatesGiveZero) {
  const auto& ctrl = fx::small_cae();
  auto sc = make_scene(ctrl, 19);
  for (auto& p : sc.pairs) p.second = p.first;
  Tape t;
  const AlignmentScene scene{sc.f, ctrl, t.register_parameters(sc.f.net.parameters())};
  EXPECT_EQ(loss_consistency(t, scene, sc.pairs, sc.probes, 10.0, 0.0).value(), 0.0);
}

TEST(LossConsistency, DistantPairsVanish) {
  const auto ctrl = LatentController::analytic(default_task(Task::Plane));
  const auto sc = make_scene(ctrl, 20);
  Tape t;
  const AlignmentScene scene{sc.f, ctrl, t.register_parameters(sc.f.net.parameters())};
  std::vector<StatePair> far{{JointState{{-1.0, 0.5, 0.5}}, JointState{{1.0, 1.7, 1.7}}}};
  const std::vector<Input> probe{{0.8, 0.8}};
  EXPECT_LT(loss_consistency(t, scene, far, probe, 1000.0, 0.0).value(), 1e-300);
}

TEST(LossConsistency, PlugInWeighting) {
  // gamma 10 at distance 0.1 weighs a squared delta difference by e^-1.
  const auto ctrl = LatentController::analytic(default_task(Task::Plane));
  const auto sc = make_scene(ctrl, 21);
  const JointState a{{0.2, 0.9, 1.0}};
  JointState b = a;
  b.angles[0] += 0.06;
  b.angles[1] -= 0.08;
  const std::vector<StatePair> pair{{a, b}};
  const std::vector<Input> probe{{0.6, -0.3}};
  Tape t;
  const AlignmentScene scene{sc.f, ctrl, t.register_parameters(sc.f.net.parameters())};
  const double got = loss_consistency(t, scene, pair, probe, 10.0, 0.0).value();
  const double unweighted = loss_consistency(t, scene, pair, probe, 0.0, 0.0).value();
  EXPECT_NEAR(got, std::exp(-1.0) * unweighted, 1e-15);
  EXPECT_NEAR(std::exp(-10.0 * 0.1) * 0.2 * 0.2, 0.01472, 5e-6);
}

TEST(TotalLoss, ZeroWeightsEqualSupervisedExactly) {
  const auto& ctrl = fx::small_cae();
  const auto sc = make_scene(ctrl, 22);
  const auto nn = nearest_neighbors(ctrl.task(), sc.data.unlabeled, 4);
  AlignTrainConfig cfg;
  cfg.unlabeled_batch = 5;
  auto rng = make_rng(0, "d");
  const auto draws = draw_priors(sc.data.unlabeled, nn, cfg, rng);
  Tape t1, t2;
  const AlignmentScene s1{sc.f, ctrl, t1.register_parameters(sc.f.net.parameters())};
  const AlignmentScene s2{sc.f, ctrl, t2.register_parameters(sc.f.net.parameters())};
  const auto total = total_loss(t1, s1, sc.data.labeled, sc.data.unlabeled, draws, LossWeights::no_priors(0.0));
  const Var sup = loss_supervised(t2, s2, sc.data.labeled, 0.0);
  EXPECT_EQ(total.total.value(), sup.value());
  EXPECT_EQ(t1.backward(total.total), t2.backward(sup));
}

TEST(TotalLoss, UnitWeightsSumTheTerms) {
  const auto& ctrl = fx::small_cae();
  const auto sc = make_scene(ctrl, 23);
  const auto nn = nearest_neighbors(ctrl.task(), sc.data.unlabeled, 4);
  AlignTrainConfig cfg;
  cfg.unlabeled_batch = 5;
  auto rng = make_rng(0, "d");
  const auto d = draw_priors(sc.data.unlabeled, nn, cfg, rng);
  Tape t;
  const AlignmentScene scene{sc.f, ctrl, t.register_parameters(sc.f.net.parameters())};
  const LossWeights w = LossWeights::all_priors(0.0);
  const auto total = total_loss(t, scene, sc.data.labeled, sc.data.unlabeled, d, w);

  std::vector<UnlabeledSample> batch;
  std::vector<StatePair> pairs;
  for (std::size_t i = 0; i < d.batch.size(); ++i) {
    batch.push_back(sc.data.unlabeled[d.batch[i]]);
    pairs.push_back({sc.data.unlabeled[d.batch[i]].s, sc.data.unlabeled[d.partners[i]].s});
  }
  const double sup = oracle_supervised(sc.f, ctrl, sc.data.labeled, 0.0);
  const double prop = oracle_prop(sc.f, ctrl, batch, d.probes, d.alphas, 0.0);
  const double rev = oracle_rev(sc.f, ctrl, batch, d.probes, 0.0);
  const double con = oracle_con(sc.f, ctrl, pairs, d.probes, w.gamma, 0.0);
  EXPECT_NEAR(total.terms.supervised, sup, 1e-12);
  EXPECT_NEAR(total.terms.proportionality, prop, 1e-12);
  EXPECT_NEAR(total.terms.reversibility, rev, 1e-12);
  EXPECT_NEAR(total.terms.consistency, con, 1e-12);
  EXPECT_NEAR(total.total.value(), sup + prop + rev + con, 1e-12);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  const auto& ctrl = fx::small_cae();
  const auto sc = make_scene(ctrl, 24);
  const auto nn = nearest_neighbors(ctrl.task(), sc.data.unlabeled, 4);
  AlignTrainConfig cfg;
  cfg.unlabeled_batch = 3;
  auto rng = make_rng(0, "d");
  const auto d = draw_priors(sc.data.unlabeled, nn, cfg, rng);
  const std::vector<double> theta(sc.f.net.parameters().begin(), sc.f.net.parameters().end());
  ad::ScalarFunction fn = [&](Tape& t, std::span<const Var> p) {
    const AlignmentScene scene{sc.f, ctrl, Tape::block_of(p)};
    return total_loss(t, scene, sc.data.labeled, sc.data.unlabeled, d, LossWeights::all_priors(0.0)).total;
  };
  EXPECT_LT(ad::grad_check(fn, theta), 1e-4);
}

TEST(Priors, DrawsAreWithinPoolAndIndependentOfWeights) {
  const auto ctrl = LatentController::analytic(default_task(Task::Plane));
  const auto d = build_dataset(ctrl, 100, 5, 0.0, 1);
  const auto nn = nearest_neighbors(ctrl.task(), d.unlabeled, 8);
  ASSERT_EQ(nn.size(), 100u);
  for (std::size_t i = 0; i < nn.size(); ++i) {
    ASSERT_EQ(nn[i].size(), 8u);
    for (auto j : nn[i]) EXPECT_NE(j, i);
  }
  AlignTrainConfig cfg;
  cfg.unlabeled_batch = 32;
  auto rng = make_rng(1, "d");
  const auto draws = draw_priors(d.unlabeled, nn, cfg, rng);
  EXPECT_EQ(draws.batch.size(), 32u);
  std::set<std::size_t> uniq(draws.batch.begin(), draws.batch.end());
  EXPECT_EQ(uniq.size(), 32u);
  for (std::size_t i = 0; i < 32; ++i) {
    EXPECT_LT(draws.partners[i], 100u);
    EXPECT_LE(std::abs(draws.alphas[i]), 1.0);
    EXPECT_LE(std::abs(draws.probes[i][0]), 1.0);
  }
}

TEST(Training, ZeroEpochsReturnsInitialNet) {
  const auto& ctrl = fx::small_cae();
  const auto d = build_dataset(ctrl, 50, 5, 0.0, 2);
  AlignTrainConfig cfg;
  cfg.hidden = 8;
  cfg.epochs = 0;
  auto r1 = make_rng(5, "train");
  auto r2 = make_rng(5, "train");
  const auto out = train_alignment(ctrl, d.labeled, d.unlabeled, LossWeights::all_priors(0.0), cfg, r1);
  EXPECT_EQ(out.net.net, AlignmentNet::xavier(ctrl.task(), 8, r2).net);
  EXPECT_TRUE(out.log.empty());
}

TEST(Training, SameSeedGivesIdenticalCheckpoints) {
  const auto& ctrl = fx::small_cae();
  const auto d = build_dataset(ctrl, 50, 5, 0.1, 2);
  AlignTrainConfig cfg;
  cfg.hidden = 8;
  cfg.epochs = 15;
  cfg.unlabeled_batch = 8;
  auto r1 = make_rng(5, "train");
  auto r2 = make_rng(5, "train");
  const auto a = train_alignment(ctrl, d.labeled, d.unlabeled, LossWeights::all_priors(0.0), cfg, r1);
  const auto b = train_alignment(ctrl, d.labeled, d.unlabeled, LossWeights::all_priors(0.0), cfg, r2);
  EXPECT_EQ(alignment_to_json(a.net, ctrl.task(), ctrl.checksum()),
            alignment_to_json(b.net, ctrl.task(), ctrl.checksum()));
  ASSERT_EQ(a.log.size(), 15u);
  EXPECT_EQ(a.log.back().loss.total, b.log.back().loss.total);
}

TEST(Training, ReducesTheObjective) {
  const auto ctrl = LatentController::analytic(default_task(Task::Plane));
  const auto d = build_dataset(ctrl, 200, 10, 0.0, 3);
  AlignTrainConfig cfg;
  cfg.hidden = 16;
  cfg.epochs = 300;
  cfg.unlabeled_batch = 16;
  auto rng = make_rng(3, "train");
  const auto out = train_alignment(ctrl, d.labeled, d.unlabeled, LossWeights::no_priors(0.0), cfg, rng);
  EXPECT_LT(out.log.back().loss.supervised, 0.5 * out.log.front().loss.supervised);
}

TEST(Training, NonFiniteLabelsDiverge) {
  const auto ctrl = LatentController::analytic(default_task(Task::Plane));
  auto d = build_dataset(ctrl, 50, 5, 0.0, 2);
  d.labeled[0].h[0] = std::nan("");
  AlignTrainConfig cfg;
  cfg.hidden = 4;
  cfg.epochs = 3;
  auto rng = make_rng(0, "train");
  try {
    train_alignment(ctrl, d.labeled, d.unlabeled, LossWeights::no_priors(0.0), cfg, rng);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.index(), 0u);
  }
}

TEST(Training, ControllerUntouched) {
  const auto& ctrl = fx::small_cae();
  const auto before = ctrl.checksum();
  const auto d = build_dataset(ctrl, 50, 5, 0.0, 2);
  AlignTrainConfig cfg;
  cfg.hidden = 4;
  cfg.epochs = 5;
  auto rng = make_rng(0, "train");
  train_alignment(ctrl, d.labeled, d.unlabeled, LossWeights::all_priors(0.0), cfg, rng);
  EXPECT_EQ(ctrl.checksum(), before);
}

TEST(Training, LogCsvAndCheckpointRoundTrip) {
  const auto& ctrl = fx::small_cae();
  const auto d = build_dataset(ctrl, 50, 5, 0.0, 2);
  AlignTrainConfig cfg;
  cfg.hidden = 4;
  cfg.epochs = 3;
  auto rng = make_rng(0, "train");
  const auto out = train_alignment(ctrl, d.labeled, d.unlabeled, LossWeights::all_priors(0.0), cfg, rng);
  const auto csv = training_log_csv(out.log);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,L_sup,L_prop,L_reverse,L_con,total");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);

  const auto text = alignment_to_json(out.net, ctrl.task(), ctrl.checksum());
  const auto back = alignment_from_json(text);
  EXPECT_EQ(back.net.net, out.net.net);
  EXPECT_EQ(back.task, Task::Plane);
  EXPECT_EQ(back.controller_checksum, ctrl.checksum());
  EXPECT_THROW(alignment_from_json(controller_to_json(ctrl)), IncompatibleFile);
}
