#include "align_teleop/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json_io.hpp"

namespace align_teleop {

using ad::Var;

AlignmentNet AlignmentNet::xavier(const TaskSpec& task, std::size_t hidden, std::mt19937_64& rng) {
  if (hidden == 0) throw InvalidInput("alignment net needs a hidden width of at least 1");
  const std::size_t in = LatentController::kLatentDim + task.conditioning_size();
  return {Mlp::xavier({in, hidden, hidden, LatentController::kLatentDim}, rng, Activation::Tanh, Activation::Tanh)};
}

AlignmentNet AlignmentNet::zeros(const TaskSpec& task, std::size_t hidden) {
  const std::size_t in = LatentController::kLatentDim + task.conditioning_size();
  return {Mlp({in, hidden, hidden, LatentController::kLatentDim}, Activation::Tanh, Activation::Tanh)};
}

Input align(const AlignmentNet& f, const TaskSpec& task, const Input& h, const JointState& s) {
  std::vector<double> in(h.begin(), h.end());
  const auto c = conditioning(task, s);
  in.insert(in.end(), c.begin(), c.end());
  const auto z = f.net(in);
  return {z[0], z[1]};
}

JointState t_theta(const AlignmentNet& f, const LatentController& ctrl, const Input& h, const JointState& s) {
  const Input z = align(f, ctrl.task(), h, s);
  return step(ctrl.task().arm, s, ctrl.decode(z, s));
}

std::vector<Var> align(ad::Tape& tape, const AlignmentScene& scene, std::span<const Var> h,
                       std::span<const Var> angles, bool grasp) {
  if (h.size() != 2) throw DimensionMismatch("human input", 2, h.size());
  std::vector<Var> in(h.begin(), h.end());
  in.insert(in.end(), angles.begin(), angles.end());
  if (scene.ctrl.task().uses_grasp) in.push_back(tape.constant(grasp ? 1.0 : 0.0));
  return scene.f.net.forward(tape, in, scene.params);
}

std::vector<Var> t_theta(ad::Tape& tape, const AlignmentScene& scene, std::span<const Var> h,
                         std::span<const Var> angles, bool grasp) {
  const auto z = align(tape, scene, h, angles, grasp);
  const auto a = scene.ctrl.decode(tape, z, angles, grasp);
  return step<Var>(scene.ctrl.task().arm, angles, a);
}

namespace {

// Position, then the canonical quaternion when rotation matters.
std::vector<double> pose_features(const ArmModel& arm, const JointState& s, bool rot) {
  const Pose p = forward_kinematics(arm, s);
  std::vector<double> f(p.position.begin(), p.position.end());
  if (rot) f.insert(f.end(), p.orientation.begin(), p.orientation.end());
  return f;
}

std::vector<Var> pose_features(const ArmModel& arm, std::span<const Var> angles, bool rot) {
  const auto p = forward_kinematics<Var>(arm, angles);
  std::vector<Var> f(p.position.begin(), p.position.end());
  if (rot) f.insert(f.end(), p.orientation.begin(), p.orientation.end());
  return f;
}

Var weighted_sq(ad::Tape& tape, std::span<const Var> d, double lambda_rot) {
  const auto pos = d.first(3);
  Var acc = tape.dot(pos, pos);
  if (d.size() > 3) {
    const auto rot = d.subspan(3);
    acc = acc + tape.dot(rot, rot) * lambda_rot;
  }
  return acc;
}

struct Rollout {
  std::vector<Var> next;    // T(h, s)
  std::vector<double> base; // Psi(s)
  std::vector<Var> moved;   // Psi(T(h, s))
};

Rollout roll(ad::Tape& tape, const AlignmentScene& scene, const JointState& s, const Input& h, bool rot) {
  const ArmModel& arm = scene.ctrl.task().arm;
  const auto angles = tape.constants(s.angles);
  const auto hv = tape.constants(h);
  Rollout r;
  r.next = t_theta(tape, scene, hv, angles, s.grasp);
  r.base = pose_features(arm, s, rot);
  r.moved = pose_features(arm, r.next, rot);
  return r;
}

void check_batch(std::size_t n, std::size_t probes, const char* what) {
  if (n == 0) throw InvalidInput(std::string(what) + ": empty batch");
  if (probes != n) throw DimensionMismatch(std::string(what) + " probes", n, probes);
}

Var prop_term(ad::Tape& tape, const AlignmentScene& scene, std::span<const UnlabeledSample> batch,
              std::span<const Rollout> rolls, std::span<const Input> probes, std::span<const double> alphas,
              double lambda_rot) {
  const bool rot = lambda_rot > 0.0;
  const ArmModel& arm = scene.ctrl.task().arm;
  Var acc = tape.constant(0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double a = alphas[i];
    const Input scaled{a * probes[i][0], a * probes[i][1]};
    const auto angles = tape.constants(batch[i].s.angles);
    const auto hv = tape.constants(scaled);
    const auto moved = pose_features(arm, t_theta(tape, scene, hv, angles, batch[i].s.grasp), rot);
    const Rollout& r = rolls[i];
    std::vector<Var> d;
    d.reserve(moved.size());
    for (std::size_t j = 0; j < moved.size(); ++j) d.push_back(moved[j] - (r.base[j] + (r.moved[j] - r.base[j]) * a));
    acc = acc + weighted_sq(tape, d, lambda_rot);
  }
  return acc * (1.0 / static_cast<double>(batch.size()));
}

Var rev_term(ad::Tape& tape, const AlignmentScene& scene, std::span<const UnlabeledSample> batch,
             std::span<const Rollout> rolls, std::span<const Input> probes, double lambda_rot) {
  const bool rot = lambda_rot > 0.0;
  const ArmModel& arm = scene.ctrl.task().arm;
  Var acc = tape.constant(0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Input back{-probes[i][0], -probes[i][1]};
    const auto hv = tape.constants(back);
    // Second application starts from the first one's (parameter-dependent) result.
    const auto moved = pose_features(arm, t_theta(tape, scene, hv, rolls[i].next, batch[i].s.grasp), rot);
    std::vector<Var> d;
    d.reserve(moved.size());
    for (std::size_t j = 0; j < moved.size(); ++j) d.push_back(moved[j] - rolls[i].base[j]);
    acc = acc + weighted_sq(tape, d, lambda_rot);
  }
  return acc * (1.0 / static_cast<double>(batch.size()));
}

double pair_weight(const TaskSpec& task, const JointState& a, const JointState& b, double gamma) {
  const auto ca = conditioning(task, a);
  const auto cb = conditioning(task, b);
  double sq = 0.0;
  for (std::size_t i = 0; i < ca.size(); ++i) sq += (ca[i] - cb[i]) * (ca[i] - cb[i]);
  return std::exp(-gamma * std::sqrt(sq));
}

Var con_term(ad::Tape& tape, const AlignmentScene& scene, std::span<const JointState> firsts,
             std::span<const Rollout> rolls, std::span<const JointState> seconds, std::span<const Input> probes,
             double gamma, double lambda_rot) {
  const bool rot = lambda_rot > 0.0;
  Var acc = tape.constant(0.0);
  for (std::size_t i = 0; i < firsts.size(); ++i) {
    const double w = pair_weight(scene.ctrl.task(), firsts[i], seconds[i], gamma);
    const Rollout other = roll(tape, scene, seconds[i], probes[i], rot);
    const Rollout& r = rolls[i];
    std::vector<Var> d;
    d.reserve(r.moved.size());
    for (std::size_t j = 0; j < r.moved.size(); ++j) {
      d.push_back((r.moved[j] - r.base[j]) - (other.moved[j] - other.base[j]));
    }
    acc = acc + weighted_sq(tape, d, lambda_rot) * w;
  }
  return acc * (1.0 / static_cast<double>(firsts.size()));
}

std::vector<Rollout> roll_batch(ad::Tape& tape, const AlignmentScene& scene, std::span<const UnlabeledSample> batch,
                                std::span<const Input> probes, bool rot) {
  std::vector<Rollout> rolls;
  rolls.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) rolls.push_back(roll(tape, scene, batch[i].s, probes[i], rot));
  return rolls;
}

}  // namespace

Var loss_supervised(ad::Tape& tape, const AlignmentScene& scene, std::span<const LabeledSample> batch,
                    double lambda_rot, SupervisedDistance distance) {
  if (batch.empty()) throw InvalidInput("loss_supervised: no labeled samples");
  const ArmModel& arm = scene.ctrl.task().arm;
  Var acc = tape.constant(0.0);
  for (const auto& l : batch) {
    const auto angles = tape.constants(l.s.angles);
    const auto hv = tape.constants(l.h);
    const auto next = t_theta(tape, scene, hv, angles, l.s.grasp);
    if (distance == SupervisedDistance::State) {
      std::vector<Var> d;
      for (std::size_t j = 0; j < next.size(); ++j) d.push_back(next[j] - l.s_next.angles[j]);
      acc = acc + tape.dot(d, d);
      continue;
    }
    const auto p = forward_kinematics<Var>(arm, next);
    const Pose target = forward_kinematics(arm, l.s_next);
    std::vector<Var> d;
    for (std::size_t j = 0; j < 3; ++j) d.push_back(p.position[j] - target.position[j]);
    Var term = tape.dot(d, d);
    if (lambda_rot > 0.0) {
      const std::array<Var, 4> qt{tape.constant(target.orientation[0]), tape.constant(target.orientation[1]),
                                  tape.constant(target.orientation[2]), tape.constant(target.orientation[3])};
      const Var r = rotation_distance(p.orientation, qt);
      term = term + r * r * lambda_rot;
    }
    acc = acc + term;
  }
  return acc * (1.0 / static_cast<double>(batch.size()));
}

Var loss_proportionality(ad::Tape& tape, const AlignmentScene& scene, std::span<const UnlabeledSample> batch,
                         std::span<const Input> probes, std::span<const double> alphas, double lambda_rot) {
  check_batch(batch.size(), probes.size(), "loss_proportionality");
  if (alphas.size() != batch.size()) throw DimensionMismatch("loss_proportionality alphas", batch.size(), alphas.size());
  const auto rolls = roll_batch(tape, scene, batch, probes, lambda_rot > 0.0);
  return prop_term(tape, scene, batch, rolls, probes, alphas, lambda_rot);
}

Var loss_proportionality(ad::Tape& tape, const AlignmentScene& scene, std::span<const UnlabeledSample> batch,
                         std::span<const Input> probes, std::mt19937_64& rng, double lambda_rot) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> alphas(batch.size());
  for (auto& a : alphas) a = u(rng);
  return loss_proportionality(tape, scene, batch, probes, alphas, lambda_rot);
}

Var loss_reversibility(ad::Tape& tape, const AlignmentScene& scene, std::span<const UnlabeledSample> batch,
                       std::span<const Input> probes, double lambda_rot) {
  check_batch(batch.size(), probes.size(), "loss_reversibility");
  const auto rolls = roll_batch(tape, scene, batch, probes, lambda_rot > 0.0);
  return rev_term(tape, scene, batch, rolls, probes, lambda_rot);
}

Var loss_consistency(ad::Tape& tape, const AlignmentScene& scene, std::span<const StatePair> pairs,
                     std::span<const Input> probes, double gamma, double lambda_rot) {
  check_batch(pairs.size(), probes.size(), "loss_consistency");
  if (gamma < 0.0) throw InvalidInput("loss_consistency: gamma must be non-negative");
  const bool rot = lambda_rot > 0.0;
  std::vector<JointState> firsts;
  std::vector<JointState> seconds;
  std::vector<Rollout> rolls;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    firsts.push_back(pairs[i].first);
    seconds.push_back(pairs[i].second);
    rolls.push_back(roll(tape, scene, pairs[i].first, probes[i], rot));
  }
  return con_term(tape, scene, firsts, rolls, seconds, probes, gamma, lambda_rot);
}

TotalLoss total_loss(ad::Tape& tape, const AlignmentScene& scene, std::span<const LabeledSample> labeled,
                     std::span<const UnlabeledSample> unlabeled, const PriorDraws& draws, const LossWeights& w) {
  const Var sup = loss_supervised(tape, scene, labeled, w.lambda_rot, w.distance);
  TotalLoss out{sup, {}};
  out.terms.supervised = sup.value();
  const bool any_prior = w.prop != 0.0 || w.reverse != 0.0 || w.con != 0.0;
  if (any_prior) {
    const std::size_t m = draws.batch.size();
    check_batch(m, draws.probes.size(), "total_loss");
    if (draws.alphas.size() != m || draws.partners.size() != m) {
      throw DimensionMismatch("total_loss draws", m, std::min(draws.alphas.size(), draws.partners.size()));
    }
    std::vector<UnlabeledSample> batch;
    batch.reserve(m);
    for (std::size_t idx : draws.batch) {
      if (idx >= unlabeled.size()) throw InvalidInput("total_loss: batch index outside the unlabeled pool");
      batch.push_back(unlabeled[idx]);
    }
    const auto rolls = roll_batch(tape, scene, batch, draws.probes, w.lambda_rot > 0.0);
    if (w.prop != 0.0) {
      const Var p = prop_term(tape, scene, batch, rolls, draws.probes, draws.alphas, w.lambda_rot);
      out.terms.proportionality = p.value();
      out.total = out.total + p * w.prop;
    }
    if (w.reverse != 0.0) {
      const Var r = rev_term(tape, scene, batch, rolls, draws.probes, w.lambda_rot);
      out.terms.reversibility = r.value();
      out.total = out.total + r * w.reverse;
    }
    if (w.con != 0.0) {
      std::vector<JointState> firsts;
      std::vector<JointState> seconds;
      for (std::size_t i = 0; i < m; ++i) {
        if (draws.partners[i] >= unlabeled.size()) throw InvalidInput("total_loss: partner outside the unlabeled pool");
        firsts.push_back(batch[i].s);
        seconds.push_back(unlabeled[draws.partners[i]].s);
      }
      const Var c = con_term(tape, scene, firsts, rolls, seconds, draws.probes, w.gamma, w.lambda_rot);
      out.terms.consistency = c.value();
      out.total = out.total + c * w.con;
    }
  }
  out.terms.total = out.total.value();
  return out;
}

std::vector<std::vector<std::size_t>> nearest_neighbors(const TaskSpec& task, std::span<const UnlabeledSample> pool,
                                                        std::size_t k) {
  const std::size_t n = pool.size();
  std::vector<std::vector<double>> feats;
  feats.reserve(n);
  for (const auto& u : pool) feats.push_back(conditioning(task, u.s));
  const std::size_t kk = std::min(k, n == 0 ? 0 : n - 1);
  std::vector<std::vector<std::size_t>> out(n);
  std::vector<std::pair<double, std::size_t>> dist;
  for (std::size_t i = 0; i < n; ++i) {
    dist.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double sq = 0.0;
      for (std::size_t c = 0; c < feats[i].size(); ++c) sq += (feats[i][c] - feats[j][c]) * (feats[i][c] - feats[j][c]);
      dist.emplace_back(sq, j);
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk), dist.end());
    for (std::size_t c = 0; c < kk; ++c) out[i].push_back(dist[c].second);
  }
  return out;
}

PriorDraws draw_priors(std::span<const UnlabeledSample> pool, const std::vector<std::vector<std::size_t>>& neighbors,
                       const AlignTrainConfig& cfg, std::mt19937_64& rng) {
  const std::size_t n = pool.size();
  if (n == 0) throw InvalidInput("draw_priors: empty unlabeled pool");
  if (neighbors.size() != n) throw DimensionMismatch("neighbor lists", n, neighbors.size());
  const std::size_t m = std::min(cfg.unlabeled_batch, n);
  PriorDraws d;
  // Partial Fisher-Yates for a batch without replacement.
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  d.batch.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> any(0, n - 1);
  for (std::size_t i = 0; i < m; ++i) {
    d.probes.push_back({u(rng), u(rng)});
    d.alphas.push_back(u(rng));
    const double coin = unit(rng);
    const std::size_t random_partner = any(rng);
    const double slot = unit(rng);
    const auto& nb = neighbors[d.batch[i]];
    if (coin < cfg.random_pair_fraction || nb.empty()) {
      d.partners.push_back(random_partner);
    } else {
      d.partners.push_back(nb[std::min(nb.size() - 1, static_cast<std::size_t>(slot * static_cast<double>(nb.size())))]);
    }
  }
  return d;
}

AlignTrainResult train_alignment(const LatentController& ctrl, std::span<const LabeledSample> labeled,
                                 std::span<const UnlabeledSample> unlabeled, const LossWeights& weights,
                                 const AlignTrainConfig& cfg, std::mt19937_64& rng,
                                 const std::function<void(const EpochLog&)>& progress) {
  if (labeled.empty()) throw InvalidInput("train_alignment: at least one labeled sample is required");
  const bool any_prior = weights.prop != 0.0 || weights.reverse != 0.0 || weights.con != 0.0;
  if (any_prior && unlabeled.empty()) throw InvalidInput("train_alignment: priors need an unlabeled pool");
  if (weights.prop < 0.0 || weights.reverse < 0.0 || weights.con < 0.0 || weights.lambda_rot < 0.0) {
    throw InvalidInput("train_alignment: loss weights must be non-negative");
  }
  for (const auto& l : labeled) {
    if (l.s.angles.size() != ctrl.task().arm.dof()) {
      throw DimensionMismatch("labeled state", ctrl.task().arm.dof(), l.s.angles.size());
    }
  }

  AlignTrainResult res{AlignmentNet::xavier(ctrl.task(), cfg.hidden, rng), {}};
  const auto neighbors =
      unlabeled.empty() ? std::vector<std::vector<std::size_t>>{} : nearest_neighbors(ctrl.task(), unlabeled, cfg.neighbors);
  AdamState adam(res.net.net.parameter_count(), cfg.adam);
  ad::Tape tape;
  std::vector<std::size_t> order(labeled.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<LabeledSample> minibatch;
  res.log.reserve(cfg.epochs);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const PriorDraws draws = unlabeled.empty() ? PriorDraws{} : draw_priors(unlabeled, neighbors, cfg, rng);
    std::span<const LabeledSample> sup = labeled;
    if (cfg.labeled_batch > 0 && cfg.labeled_batch < labeled.size()) {
      for (std::size_t i = 0; i < cfg.labeled_batch; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, labeled.size() - 1);
        std::swap(order[i], order[pick(rng)]);
      }
      minibatch.clear();
      for (std::size_t i = 0; i < cfg.labeled_batch; ++i) minibatch.push_back(labeled[order[i]]);
      sup = minibatch;
    }
    tape.clear();
    const auto handle = tape.register_parameters(res.net.net.parameters());
    const AlignmentScene scene{res.net, ctrl, handle};
    const TotalLoss loss = total_loss(tape, scene, sup, unlabeled, draws, weights);
    if (!std::isfinite(loss.terms.total)) throw TrainingDiverged("alignment loss is not finite", epoch);
    const auto grads = tape.backward(loss.total);
    try {
      adam_step(res.net.net.parameters(), grads, adam);
    } catch (const TrainingDiverged&) {
      throw TrainingDiverged("alignment gradient is not finite", epoch);
    }
    res.log.push_back({epoch, loss.terms});
    if (progress) progress(res.log.back());
  }
  return res;
}

std::string training_log_csv(std::span<const EpochLog> log) {
  std::ostringstream os;
  os << "epoch,L_sup,L_prop,L_reverse,L_con,total\n" << std::setprecision(10);
  for (const auto& e : log) {
    os << e.epoch << ',' << e.loss.supervised << ',' << e.loss.proportionality << ',' << e.loss.reversibility << ','
       << e.loss.consistency << ',' << e.loss.total << '\n';
  }
  return os.str();
}

std::string alignment_to_json(const AlignmentNet& f, const TaskSpec& task, std::uint64_t controller_checksum) {
  io::json j;
  j["format"] = "align-teleop/alignment";
  j["version"] = io::kFormatVersion;
  j["task"] = to_string(task.task);
  j["latent_dim"] = LatentController::kLatentDim;
  j["controller_checksum"] = controller_checksum;
  j["net"] = io::mlp_to_json(f.net);
  return j.dump(1);
}

LoadedAlignment alignment_from_json(const std::string& text) {
  const auto j = io::parse(text, "alignment checkpoint");
  io::expect_format(j, "align-teleop/alignment");
  try {
    LoadedAlignment out{{io::mlp_from_json(j.at("net"))}, task_from_string(j.at("task").get<std::string>()),
                        j.at("controller_checksum").get<std::uint64_t>()};
    const TaskSpec spec = default_task(out.task);
    if (j.at("latent_dim").get<std::size_t>() != LatentController::kLatentDim ||
        out.net.net.input_size() != LatentController::kLatentDim + spec.conditioning_size() ||
        out.net.net.output_size() != LatentController::kLatentDim) {
      throw IncompatibleFile("alignment checkpoint dimensions do not match the task");
    }
    return out;
  } catch (const io::json::exception& e) {
    throw IncompatibleFile(std::string("malformed alignment checkpoint: ") + e.what());
  }
}

}  // namespace align_teleop
