#include "align_teleop/eval.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include "align_teleop/random.hpp"
#include "json_io.hpp"

namespace align_teleop {

double relative_distance_error(const ArmModel& arm, const JointState& s_t, const JointState& reached,
                               const JointState& star, double eps) {
  const Pose p0 = forward_kinematics(arm, s_t);
  const Pose pr = forward_kinematics(arm, reached);
  const Pose ps = forward_kinematics(arm, star);
  const Eigen::Vector3d x0(p0.position.data());
  const Eigen::Vector3d xr(pr.position.data());
  const Eigen::Vector3d xs(ps.position.data());
  const double denom = (xs - x0).norm();
  if (!(denom > eps)) throw DegenerateQuery("intended displacement is below the degenerate threshold");
  return (xs - xr).norm() / denom;
}

double rotation_error(const ArmModel& arm, const JointState& reached, const JointState& star) {
  return rotation_distance(forward_kinematics(arm, reached).orientation, forward_kinematics(arm, star).orientation);
}

std::string to_string(Condition c) {
  switch (c) {
    case Condition::NoAlign:
      return "NoAlign";
    case Condition::ManualAlign:
      return "ManualAlign";
    case Condition::IdealAlign:
      return "IdealAlign";
    case Condition::NoPriors:
      return "NoPriors";
    case Condition::PropOnly:
      return "PropOnly";
    case Condition::ReverseOnly:
      return "ReverseOnly";
    case Condition::ConOnly:
      return "ConOnly";
    case Condition::AllPriors:
      return "AllPriors";
  }
  return "?";
}

std::vector<Condition> all_conditions() {
  return {Condition::NoAlign,  Condition::ManualAlign, Condition::IdealAlign, Condition::NoPriors,
          Condition::PropOnly, Condition::ReverseOnly, Condition::ConOnly,    Condition::AllPriors};
}

Condition condition_from_string(const std::string& s) {
  for (Condition c : all_conditions()) {
    if (to_string(c) == s) return c;
  }
  throw InvalidInput("unknown condition '" + s + "'");
}

bool is_trained(Condition c) { return c != Condition::NoAlign && c != Condition::ManualAlign; }

LossWeights weights_for(Condition c, double lambda_rot) {
  LossWeights w = LossWeights::no_priors(lambda_rot);
  switch (c) {
    case Condition::PropOnly:
      w.prop = 1.0;
      break;
    case Condition::ReverseOnly:
      w.reverse = 1.0;
      break;
    case Condition::ConOnly:
      w.con = 1.0;
      break;
    case Condition::AllPriors:
      w = LossWeights::all_priors(lambda_rot);
      break;
    case Condition::IdealAlign:
    case Condition::NoPriors:
      break;
    case Condition::NoAlign:
    case Condition::ManualAlign:
      throw InvalidInput(to_string(c) + " is not a trained condition");
  }
  return w;
}

Input AffineMap::operator()(const Input& h) const {
  const Eigen::Vector2d z = A * Eigen::Vector2d(h[0], h[1]) + b;
  return {std::clamp(z[0], -1.0, 1.0), std::clamp(z[1], -1.0, 1.0)};
}

AffineMap fit_affine(std::span<const Input> h, std::span<const Input> z) {
  if (h.size() != z.size()) throw DimensionMismatch("affine fit targets", h.size(), z.size());
  const std::size_t n = h.size();
  if (n < 3) throw DegenerateFit("affine fit needs at least 3 samples, got " + std::to_string(n));
  Eigen::MatrixXd X(n, 3);
  Eigen::MatrixXd Z(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    X.row(static_cast<Eigen::Index>(i)) << h[i][0], h[i][1], 1.0;
    Z.row(static_cast<Eigen::Index>(i)) << z[i][0], z[i][1];
  }
  const Eigen::Matrix3d G = X.transpose() * X;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < 3) throw DegenerateFit("affine fit design matrix is rank deficient");
  const Eigen::Matrix<double, 3, 2> W = G.ldlt().solve(X.transpose() * Z);
  AffineMap m;
  m.A = W.topRows<2>().transpose();
  m.b = W.row(2).transpose();
  return m;
}

namespace {

Eigen::VectorXd pose_residual(const LatentController& ctrl, const JointState& s, const Pose& target, double lambda_rot,
                              const Input& z) {
  const ArmModel& arm = ctrl.task().arm;
  const Pose p = forward_kinematics(arm, step(arm, s, ctrl.decode(z, s)));
  Eigen::VectorXd r(lambda_rot > 0.0 ? 7 : 3);
  for (int i = 0; i < 3; ++i) r[i] = p.position[static_cast<std::size_t>(i)] - target.position[static_cast<std::size_t>(i)];
  if (lambda_rot > 0.0) {
    const double w = std::sqrt(lambda_rot);
    for (int i = 0; i < 4; ++i) {
      r[3 + i] = w * (p.orientation[static_cast<std::size_t>(i)] - target.orientation[static_cast<std::size_t>(i)]);
    }
  }
  return r;
}

Input clamp_latent(const Eigen::Vector2d& z) { return {std::clamp(z[0], -1.0, 1.0), std::clamp(z[1], -1.0, 1.0)}; }

}  // namespace

Input recover_latent(const LatentController& ctrl, const JointState& s, const JointState& s_star, double lambda_rot,
                     std::mt19937_64& rng, const LatentSearchConfig& cfg) {
  if (cfg.starts == 0) throw InvalidInput("latent search needs at least one start");
  const Pose target = forward_kinematics(ctrl.task().arm, s_star);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Input best{};
  double best_cost = std::numeric_limits<double>::infinity();
  constexpr double kFd = 1e-6;
  for (std::size_t start = 0; start < cfg.starts; ++start) {
    Input z{u(rng), u(rng)};
    Eigen::VectorXd r = pose_residual(ctrl, s, target, lambda_rot, z);
    double cost = r.norm();
    double mu = 1e-3;
    for (std::size_t it = 0; it < cfg.max_iterations && cost > cfg.tolerance; ++it) {
      Eigen::MatrixXd J(r.size(), 2);
      for (int c = 0; c < 2; ++c) {
        Input zp = z;
        Input zm = z;
        zp[static_cast<std::size_t>(c)] += kFd;
        zm[static_cast<std::size_t>(c)] -= kFd;
        J.col(c) = (pose_residual(ctrl, s, target, lambda_rot, zp) - pose_residual(ctrl, s, target, lambda_rot, zm)) /
                   (2.0 * kFd);
      }
      const Eigen::Matrix2d JtJ = J.transpose() * J;
      const Eigen::Vector2d g = J.transpose() * r;
      bool improved = false;
      for (int tries = 0; tries < 20 && !improved; ++tries) {
        Eigen::Matrix2d M = JtJ;
        M.diagonal().array() += mu * (1.0 + JtJ.diagonal().array());
        const Eigen::Vector2d delta = M.ldlt().solve(-g);
        const Input cand = clamp_latent(Eigen::Vector2d(z[0] + delta[0], z[1] + delta[1]));
        const Eigen::VectorXd rc = pose_residual(ctrl, s, target, lambda_rot, cand);
        if (rc.norm() < cost) {
          z = cand;
          r = rc;
          cost = rc.norm();
          mu = std::max(mu / 3.0, 1e-12);
          improved = true;
        } else {
          mu *= 4.0;
        }
      }
      if (!improved) break;
    }
    if (cost < best_cost) {
      best_cost = cost;
      best = z;
    }
    if (best_cost <= cfg.tolerance) break;
  }
  return best;
}

AffineMap fit_manual_align(const LatentController& ctrl, std::span<const LabeledSample> labeled, double lambda_rot,
                           std::mt19937_64& rng, const LatentSearchConfig& cfg) {
  if (labeled.size() < 3) throw DegenerateFit("manual align needs at least 3 labeled samples");
  std::vector<Input> hs;
  std::vector<Input> zs;
  for (const auto& l : labeled) {
    hs.push_back(l.h);
    zs.push_back(recover_latent(ctrl, l.s, l.s_next, lambda_rot, rng, cfg));
  }
  return fit_affine(hs, zs);
}

Aligner Aligner::identity() { return Aligner{}; }

Aligner Aligner::affine(AffineMap map) {
  Aligner a;
  a.kind_ = Kind::Affine;
  a.affine_ = map;
  return a;
}

Aligner Aligner::network(AlignmentNet net) {
  Aligner a;
  a.kind_ = Kind::Network;
  a.net_ = std::move(net);
  return a;
}

Input Aligner::latent(const TaskSpec& task, const Input& h, const JointState& s) const {
  switch (kind_) {
    case Kind::Identity:
      return h;
    case Kind::Affine:
      return affine_(h);
    case Kind::Network:
      return align(net_, task, h, s);
  }
  return h;
}

JointState Aligner::step(const LatentController& ctrl, const Input& h, const JointState& s) const {
  if (kind_ == Kind::Network) return t_theta(net_, ctrl, h, s);
  const Input z = latent(ctrl.task(), h, s);
  return align_teleop::step(ctrl.task().arm, s, ctrl.decode(z, s));
}

std::vector<TestQuery> make_test_queries(const LatentController& ctrl, std::size_t count, std::mt19937_64& rng) {
  if (count == 0) throw InvalidInput("test set must contain at least one query");
  const TaskSpec& task = ctrl.task();
  const PreferenceSpec pref = calibrate_preference(ctrl);
  const ArmModel& arm = task.arm;
  std::uniform_real_distribution<double> latent(-1.0, 1.0);
  std::vector<TestQuery> out;
  out.reserve(count);
  const std::size_t max_attempts = 1000 * count;
  for (std::size_t attempt = 0; out.size() < count; ++attempt) {
    if (attempt >= max_attempts) throw InfeasibleTask("oracle rejected almost every test query");
    TestQuery q;
    q.s = sample_valid_state(task, rng);
    const Input z{latent(rng), latent(rng)};
    q.s_star = step(arm, q.s, ctrl.decode(z, q.s));
    const auto h = preferred_input(pref, task, q.s, q.s_star);
    if (!h) continue;
    const Pose a = forward_kinematics(arm, q.s);
    const Pose b = forward_kinematics(arm, q.s_star);
    const double d = std::hypot(b.position[0] - a.position[0], b.position[1] - a.position[1],
                                b.position[2] - a.position[2]);
    if (!(d > kDegenerateDisplacement)) continue;
    q.h = *h;
    out.push_back(std::move(q));
  }
  return out;
}

EvalResult evaluate(const Aligner& aligner, const LatentController& ctrl, std::span<const TestQuery> queries,
                    double lambda_rot) {
  if (queries.empty()) throw InvalidInput("evaluate: empty test set");
  const ArmModel& arm = ctrl.task().arm;
  double ed = 0.0;
  double er = 0.0;
  for (const auto& q : queries) {
    const JointState reached = aligner.step(ctrl, q.h, q.s);
    ed += relative_distance_error(arm, q.s, reached, q.s_star);
    er += rotation_error(arm, reached, q.s_star);
  }
  const double n = static_cast<double>(queries.size());
  EvalResult r{ed / n, er / n, 0.0};
  r.composite = r.mean_ed + lambda_rot * r.mean_er;
  return r;
}

namespace {

struct DataKey {
  Task task;
  double cv;
  std::uint64_t seed;
  auto operator<=>(const DataKey&) const = default;
};

template <class T>
struct Outcome {
  T value{};
  std::string error;
};

// One unit of work. IdealAlign ignores the noise level, so its job is shared
// by every cv of a seed.
struct Job {
  Task task;
  Condition condition;
  double cv;
  std::uint64_t seed;
  auto operator<=>(const Job&) const = default;
};

}  // namespace

ExperimentReport run_experiment(const GridConfig& cfg, const std::map<Task, LatentController>& controllers,
                                const std::function<void(const CellResult&)>& progress) {
  if (cfg.tasks.empty() || cfg.conditions.empty() || cfg.cvs.empty() || cfg.seeds.empty()) {
    throw InvalidInput("grid has an empty axis");
  }
  for (Task t : cfg.tasks) {
    if (!controllers.contains(t)) throw InvalidInput("no controller for task " + to_string(t));
  }
  for (double cv : cfg.cvs) {
    if (!(cv >= 0.0)) throw InvalidInput("noise levels must be non-negative");
  }

  // Shared inputs, built up front on the calling thread.
  std::map<DataKey, Outcome<Dataset>> datasets;
  std::map<DataKey, Outcome<Dataset>> ideal;
  std::map<DataKey, Outcome<std::vector<TestQuery>>> tests;
  const bool wants_ideal = std::find(cfg.conditions.begin(), cfg.conditions.end(), Condition::IdealAlign) !=
                           cfg.conditions.end();
  for (Task t : cfg.tasks) {
    const LatentController& ctrl = controllers.at(t);
    const TaskSpec& spec = ctrl.task();
    const std::size_t n = cfg.unlabeled ? cfg.unlabeled : spec.unlabeled_budget;
    const std::size_t k = cfg.labeled ? cfg.labeled : spec.labeled_budget;
    for (std::uint64_t seed : cfg.seeds) {
      auto& tq = tests[{t, 0.0, seed}];
      try {
        auto rng = make_rng(seed, "test");
        tq.value = make_test_queries(ctrl, cfg.test_queries, rng);
      } catch (const Error& e) {
        tq.error = e.what();
      }
      if (wants_ideal) {
        auto& d = ideal[{t, 0.0, seed}];
        try {
          d.value = build_dataset(ctrl, std::max(n, 4 * cfg.ideal_labels), cfg.ideal_labels, 0.0, seed);
        } catch (const Error& e) {
          d.error = e.what();
        }
      }
      for (double cv : cfg.cvs) {
        auto& d = datasets[{t, cv, seed}];
        try {
          d.value = build_dataset(ctrl, n, k, cv, seed);
        } catch (const Error& e) {
          d.error = e.what();
        }
      }
    }
  }

  // Cells in report order, and the distinct jobs behind them.
  std::vector<CellResult> cells;
  std::vector<Job> cell_jobs;
  std::vector<Job> jobs;
  std::map<Job, std::size_t> job_index;
  for (Task t : cfg.tasks) {
    for (double cv : cfg.cvs) {
      for (std::uint64_t seed : cfg.seeds) {
        for (Condition c : cfg.conditions) {
          CellResult cell;
          cell.task = t;
          cell.condition = c;
          cell.cv = cv;
          cell.seed = seed;
          cells.push_back(cell);
          const Job j{t, c, c == Condition::IdealAlign ? 0.0 : cv, seed};
          cell_jobs.push_back(j);
          if (job_index.emplace(j, jobs.size()).second) jobs.push_back(j);
        }
      }
    }
  }

  std::vector<Outcome<EvalResult>> results(jobs.size());
  auto run_job = [&](const Job& j) -> Outcome<EvalResult> {
    Outcome<EvalResult> out;
    try {
      const LatentController& ctrl = controllers.at(j.task);
      const double lambda_rot = ctrl.task().lambda_rot;
      const auto& tq = tests.at({j.task, 0.0, j.seed});
      if (!tq.error.empty()) throw InfeasibleTask(tq.error);
      const auto& data = (j.condition == Condition::IdealAlign ? ideal : datasets).at({j.task, j.cv, j.seed});
      if (!data.error.empty()) throw InfeasibleTask(data.error);
      Aligner aligner = Aligner::identity();
      if (j.condition == Condition::ManualAlign) {
        auto rng = make_rng(j.seed, "manual");
        aligner = Aligner::affine(fit_manual_align(ctrl, data.value.labeled, lambda_rot, rng, cfg.latent_search));
      } else if (is_trained(j.condition)) {
        const AlignTrainConfig& tc = cfg.train;
        auto rng = make_rng(j.seed, "train");
        const auto trained = train_alignment(ctrl, data.value.labeled, data.value.unlabeled,
                                             weights_for(j.condition, lambda_rot), tc, rng);
        aligner = Aligner::network(trained.net);
      }
      out.value = evaluate(aligner, ctrl, tq.value, lambda_rot);
    } catch (const Error& e) {
      out.error = e.what();
    }
    return out;
  };

  std::mutex progress_mutex;
  auto finish = [&](std::size_t ji) {
    if (!progress) return;
    std::lock_guard<std::mutex> lock(progress_mutex);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (job_index.at(cell_jobs[c]) != ji) continue;
      CellResult r = cells[c];
      r.ok = results[ji].error.empty();
      r.error = results[ji].error;
      r.metrics = results[ji].value;
      progress(r);
    }
  };

  const std::size_t width = std::max<std::size_t>(1, std::min(cfg.jobs, jobs.size()));
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t ji = next++; ji < jobs.size(); ji = next++) {
      results[ji] = run_job(jobs[ji]);
      finish(ji);
    }
  };
  if (width == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < width; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  ExperimentReport report;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto& r = results[job_index.at(cell_jobs[c])];
    cells[c].ok = r.error.empty();
    cells[c].error = r.error;
    if (cells[c].ok) cells[c].metrics = r.value;
  }
  report.cells = std::move(cells);
  report.summary = summarize(report.cells);
  return report;
}

std::vector<ConditionSummary> summarize(std::span<const CellResult> cells) {
  std::vector<ConditionSummary> out;
  std::vector<std::vector<const CellResult*>> groups;
  for (const auto& c : cells) {
    auto it = std::find_if(out.begin(), out.end(), [&](const ConditionSummary& s) {
      return s.task == c.task && s.cv == c.cv && s.condition == c.condition;
    });
    std::size_t g;
    if (it == out.end()) {
      ConditionSummary s;
      s.task = c.task;
      s.cv = c.cv;
      s.condition = c.condition;
      out.push_back(s);
      groups.emplace_back();
      g = out.size() - 1;
    } else {
      g = static_cast<std::size_t>(it - out.begin());
    }
    if (c.ok) groups[g].push_back(&c);
  }
  auto stats = [](const std::vector<const CellResult*>& g, auto get, double& mean, double& sd) {
    mean = 0.0;
    sd = 0.0;
    if (g.empty()) {
      mean = std::numeric_limits<double>::quiet_NaN();
      sd = mean;
      return;
    }
    for (const auto* c : g) mean += get(*c);
    mean /= static_cast<double>(g.size());
    if (g.size() < 2) return;
    for (const auto* c : g) sd += (get(*c) - mean) * (get(*c) - mean);
    sd = std::sqrt(sd / static_cast<double>(g.size() - 1));
  };
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& s = out[i];
    s.runs = groups[i].size();
    stats(groups[i], [](const CellResult& c) { return c.metrics.mean_ed; }, s.mean_ed, s.std_ed);
    stats(groups[i], [](const CellResult& c) { return c.metrics.mean_er; }, s.mean_er, s.std_er);
    stats(groups[i], [](const CellResult& c) { return c.metrics.composite; }, s.mean_composite, s.std_composite);
  }
  return out;
}

std::string report_csv(const ExperimentReport& report) {
  std::ostringstream os;
  os << "task,condition,cv,seed,mean_Ed,mean_Er,composite\n" << std::setprecision(12);
  for (const auto& c : report.cells) {
    os << to_string(c.task) << ',' << to_string(c.condition) << ',' << c.cv << ',' << c.seed << ',';
    if (c.ok) {
      os << c.metrics.mean_ed << ',' << c.metrics.mean_er << ',' << c.metrics.composite << '\n';
    } else {
      os << "nan,nan,nan\n";
    }
  }
  return os.str();
}

std::string report_plot_json(const ExperimentReport& report) {
  io::json panels = io::json::array();
  auto num = [](double v) { return std::isfinite(v) ? io::json(v) : io::json(nullptr); };
  for (const auto& s : report.summary) {
    io::json* panel = nullptr;
    for (auto& p : panels) {
      if (p["task"] == to_string(s.task) && p["cv"].get<double>() == s.cv) panel = &p;
    }
    if (!panel) {
      panels.push_back({{"task", to_string(s.task)},
                        {"cv", s.cv},
                        {"conditions", io::json::array()},
                        {"runs", io::json::array()},
                        {"mean_Ed", io::json::array()},
                        {"std_Ed", io::json::array()},
                        {"mean_Er", io::json::array()},
                        {"std_Er", io::json::array()},
                        {"mean_composite", io::json::array()},
                        {"std_composite", io::json::array()}});
      panel = &panels.back();
    }
    (*panel)["conditions"].push_back(to_string(s.condition));
    (*panel)["runs"].push_back(s.runs);
    (*panel)["mean_Ed"].push_back(num(s.mean_ed));
    (*panel)["std_Ed"].push_back(num(s.std_ed));
    (*panel)["mean_Er"].push_back(num(s.mean_er));
    (*panel)["std_Er"].push_back(num(s.std_er));
    (*panel)["mean_composite"].push_back(num(s.mean_composite));
    (*panel)["std_composite"].push_back(num(s.std_composite));
  }
  io::json failures = io::json::array();
  for (const auto& c : report.cells) {
    if (!c.ok) {
      failures.push_back({{"task", to_string(c.task)},
                          {"condition", to_string(c.condition)},
                          {"cv", c.cv},
                          {"seed", c.seed},
                          {"error", c.error}});
    }
  }
  io::json j;
  j["format"] = "align-teleop/report";
  j["version"] = io::kFormatVersion;
  j["panels"] = panels;
  j["failures"] = failures;
  return j.dump(1);
}

}  // namespace align_teleop
