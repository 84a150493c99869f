#include "commands.hpp"

#include <align_teleop/alignment.hpp>
#include <align_teleop/controller.hpp>
#include <align_teleop/datagen.hpp>
#include <align_teleop/eval.hpp>
#include <align_teleop/random.hpp>
#include <align_teleop/teleop.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace align_teleop::cli {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InvalidInput("cannot read '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw Error("write failed for '" + p.string() + "'");
}

void snapshot(const RunContext& ctx) {
  fs::create_directories(ctx.out);
  write_text(ctx.out / "config.json", ctx.config.dump(2) + "\n");
}

void log(const std::string& msg) { std::cerr << msg << std::endl; }

std::uint64_t seed_of(const json& cfg) { return cfg.at("seed").get<std::uint64_t>(); }
Task task_of(const json& cfg) { return task_from_string(cfg.at("task").get<std::string>()); }

std::optional<std::string> opt_string(const json& v, const std::string& field) {
  if (v.is_null()) return std::nullopt;
  if (!v.is_string()) throw InvalidInput("field '" + field + "' must be a string or null");
  return v.get<std::string>();
}

std::vector<Demonstration> demos_for(const json& cfg, const TaskSpec& spec) {
  const json& d = cfg.at("demo");
  if (auto path = opt_string(d.at("path"), "demo.path")) {
    auto demos = demos_from_jsonl(read_text(*path));
    for (const auto& demo : demos) {
      if (demo.task != spec.task) throw InvalidInput("demo.path holds demos for another task");
    }
    return demos;
  }
  DemoConfig dc;
  dc.max_steps = d.at("max_steps").get<std::size_t>();
  dc.damping = d.at("damping").get<double>();
  auto rng = make_rng(seed_of(cfg), "demos");
  return generate_demonstrations(spec, d.at("count").get<std::size_t>(), rng, dc);
}

CaeConfig cae_config(const json& cfg) {
  const json& c = cfg.at("cae");
  CaeConfig cc;
  cc.hidden = c.at("hidden").get<std::size_t>();
  cc.epochs = c.at("epochs").get<std::size_t>();
  cc.max_pairs = c.at("max_pairs").get<std::size_t>();
  cc.adam.learning_rate = c.at("learning_rate").get<double>();
  return cc;
}

std::string loss_csv(const std::vector<double>& loss) {
  std::ostringstream os;
  os << std::setprecision(17) << "epoch,loss\n";
  for (std::size_t i = 0; i < loss.size(); ++i) os << i << ',' << loss[i] << '\n';
  return os.str();
}

struct CaeRun {
  LatentController controller;
  json summary;
};

CaeRun train_controller(const json& cfg, const TaskSpec& spec, const std::string& suffix, const fs::path& out) {
  const auto demos = demos_for(cfg, spec);
  const CaeConfig cc = cae_config(cfg);
  const auto pairs = demo_pairs(demos, cc.max_pairs);
  log("training autoencoder on " + std::to_string(pairs.size()) + " pairs (" + to_string(spec.task) + ")");
  auto rng = make_rng(seed_of(cfg), "cae");
  auto result = train_cae(spec, pairs, cc, rng, [&](std::size_t e, double l) {
    if ((e + 1) % 500 == 0) log("  epoch " + std::to_string(e + 1) + " loss " + std::to_string(l));
  });
  auto held_rng = make_rng(seed_of(cfg), "heldout-demos");
  const auto held_demos = generate_demonstrations(spec, cfg.at("cae").at("heldout_demos").get<std::size_t>(), held_rng);
  const auto held = demo_pairs(held_demos, std::numeric_limits<std::size_t>::max());

  json summary{{"task", to_string(spec.task)},
               {"pairs", pairs.size()},
               {"train_rmse", reconstruction_rmse(result.controller, pairs)},
               {"heldout_rmse", reconstruction_rmse(result.controller, held)},
               {"a_max", spec.arm.a_max},
               {"checksum", result.controller.checksum()}};
  write_text(out / "checkpoints" / ("controller" + suffix + ".json"), controller_to_json(result.controller));
  write_text(out / "logs" / ("cae_loss" + suffix + ".csv"), loss_csv(result.loss_per_epoch));
  write_text(out / "logs" / ("cae_summary" + suffix + ".json"), summary.dump(2) + "\n");
  return {std::move(result.controller), summary};
}

/// Analytic, loaded from `path`, or trained on the spot (and checkpointed).
LatentController controller_for(const json& cfg, Task task, std::optional<std::string> path, const fs::path& out,
                                const std::string& suffix) {
  const TaskSpec spec = default_task(task);
  const auto kind = cfg.at("controller").at("kind").get<std::string>();
  if (kind == "analytic") return LatentController::analytic(spec);
  if (kind != "autoencoder") throw InvalidInput("field 'controller.kind' must be 'autoencoder' or 'analytic'");
  if (path) {
    auto ctrl = controller_from_json(read_text(*path));
    if (ctrl.task().task != task) {
      throw InvalidInput("controller '" + *path + "' is for task " + to_string(ctrl.task().task) + ", not " +
                         to_string(task));
    }
    return ctrl;
  }
  return train_controller(cfg, spec, suffix, out).controller;
}

LatentController main_controller(const RunContext& ctx) {
  return controller_for(ctx.config, task_of(ctx.config), opt_string(ctx.config.at("controller").at("path"),
                                                                    "controller.path"),
                        ctx.out, "");
}

std::optional<std::string> per_task_path(const json& cfg, const json& map, Task task, const std::string& field) {
  if (!map.is_null()) {
    if (!map.is_object()) throw InvalidInput("field '" + field + "' must map task names to checkpoint paths");
    for (const auto& [k, v] : map.items()) {
      if (task_from_string(k) == task) return opt_string(v, field + "." + k);
    }
  }
  if (task == task_of(cfg)) return opt_string(cfg.at("controller").at("path"), "controller.path");
  return std::nullopt;
}

std::size_t or_budget(const json& v, std::size_t budget) {
  const auto n = v.get<std::size_t>();
  return n ? n : budget;
}

Dataset dataset_for(const RunContext& ctx, const LatentController& ctrl, Condition condition) {
  const json& d = ctx.config.at("data");
  const TaskSpec& spec = ctrl.task();
  Dataset data;
  if (auto path = opt_string(d.at("path"), "data.path")) {
    data = dataset_from_jsonl(read_text(*path));
    if (data.provenance.task != spec.task) throw InvalidInput("data.path holds a dataset for another task");
    if (data.provenance.controller_checksum != ctrl.checksum()) {
      throw IncompatibleFile("dataset '" + *path + "' was collected with a different controller");
    }
    return data;
  }
  const std::size_t n = or_budget(d.at("unlabeled"), spec.unlabeled_budget);
  const std::size_t k = or_budget(d.at("labeled"), spec.labeled_budget);
  if (condition == Condition::IdealAlign) {
    const auto ideal = ctx.config.at("align").at("ideal_labels").get<std::size_t>();
    data = build_dataset(ctrl, std::max(n, 4 * ideal), ideal, 0.0, seed_of(ctx.config));
  } else {
    data = build_dataset(ctrl, n, k, d.at("cv").get<double>(), seed_of(ctx.config));
  }
  write_text(ctx.out / "data" / "dataset.jsonl", dataset_to_jsonl(data));
  return data;
}

AlignTrainConfig train_config(const json& cfg) {
  const json& a = cfg.at("align");
  AlignTrainConfig tc;
  tc.hidden = a.at("hidden").get<std::size_t>();
  tc.epochs = a.at("epochs").get<std::size_t>();
  tc.unlabeled_batch = a.at("unlabeled_batch").get<std::size_t>();
  tc.labeled_batch = a.at("labeled_batch").get<std::size_t>();
  tc.neighbors = a.at("neighbors").get<std::size_t>();
  tc.random_pair_fraction = a.at("random_pair_fraction").get<double>();
  tc.adam.learning_rate = a.at("learning_rate").get<double>();
  return tc;
}

LatentSearchConfig latent_search(const json& cfg) {
  LatentSearchConfig ls;
  ls.starts = cfg.at("eval").at("latent_starts").get<std::size_t>();
  ls.tolerance = cfg.at("eval").at("latent_tolerance").get<double>();
  return ls;
}

LossWeights weights_of(const json& cfg, Condition condition, double lambda_rot) {
  LossWeights w = weights_for(condition, lambda_rot);
  const json& o = cfg.at("align").at("weights");
  auto take = [&](const char* key, double& slot) {
    const json& v = o.at(key);
    if (v.is_null()) return;
    if (!v.is_number()) throw InvalidInput(std::string("field 'align.weights.") + key + "' must be a number");
    slot = v.get<double>();
  };
  take("prop", w.prop);
  take("reverse", w.reverse);
  take("con", w.con);
  take("gamma", w.gamma);
  if (w.prop < 0.0 || w.reverse < 0.0 || w.con < 0.0) throw InvalidInput("align.weights must be non-negative");
  if (!(w.gamma > 0.0)) throw InvalidInput("field 'align.weights.gamma' must be positive");
  return w;
}

std::vector<TestQuery> test_queries(const json& cfg, const LatentController& ctrl) {
  auto rng = make_rng(seed_of(cfg), "test");
  return make_test_queries(ctrl, cfg.at("eval").at("test_queries").get<std::size_t>(), rng);
}

json metrics_json(const EvalResult& r) {
  return json{{"mean_Ed", r.mean_ed}, {"mean_Er", r.mean_er}, {"composite", r.composite}};
}

/// Single-row report in the grid schema.
std::string single_report(Task task, Condition condition, double cv, std::uint64_t seed, const EvalResult& r) {
  ExperimentReport report;
  CellResult cell;
  cell.task = task;
  cell.condition = condition;
  cell.cv = cv;
  cell.seed = seed;
  cell.ok = true;
  cell.metrics = r;
  report.cells.push_back(cell);
  return report_csv(report);
}

void write_eval(const RunContext& ctx, Task task, Condition condition, double cv, const EvalResult& r,
                std::size_t queries) {
  json j{{"task", to_string(task)}, {"condition", to_string(condition)}, {"cv", cv},
         {"seed", seed_of(ctx.config)}, {"test_queries", queries}, {"metrics", metrics_json(r)}};
  write_text(ctx.out / "logs" / "eval.json", j.dump(2) + "\n");
  write_text(ctx.out / "report.csv", single_report(task, condition, cv, seed_of(ctx.config), r));
  std::ostringstream os;
  os << std::setprecision(6) << to_string(condition) << ": mean_Ed " << r.mean_ed << " mean_Er " << r.mean_er
     << " composite " << r.composite;
  log(os.str());
}

}  // namespace

void cmd_demo(const RunContext& ctx) {
  snapshot(ctx);
  const TaskSpec spec = default_task(task_of(ctx.config));
  const auto demos = demos_for(ctx.config, spec);
  write_text(ctx.out / "data" / "demos.jsonl", demos_to_jsonl(demos));
  log("wrote " + std::to_string(demos.size()) + " demonstrations");
}

void cmd_train_cae(const RunContext& ctx) {
  snapshot(ctx);
  const TaskSpec spec = default_task(task_of(ctx.config));
  const auto run = train_controller(ctx.config, spec, "", ctx.out);
  log("held-out RMSE " + std::to_string(run.summary.at("heldout_rmse").get<double>()) + " (a_max " +
      std::to_string(spec.arm.a_max) + ")");
}

void cmd_collect(const RunContext& ctx) {
  snapshot(ctx);
  const auto ctrl = main_controller(ctx);
  const auto data = dataset_for(ctx, ctrl, Condition::NoPriors);
  log("collected " + std::to_string(data.unlabeled.size()) + " unlabeled and " + std::to_string(data.labeled.size()) +
      " labeled tuples");
}

void cmd_train_align(const RunContext& ctx) {
  snapshot(ctx);
  const json& cfg = ctx.config;
  const auto condition = condition_from_string(cfg.at("align").at("condition").get<std::string>());
  if (!is_trained(condition)) {
    throw InvalidInput("field 'align.condition' must name a trained condition, got " + to_string(condition));
  }
  const auto ctrl = main_controller(ctx);
  const std::uint64_t checksum = ctrl.checksum();
  const TaskSpec& spec = ctrl.task();
  const auto data = dataset_for(ctx, ctrl, condition);
  const LossWeights w = weights_of(cfg, condition, spec.lambda_rot);
  const AlignTrainConfig tc = train_config(cfg);

  auto rng = make_rng(seed_of(cfg), "train");
  const auto result = train_alignment(ctrl, data.labeled, data.unlabeled, w, tc, rng, [&](const EpochLog& e) {
    if ((e.epoch + 1) % 200 == 0) log("  epoch " + std::to_string(e.epoch + 1) + " total " +
                                      std::to_string(e.loss.total));
  });
  if (ctrl.checksum() != checksum) throw Error("controller changed during alignment training");

  write_text(ctx.out / "checkpoints" / "alignment.json", alignment_to_json(result.net, spec, checksum));
  write_text(ctx.out / "logs" / "train_log.csv", training_log_csv(result.log));
  const auto queries = test_queries(cfg, ctrl);
  const auto r = evaluate(Aligner::network(result.net), ctrl, queries, spec.lambda_rot);
  write_eval(ctx, spec.task, condition, condition == Condition::IdealAlign ? 0.0 : data.provenance.cv, r,
             queries.size());
}

void cmd_eval(const RunContext& ctx) {
  snapshot(ctx);
  const json& cfg = ctx.config;
  const auto ctrl = main_controller(ctx);
  const TaskSpec& spec = ctrl.task();
  const auto alignment = opt_string(cfg.at("eval").at("alignment"), "eval.alignment");
  const auto cond_name = opt_string(cfg.at("eval").at("condition"), "eval.condition");

  Aligner aligner = Aligner::identity();
  Condition condition = Condition::NoAlign;
  double cv = cfg.at("data").at("cv").get<double>();
  if (alignment) {
    const auto loaded = alignment_from_json(read_text(*alignment));
    if (loaded.task != spec.task) throw InvalidInput("alignment checkpoint is for another task");
    if (loaded.controller_checksum != ctrl.checksum()) {
      throw IncompatibleFile("alignment '" + *alignment + "' was trained against a different controller");
    }
    aligner = Aligner::network(loaded.net);
    condition = condition_from_string(cond_name.value_or(cfg.at("align").at("condition").get<std::string>()));
    if (condition == Condition::IdealAlign) cv = 0.0;
  } else {
    if (!cond_name) throw InvalidInput("eval needs 'eval.alignment' or 'eval.condition'");
    condition = condition_from_string(*cond_name);
    if (condition == Condition::ManualAlign) {
      const auto data = dataset_for(ctx, ctrl, condition);
      cv = data.provenance.cv;
      auto rng = make_rng(seed_of(cfg), "manual");
      aligner = Aligner::affine(fit_manual_align(ctrl, data.labeled, spec.lambda_rot, rng, latent_search(cfg)));
    } else if (condition != Condition::NoAlign) {
      throw InvalidInput("condition " + to_string(condition) + " needs a trained checkpoint in 'eval.alignment'");
    }
  }
  const auto queries = test_queries(cfg, ctrl);
  write_eval(ctx, spec.task, condition, cv, evaluate(aligner, ctrl, queries, spec.lambda_rot), queries.size());
}

void cmd_grid(const RunContext& ctx) {
  snapshot(ctx);
  const json& cfg = ctx.config;
  const json& g = cfg.at("grid");
  GridConfig gc;
  gc.tasks.clear();
  for (const auto& t : g.at("tasks")) gc.tasks.push_back(task_from_string(t.get<std::string>()));
  gc.conditions.clear();
  for (const auto& c : g.at("conditions")) gc.conditions.push_back(condition_from_string(c.get<std::string>()));
  gc.cvs = g.at("cvs").get<std::vector<double>>();
  gc.seeds = g.at("seeds").get<std::vector<std::uint64_t>>();
  gc.test_queries = cfg.at("eval").at("test_queries").get<std::size_t>();
  gc.ideal_labels = cfg.at("align").at("ideal_labels").get<std::size_t>();
  gc.labeled = cfg.at("data").at("labeled").get<std::size_t>();
  gc.unlabeled = cfg.at("data").at("unlabeled").get<std::size_t>();
  gc.train = train_config(cfg);
  gc.latent_search = latent_search(cfg);
  gc.jobs = std::max<std::size_t>(1, g.at("jobs").get<std::size_t>());

  std::map<Task, LatentController> controllers;
  for (Task t : gc.tasks) {
    if (controllers.contains(t)) continue;
    controllers.emplace(t, controller_for(cfg, t, per_task_path(cfg, g.at("controllers"), t, "grid.controllers"),
                                          ctx.out, "_" + to_string(t)));
  }
  const std::size_t total = gc.tasks.size() * gc.conditions.size() * gc.cvs.size() * gc.seeds.size();
  log("running " + std::to_string(total) + " cells on " + std::to_string(gc.jobs) + " worker(s)");
  std::size_t done = 0;
  const auto report = run_experiment(gc, controllers, [&](const CellResult& c) {
    ++done;
    std::ostringstream os;
    os << "  [" << done << "] " << to_string(c.task) << ' ' << to_string(c.condition) << " cv=" << c.cv
       << " seed=" << c.seed << ' ';
    if (c.ok) {
      os << "composite " << c.metrics.composite;
    } else {
      os << "FAILED: " << c.error;
    }
    log(os.str());
  });
  write_text(ctx.out / "report.csv", report_csv(report));
  write_text(ctx.out / "logs" / "plot.json", report_plot_json(report));
  for (const auto& s : report.summary) {
    std::ostringstream os;
    os << std::setprecision(4) << to_string(s.task) << " cv=" << s.cv << ' ' << to_string(s.condition)
       << " composite " << s.mean_composite << " +- " << s.std_composite << " (" << s.runs << " runs)";
    log(os.str());
  }
}

void cmd_serve(const RunContext& ctx) {
  snapshot(ctx);
  const json& cfg = ctx.config;
  const json& s = cfg.at("serve");
  std::map<Task, std::shared_ptr<const LatentController>> controllers;
  for (const auto& t : s.at("tasks")) {
    const Task task = task_from_string(t.get<std::string>());
    if (controllers.contains(task)) continue;
    controllers.emplace(task, std::make_shared<const LatentController>(controller_for(
                                  cfg, task, per_task_path(cfg, s.at("controllers"), task, "serve.controllers"),
                                  ctx.out, "_" + to_string(task))));
  }
  SessionManager sessions(std::move(controllers));
  TeleopServer server(sessions);
  const auto host = s.at("host").get<std::string>();
  const int port = s.at("port").get<int>();
  log("serving on http://" + host + ":" + std::to_string(port) + " (protocol " + std::to_string(kProtocolVersion) +
      ")");
  server.run(host, port);
}

}  // namespace align_teleop::cli
