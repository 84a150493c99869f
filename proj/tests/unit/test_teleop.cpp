#include <align_teleop/error.hpp>
#include <align_teleop/teleop.hpp>

#include <gtest/gtest.h>
#include <json.hpp>

// After Eigen: resolv.h defines a _res macro.
#include <httplib.h>

#include <thread>

#include "fixtures.hpp"

using namespace align_teleop;
using nlohmann::json;

namespace {

std::shared_ptr<const LatentController> analytic(Task t) {
  return std::make_shared<const LatentController>(LatentController::analytic(default_task(t)));
}

SessionConfig quick(Task t = Task::Plane, std::uint64_t seed = 1) {
  SessionConfig cfg;
  cfg.task = t;
  cfg.seed = seed;
  cfg.unlabeled = 200;
  cfg.train.hidden = 8;
  cfg.train.epochs = 30;
  cfg.train.unlabeled_batch = 8;
  cfg.progress_every = 5;
  return cfg;
}

void label_all(Session& s) {
  const auto pref = calibrate_preference(*analytic(s.config().task));
  for (const auto& q : s.queries()) {
    auto h = preferred_input(pref, default_task(s.config().task), q.s, q.s_star).value_or(Input{0.0, 0.0});
    s.submit_label(q.id, h);
  }
}

std::vector<json> frames_of(const Session& s, const std::string& type) {
  std::vector<json> out;
  for (const auto& f : s.frames_since(0)) {
    auto j = json::parse(f);
    if (j.at("type") == type) out.push_back(j);
  }
  return out;
}

}  // namespace

TEST(Session, DefaultQueryCountsPerTask) {
  EXPECT_EQ(Session("a", analytic(Task::Plane), quick(Task::Plane)).queries().size(), 7u);
  EXPECT_EQ(Session("b", analytic(Task::Pour), quick(Task::Pour)).queries().size(), 10u);
  EXPECT_EQ(Session("c", analytic(Task::ReachPour), quick(Task::ReachPour)).queries().size(), 30u);
}

TEST(Session, FixedSeedGivesIdenticalQueries) {
  Session a("a", analytic(Task::Plane), quick(Task::Plane, 4));
  Session b("b", analytic(Task::Plane), quick(Task::Plane, 4));
  const auto qa = a.queries(), qb = b.queries();
  ASSERT_EQ(qa.size(), qb.size());
  for (std::size_t i = 0; i < qa.size(); ++i) {
    EXPECT_EQ(qa[i].s, qb[i].s);
    EXPECT_EQ(qa[i].s_star, qb[i].s_star);
  }
}

TEST(Session, QueriesShipReplaysFromStartToTarget) {
  Session s("a", analytic(Task::Plane), quick());
  const auto presented = frames_of(s, "QueryPresented");
  ASSERT_EQ(presented.size(), 7u);
  for (const auto& q : s.queries()) {
    ASSERT_EQ(q.replay.size(), 10u);
    EXPECT_EQ(q.replay.front(), q.s);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(q.replay.back().angles[j], q.s_star.angles[j], 1e-15);
  }
  EXPECT_EQ(presented[0].at("protocol_version"), kProtocolVersion);
  EXPECT_EQ(presented[0].at("replay").size(), 10u);
}

TEST(Session, MismatchedTaskRejected) {
  EXPECT_THROW(Session("a", analytic(Task::Pour), quick(Task::Plane)), InvalidInput);
}

TEST(Session, LabelValidation) {
  Session s("a", analytic(Task::Plane), quick());
  EXPECT_THROW(s.submit_label(0, {2.0, 0.0}), InvalidInput);
  EXPECT_THROW(s.submit_label(99, {0.0, 0.0}), InvalidInput);
  EXPECT_EQ(s.submit_label(0, {0.5, 0.5}), 6u);
  EXPECT_THROW(s.submit_label(0, {0.1, 0.1}), InvalidInput);
  EXPECT_EQ(s.remaining_labels(), 6u);
}

TEST(Session, TrainingRequiresAllLabels) {
  Session s("a", analytic(Task::Plane), quick());
  s.submit_label(0, {0.5, 0.5});
  EXPECT_THROW(s.train(LossWeights::all_priors(0.0), false), InvalidInput);
  EXPECT_EQ(s.phase(), Phase::Labeling);
}

TEST(Session, TeleopRejectedBeforeTraining) {
  Session s("a", analytic(Task::Plane), quick());
  EXPECT_THROW(s.input({0.1, 0.1}, 0.0), InvalidInput);
}

TEST(Session, PhasesAndProgressFrames) {
  Session s("a", analytic(Task::Plane), quick());
  label_all(s);
  EXPECT_EQ(s.remaining_labels(), 0u);
  s.train(LossWeights::all_priors(0.0), true);
  s.wait_for_training();
  EXPECT_EQ(s.phase(), Phase::Teleop);
  EXPECT_TRUE(s.has_alignment(Condition::AllPriors));
  EXPECT_THROW(s.submit_label(0, {0, 0}), InvalidInput);

  const auto progress = frames_of(s, "TrainProgress");
  ASSERT_GE(progress.size(), 2u);
  for (std::size_t i = 1; i < progress.size(); ++i) {
    EXPECT_GT(progress[i].at("epoch").get<int>(), progress[i - 1].at("epoch").get<int>());
  }
  EXPECT_EQ(progress.back().at("epoch"), 29);
  EXPECT_EQ(frames_of(s, "TrainFinished").size(), 1u);
  // Sequence numbers are strictly increasing.
  std::uint64_t last = 0;
  for (const auto& f : s.frames_since(0)) {
    const auto seq = json::parse(f).at("seq").get<std::uint64_t>();
    EXPECT_GT(seq, last);
    last = seq;
  }
  EXPECT_EQ(s.frames_since(last).size(), 0u);
}

TEST(Session, ZeroPriorWeightsTrainNoPriors) {
  Session s("a", analytic(Task::Plane), quick());
  label_all(s);
  s.train(LossWeights::no_priors(0.0), false);
  EXPECT_TRUE(s.has_alignment(Condition::NoPriors));
  EXPECT_FALSE(s.has_alignment(Condition::AllPriors));
  EXPECT_EQ(condition_for({1, 0, 0}), Condition::PropOnly);
  EXPECT_EQ(condition_for({0, 1, 0}), Condition::ReverseOnly);
  EXPECT_EQ(condition_for({0, 0, 2}), Condition::ConOnly);
  EXPECT_THROW(condition_for({1, 1, 0}), InvalidInput);
}

TEST(Session, RepeatTrainingIsDeterministic) {
  std::vector<double> finals;
  for (int i = 0; i < 2; ++i) {
    Session s("a", analytic(Task::Plane), quick());
    label_all(s);
    s.train(LossWeights::all_priors(0.0), false);
    finals.push_back(frames_of(s, "TrainProgress").back().at("losses").at("total").get<double>());
  }
  EXPECT_EQ(finals[0], finals[1]);
}

TEST(Session, NoAlignTicksEqualScriptedSteps) {
  const auto ctrl = analytic(Task::Plane);
  Session s("a", ctrl, quick());
  label_all(s);
  s.train(LossWeights::no_priors(0.0), false);
  s.set_condition(Condition::NoAlign);
  JointState want = task_start_state(ctrl->task());
  const Input h{0.4, -0.2};
  const std::vector<double> z(h.begin(), h.end());
  for (int t = 0; t < 100; ++t) {
    const auto u = s.input(h, t * 0.05);
    ASSERT_TRUE(u);
    want = step(ctrl->task().arm, want, ctrl->decode(z, want));
    ASSERT_EQ(u->s, want);
    EXPECT_EQ(u->tick, static_cast<std::uint64_t>(t + 1));
    const Pose p = forward_kinematics(ctrl->task().arm, u->s);
    EXPECT_EQ(u->pose.position, p.position);
    EXPECT_EQ(u->pose.orientation, p.orientation);
  }
}

TEST(Session, ZeroInputWithZeroActionKeepsState) {
  Session s("a", analytic(Task::Plane), quick());
  label_all(s);
  s.train(LossWeights::no_priors(0.0), false);
  s.set_condition(Condition::NoAlign);
  const auto before = s.state();
  EXPECT_EQ(s.input({0.0, 0.0}, 0.0)->s, before);
}

TEST(Session, ConditionSwitchResetsToStart) {
  const auto ctrl = analytic(Task::Plane);
  Session s("a", ctrl, quick());
  label_all(s);
  s.train(LossWeights::all_priors(0.0), false);
  s.set_condition(Condition::AllPriors);
  s.input({1.0, 1.0}, 0.0);
  EXPECT_NE(s.state(), task_start_state(ctrl->task()));
  s.set_condition(Condition::ManualAlign);
  EXPECT_EQ(s.state(), task_start_state(ctrl->task()));
  EXPECT_THROW(s.set_condition(Condition::ConOnly), InvalidInput);
}

TEST(Session, ReplayReproducesStateUpdates) {
  const auto ctrl = analytic(Task::Plane);
  Session a("a", ctrl, quick());
  label_all(a);
  a.train(LossWeights::all_priors(0.0), false);
  a.set_condition(Condition::AllPriors);
  std::mt19937_64 rng(2);
  std::vector<StateUpdate> recorded;
  for (int t = 0; t < 40; ++t) {
    if (t == 20) a.set_condition(Condition::NoAlign);
    if (t == 30) a.set_condition(Condition::NoAlign);  // reset without a change of condition
    const auto h = fx::uniform(2, -1, 1, rng);
    recorded.push_back(*a.input({h[0], h[1]}, t * 0.05));
  }
  Session b("b", ctrl, quick());
  label_all(b);
  b.train(LossWeights::all_priors(0.0), false);
  const auto replayed = replay_input_log(b, a.input_log_jsonl());
  ASSERT_EQ(replayed.size(), recorded.size());
  for (std::size_t i = 0; i < recorded.size(); ++i) {
    EXPECT_EQ(state_update_json(replayed[i]), state_update_json(recorded[i])) << "frame " << i;
  }
}

TEST(Session, RealtimeTickerCoalescesToLatestInput) {
  auto cfg = quick();
  cfg.realtime = true;
  cfg.tick_hz = 100.0;
  const auto ctrl = analytic(Task::Plane);
  Session s("a", ctrl, cfg);
  label_all(s);
  s.train(LossWeights::no_priors(0.0), false);
  s.set_condition(Condition::NoAlign);
  for (int i = 0; i < 5; ++i) EXPECT_FALSE(s.input({0.0, 0.0}, 0.0));
  EXPECT_FALSE(s.input({0.3, 0.0}, 1.0));
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  const auto updates = frames_of(s, "StateUpdate");
  ASSERT_FALSE(updates.empty());
  for (const auto& u : updates) EXPECT_EQ(u.at("timestamp").get<double>(), 1.0);
}

TEST(SessionManager, CreatesIndependentSessions) {
  std::map<Task, std::shared_ptr<const LatentController>> ctrls{{Task::Plane, analytic(Task::Plane)}};
  SessionManager m(ctrls);
  auto a = m.create(quick());
  auto b = m.create(quick());
  EXPECT_NE(a->id(), b->id());
  EXPECT_EQ(m.find(a->id()), a);
  EXPECT_EQ(m.find("nope"), nullptr);
  EXPECT_EQ(m.ids().size(), 2u);
  EXPECT_THROW(m.create(quick(Task::Pour)), InvalidInput);
}

TEST(Server, EndToEndOverHttp) {
  std::map<Task, std::shared_ptr<const LatentController>> ctrls{{Task::Plane, analytic(Task::Plane)}};
  SessionManager m(ctrls);
  TeleopServer server(m);
  const int port = server.start("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  httplib::Client cli("127.0.0.1", port);

  auto health = cli.Get("/api/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);

  auto created = cli.Post("/api/sessions",
                          R"({"protocol_version":1,"task":"plane","seed":3,"unlabeled":200,"epochs":20})",
                          "application/json");
  ASSERT_TRUE(created);
  ASSERT_EQ(created->status, 201) << created->body;
  const auto status = json::parse(created->body);
  const std::string id = status.at("session");
  EXPECT_EQ(status.at("queries").size(), 7u);
  const std::string base = "/api/sessions/" + id;

  auto post_frame = [&](const json& j) { return cli.Post(base + "/frames", j.dump(), "application/json"); };

  EXPECT_EQ(post_frame({{"type", "LabelSubmitted"}, {"query_id", 0}, {"h", {2.0, 0.0}}})->status, 400);
  EXPECT_EQ(post_frame({{"type", "InputFrame"}, {"h", {0.1, 0.0}}})->status, 400);
  EXPECT_EQ(post_frame({{"protocol_version", 9}, {"type", "LabelSubmitted"}})->status, 400);
  EXPECT_EQ(post_frame({{"type", "Nonsense"}})->status, 400);
  EXPECT_EQ(cli.Get("/api/sessions/zzz")->status, 404);

  for (int q = 0; q < 7; ++q) {
    auto r = post_frame({{"type", "LabelSubmitted"}, {"query_id", q}, {"h", {0.1 * q, -0.1}}});
    ASSERT_EQ(r->status, 200) << r->body;
    EXPECT_EQ(json::parse(r->body).at("remaining"), 6 - q);
  }
  EXPECT_EQ(post_frame({{"type", "LabelSubmitted"}, {"query_id", 0}, {"h", {0.0, 0.0}}})->status, 400);

  auto train = post_frame({{"type", "TrainRequested"}, {"weights", {{"prop", 1}, {"reverse", 1}, {"con", 1}}}});
  ASSERT_EQ(train->status, 202) << train->body;
  m.find(id)->wait_for_training();

  auto cond = cli.Post(base + "/condition", R"({"condition":"AllPriors"})", "application/json");
  ASSERT_EQ(cond->status, 200) << cond->body;
  auto upd = post_frame({{"type", "InputFrame"}, {"h", {0.5, 0.2}}, {"timestamp", 0.05}});
  ASSERT_EQ(upd->status, 200) << upd->body;
  const auto su = json::parse(upd->body);
  EXPECT_EQ(su.at("type"), "StateUpdate");
  EXPECT_EQ(su.at("tick"), 1);

  auto frames = cli.Get(base + "/frames?since=0&wait_ms=10");
  ASSERT_EQ(frames->status, 200);
  const auto fj = json::parse(frames->body);
  EXPECT_EQ(fj.at("frames").back().at("type"), "StateUpdate");
  const auto last = fj.at("last_seq").get<std::uint64_t>();
  auto none = cli.Get(base + "/frames?since=" + std::to_string(last) + "&wait_ms=20");
  EXPECT_EQ(json::parse(none->body).at("frames").size(), 0u);

  auto log = cli.Get(base + "/input-log");
  ASSERT_EQ(log->status, 200);
  EXPECT_EQ(std::count(log->body.begin(), log->body.end(), '\n'), 1);
  server.stop();
}
