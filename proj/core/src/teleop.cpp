#include "align_teleop/teleop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "align_teleop/random.hpp"
#include "json_io.hpp"

namespace align_teleop {

namespace {

// Thrown from the training progress callback to abandon a job.
struct TrainingCancelled {};

bool valid_input(const Input& h) {
  return std::isfinite(h[0]) && std::isfinite(h[1]) && std::abs(h[0]) <= 1.0 && std::abs(h[1]) <= 1.0;
}

io::json losses_json(const LossBreakdown& l) {
  return {{"L_sup", l.supervised},
          {"L_prop", l.proportionality},
          {"L_reverse", l.reversibility},
          {"L_con", l.consistency},
          {"total", l.total}};
}

}  // namespace

std::string to_string(Phase p) {
  switch (p) {
    case Phase::Labeling:
      return "Labeling";
    case Phase::Training:
      return "Training";
    case Phase::Teleop:
      return "Teleop";
  }
  return "?";
}

JointState task_start_state(const TaskSpec& task) {
  JointState s;
  for (std::size_t i = 0; i < task.arm.dof(); ++i) {
    const auto iv = task.sampling_interval(i);
    s.angles.push_back(0.5 * (iv[0] + iv[1]));
  }
  return s;
}

Condition condition_for(const LossWeights& w) {
  const bool p = w.prop != 0.0;
  const bool r = w.reverse != 0.0;
  const bool c = w.con != 0.0;
  const int n = int(p) + int(r) + int(c);
  if (n == 0) return Condition::NoPriors;
  if (n == 3) return Condition::AllPriors;
  if (n == 1) return p ? Condition::PropOnly : (r ? Condition::ReverseOnly : Condition::ConOnly);
  throw InvalidInput("weights enable two priors, which is not one of the session conditions");
}

std::string state_update_json(const StateUpdate& u) {
  io::json j{{"protocol_version", kProtocolVersion},
             {"type", "StateUpdate"},
             {"tick", u.tick},
             {"s", io::state_json(u.s)},
             {"pose", io::pose_json(u.pose)},
             {"timestamp", u.timestamp}};
  return j.dump();
}

Session::Session(std::string id, std::shared_ptr<const LatentController> ctrl, SessionConfig cfg)
    : id_(std::move(id)), ctrl_(std::move(ctrl)), cfg_(std::move(cfg)) {
  if (!ctrl_) throw InvalidInput("session needs a controller");
  const TaskSpec& spec = ctrl_->task();
  if (spec.task != cfg_.task) throw InvalidInput("controller task does not match the session task");
  if (cfg_.queries == 0) cfg_.queries = spec.session_queries;
  if (cfg_.unlabeled == 0) cfg_.unlabeled = spec.unlabeled_budget;
  if (cfg_.queries > cfg_.unlabeled) throw InvalidInput("more queries than unlabeled samples");
  if (cfg_.replay_frames < 2) throw InvalidInput("a query replay needs at least 2 frames");
  if (cfg_.realtime && !(cfg_.tick_hz > 0.0)) throw InvalidInput("tick rate must be positive");

  auto pool_rng = make_rng(cfg_.seed, "pool");
  pool_ = collect_unlabeled(*ctrl_, cfg_.unlabeled, pool_rng);
  std::vector<std::size_t> order(pool_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto query_rng = make_rng(cfg_.seed, "queries");
  std::shuffle(order.begin(), order.end(), query_rng);
  for (std::size_t i = 0; i < cfg_.queries; ++i) {
    const auto& u = pool_[order[i]];
    Query q;
    q.id = i;
    q.s = u.s;
    q.s_star = u.s_next;
    const auto frames = cfg_.replay_frames;
    for (std::size_t f = 0; f < frames; ++f) {
      const double t = static_cast<double>(f) / static_cast<double>(frames - 1);
      JointState r = u.s;
      for (std::size_t j = 0; j < r.angles.size(); ++j) r.angles[j] += t * (u.s_next.angles[j] - u.s.angles[j]);
      q.replay.push_back(std::move(r));
    }
    queries_.push_back(std::move(q));
  }

  state_ = task_start_state(spec);
  aligners_.emplace(Condition::NoAlign, Aligner::identity());

  std::lock_guard<std::mutex> lock(mu_);
  for (const auto& q : queries_) {
    io::json replay = io::json::array();
    for (const auto& r : q.replay) {
      replay.push_back({{"s", io::state_json(r)}, {"pose", io::pose_json(forward_kinematics(spec.arm, r))}});
    }
    post("QueryPresented", io::json{{"query_id", q.id},
                                    {"s", io::state_json(q.s)},
                                    {"s_star", io::state_json(q.s_star)},
                                    {"replay", replay}}
                               .dump());
  }
  if (cfg_.realtime) ticker_ = std::thread([this] { ticker_loop(); });
}

Session::~Session() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stop_ = true;
  }
  ticker_cv_.notify_all();
  if (ticker_.joinable()) ticker_.join();
  if (trainer_.joinable()) trainer_.join();
}

Phase Session::phase() const {
  std::lock_guard<std::mutex> lock(mu_);
  return phase_;
}

std::vector<Query> Session::queries() const {
  std::lock_guard<std::mutex> lock(mu_);
  return queries_;
}

std::size_t Session::remaining_labels() const {
  std::lock_guard<std::mutex> lock(mu_);
  return static_cast<std::size_t>(
      std::count_if(queries_.begin(), queries_.end(), [](const Query& q) { return !q.label.has_value(); }));
}

JointState Session::state() const {
  std::lock_guard<std::mutex> lock(mu_);
  return state_;
}

Condition Session::condition() const {
  std::lock_guard<std::mutex> lock(mu_);
  return condition_;
}

bool Session::has_alignment(Condition c) const {
  std::lock_guard<std::mutex> lock(mu_);
  return aligners_.contains(c);
}

std::optional<Aligner> Session::aligner(Condition c) const {
  std::lock_guard<std::mutex> lock(mu_);
  const auto it = aligners_.find(c);
  if (it == aligners_.end()) return std::nullopt;
  return it->second;
}

void Session::require_phase(Phase p, const char* what) const {
  if (phase_ != p) {
    throw InvalidInput(std::string(what) + " is only allowed in the " + to_string(p) + " phase (session is " +
                       to_string(phase_) + ")");
  }
}

std::size_t Session::submit_label(std::size_t query_id, const Input& h) {
  std::lock_guard<std::mutex> lock(mu_);
  require_phase(Phase::Labeling, "labeling");
  if (query_id >= queries_.size()) throw InvalidInput("unknown query id " + std::to_string(query_id));
  Query& q = queries_[query_id];
  if (q.label) throw InvalidInput("query " + std::to_string(query_id) + " is already labeled");
  if (!valid_input(h)) throw InvalidInput("input components must lie in [-1, 1]");
  q.label = h;
  const auto remaining = static_cast<std::size_t>(
      std::count_if(queries_.begin(), queries_.end(), [](const Query& x) { return !x.label.has_value(); }));
  post("LabelAccepted", io::json{{"query_id", query_id}, {"remaining", remaining}}.dump());
  return remaining;
}

void Session::train(const LossWeights& weights, bool background) {
  const Condition target = condition_for(weights);
  std::vector<LabeledSample> labeled;
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (training_) throw InvalidInput("a training job is already running");
    for (const auto& q : queries_) {
      if (!q.label) throw InvalidInput("all queries must be labeled before training");
      labeled.push_back({q.s, *q.label, q.s_star, q.id});
    }
    training_ = true;
    phase_ = Phase::Training;
    post("TrainStarted", io::json{{"condition", to_string(target)}}.dump());
  }
  if (trainer_.joinable()) trainer_.join();

  auto job = [this, weights, target, labeled = std::move(labeled)]() {
    try {
      auto rng = make_rng(cfg_.seed, "train");
      const std::size_t epochs = cfg_.train.epochs;
      const auto progress = [&](const EpochLog& e) {
        const bool last = e.epoch + 1 == epochs;
        if (e.epoch % std::max<std::size_t>(1, cfg_.progress_every) != 0 && !last) return;
        std::lock_guard<std::mutex> lock(mu_);
        if (stop_) throw TrainingCancelled{};
        post("TrainProgress", io::json{{"epoch", e.epoch}, {"losses", losses_json(e.loss)}}.dump());
      };
      auto result = train_alignment(*ctrl_, labeled, pool_, weights, cfg_.train, rng, progress);
      std::lock_guard<std::mutex> lock(mu_);
      aligners_.insert_or_assign(target, Aligner::network(std::move(result.net)));
      training_ = false;
      phase_ = Phase::Teleop;
      post("TrainFinished", io::json{{"condition", to_string(target)},
                                     {"checksum", std::to_string(aligners_.at(target).net().net.checksum())}}
                                .dump());
    } catch (const TrainingCancelled&) {
      std::lock_guard<std::mutex> lock(mu_);
      training_ = false;
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(mu_);
      training_ = false;
      phase_ = Phase::Labeling;
      post("Error", io::json{{"message", e.what()}, {"during", "training"}}.dump());
    }
  };
  if (background) {
    trainer_ = std::thread(job);
  } else {
    job();
  }
}

void Session::wait_for_training() {
  if (trainer_.joinable()) trainer_.join();
}

void Session::set_condition(Condition c) {
  std::lock_guard<std::mutex> lock(mu_);
  if (training_) throw InvalidInput("cannot change condition while training");
  if (c == Condition::ManualAlign && !aligners_.contains(c)) {
    std::vector<LabeledSample> labeled;
    for (const auto& q : queries_) {
      if (!q.label) throw InvalidInput("ManualAlign needs every query labeled");
      labeled.push_back({q.s, *q.label, q.s_star, q.id});
    }
    auto rng = make_rng(cfg_.seed, "manual");
    aligners_.emplace(c, Aligner::affine(fit_manual_align(*ctrl_, labeled, ctrl_->task().lambda_rot, rng)));
  }
  if (!aligners_.contains(c)) throw InvalidInput("condition " + to_string(c) + " has not been trained in this session");
  condition_ = c;
  state_ = task_start_state(ctrl_->task());
  tick_ = 0;
  latest_.reset();
  post("ConditionSet", io::json{{"condition", to_string(c)}, {"s", io::state_json(state_)}}.dump());
}

StateUpdate Session::apply_locked(const Input& h, double timestamp) {
  state_ = aligners_.at(condition_).step(*ctrl_, h, state_);
  ++tick_;
  input_log_.push_back({tick_, h, timestamp, condition_});
  StateUpdate u{tick_, state_, forward_kinematics(ctrl_->task().arm, state_), timestamp};
  post("StateUpdate", state_update_json(u));
  return u;
}

std::optional<StateUpdate> Session::input(const Input& h, double timestamp) {
  std::lock_guard<std::mutex> lock(mu_);
  require_phase(Phase::Teleop, "teleoperation");
  if (!valid_input(h)) throw InvalidInput("input components must lie in [-1, 1]");
  if (cfg_.realtime) {
    latest_ = std::make_pair(h, timestamp);
    return std::nullopt;
  }
  return apply_locked(h, timestamp);
}

void Session::ticker_loop() {
  const auto period = std::chrono::duration<double>(1.0 / cfg_.tick_hz);
  auto next = std::chrono::steady_clock::now();
  std::unique_lock<std::mutex> lock(mu_);
  while (!stop_) {
    next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(period);
    ticker_cv_.wait_until(lock, next, [this] { return stop_; });
    if (stop_) break;
    // Joystick semantics: the latest input is held until a newer one arrives.
    if (phase_ == Phase::Teleop && latest_) apply_locked(latest_->first, latest_->second);
  }
}

void Session::post(std::string type, const std::string& body_json) {
  auto j = io::json::parse(body_json);
  j["protocol_version"] = kProtocolVersion;
  j["type"] = std::move(type);
  j["seq"] = ++sequence_;
  j["session"] = id_;
  frames_.emplace_back(sequence_, j.dump());
  frames_cv_.notify_all();
}

std::vector<std::string> Session::frames_since(std::uint64_t since, int wait_ms) const {
  std::unique_lock<std::mutex> lock(mu_);
  if (wait_ms > 0) {
    frames_cv_.wait_for(lock, std::chrono::milliseconds(wait_ms), [&] { return sequence_ > since; });
  }
  std::vector<std::string> out;
  auto it = std::upper_bound(frames_.begin(), frames_.end(), since,
                             [](std::uint64_t v, const auto& f) { return v < f.first; });
  for (; it != frames_.end(); ++it) out.push_back(it->second);
  return out;
}

std::uint64_t Session::last_sequence() const {
  std::lock_guard<std::mutex> lock(mu_);
  return sequence_;
}

std::string Session::input_log_jsonl() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::ostringstream os;
  for (const auto& r : input_log_) {
    os << io::json{{"protocol_version", kProtocolVersion},
                   {"type", "InputFrame"},
                   {"tick", r.tick},
                   {"h", r.h},
                   {"timestamp", r.timestamp},
                   {"condition", to_string(r.condition)}}
              .dump()
       << '\n';
  }
  return os.str();
}

std::string Session::status_json() const {
  std::lock_guard<std::mutex> lock(mu_);
  io::json qs = io::json::array();
  std::size_t remaining = 0;
  for (const auto& q : queries_) {
    qs.push_back({{"query_id", q.id}, {"labeled", q.label.has_value()}});
    if (!q.label) ++remaining;
  }
  io::json trained = io::json::array();
  for (const auto& [c, a] : aligners_) trained.push_back(to_string(c));
  io::json j{{"protocol_version", kProtocolVersion},
             {"type", "SessionStatus"},
             {"session", id_},
             {"task", to_string(cfg_.task)},
             {"phase", to_string(phase_)},
             {"training", training_},
             {"condition", to_string(condition_)},
             {"remaining", remaining},
             {"queries", qs},
             {"available_conditions", trained},
             {"s", io::state_json(state_)},
             {"pose", io::pose_json(forward_kinematics(ctrl_->task().arm, state_))},
             {"tick", tick_},
             {"tick_hz", cfg_.tick_hz},
             {"realtime", cfg_.realtime},
             {"last_seq", sequence_}};
  return j.dump();
}

std::vector<StateUpdate> replay_input_log(Session& session, const std::string& jsonl) {
  std::vector<StateUpdate> out;
  std::istringstream in(jsonl);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = io::parse(line, "input log record");
    if (j.value("protocol_version", kProtocolVersion) != kProtocolVersion) {
      throw IncompatibleFile("input log protocol version mismatch");
    }
    const Condition c = condition_from_string(j.at("condition").get<std::string>());
    // Tick 1 marks a reset to the start state in the recording session.
    const auto tick = j.value("tick", std::uint64_t{0});
    if (out.empty() || tick == 1 || c != session.condition()) session.set_condition(c);
    auto u = session.input(j.at("h").get<Input>(), j.at("timestamp").get<double>());
    if (!u) throw InvalidInput("replay needs a session in sync mode");
    out.push_back(std::move(*u));
  }
  return out;
}

SessionManager::SessionManager(std::map<Task, std::shared_ptr<const LatentController>> controllers)
    : controllers_(std::move(controllers)) {}

std::shared_ptr<Session> SessionManager::create(SessionConfig cfg) {
  auto it = controllers_.find(cfg.task);
  if (it == controllers_.end()) throw InvalidInput("no controller loaded for task " + to_string(cfg.task));
  std::string id;
  {
    std::lock_guard<std::mutex> lock(mu_);
    id = "s" + std::to_string(next_++);
  }
  auto session = std::make_shared<Session>(id, it->second, std::move(cfg));
  std::lock_guard<std::mutex> lock(mu_);
  sessions_.emplace(id, session);
  return session;
}

std::shared_ptr<Session> SessionManager::find(const std::string& id) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::vector<std::string> SessionManager::ids() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, s] : sessions_) out.push_back(id);
  return out;
}

}  // namespace align_teleop
