#pragma once

// Interactive sessions: present queries to a person, collect their labels,
// train an alignment in the background, then drive the simulated arm from
// joystick frames under a chosen condition.
//
// All traffic is JSON frames carrying protocol_version. Outbound frames are
// appended to a per-session log with increasing sequence numbers so clients
// can poll (or long-poll) for anything newer than the last one they saw.

#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "align_teleop/alignment.hpp"
#include "align_teleop/eval.hpp"

namespace align_teleop {

inline constexpr int kProtocolVersion = 1;

enum class Phase { Labeling, Training, Teleop };
std::string to_string(Phase p);

struct SessionConfig {
  Task task = Task::Plane;
  std::size_t queries = 0;    // 0: the task's default session count
  std::size_t unlabeled = 0;  // 0: the task's unlabeled budget
  std::uint64_t seed = 0;
  AlignTrainConfig train;
  std::size_t replay_frames = 10;
  std::size_t progress_every = 10;  // epochs between progress frames
  double tick_hz = 20.0;
  /// Sync: every input frame applies exactly one step immediately.
  /// Realtime: frames only update the latest input; a ticker steps at tick_hz.
  bool realtime = false;
};

struct Query {
  std::size_t id = 0;
  JointState s;
  JointState s_star;
  std::vector<JointState> replay;
  std::optional<Input> label;
};

struct StateUpdate {
  std::uint64_t tick = 0;
  JointState s;
  Pose pose;
  double timestamp = 0.0;
};

struct InputRecord {
  std::uint64_t tick = 0;  // 1 right after a condition (re)set
  Input h{};
  double timestamp = 0.0;
  Condition condition = Condition::NoAlign;
};

/// Fixed start state: the centre of the task's sampling region.
JointState task_start_state(const TaskSpec& task);

class Session {
 public:
  Session(std::string id, std::shared_ptr<const LatentController> ctrl, SessionConfig cfg);
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const std::string& id() const noexcept { return id_; }
  const SessionConfig& config() const noexcept { return cfg_; }
  Phase phase() const;
  std::vector<Query> queries() const;
  std::size_t remaining_labels() const;
  JointState state() const;
  Condition condition() const;
  bool has_alignment(Condition c) const;
  /// Copy of the alignment used under c, if available.
  std::optional<Aligner> aligner(Condition c) const;

  /// Throws InvalidInput for an unknown or already labeled id, an out-of-range
  /// input, or the wrong phase. Returns the number of unlabeled queries left.
  std::size_t submit_label(std::size_t query_id, const Input& h);

  /// Starts training with these weights (background thread unless
  /// `background` is false). The result is stored under the condition the
  /// weights correspond to. Throws unless every query is labeled and no
  /// training is running.
  void train(const LossWeights& weights, bool background = true);
  /// Blocks until a running training job finishes.
  void wait_for_training();

  /// Selects the alignment used for teleop and resets the arm to the start
  /// state. NoAlign is always available, ManualAlign once labels are
  /// complete, trained conditions once trained.
  void set_condition(Condition c);

  /// Applies one step (sync mode) or records the latest input (realtime).
  std::optional<StateUpdate> input(const Input& h, double timestamp);

  /// Frames with sequence number > since. Waits up to wait_ms for one to appear.
  std::vector<std::string> frames_since(std::uint64_t since, int wait_ms = 0) const;
  std::uint64_t last_sequence() const;

  /// JSON-lines of every applied input, in order.
  std::string input_log_jsonl() const;

  /// The session summary frame (phase, queries, condition, state).
  std::string status_json() const;

 private:
  void post(std::string type, const std::string& body_json);
  StateUpdate apply_locked(const Input& h, double timestamp);
  void ticker_loop();
  void require_phase(Phase p, const char* what) const;

  std::string id_;
  std::shared_ptr<const LatentController> ctrl_;
  SessionConfig cfg_;
  std::vector<UnlabeledSample> pool_;
  std::vector<Query> queries_;

  mutable std::mutex mu_;
  mutable std::condition_variable frames_cv_;
  Phase phase_ = Phase::Labeling;
  bool training_ = false;
  std::thread trainer_;
  std::map<Condition, Aligner> aligners_;
  Condition condition_ = Condition::NoAlign;
  JointState state_;
  std::uint64_t tick_ = 0;
  std::vector<InputRecord> input_log_;
  std::vector<std::pair<std::uint64_t, std::string>> frames_;
  std::uint64_t sequence_ = 0;

  // Realtime mode.
  std::optional<std::pair<Input, double>> latest_;
  bool stop_ = false;
  std::condition_variable ticker_cv_;
  std::thread ticker_;
};

/// Condition a weight setting trains: NoPriors, a single-prior condition, or AllPriors.
Condition condition_for(const LossWeights& w);

/// Replays a recorded input log (JSON-lines) into `session` one frame at a
/// time and returns the resulting updates. The session must be in Teleop with
/// every logged condition available; it is reset to the start state first.
std::vector<StateUpdate> replay_input_log(Session& session, const std::string& jsonl);

std::string state_update_json(const StateUpdate& u);

class SessionManager {
 public:
  /// Controllers per task. Tasks without a controller cannot host sessions.
  explicit SessionManager(std::map<Task, std::shared_ptr<const LatentController>> controllers);

  std::shared_ptr<Session> create(SessionConfig cfg);
  /// nullptr if unknown.
  std::shared_ptr<Session> find(const std::string& id) const;
  std::vector<std::string> ids() const;

 private:
  std::map<Task, std::shared_ptr<const LatentController>> controllers_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_ = 1;
};

/// HTTP front end for a SessionManager.
///   GET  /api/health
///   POST /api/sessions                       {task, queries?, seed?, unlabeled?, epochs?, realtime?}
///   GET  /api/sessions/{id}
///   POST /api/sessions/{id}/condition        {condition}
///   POST /api/sessions/{id}/frames           LabelSubmitted | TrainRequested | InputFrame
///   GET  /api/sessions/{id}/frames?since=N&wait_ms=T
///   GET  /api/sessions/{id}/input-log        JSON-lines
class TeleopServer {
 public:
  explicit TeleopServer(SessionManager& sessions);
  ~TeleopServer();
  TeleopServer(const TeleopServer&) = delete;
  TeleopServer& operator=(const TeleopServer&) = delete;

  /// Binds and serves on a background thread. Port 0 picks a free port.
  /// Returns the bound port.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace align_teleop
