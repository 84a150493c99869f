// Eigen first: resolv.h (via httplib) defines a _res macro that clashes with it.
#include "align_teleop/teleop.hpp"
#include "json_io.hpp"

#include <httplib.h>

namespace align_teleop {

namespace {

using io::json;

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
  reply(res, status, json{{"protocol_version", kProtocolVersion}, {"type", "Error"}, {"message", message}});
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  auto j = json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw InvalidInput("request body must be a JSON object");
  if (j.contains("protocol_version") && j.at("protocol_version") != kProtocolVersion) {
    throw InvalidInput("unsupported protocol_version (server speaks " + std::to_string(kProtocolVersion) + ")");
  }
  return j;
}

LossWeights weights_from(const json& j, double lambda_rot) {
  LossWeights w = LossWeights::all_priors(lambda_rot);
  w.prop = j.value("prop", w.prop);
  w.reverse = j.value("reverse", w.reverse);
  w.con = j.value("con", w.con);
  w.gamma = j.value("gamma", w.gamma);
  if (w.prop < 0.0 || w.reverse < 0.0 || w.con < 0.0 || !(w.gamma > 0.0)) {
    throw InvalidInput("weights must be non-negative and gamma positive");
  }
  return w;
}

}  // namespace

struct TeleopServer::Impl {
  SessionManager& sessions;
  httplib::Server http;
  std::thread thread;

  explicit Impl(SessionManager& s) : sessions(s) { routes(); }

  // Runs a handler, mapping library errors to HTTP statuses.
  template <class F>
  static void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const InvalidInput& e) {
      reply_error(res, 400, e.what());
    } catch (const json::exception& e) {
      reply_error(res, 400, std::string("malformed frame: ") + e.what());
    } catch (const Error& e) {
      reply_error(res, 409, e.what());
    } catch (const std::exception& e) {
      reply_error(res, 500, e.what());
    }
  }

  std::shared_ptr<Session> session_or_404(const httplib::Request& req, httplib::Response& res) {
    auto s = sessions.find(req.matches[1]);
    if (!s) reply_error(res, 404, "unknown session '" + std::string(req.matches[1]) + "'");
    return s;
  }

  void routes() {
    http.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, json{{"protocol_version", kProtocolVersion}, {"status", "ok"}});
    });

    http.Post("/api/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json body = parse_body(req);
        SessionConfig cfg;
        cfg.task = task_from_string(body.at("task").get<std::string>());
        cfg.queries = body.value("queries", std::size_t{0});
        cfg.unlabeled = body.value("unlabeled", std::size_t{0});
        cfg.seed = body.value("seed", std::uint64_t{0});
        cfg.train.epochs = body.value("epochs", cfg.train.epochs);
        cfg.train.hidden = body.value("hidden", cfg.train.hidden);
        cfg.realtime = body.value("realtime", false);
        cfg.tick_hz = body.value("tick_hz", cfg.tick_hz);
        auto s = sessions.create(cfg);
        reply(res, 201, json::parse(s->status_json()));
      });
    });

    http.Get(R"(/api/sessions/([A-Za-z0-9_-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        if (auto s = session_or_404(req, res)) reply(res, 200, json::parse(s->status_json()));
      });
    });

    http.Post(R"(/api/sessions/([A-Za-z0-9_-]+)/condition)",
              [this](const httplib::Request& req, httplib::Response& res) {
                guarded(res, [&] {
                  auto s = session_or_404(req, res);
                  if (!s) return;
                  const json body = parse_body(req);
                  s->set_condition(condition_from_string(body.at("condition").get<std::string>()));
                  reply(res, 200, json::parse(s->status_json()));
                });
              });

    http.Post(R"(/api/sessions/([A-Za-z0-9_-]+)/frames)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto s = session_or_404(req, res);
        if (!s) return;
        const json frame = parse_body(req);
        const auto type = frame.at("type").get<std::string>();
        if (type == "LabelSubmitted") {
          const auto remaining = s->submit_label(frame.at("query_id").get<std::size_t>(), frame.at("h").get<Input>());
          reply(res, 200,
                json{{"protocol_version", kProtocolVersion}, {"type", "LabelAccepted"}, {"remaining", remaining}});
        } else if (type == "TrainRequested") {
          const LossWeights w = weights_from(frame.value("weights", json::object()), s->config().task == Task::Plane
                                                                                          ? 0.0
                                                                                          : 1.0);
          s->train(w, true);
          reply(res, 202,
                json{{"protocol_version", kProtocolVersion}, {"type", "TrainStarted"},
                     {"condition", to_string(condition_for(w))}});
        } else if (type == "InputFrame") {
          const auto u = s->input(frame.at("h").get<Input>(), frame.value("timestamp", 0.0));
          if (u) {
            reply(res, 200, json::parse(state_update_json(*u)));
          } else {
            reply(res, 202, json{{"protocol_version", kProtocolVersion}, {"type", "InputQueued"}});
          }
        } else {
          throw InvalidInput("unknown frame type '" + type + "'");
        }
      });
    });

    http.Get(R"(/api/sessions/([A-Za-z0-9_-]+)/frames)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto s = session_or_404(req, res);
        if (!s) return;
        const std::uint64_t since = req.has_param("since") ? std::stoull(req.get_param_value("since")) : 0;
        const int wait_ms = req.has_param("wait_ms") ? std::min(30000, std::stoi(req.get_param_value("wait_ms"))) : 0;
        json frames = json::array();
        for (const auto& f : s->frames_since(since, wait_ms)) frames.push_back(json::parse(f));
        reply(res, 200,
              json{{"protocol_version", kProtocolVersion}, {"frames", frames}, {"last_seq", s->last_sequence()}});
      });
    });

    http.Get(R"(/api/sessions/([A-Za-z0-9_-]+)/input-log)",
             [this](const httplib::Request& req, httplib::Response& res) {
               guarded(res, [&] {
                 if (auto s = session_or_404(req, res)) res.set_content(s->input_log_jsonl(), "application/x-ndjson");
               });
             });
  }
};

TeleopServer::TeleopServer(SessionManager& sessions) : impl_(std::make_unique<Impl>(sessions)) {}

TeleopServer::~TeleopServer() { stop(); }

int TeleopServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->http.bind_to_any_port(host);
  } else if (!impl_->http.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error("could not bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
  return bound;
}

void TeleopServer::run(const std::string& host, int port) {
  if (!impl_->http.listen(host, port)) throw Error("could not listen on " + host + ":" + std::to_string(port));
}

void TeleopServer::stop() {
  if (!impl_) return;
  impl_->http.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace align_teleop
