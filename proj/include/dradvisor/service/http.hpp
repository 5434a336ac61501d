#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <json.hpp>

#include "dradvisor/service/core.hpp"
#include "dradvisor/service/registry.hpp"

// last: <resolv.h> from httplib defines _res, which clashes with Eigen internals
#include <httplib.h>

namespace dra::service {

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::SchemaMismatch:
    case ErrorCode::InsufficientHistory:
    case ErrorCode::DegenerateControl:
    case ErrorCode::UndefinedMetric: return 422;
    case ErrorCode::IoError: return 500;
    default: return 400;
  }
}

inline nlohmann::json error_body(std::string_view code, std::string_view message, nlohmann::json detail = nlohmann::json::object()) {
  return {{"code", code}, {"message", message}, {"detail", std::move(detail)}};
}

/// One synthesis event; owns its sequential state, stepped instantly (replay) or on a timer (live).
class EventSession {
 public:
  EventSession(std::string id, std::shared_ptr<const LoadedModel> model, std::unique_ptr<EventRunner> runner, std::string mode,
               std::string loop, std::shared_ptr<testbed::ClosedLoopPlant> plant)
      : id_(std::move(id)), model_(std::move(model)), runner_(std::move(runner)), mode_(std::move(mode)), loop_(std::move(loop)),
        plant_(std::move(plant)) {}

  ~EventSession() { stop(); }

  void run_to_completion() {
    std::lock_guard lock(mutex_);
    runner_->run();
  }

  void start_live(std::chrono::milliseconds period) {
    worker_ = std::thread([this, period] {
      std::unique_lock lock(mutex_);
      while (!stopping_ && !runner_->done()) {
        if (wake_.wait_for(lock, period, [this] { return stopping_; })) break;
        try {
          runner_->step();
        } catch (const std::exception& e) {
          error_ = e.what();
          break;
        }
      }
    });
  }

  void stop() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    wake_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  void update_config(SynthesisConfig config) {
    std::lock_guard lock(mutex_);
    runner_->update_config(std::move(config));
  }

  const MbcrtModel& model() const { return std::get<MbcrtModel>(model_->model); }

  nlohmann::json trace_json(std::size_t since) const {
    std::lock_guard lock(mutex_);
    const auto& trace = runner_->trace();
    nlohmann::json j = {{"id", id_},
                        {"model", model_->record.name},
                        {"mode", mode_},
                        {"loop", loop_},
                        {"status", runner_->done() ? "complete" : (error_.empty() ? "running" : "failed")},
                        {"steps_total", runner_->event().steps()},
                        {"steps_done", trace.size()},
                        {"since", since},
                        {"config", runner_->config()},
                        {"entries", trace.to_json(std::min(since, trace.size()))}};
    if (!error_.empty()) j["error"] = error_;
    return j;
  }

 private:
  std::string id_;
  std::shared_ptr<const LoadedModel> model_;
  std::unique_ptr<EventRunner> runner_;
  std::string mode_;
  std::string loop_;
  std::shared_ptr<testbed::ClosedLoopPlant> plant_;
  mutable std::mutex mutex_;
  std::condition_variable wake_;
  std::thread worker_;
  bool stopping_ = false;
  std::string error_;
};

/// JSON API over a model registry.
class ApiServer {
 public:
  explicit ApiServer(ModelRegistry& registry) : registry_(registry) { routes(); }

  ~ApiServer() { stop(); }

  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  /// Binds an ephemeral port; call listen_after_bind() to serve.
  int bind_any(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }

  void stop() {
    server_.stop();
    std::lock_guard lock(events_mutex_);
    for (auto& [id, e] : events_) e->stop();
  }

  httplib::Server& raw() { return server_; }

 private:
  using Handler = std::function<nlohmann::json(const httplib::Request&, int& status)>;

  static nlohmann::json parse_body(const httplib::Request& req) {
    try {
      return req.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::ParseError, std::string("request body is not JSON: ") + e.what());
    }
  }

  void wrap(const httplib::Request& req, httplib::Response& res, const Handler& h) {
    int status = 200;
    nlohmann::json body;
    try {
      body = h(req, status);
    } catch (const Error& e) {
      status = http_status(e.code());
      body = error_body(to_string(e.code()), e.message(), {{"path", req.path}});
    } catch (const nlohmann::json::exception& e) {
      status = 400;
      body = error_body("InvalidArgument", e.what(), {{"path", req.path}});
    } catch (const std::exception& e) {
      status = 500;
      body = error_body("Internal", e.what(), {{"path", req.path}});
    }
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  void get(const std::string& pattern, Handler h) {
    server_.Get(pattern, [this, h = std::move(h)](const httplib::Request& req, httplib::Response& res) { wrap(req, res, h); });
  }
  void post(const std::string& pattern, Handler h) {
    server_.Post(pattern, [this, h = std::move(h)](const httplib::Request& req, httplib::Response& res) { wrap(req, res, h); });
  }

  const MbcrtModel& mbcrt(const LoadedModel& m) const {
    if (const auto* p = std::get_if<MbcrtModel>(&m.model)) return *p;
    fail(ErrorCode::InvalidArgument, "model '" + m.record.name + "' is not an mbcrt model");
  }

  std::shared_ptr<EventSession> event(const std::string& id) const {
    std::lock_guard lock(events_mutex_);
    auto it = events_.find(id);
    if (it == events_.end()) fail(ErrorCode::NotFound, "unknown event '" + id + "'");
    return it->second;
  }

  void routes() {
    get("/models", [this](const httplib::Request&, int&) { return nlohmann::json(registry_.list()); });

    get(R"(/models/([A-Za-z0-9_.\-]+))", [this](const httplib::Request& req, int&) {
      const auto m = registry_.get(req.matches[1].str());
      auto j = m->record.summary();
      j["model"] = m->record.model;
      return j;
    });

    post("/models", [this](const httplib::Request& req, int& status) {
      const auto loaded = registry_.put(ModelRecord::from_json(parse_body(req)));
      status = 201;
      return loaded->record.summary();
    });

    post("/predict/baseline", [this](const httplib::Request& req, int&) {
      const auto body = parse_body(req);
      const auto m = registry_.get(body.at("model").get<std::string>());
      const auto forecast = rows_from_json(body.at("forecast"));
      const auto preds = predict_baseline(m->model, forecast, history_from_json(body.value("history", nlohmann::json())));
      return baseline_json(m->record.name, forecast, preds);
    });

    post("/evaluate/strategies", [this](const httplib::Request& req, int&) {
      const auto body = parse_body(req);
      std::vector<AutoRegressiveTreeModel> models;
      for (const auto& name : body.at("models")) {
        const auto m = registry_.get(name.get<std::string>());
        const auto* ar = std::get_if<AutoRegressiveTreeModel>(&m->model);
        if (!ar) fail(ErrorCode::InvalidArgument, "model '" + m->record.name + "' is not an ar model");
        models.push_back(*ar);
      }
      std::vector<Strategy> strategies;
      for (const auto& s : body.at("strategies")) strategies.push_back(Strategy::from_json(s));
      return evaluate_json(models, strategies, rows_from_json(body.at("forecast")), history_from_json(body.value("history", nlohmann::json())));
    });

    post("/synthesize/step", [this](const httplib::Request& req, int&) {
      const auto body = parse_body(req);
      const auto m = registry_.get(body.at("model").get<std::string>());
      const auto& model = mbcrt(*m);
      auto rows = rows_from_json(nlohmann::json::array({body.at("x_d_forecast")}));
      return synthesize_step_json(model, rows.rows.front(), synthesis_config_from(body.value("config", nlohmann::json()), model));
    });

    post("/events", [this](const httplib::Request& req, int& status) {
      const auto body = parse_body(req);
      const auto m = registry_.get(body.at("model").get<std::string>());
      const auto& model = mbcrt(*m);
      const auto ev = DrEvent::from_json(body.at("event"));
      const auto forecast = rows_from_json(body.at("forecast"));
      const auto mode = body.value("mode", std::string("replay"));
      const auto loop = body.value("loop", std::string("open"));
      require(mode == "replay" || mode == "live", ErrorCode::InvalidArgument, "mode must be replay or live");
      require(loop == "open" || loop == "closed", ErrorCode::InvalidArgument, "loop must be open or closed");
      auto config = synthesis_config_from(body.value("config", nlohmann::json()), model);

      std::shared_ptr<testbed::ClosedLoopPlant> plant;
      std::optional<Plant> plant_fn;
      if (loop == "closed") {
        const auto tb = body.value("testbed", nlohmann::json::object());
        const auto cfg = tb.contains("config") ? tb.at("config").get<testbed::RcBuildingConfig>() : testbed::RcBuildingConfig{};
        plant = make_testbed_plant(cfg, tb.at("initial_temps").get<std::vector<double>>(), ev.start, forecast);
        plant_fn = testbed::ClosedLoopPlant::bind(plant);
      }
      auto runner = std::make_unique<EventRunner>(model, forecast.rows, history_from_json(body.value("history", nlohmann::json())), config, ev,
                                                  plant_fn, body.value("baseline", std::vector<double>{}));
      std::string id;
      std::shared_ptr<EventSession> session;
      {
        std::lock_guard lock(events_mutex_);
        id = "evt-" + std::to_string(++event_counter_);
        session = std::make_shared<EventSession>(id, m, std::move(runner), mode, loop, plant);
        events_[id] = session;
      }
      if (mode == "replay")
        session->run_to_completion();
      else
        session->start_live(std::chrono::milliseconds(static_cast<long>(1000.0 * body.value("step_seconds", 1.0))));
      status = 201;
      return nlohmann::json{{"id", id}, {"steps", ev.steps()}, {"mode", mode}, {"loop", loop}};
    });

    get(R"(/events/([A-Za-z0-9\-]+)/trace)", [this](const httplib::Request& req, int&) {
      const auto e = event(req.matches[1].str());
      std::size_t since = 0;
      if (req.has_param("since")) {
        const auto s = req.get_param_value("since");
        try {
          since = static_cast<std::size_t>(std::stoul(s));
        } catch (const std::exception&) {
          fail(ErrorCode::InvalidArgument, "since must be a nonnegative integer");
        }
      }
      return e->trace_json(since);
    });

    post(R"(/events/([A-Za-z0-9\-]+)/config)", [this](const httplib::Request& req, int&) {
      const auto e = event(req.matches[1].str());
      auto config = synthesis_config_from(parse_body(req), e->model());
      e->update_config(config);
      return nlohmann::json{{"id", req.matches[1].str()}, {"config", config}};
    });

    post("/simulate/whatif", [](const httplib::Request& req, int&) { return whatif_json(parse_body(req)); });
  }

  ModelRegistry& registry_;
  httplib::Server server_;
  mutable std::mutex events_mutex_;
  std::map<std::string, std::shared_ptr<EventSession>> events_;
  std::size_t event_counter_ = 0;
};

}  // namespace dra::service
