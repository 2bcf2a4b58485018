#pragma once

// HTTP JSON front of an AnnotationStore.
//
//   GET  /batches/next?annotator=A[&task=errors|fluency]
//   GET  /batches/{id}
//   POST /batches/{id}/errors    {"annotator", "version"?, "annotations": [...]}
//   POST /batches/{id}/fluency   {"annotator", "version"?, "ranks": {gen: rank}}
//   GET  /reports/agreement[?binarize=1]
//   GET  /reports/scores
//
// Status codes: 400 bad JSON or schema_version, 404 unknown batch,
// 409 version conflict, 422 validation violations.

#include <atomic>
#include <optional>
#include <stdexcept>
#include <string>

#include "httplib.h"
#include "json.hpp"

#include "cyclegen/error.hpp"
#include "cyclegen/humaneval.hpp"

namespace cyclegen::humaneval {

class AnnotationService {
  struct BadRequest : std::runtime_error {
    using std::runtime_error::runtime_error;
  };

 public:
  explicit AnnotationService(AnnotationStore& store) : store_(store) { routes(); }

  /// Binds; port 0 picks a free one. Returns the bound port or -1.
  int bind(const std::string& host, int port) {
    if (port == 0) return port_ = server_.bind_to_any_port(host);
    return port_ = server_.bind_to_port(host, port) ? port : -1;
  }

  /// Blocks until stop().
  bool serve() { return server_.listen_after_bind(); }

  void wait_until_ready() const { server_.wait_until_ready(); }

  /// Stops accepting requests and writes the snapshot.
  void stop() {
    if (stopped_.exchange(true)) return;
    server_.stop();
    store_.flush();
  }

  int port() const { return port_; }

 private:
  static void send(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void fail(httplib::Response& res, int status, const std::string& error, const std::string& message,
                   nlohmann::json extra = nlohmann::json::object()) {
    extra["schema_version"] = kSchemaVersion;
    extra["error"] = error;
    extra["message"] = message;
    send(res, status, extra);
  }

  static int status_of(ErrorCode c) {
    switch (c) {
      case ErrorCode::kUnknownBatch: return 404;
      case ErrorCode::kVersionConflict: return 409;
      case ErrorCode::kSchema: return 422;
      case ErrorCode::kCoverageGap: return 422;
      default: return 500;
    }
  }

  template <typename F>
  static void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const Error& e) {
      fail(res, status_of(e.code()), std::string(to_string(e.code())), e.what());
    } catch (const BadRequest& e) {
      fail(res, 400, "BadRequest", e.what());
    } catch (const nlohmann::json::exception& e) {
      fail(res, 400, "BadRequest", e.what());
    }
  }

  static nlohmann::json parse_body(const httplib::Request& req) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception& e) {
      throw BadRequest(std::string("body is not JSON: ") + e.what());
    }
    if (!j.is_object()) throw BadRequest("body must be an object");
    if (j.contains("schema_version") && j["schema_version"] != kSchemaVersion) {
      throw BadRequest("unsupported schema_version");
    }
    return j;
  }

  static std::optional<int> version_of(const nlohmann::json& j) {
    if (!j.contains("version") || j["version"].is_null()) return std::nullopt;
    return j["version"].get<int>();
  }

  void routes() {
    server_.Get("/batches/next", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string annotator = req.get_param_value("annotator");
        if (annotator.empty()) return fail(res, 400, "BadRequest", "annotator parameter required");
        std::optional<Task> task;
        const std::string t = req.get_param_value("task");
        if (t == "errors") task = Task::kErrors;
        else if (t == "fluency") task = Task::kFluency;
        else if (!t.empty()) return fail(res, 400, "BadRequest", "task must be errors or fluency");
        auto b = store_.next_batch(annotator, task);
        if (!b) return send(res, 200, {{"schema_version", kSchemaVersion}, {"done", true}});
        auto j = to_json(*b);
        j["done"] = false;
        send(res, 200, j);
      });
    });
    server_.Get("/batches/:id", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto j = to_json(store_.batch(req.path_params.at("id")));
        const std::string annotator = req.get_param_value("annotator");
        if (!annotator.empty()) {
          j["versions"] = {{"errors", store_.version(Task::kErrors, j["batch_id"], annotator)},
                           {"fluency", store_.version(Task::kFluency, j["batch_id"], annotator)}};
        }
        send(res, 200, j);
      });
    });
    server_.Post("/batches/:id/errors", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string id = req.path_params.at("id");
        const auto body = parse_body(req);
        const std::string annotator = body.value("annotator", "");
        if (!body.contains("annotations") || !body["annotations"].is_array()) {
          return fail(res, 422, "SchemaError", "annotations must be an array");
        }
        std::vector<ErrorAnnotation> anns;
        for (const auto& a : body["annotations"]) anns.push_back(error_from_json(a, annotator));
        submit(res, Task::kErrors, id, annotator,
               [&] { return store_.submit_errors(id, annotator, anns, version_of(body)); });
      });
    });
    server_.Post("/batches/:id/fluency", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string id = req.path_params.at("id");
        const auto body = parse_body(req);
        FluencyRanking r = fluency_from_json(body);
        r.batch_id = id;
        submit(res, Task::kFluency, id, r.annotator_id,
               [&] { return store_.submit_fluency(r, version_of(body)); });
      });
    });
    server_.Get("/reports/agreement", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string b = req.get_param_value("binarize");
        send(res, 200, store_.agreement_json(b == "1" || b == "true"));
      });
    });
    server_.Get("/reports/scores", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { send(res, 200, store_.scores_report()); });
    });
  }

  template <typename F>
  void submit(httplib::Response& res, Task task, const std::string& id, const std::string& annotator, F&& write) {
    try {
      const int v = write();
      send(res, 200, {{"schema_version", kSchemaVersion}, {"batch_id", id}, {"task", task_name(task)}, {"version", v}});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kVersionConflict) throw;
      fail(res, 409, "VersionConflict", e.what(), {{"current_version", store_.version(task, id, annotator)}});
    }
  }

  AnnotationStore& store_;
  httplib::Server server_;
  int port_ = -1;
  std::atomic<bool> stopped_{false};
};

}  // namespace cyclegen::humaneval
