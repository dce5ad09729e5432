#include "medco/http_server.hpp"

#include <httplib.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace medco {

using nlohmann::json;

int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::state: return 409;
    case ErrorCode::capacity: return 429;
    case ErrorCode::auth: return 401;
    case ErrorCode::invalid_argument:
    case ErrorCode::format:
    case ErrorCode::validation:
    case ErrorCode::missing_slot:
    case ErrorCode::unknown_slot:
    case ErrorCode::precondition: return 400;
    case ErrorCode::backend:
    case ErrorCode::parse:
    case ErrorCode::missing_fixture: return 502;
    default: return 500;
  }
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  send_json(res, status, json{{"error", {{"code", code}, {"message", message}}}});
}

json messages_json(const std::vector<Message>& messages) {
  json arr = json::array();
  for (const auto& m : messages) arr.push_back(m);
  return arr;
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) throw Error(ErrorCode::format, "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format, fmt::format("malformed JSON body: {}", e.what()));
  }
}

}  // namespace

struct HttpServer::Impl {
  SessionService& service;
  HttpServerOptions options;
  httplib::Server server;

  Impl(SessionService& s, HttpServerOptions o) : service(s), options(std::move(o)) { routes(); }

  // Runs a handler and maps exceptions onto error responses.
  template <typename F>
  auto guarded(F&& f) {
    return [this, f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req)) {
        send_error(res, 401, "auth", "missing or wrong bearer token");
        return;
      }
      try {
        f(req, res);
      } catch (const Error& e) {
        send_error(res, http_status_for(e.code()), to_string(e.code()), e.what());
      } catch (const std::exception& e) {
        spdlog::error("request {} {} failed: {}", req.method, req.path, e.what());
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  bool authorized(const httplib::Request& req) const {
    if (options.token.empty()) return true;
    return req.get_header_value("Authorization") == "Bearer " + options.token;
  }

  void routes() {
    server.Get("/v1/health", guarded([](const httplib::Request&, httplib::Response& res) {
                 send_json(res, 200, json{{"status", "ok"}});
               }));

    server.Get("/v1/cases", guarded([this](const httplib::Request&, httplib::Response& res) {
                 json arr = json::array();
                 for (const auto& c : service.list_cases()) arr.push_back(c);
                 send_json(res, 200, json{{"cases", arr}});
               }));

    server.Post("/v1/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  json body = parse_body(req);
                  if (!body.contains("patient_id") || !body["patient_id"].is_string()) {
                    throw Error(ErrorCode::invalid_argument, "patient_id is required");
                  }
                  SessionMode mode = session_mode_from_string(body.value("mode", "human_student"));
                  auto d = service.create_session(mode, body["patient_id"].get<std::string>(),
                                                  body.value("learn", false));
                  send_json(res, 201, d);
                }));

    server.Get(R"(/v1/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 send_json(res, 200, service.describe(req.matches[1]));
               }));

    server.Delete(R"(/v1/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                    service.close_session(req.matches[1]);
                    send_json(res, 200, json{{"closed", true}});
                  }));

    server.Post(R"(/v1/sessions/([^/]+)/message)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  json body = parse_body(req);
                  if (!body.contains("text") || !body["text"].is_string()) {
                    throw Error(ErrorCode::invalid_argument, "text is required");
                  }
                  auto messages = service.post_message(req.matches[1], body["text"].get<std::string>());
                  send_json(res, 200, json{{"messages", messages_json(messages)}});
                }));

    server.Post(R"(/v1/sessions/([^/]+)/step)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  send_json(res, 200, json{{"messages", messages_json(service.step(req.matches[1]))}});
                }));

    server.Post(R"(/v1/sessions/([^/]+)/recall)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  json hits = json::array();
                  for (const auto& h : service.recall(req.matches[1])) hits.push_back(h);
                  send_json(res, 200, json{{"hits", hits}});
                }));

    server.Post(R"(/v1/sessions/([^/]+)/assess)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  send_json(res, 200, service.assess(req.matches[1]));
                }));

    server.Get(R"(/v1/sessions/([^/]+)/transcript)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 std::string id = req.matches[1];
                 send_json(res, 200, json{{"session_id", id}, {"messages", messages_json(service.transcript(id))}});
               }));

    server.Get(R"(/v1/sessions/([^/]+)/events)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 events(req, res);
               }));
  }

  // Server-sent events. Each message is sent once with its turn as the event
  // id; a reconnecting client passes Last-Event-ID (or ?after=) and only
  // receives later turns.
  void events(const httplib::Request& req, httplib::Response& res) {
    std::string id = req.matches[1];
    service.describe(id);  // 404 before the stream starts
    int after = -1;
    std::string last = req.get_header_value("Last-Event-ID");
    if (req.has_param("after")) last = req.get_param_value("after");
    if (!last.empty()) {
      try {
        after = std::stoi(last);
      } catch (const std::exception&) {
        throw Error(ErrorCode::invalid_argument, fmt::format("bad event id '{}'", last));
      }
    }
    auto idle = options.stream_idle;
    if (req.has_param("timeout_ms")) idle = std::chrono::milliseconds(std::stoll(req.get_param_value("timeout_ms")));

    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream", [this, id, after, idle](std::size_t, httplib::DataSink& sink) mutable {
          std::vector<Message> batch;
          try {
            batch = service.events_after(id, after, idle);
          } catch (const Error&) {
            sink.done();
            return true;
          }
          for (const auto& m : batch) {
            std::string frame = fmt::format("id: {}\nevent: message\ndata: {}\n\n", m.turn, json(m).dump());
            if (!sink.write(frame.data(), frame.size())) return false;
            after = m.turn;
          }
          bool finished = false;
          try {
            finished = service.finished(id);
          } catch (const Error&) {
            finished = true;
          }
          if (batch.empty() || finished) {
            if (finished && !batch.empty()) {
              // Flush anything published between the read and the check.
              for (const auto& m : service.events_after(id, after)) {
                std::string frame = fmt::format("id: {}\nevent: message\ndata: {}\n\n", m.turn, json(m).dump());
                if (!sink.write(frame.data(), frame.size())) return false;
              }
            }
            std::string end = "event: end\ndata: {}\n\n";
            sink.write(end.data(), end.size());
            sink.done();
          }
          return true;
        });
  }
};

HttpServer::HttpServer(SessionService& service, HttpServerOptions options)
    : impl_(std::make_unique<Impl>(service, std::move(options))) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start() {
  if (impl_->options.port == 0) {
    port_ = impl_->server.bind_to_any_port(impl_->options.host);
  } else {
    port_ = impl_->server.bind_to_port(impl_->options.host, impl_->options.port) ? impl_->options.port : -1;
  }
  if (port_ <= 0) throw Error(ErrorCode::io, fmt::format("cannot bind {}:{}", impl_->options.host, impl_->options.port));
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port_;
}

void HttpServer::run() {
  if (impl_->options.port == 0) {
    port_ = impl_->server.bind_to_any_port(impl_->options.host);
  } else {
    port_ = impl_->server.bind_to_port(impl_->options.host, impl_->options.port) ? impl_->options.port : -1;
  }
  if (port_ <= 0) throw Error(ErrorCode::io, fmt::format("cannot bind {}:{}", impl_->options.host, impl_->options.port));
  spdlog::info("serving on {}:{}", impl_->options.host, port_);
  impl_->server.listen_after_bind();
}

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace medco
