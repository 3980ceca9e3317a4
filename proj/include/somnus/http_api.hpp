#pragma once

// HTTP + JSON front for InsightService.

#include <memory>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "somnus/error.hpp"
#include "somnus/insight.hpp"

namespace somnus {

inline int http_status(Errc c) {
  switch (c) {
    case Errc::kUnknownSession: return 404;
    case Errc::kMissingFeature:
    case Errc::kUnknownFeature:
    case Errc::kOutOfRange: return 422;
    case Errc::kGeneratorUnavailable: return 503;
    case Errc::kIo:
    case Errc::kCorruptArtifact: return 500;
    default: return 400;
  }
}

inline json error_body(const Error& e) {
  return {{"code", to_string(e.code())}, {"message", e.message()}, {"detail", e.detail()}};
}

class HttpApi {
 public:
  explicit HttpApi(InsightService& service) : service_(service) { routes(); }

  httplib::Server& server() { return server_; }

  // Blocks until stop().
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }
  int bind_to_any_port(const std::string& host) { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  using Handler = std::function<json(const json&)>;

  void cors(httplib::Response& res) const {
    res.set_header("Access-Control-Allow-Origin", service_.config().cors_origin);
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  }

  void reply(httplib::Response& res, int status, const json& body) const {
    cors(res);
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  void post(const std::string& path, Handler h) {
    server_.Post(path, [this, h](const httplib::Request& req, httplib::Response& res) {
      json body;
      try {
        body = req.body.empty() ? json::object() : json::parse(req.body);
      } catch (const json::exception& e) {
        reply(res, 400, {{"code", "BadRequest"}, {"message", "request body is not valid JSON"}, {"detail", e.what()}});
        return;
      }
      run(res, [&] { return h(body); });
    });
  }

  template <typename F>
  void run(httplib::Response& res, F&& f) const {
    try {
      reply(res, 200, f());
    } catch (const Error& e) {
      reply(res, http_status(e.code()), error_body(e));
    } catch (const json::exception& e) {
      reply(res, 400, {{"code", "BadRequest"}, {"message", "malformed request"}, {"detail", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"code", "Internal"}, {"message", "internal error"}, {"detail", e.what()}});
    }
  }

  UserSnapshot resolve(const json& body) const {
    if (body.contains("session_id")) return service_.session(body.at("session_id").get<std::string>());
    if (body.contains("snapshot")) return snapshot_from_json(body.at("snapshot"));
    throw Error(Errc::kBadRequest, "request needs snapshot or session_id");
  }

  void routes() {
    server_.Options(R"(/.*)", [this](const httplib::Request&, httplib::Response& res) {
      cors(res);
      res.status = 204;
    });
    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, {{"status", "ok"}});
    });
    server_.Get("/features", [this](const httplib::Request& req, httplib::Response& res) {
      run(res, [&] {
        std::optional<UserSnapshot> s;
        if (req.has_param("session_id")) s = service_.session(req.get_param_value("session_id"));
        json list = json::array();
        for (const auto& f : service_.get_features(s ? &*s : nullptr)) list.push_back(to_json(f));
        return json{{"features", list}};
      });
    });
    post("/predict", [this](const json& b) {
      const auto s = resolve(b);
      return json{{"participant_id", s.participant_id}, {"prediction", service_.predict_snapshot(s)}};
    });
    post("/whatif", [this](const json& b) {
      const auto s = resolve(b);
      std::map<std::string, double> overrides;
      if (b.contains("overrides")) {
        const auto& o = b.at("overrides");
        if (!o.is_object()) throw Error(Errc::kBadRequest, "overrides must be an object");
        for (auto it = o.begin(); it != o.end(); ++it) {
          if (!it->is_number()) throw Error(Errc::kBadRequest, "override must be a number", it.key());
          overrides[it.key()] = it->get<double>();
        }
      }
      return to_json(service_.what_if(s, overrides));
    });
    post("/recommend", [this](const json& b) {
      json list = json::array();
      for (const auto& r : service_.recommend(resolve(b))) list.push_back(to_json(r));
      return json{{"recommendations", list}};
    });
    post("/chat", [this](const json& b) {
      if (!b.contains("session_id") || !b.contains("text")) {
        throw Error(Errc::kBadRequest, "chat needs session_id and text");
      }
      return to_json(service_.chat_turn(b.at("session_id").get<std::string>(), b.at("text").get<std::string>()));
    });
    post("/session", [this](const json& b) {
      std::string id;
      UserSnapshot s;
      if (b.contains("participant_id") && !b.contains("snapshot")) {
        s = service_.sample(b.at("participant_id").get<std::string>());
      } else if (b.contains("snapshot")) {
        s = snapshot_from_json(b.at("snapshot"));
      } else {
        throw Error(Errc::kBadRequest, "session needs participant_id or snapshot");
      }
      id = service_.create_session(s);
      return json{{"session_id", id}, {"snapshot", to_json(s)}};
    });
  }

  InsightService& service_;
  httplib::Server server_;
};

}  // namespace somnus
