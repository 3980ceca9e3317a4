#pragma once

// GeneratorClient for an OpenAI-compatible chat-completions endpoint.

#include <cstdlib>
#include <memory>
#include <semaphore>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "somnus/augment.hpp"
#include "somnus/config.hpp"
#include "somnus/error.hpp"

namespace somnus {

inline constexpr const char* kApiKeyEnv = "SOMNUS_LLM_API_KEY";

struct LiveClientConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-3.5-turbo";
  double temperature = 0.7;
  int timeout_s = 30;
  int max_in_flight = 4;

  static LiveClientConfig from_json(const json& j) {
    LiveClientConfig c;
    c.base_url = config_value(j, "base_url", c.base_url);
    c.model = config_value(j, "model", c.model);
    c.temperature = config_value(j, "temperature", c.temperature);
    c.timeout_s = config_value(j, "timeout_s", c.timeout_s);
    c.max_in_flight = config_value(j, "max_in_flight", c.max_in_flight);
    if (c.timeout_s < 1) throw Error(Errc::kInvalidConfig, "timeout_s must be >= 1");
    if (c.max_in_flight < 1 || c.max_in_flight > 256) {
      throw Error(Errc::kInvalidConfig, "max_in_flight must be in [1, 256]");
    }
    return c;
  }
};

class LiveGenerator final : public GeneratorClient {
 public:
  LiveGenerator(LiveClientConfig cfg, std::string api_key)
      : cfg_(std::move(cfg)),
        api_key_(std::move(api_key)),
        slots_(std::make_unique<std::counting_semaphore<256>>(cfg_.max_in_flight)) {
    auto scheme = cfg_.base_url.find("://");
    if (scheme == std::string::npos) throw Error(Errc::kInvalidConfig, "base_url needs a scheme", cfg_.base_url);
    auto slash = cfg_.base_url.find('/', scheme + 3);
    origin_ = cfg_.base_url.substr(0, slash);
    path_ = slash == std::string::npos ? "" : cfg_.base_url.substr(slash);
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    path_ += "/chat/completions";
  }

  // Reads the API key from SOMNUS_LLM_API_KEY.
  static std::unique_ptr<LiveGenerator> from_env(LiveClientConfig cfg) {
    const char* key = std::getenv(kApiKeyEnv);
    if (!key || !*key) {
      throw Error(Errc::kGeneratorUnavailable, "API key environment variable not set", kApiKeyEnv);
    }
    return std::make_unique<LiveGenerator>(std::move(cfg), key);
  }

  std::string complete(const std::string& prompt) override {
    slots_->acquire();
    struct Release {
      std::counting_semaphore<256>* s;
      ~Release() { s->release(); }
    } release{slots_.get()};

    httplib::Client cli(origin_);
    if (!cli.is_valid()) throw Error(Errc::kGeneratorUnavailable, "cannot create client", origin_);
    cli.set_connection_timeout(cfg_.timeout_s, 0);
    cli.set_read_timeout(cfg_.timeout_s, 0);
    cli.set_write_timeout(cfg_.timeout_s, 0);
    httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};
    json body = {{"model", cfg_.model},
                 {"temperature", cfg_.temperature},
                 {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
    auto res = cli.Post(path_, headers, body.dump(), "application/json");
    if (!res) {
      throw Error(Errc::kGeneratorUnavailable, "request failed", httplib::to_string(res.error()));
    }
    if (res->status != 200) {
      throw Error(Errc::kGeneratorUnavailable, "generator returned HTTP " + std::to_string(res->status));
    }
    try {
      auto j = json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      throw Error(Errc::kGeneratorUnavailable, "unexpected response body", e.what());
    }
  }

 private:
  LiveClientConfig cfg_;
  std::string api_key_;
  std::string origin_;
  std::string path_;
  std::unique_ptr<std::counting_semaphore<256>> slots_;
};

}  // namespace somnus
