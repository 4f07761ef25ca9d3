#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "ragctl/generation.hpp"
#include "ragctl/util.hpp"

#include <httplib.h>

namespace ragctl {

struct HttpBackendConfig {
  std::string endpoint;    // base URL, e.g. "https://api.openai.com"
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 0.0;
  int max_completion_tokens = 64;
  int max_retries = 3;
  int backoff_initial_ms = 250;
  int timeout_seconds = 60;

  void validate() const {
    if (endpoint.empty())
      throw validation_error("http backend: endpoint must be set");
    if (model.empty())
      throw validation_error("http backend: model must be set");
    if (api_key_env.empty())
      throw validation_error("http backend: api_key_env must be set");
    if (max_retries < 0)
      throw validation_error("http backend: max_retries must be >= 0");
    if (max_completion_tokens <= 0)
      throw validation_error("http backend: max_completion_tokens must be > 0");
    if (backoff_initial_ms < 0)
      throw validation_error("http backend: backoff_initial_ms must be >= 0");
    if (timeout_seconds <= 0)
      throw validation_error("http backend: timeout_seconds must be > 0");
  }
};

// OpenAI-compatible chat-completions client. Sends the prompt as a
// single user message; token counts are the provider-reported usage.
// The API key is read from the environment on each call and never
// written to any artifact.
class HttpBackend final : public GeneratorBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    config_.validate();
  }

  std::string name() const override { return "http"; }

  GenerationOutput generate(const GenerationRequest& request) override {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0')
      throw backend_error("http backend: environment variable '" +
                          config_.api_key_env + "' is not set");

    const nlohmann::json body = {
        {"model", config_.model},
        {"messages",
         nlohmann::json::array(
             {{{"role", "user"}, {"content", request.prompt}}})},
        {"temperature", config_.temperature},
        {"max_tokens", config_.max_completion_tokens},
    };
    const std::string payload = body.dump();

    httplib::Client client(config_.endpoint);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);
    client.set_write_timeout(config_.timeout_seconds, 0);
    client.set_bearer_token_auth(key);

    std::string last_error;
    int backoff_ms = config_.backoff_initial_ms;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
        backoff_ms *= 2;
      }
      auto res = client.Post("/v1/chat/completions", payload,
                             "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status) + ": " + res->body;
        continue;
      }
      if (res->status < 200 || res->status >= 300)
        throw backend_error("http backend: HTTP " +
                            std::to_string(res->status) + ": " + res->body);
      return parse_completion(res->body);
    }
    throw backend_error("http backend: giving up after " +
                        std::to_string(config_.max_retries + 1) +
                        " attempts; last error: " + last_error);
  }

 private:
  static GenerationOutput parse_completion(const std::string& body) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      throw backend_error(std::string("http backend: malformed response: ") +
                          e.what());
    }
    try {
      GenerationOutput out;
      out.answer_text =
          j.at("choices").at(0).at("message").at("content").get<std::string>();
      out.prompt_tokens = j.at("usage").at("prompt_tokens").get<int>();
      out.completion_tokens = j.at("usage").at("completion_tokens").get<int>();
      return out;
    } catch (const nlohmann::json::exception& e) {
      throw backend_error(
          std::string("http backend: unexpected response shape: ") + e.what());
    }
  }

  HttpBackendConfig config_;
};

}  // namespace ragctl
