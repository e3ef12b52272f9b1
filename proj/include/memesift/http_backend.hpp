#pragma once

// Completion backend speaking the OpenAI-style /v1/completions protocol.

#include <cstdlib>
#include <string>

#include "httplib.h"
#include "json.hpp"

#include "memesift/errors.hpp"
#include "memesift/rationale.hpp"

namespace memesift {

struct HttpBackendConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string model = "llama-3-8b-instruct";
  int max_tokens = 256;
  int timeout_seconds = 30;
  std::string api_key_env = "MM_API_KEY";
};

class HttpBackend final : public CompletionBackend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
    const auto scheme_end = cfg_.base_url.find("://");
    if (scheme_end == std::string::npos || cfg_.base_url.compare(0, scheme_end, "http") != 0) {
      throw ArgumentError("llm.base_url must start with http:// (got '" + cfg_.base_url + "')");
    }
    const auto path_start = cfg_.base_url.find('/', scheme_end + 3);
    origin_ = cfg_.base_url.substr(0, path_start);
    prefix_ = path_start == std::string::npos ? "" : cfg_.base_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    if (cfg_.timeout_seconds <= 0) throw ArgumentError("llm timeout must be positive");
  }

  std::string complete(const RationaleRequest& r) const override {
    httplib::Client client(origin_);
    client.set_connection_timeout(cfg_.timeout_seconds, 0);
    client.set_read_timeout(cfg_.timeout_seconds, 0);
    client.set_write_timeout(cfg_.timeout_seconds, 0);
    httplib::Headers headers;
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    const nlohmann::json body{{"model", cfg_.model}, {"prompt", r.prompt}, {"max_tokens", cfg_.max_tokens}};
    const auto res = client.Post(prefix_ + "/v1/completions", headers, body.dump(), "application/json");
    if (!res) throw TransportError("request failed: " + httplib::to_string(res.error()), 0);
    if (res->status < 200 || res->status >= 300) {
      throw TransportError("completion endpoint returned HTTP " + std::to_string(res->status), res->status);
    }
    try {
      const auto j = nlohmann::json::parse(res->body);
      std::string text = j.at("choices").at(0).at("text").get<std::string>();
      if (text.empty()) throw BackendError("backend returned an empty completion");
      return text;
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("malformed completion response: ") + e.what());
    }
  }

 private:
  HttpBackendConfig cfg_;
  std::string origin_;
  std::string prefix_;
};

}  // namespace memesift
