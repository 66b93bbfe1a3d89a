#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>
// resolv.h (pulled in by httplib) defines _res, which Eigen uses as a parameter name.
#ifdef _res
#undef _res
#endif

#include "selfreward/json_io.hpp"
#include "selfreward/model.hpp"

namespace selfreward {

struct EndpointConfig {
  std::string url;           // e.g. http://127.0.0.1:8080/generate
  double timeout_s = 30.0;
  int max_retries = 3;       // retries after the first attempt, for timeouts and 5xx
  double backoff_s = 0.5;    // doubled after each retry
  double backoff_cap_s = 8.0;
};

/// Endpoint from SELFREWARD_ENDPOINT; NotFound when it is unset.
inline EndpointConfig endpoint_from_env() {
  const char* url = std::getenv("SELFREWARD_ENDPOINT");
  if (url == nullptr || *url == '\0') fail(ErrorCode::not_found, "SELFREWARD_ENDPOINT is not set");
  EndpointConfig cfg;
  cfg.url = url;
  return cfg;
}

inline Json endpoint_request_body(std::string_view prompt, const DecodingParams& d) {
  Json j;
  j["prompt"] = std::string(prompt);
  j["temperature"] = d.temperature();
  j["top_p"] = d.top_p();
  j["max_tokens"] = d.max_tokens();
  j["seed"] = d.seed();
  return j;
}

/// HTTP generation backend: POSTs {prompt, temperature, top_p, max_tokens, seed} and reads
/// {"text": ...} back.
class ExternalModel final : public GenerationModel {
 public:
  explicit ExternalModel(EndpointConfig cfg) : cfg_(std::move(cfg)) {
    const auto scheme_end = cfg_.url.find("://");
    if (scheme_end == std::string::npos) fail(ErrorCode::config_error, "endpoint url needs a scheme: " + cfg_.url);
    const auto path_start = cfg_.url.find('/', scheme_end + 3);
    base_ = cfg_.url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : cfg_.url.substr(path_start);
  }

  std::string generate(std::string_view prompt, const DecodingParams& decoding) const override {
    const std::string body = canonical_dump(endpoint_request_body(prompt, decoding));
    double backoff = cfg_.backoff_s;
    for (int attempt = 0;; ++attempt) {
      httplib::Client client(base_);
      const auto timeout = std::chrono::duration<double>(cfg_.timeout_s);
      client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      const auto res = client.Post(path_, body, "application/json");
      const bool last = attempt >= cfg_.max_retries;
      if (!res) {
        if (last) fail(ErrorCode::timeout, "no response from " + cfg_.url + " (" + httplib::to_string(res.error()) + ")");
      } else if (res->status >= 500) {
        if (last) throw HttpError(res->status, "server error from " + cfg_.url);
      } else if (res->status != 200) {
        throw HttpError(res->status, "request rejected by " + cfg_.url);
      } else {
        return parse_text(res->body);
      }
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff = std::min(2.0 * backoff, cfg_.backoff_cap_s);
    }
  }

 private:
  static std::string parse_text(const std::string& body) {
    try {
      const auto j = Json::parse(body);
      if (!j.is_object() || !j.contains("text") || !j.at("text").is_string())
        fail(ErrorCode::malformed_response, "missing string field 'text'");
      return j.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::malformed_response, e.what());
    }
  }

  EndpointConfig cfg_;
  std::string base_;
  std::string path_;
};

}  // namespace selfreward
