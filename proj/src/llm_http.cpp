#include <cstdlib>

#include <httplib.h>

#include "rtbagent/llm.hpp"

namespace rtb {

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  const auto& url = config_.base_url;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("backend.base_url needs a scheme: " + url);
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw ConfigError("backend.base_url: unsupported scheme " + scheme);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (scheme == "https") throw ConfigError("built without TLS support; use an http:// base_url");
#endif
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

HttpBackend::~HttpBackend() = default;

Completion HttpBackend::complete(const CompletionRequest& request) {
  httplib::Client client(scheme_host_port_);
  const auto secs = static_cast<time_t>(config_.timeout_s);
  const auto usecs = static_cast<time_t>((config_.timeout_s - double(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key != nullptr && *key != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  const nlohmann::json body = {
      {"model", config_.model},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", request.prompt}}})},
      {"temperature", config_.temperature},
      {"max_tokens", request.params.max_tokens}};
  Completion out;
  out.request_body = body.dump();

  auto res = client.Post(path_prefix_ + "/chat/completions", headers, out.request_body,
                         "application/json");
  if (!res) {
    throw BackendError("HTTP request to " + scheme_host_port_ + " failed: " +
                       httplib::to_string(res.error()));
  }
  out.response_body = res->body;
  if (res->status != 200) {
    throw BackendError("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 300));
  }
  try {
    const auto j = nlohmann::json::parse(res->body);
    out.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const std::exception& ex) {
    throw BackendError(std::string("malformed chat-completions response: ") + ex.what());
  }
  return out;
}

}  // namespace rtb
