#include "ttx/remote.hpp"

#include <chrono>
#include <cstdlib>
#include <semaphore>
#include <thread>

#include "httplib.h"

namespace ttx {

using nlohmann::json;

namespace {

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path;
};

ParsedUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("remote url must include a scheme: " + url);
  const auto path_begin = url.find('/', scheme_end + 3);
  if (path_begin == std::string::npos) return {url, "/v1/chat/completions"};
  return {url.substr(0, path_begin), url.substr(path_begin)};
}

bool retryable_status(int status) { return status == 429 || status >= 500; }

class RemoteBackend : public Backend {
 public:
  explicit RemoteBackend(RemoteEndpoint endpoint)
      : endpoint_(std::move(endpoint)),
        url_(split_url(endpoint_.url)),
        slots_(std::clamp(endpoint_.max_concurrent, 1, 1024)) {
    if (!endpoint_.api_key_env.empty()) {
      const char* key = std::getenv(endpoint_.api_key_env.c_str());
      if (!key) throw ConfigError("environment variable " + endpoint_.api_key_env + " is not set");
      api_key_ = key;
    }
    if (endpoint_.max_attempts < 1) throw ConfigError("remote max_attempts must be >= 1");
  }

  std::string describe() const override { return "remote:" + endpoint_.model + "@" + endpoint_.url; }

  std::string complete(std::string_view prompt, const DecodeParams& decode, std::uint64_t seed) override {
    const std::string body = chat_request_body(endpoint_, prompt, decode, seed).dump();
    slots_.acquire();
    struct Release {
      std::counting_semaphore<1024>& s;
      ~Release() { s.release(); }
    } release{slots_};

    int status = 0;
    std::string last_error;
    for (int attempt = 1; attempt <= endpoint_.max_attempts; ++attempt) {
      if (attempt > 1) {
        const auto delay = std::chrono::milliseconds(endpoint_.backoff_ms) * (1 << std::min(attempt - 2, 10));
        std::this_thread::sleep_for(delay);
      }
      httplib::Client client(url_.scheme_host_port);
      client.set_connection_timeout(10);
      client.set_read_timeout(endpoint_.timeout_s);
      client.set_write_timeout(30);
      httplib::Headers headers;
      if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
      auto res = client.Post(url_.path, headers, body, "application/json");
      if (!res) {
        status = 0;
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      status = res->status;
      if (status >= 200 && status < 300) return chat_response_text(res->body);
      last_error = "http status " + std::to_string(status);
      if (!retryable_status(status))
        throw RemoteError(describe() + ": " + last_error, attempt, status, false);
    }
    throw RemoteError(describe() + ": " + last_error, endpoint_.max_attempts, status, true);
  }

 private:
  RemoteEndpoint endpoint_;
  ParsedUrl url_;
  std::string api_key_;
  std::counting_semaphore<1024> slots_;
};

}  // namespace

json chat_request_body(const RemoteEndpoint& endpoint, std::string_view prompt, const DecodeParams& decode,
                       std::uint64_t seed) {
  json j;
  j["model"] = endpoint.model;
  j["messages"] = json::array({{{"role", "user"}, {"content", std::string(prompt)}}});
  j["temperature"] = decode.temperature;
  j["max_tokens"] = decode.max_output_tokens;
  j["seed"] = seed;
  return j;
}

std::string chat_response_text(const std::string& body) {
  const auto j = json::parse(body, nullptr, false);
  if (j.is_discarded()) throw RemoteError("invalid JSON in chat response", 1, 200, false);
  try {
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception&) {
    throw RemoteError("chat response lacks choices[0].message.content", 1, 200, false);
  }
}

std::shared_ptr<Backend> make_remote_backend(const RemoteEndpoint& endpoint) {
  return std::make_shared<RemoteBackend>(endpoint);
}

}  // namespace ttx
