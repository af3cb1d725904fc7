#pragma once

#include <memory>
#include <string>

#include "json.hpp"
#include "ttx/policy.hpp"

namespace ttx {

/// Chat-completions request body for a single-turn prompt.
nlohmann::json chat_request_body(const RemoteEndpoint& endpoint, std::string_view prompt, const DecodeParams& decode,
                                 std::uint64_t seed);

/// Extracts choices[0].message.content; throws RemoteError on a bad shape.
std::string chat_response_text(const std::string& body);

/// HTTP chat-completions backend with bounded concurrency and retry with
/// exponential backoff on transport errors, 429 and 5xx.
std::shared_ptr<Backend> make_remote_backend(const RemoteEndpoint& endpoint);

}  // namespace ttx
