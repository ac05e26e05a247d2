#pragma once

#include <chrono>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace ragtutor::detail {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // always starts with '/'
};

Endpoint split_endpoint(std::string_view url);

struct HttpOutcome {
  int status = 0;         // 0 when the transport failed
  std::string body;
  std::string transport_error;

  bool retryable() const { return status == 0 || status >= 500; }
};

HttpOutcome post_json(const Endpoint& endpoint, const nlohmann::json& body,
                      std::chrono::milliseconds timeout);

}  // namespace ragtutor::detail
