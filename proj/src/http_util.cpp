#include "http_util.hpp"

#include <httplib.h>

#include "ragtutor/error.hpp"

namespace ragtutor::detail {

Endpoint split_endpoint(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos)
    throw Error(ErrorCode::InvalidArgument, "endpoint must include a scheme", std::string(url));
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint ep;
  if (path_start == std::string_view::npos) {
    ep.origin = std::string(url);
    ep.path = "/";
  } else {
    ep.origin = std::string(url.substr(0, path_start));
    ep.path = std::string(url.substr(path_start));
  }
  return ep;
}

HttpOutcome post_json(const Endpoint& endpoint, const nlohmann::json& body,
                      std::chrono::milliseconds timeout) {
  httplib::Client client(endpoint.origin);
  const auto secs = static_cast<time_t>(timeout.count() / 1000);
  const auto usecs = static_cast<time_t>((timeout.count() % 1000) * 1000);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  HttpOutcome out;
  auto res = client.Post(endpoint.path, body.dump(), "application/json");
  if (!res) {
    out.transport_error = httplib::to_string(res.error());
    return out;
  }
  out.status = res->status;
  out.body = res->body;
  return out;
}

}  // namespace ragtutor::detail
