#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace sonoagent::detail {

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // begins with '/'
};

/// Throws Error(InvalidInput) for anything that is not http(s)://host[:port][/path].
ParsedUrl parse_url(const std::string& url);

/// POSTs `body` as JSON. Connection failures throw Error(BackendUnavailable);
/// non-2xx statuses throw Error(RemoteError) with status and body; a
/// non-JSON response body throws Error(RemoteError).
nlohmann::json post_json(const std::string& url, const nlohmann::json& body,
                         const std::string& bearer_token, int timeout_seconds);

}  // namespace sonoagent::detail
