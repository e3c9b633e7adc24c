#include "http_util.hpp"

#include <httplib.h>

#include "sonoagent/errors.hpp"
#include "sonoagent/json_util.hpp"

namespace sonoagent::detail {

ParsedUrl parse_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error(ErrorCode::InvalidInput, "not a URL: " + url);
    const auto scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") {
        throw Error(ErrorCode::InvalidInput, "unsupported scheme in " + url);
    }
    const auto host_begin = scheme_end + 3;
    const auto path_begin = url.find('/', host_begin);
    ParsedUrl parsed;
    if (path_begin == std::string::npos) {
        parsed.origin = url;
        parsed.path = "/";
    } else {
        parsed.origin = url.substr(0, path_begin);
        parsed.path = url.substr(path_begin);
    }
    if (parsed.origin.size() <= host_begin) throw Error(ErrorCode::InvalidInput, "missing host in " + url);
    return parsed;
}

nlohmann::json post_json(const std::string& url, const nlohmann::json& body,
                         const std::string& bearer_token, int timeout_seconds) {
    const auto parsed = parse_url(url);
    httplib::Client client(parsed.origin);
    if (!client.is_valid()) {
        throw Error(ErrorCode::BackendUnavailable, "cannot build a client for " + parsed.origin);
    }
    client.set_connection_timeout(timeout_seconds, 0);
    client.set_read_timeout(timeout_seconds, 0);
    client.set_write_timeout(timeout_seconds, 0);
    httplib::Headers headers;
    if (!bearer_token.empty()) headers.emplace("Authorization", "Bearer " + bearer_token);

    auto res = client.Post(parsed.path, headers, dump_json(body), "application/json");
    if (!res) {
        throw Error(ErrorCode::BackendUnavailable,
                    url + " unreachable (" + httplib::to_string(res.error()) + ")");
    }
    if (res->status < 200 || res->status >= 300) {
        throw Error(ErrorCode::RemoteError, "status " + std::to_string(res->status) + ": " + res->body);
    }
    auto parsed_body = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed_body.is_discarded()) {
        throw Error(ErrorCode::RemoteError, "status " + std::to_string(res->status) +
                                                ": response is not JSON: " + res->body);
    }
    return parsed_body;
}

}  // namespace sonoagent::detail
