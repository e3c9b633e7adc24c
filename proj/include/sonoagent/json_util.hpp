#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace sonoagent {

/// dump() that never throws on invalid UTF-8 (model output is arbitrary
/// bytes); bad sequences become U+FFFD.
inline std::string dump_json(const nlohmann::json& j, int indent = -1) {
    return j.dump(indent, ' ', false, nlohmann::json::error_handler_t::replace);
}

}  // namespace sonoagent
