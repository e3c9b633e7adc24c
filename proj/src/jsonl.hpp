#pragma once

#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

namespace sonoagent::detail {

/// Blank lines are skipped; anything else must be a JSON object.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);

}  // namespace sonoagent::detail
