#include "sonoagent/toolcall_parser.hpp"

#include <algorithm>
#include <cctype>
#include <limits>

#include "sonoagent/errors.hpp"
#include "sonoagent/json_util.hpp"
#include "sonoagent/prompt_assembler.hpp"

namespace sonoagent {

namespace {

std::string lowercase(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

struct SentinelBlock {
    std::size_t open;   // position of <|sot|>
    std::size_t close;  // position of <|eot|>
};

struct SentinelScan {
    std::vector<SentinelBlock> blocks;
    bool balanced = true;
    bool any_marker = false;
};

SentinelScan scan_sentinels(std::string_view text) {
    constexpr auto none = std::string_view::npos;
    SentinelScan scan;
    std::size_t pos = 0;
    std::size_t open = none;
    while (true) {
        const auto s = text.find(kStartSentinel, pos);
        const auto e = text.find(kEndSentinel, pos);
        if (s == none && e == none) break;
        scan.any_marker = true;
        if (s < e) {
            if (open != none) scan.balanced = false;  // nested
            open = s;
            pos = s + kStartSentinel.size();
        } else {
            if (open == none) {
                scan.balanced = false;
            } else {
                scan.blocks.push_back({open, e});
                open = none;
            }
            pos = e + kEndSentinel.size();
        }
    }
    if (open != none) scan.balanced = false;
    return scan;
}

std::optional<ParamValue> value_from_json(const nlohmann::json& j) {
    if (j.is_boolean()) return ParamValue{j.get<bool>()};
    if (j.is_number_unsigned()) {
        const auto u = j.get<std::uint64_t>();
        if (u > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) return std::nullopt;
        return ParamValue{static_cast<std::int64_t>(u)};
    }
    if (j.is_number_integer()) return ParamValue{j.get<std::int64_t>()};
    if (j.is_number_float()) return ParamValue{j.get<double>()};
    if (j.is_string()) return ParamValue{j.get<std::string>()};
    if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number()) {
        return ParamValue{std::array<double, 2>{j[0].get<double>(), j[1].get<double>()}};
    }
    return std::nullopt;
}

ParseOutcome malformed(MalformedReason reason, std::string detail) {
    return ParseOutcome{MalformedTurn{reason, std::move(detail)}};
}

ParseOutcome parse_block(std::string_view body) {
    auto j = nlohmann::json::parse(body.begin(), body.end(), nullptr, /*allow_exceptions=*/false,
                                   /*ignore_comments=*/false);
    if (j.is_discarded()) return malformed(MalformedReason::BadJson, "call body is not valid JSON");
    if (!j.is_object()) return malformed(MalformedReason::BadJson, "call body is not a JSON object");
    if (!j.contains("api_name") || !j["api_name"].is_string() || j["api_name"].get<std::string>().empty()) {
        return malformed(MalformedReason::MissingField, "missing or empty string field \"api_name\"");
    }
    if (!j.contains("parameters") || !j["parameters"].is_object()) {
        return malformed(MalformedReason::MissingField, "missing object field \"parameters\"");
    }
    ToolCallRequest request;
    request.api_name = j["api_name"].get<std::string>();
    for (const auto& [name, value] : j["parameters"].items()) {
        auto converted = value_from_json(value);
        if (!converted) {
            return malformed(MalformedReason::BadJson,
                             "parameter '" + name + "' has an unsupported value " + dump_json(value));
        }
        request.parameters.emplace(name, std::move(*converted));
    }
    return ParseOutcome{std::move(request)};
}

}  // namespace

std::string_view value_kind_name(const ParamValue& value) {
    switch (value.index()) {
        case 0: return "real";
        case 1: return "real-pair";
        case 2: return "integer";
        case 3: return "text";
        default: return "boolean";
    }
}

nlohmann::json to_json(const ParamValue& value) {
    return std::visit([](const auto& v) -> nlohmann::json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::array<double, 2>>) {
            return nlohmann::json::array({v[0], v[1]});
        } else {
            return v;
        }
    }, value);
}

std::string_view to_string(MalformedReason reason) {
    switch (reason) {
        case MalformedReason::NoSentinel: return "NoSentinel";
        case MalformedReason::UnbalancedSentinels: return "UnbalancedSentinels";
        case MalformedReason::BadJson: return "BadJson";
        case MalformedReason::MissingField: return "MissingField";
        case MalformedReason::MultipleCalls: return "MultipleCalls";
    }
    return "Unknown";
}

std::string_view ParseOutcome::variant_name() const {
    switch (value.index()) {
        case 0: return "Call";
        case 1: return "Direct";
        case 2: return "Refusal";
        default: return "Malformed";
    }
}

nlohmann::json to_json(const ParseOutcome& outcome) {
    nlohmann::json j = {{"variant", std::string(outcome.variant_name())}};
    std::visit([&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ToolCallRequest>) {
            j["api_name"] = v.api_name;
            nlohmann::json params = nlohmann::json::object();
            for (const auto& [name, value] : v.parameters) params[name] = to_json(value);
            j["parameters"] = params;
        } else if constexpr (std::is_same_v<T, MalformedTurn>) {
            j["reason"] = std::string(to_string(v.reason));
            j["detail"] = v.detail;
        } else {
            j["text"] = v.text;
        }
    }, outcome.value);
    return j;
}

RefusalClassifier::RefusalClassifier()
    : RefusalClassifier({"I cannot", "I'm unable", "as an AI", "cannot assist"}) {}

RefusalClassifier::RefusalClassifier(std::vector<std::string> phrases) {
    for (auto& p : phrases) {
        if (!p.empty()) phrases_.push_back(lowercase(p));
    }
}

bool RefusalClassifier::matches(std::string_view text) const {
    const auto lower = lowercase(text);
    return std::any_of(phrases_.begin(), phrases_.end(),
                       [&](const std::string& p) { return lower.find(p) != std::string::npos; });
}

ParseOutcome extract_tool_call(std::string_view turn_text, const RefusalClassifier& refusals) {
    const auto scan = scan_sentinels(turn_text);
    if (!scan.any_marker) {
        if (refusals.matches(turn_text)) return ParseOutcome{RefusalResponse{std::string(turn_text)}};
        if (turn_text.find("\"api_name\"") != std::string_view::npos) {
            return malformed(MalformedReason::NoSentinel, "call JSON without <|sot|>/<|eot|> markers");
        }
        return ParseOutcome{DirectResponse{std::string(turn_text)}};
    }
    if (!scan.balanced) return malformed(MalformedReason::UnbalancedSentinels, "sentinel markers do not pair up");
    if (scan.blocks.size() > 1) {
        return malformed(MalformedReason::MultipleCalls,
                         std::to_string(scan.blocks.size()) + " call blocks in one turn");
    }
    const auto& block = scan.blocks.front();
    const auto body_begin = block.open + kStartSentinel.size();
    return parse_block(turn_text.substr(body_begin, block.close - body_begin));
}

std::string thought_text(std::string_view turn_text) {
    const auto scan = scan_sentinels(turn_text);
    if (!scan.balanced) return trim(turn_text);
    std::string out;
    std::size_t cursor = 0;
    for (const auto& b : scan.blocks) {
        out.append(turn_text.substr(cursor, b.open - cursor));
        cursor = b.close + kEndSentinel.size();
    }
    out.append(turn_text.substr(cursor));
    return trim(out);
}

double ValidatedCall::real(const std::string& name) const { return std::get<double>(arguments.at(name)); }

std::array<double, 2> ValidatedCall::real_pair(const std::string& name) const {
    return std::get<std::array<double, 2>>(arguments.at(name));
}

const std::string& ValidatedCall::text(const std::string& name) const {
    return std::get<std::string>(arguments.at(name));
}

namespace {

[[noreturn]] void kind_mismatch(const ParamSpec& p, const ParamValue& got) {
    throw Error(ErrorCode::KindMismatch, p.name + " expected " + p.kind_label() + ", got " +
                                             std::string(value_kind_name(got)));
}

ParamValue coerce(const ParamSpec& p, const ParamValue& value) {
    switch (p.kind) {
        case ParamKind::Real:
            if (const auto* d = std::get_if<double>(&value)) return *d;
            if (const auto* i = std::get_if<std::int64_t>(&value)) return static_cast<double>(*i);
            break;
        case ParamKind::RealPair:
            if (std::holds_alternative<std::array<double, 2>>(value)) return value;
            break;
        case ParamKind::Integer:
            if (std::holds_alternative<std::int64_t>(value)) return value;
            break;
        case ParamKind::Text:
            if (std::holds_alternative<std::string>(value)) return value;
            break;
        case ParamKind::Boolean:
            if (std::holds_alternative<bool>(value)) return value;
            break;
        case ParamKind::Enum:
            if (const auto* s = std::get_if<std::string>(&value)) {
                if (std::find(p.enum_values.begin(), p.enum_values.end(), *s) != p.enum_values.end()) return value;
                throw Error(ErrorCode::KindMismatch, p.name + " expected " + p.kind_label() + ", got text '" + *s + "'");
            }
            break;
    }
    kind_mismatch(p, value);
}

}  // namespace

ValidatedCall validate_call(const ToolCallRequest& request, std::span<const ApiSpec> registry) {
    if (registry.empty()) throw Error(ErrorCode::InvalidInput, "empty registry");
    const ApiSpec* spec = find_api(registry, request.api_name);
    if (!spec) throw Error(ErrorCode::UnknownApi, request.api_name + " is not a registered API");

    for (const auto& [name, value] : request.parameters) {
        if (!spec->find_parameter(name)) {
            throw Error(ErrorCode::UnknownParameter, name + " is not a parameter of " + spec->name);
        }
    }
    ValidatedCall call{*spec, {}};
    for (const auto& p : spec->parameters) {
        auto it = request.parameters.find(p.name);
        if (it == request.parameters.end()) {
            if (p.required) throw Error(ErrorCode::MissingParameter, p.name + " is required by " + spec->name);
            continue;
        }
        call.arguments.emplace(p.name, coerce(p, it->second));
    }
    return call;
}

ToolCallRequest to_request(const ValidatedCall& call) { return {call.spec.name, call.arguments}; }

std::string to_wire(const ToolCallRequest& request) {
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [name, value] : request.parameters) params[name] = to_json(value);
    const nlohmann::json body = {{"api_name", request.api_name}, {"parameters", params}};
    return std::string(kStartSentinel) + dump_json(body) + std::string(kEndSentinel);
}

}  // namespace sonoagent
