#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "sonoagent/api_spec.hpp"

namespace sonoagent {

// real, real-pair, integer, text, boolean
using ParamValue = std::variant<double, std::array<double, 2>, std::int64_t, std::string, bool>;

std::string_view value_kind_name(const ParamValue& value);
nlohmann::json to_json(const ParamValue& value);

struct ToolCallRequest {
    std::string api_name;
    std::map<std::string, ParamValue> parameters;

    friend bool operator==(const ToolCallRequest&, const ToolCallRequest&) = default;
};

enum class MalformedReason { NoSentinel, UnbalancedSentinels, BadJson, MissingField, MultipleCalls };
std::string_view to_string(MalformedReason reason);

struct DirectResponse {
    std::string text;
};
struct RefusalResponse {
    std::string text;
};
struct MalformedTurn {
    MalformedReason reason = MalformedReason::BadJson;
    std::string detail;
};

/// Exactly one of: a call, a direct answer, a refusal, or a malformed turn.
struct ParseOutcome {
    std::variant<ToolCallRequest, DirectResponse, RefusalResponse, MalformedTurn> value;

    bool is_call() const { return std::holds_alternative<ToolCallRequest>(value); }
    bool is_direct() const { return std::holds_alternative<DirectResponse>(value); }
    bool is_refusal() const { return std::holds_alternative<RefusalResponse>(value); }
    bool is_malformed() const { return std::holds_alternative<MalformedTurn>(value); }

    const ToolCallRequest& call() const { return std::get<ToolCallRequest>(value); }
    const MalformedTurn& malformed() const { return std::get<MalformedTurn>(value); }

    /// "Call", "Direct", "Refusal" or "Malformed".
    std::string_view variant_name() const;
};

nlohmann::json to_json(const ParseOutcome& outcome);

/// Case-insensitive substring match against a phrase list.
class RefusalClassifier {
public:
    RefusalClassifier();  // "I cannot", "I'm unable", "as an AI", "cannot assist"
    explicit RefusalClassifier(std::vector<std::string> phrases);

    bool matches(std::string_view text) const;
    const std::vector<std::string>& phrases() const { return phrases_; }

private:
    std::vector<std::string> phrases_;  // stored lowercased
};

/// Total: never throws for any input.
///
/// Sentinel pairs are matched left to right. Any <|eot|> before its
/// <|sot|>, a nested <|sot|>, or an unclosed block is UnbalancedSentinels;
/// more than one complete block is MultipleCalls. A single block must hold a
/// strict JSON object (BadJson otherwise) with a non-empty string
/// "api_name" and an object "parameters" (MissingField otherwise). Text with
/// no sentinels is a Refusal when the classifier fires, NoSentinel when it
/// carries a bare "api_name" JSON field, and a Direct answer otherwise.
ParseOutcome extract_tool_call(std::string_view turn_text,
                               const RefusalClassifier& refusals = RefusalClassifier());

/// Turn text with well-formed sentinel blocks removed and whitespace
/// trimmed; the step's "thought".
std::string thought_text(std::string_view turn_text);

struct ValidatedCall {
    ApiSpec spec;
    std::map<std::string, ParamValue> arguments;  // coerced to the declared kinds

    double real(const std::string& name) const;
    std::array<double, 2> real_pair(const std::string& name) const;
    const std::string& text(const std::string& name) const;
};

/// Resolves the name and coerces arguments. Throws Error with code
/// UnknownApi, UnknownParameter, MissingParameter or KindMismatch.
ValidatedCall validate_call(const ToolCallRequest& request, std::span<const ApiSpec> registry);

ToolCallRequest to_request(const ValidatedCall& call);

/// <|sot|>{"api_name":...,"parameters":{...}}<|eot|>
std::string to_wire(const ToolCallRequest& request);

}  // namespace sonoagent
