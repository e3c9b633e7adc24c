#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sonoagent/robot_simulator.hpp"

namespace sonoagent {

enum class Role { System, User, Assistant, Observation };
std::string_view to_string(Role role);

struct Message {
    Role role = Role::User;
    std::string content;
};

/// First message is the system prompt; no two assistant turns in a row.
struct Conversation {
    std::vector<Message> messages;

    void add(Role role, std::string content) { messages.push_back({role, std::move(content)}); }
    /// Throws Error(InvalidInput) when the shape rules are violated.
    void validate() const;
};

/// Observation-role message text:
///
///     [observation] api=Start_Scan ok=true phase=Scanned
///     <message>
///     data={...}            (only when the observation carries data)
std::string render_observation(const Observation& obs);

struct GenerationConfig {
    double temperature = 0.7;
    double top_p = 0.95;
    int max_turn_length = 1024;
};

class LlmBackend {
public:
    virtual ~LlmBackend() = default;

    /// Throws Error(InvalidInput) on an empty conversation plus the
    /// backend-specific errors documented on each implementation.
    virtual std::string generate(const Conversation& conversation, const GenerationConfig& config) = 0;
    virtual std::string name() const = 0;
    virtual bool deterministic() const { return true; }
};

/// Replays queued turns in order; Error(ScriptExhausted) afterwards.
class ScriptedBackend final : public LlmBackend {
public:
    explicit ScriptedBackend(std::vector<std::string> turns) : turns_(std::move(turns)) {}

    /// Script file: a JSON array of turn strings.
    static std::vector<std::string> load_script(const std::filesystem::path& path);

    std::string generate(const Conversation& conversation, const GenerationConfig& config) override;
    std::string name() const override { return "scripted"; }

    std::size_t remaining() const;

private:
    std::vector<std::string> turns_;
    std::size_t cursor_ = 0;
    mutable std::mutex mutex_;
};

/// Fixed phrase table from handbook wording to API names. Applied per
/// step fragment; the first matching keyword wins.
std::optional<std::string> api_for_handbook_step(std::string_view step_text);

/// Splits handbook text into step fragments (on , ; . : and the words
/// "then", "and", "finally") and maps each through the phrase table.
std::vector<std::string> handbook_step_apis(std::string_view handbook_text);

/// Deterministic stand-in for a model. Reads only the conversation:
///   - with a Procedure Guidance section: emits the first handbook step not
///     yet confirmed by an ok=true observation; after a failed observation
///     naming a missing phase, emits the handbook step producing it;
///   - without one: emits the listed APIs in list order (no recovery);
///   - Error(NoApisListed) when neither guidance nor APIs are present.
/// Always at most one sentinel block per turn.
std::string rule_policy_next(const Conversation& conversation);

class RulePolicyBackend final : public LlmBackend {
public:
    std::string generate(const Conversation& conversation, const GenerationConfig& config) override;
    std::string name() const override { return "rule"; }
};

struct RemoteChatConfig {
    std::string endpoint;  // full URL of the chat-completions route
    std::string model;
    std::string api_key;
    int timeout_seconds = 60;

    /// LLM_ENDPOINT, LLM_MODEL, LLM_API_KEY.
    static RemoteChatConfig from_environment();
};

/// POST {"model","messages","temperature","top_p"}; returns
/// choices[0].message.content verbatim. Error(BackendUnavailable) when the
/// endpoint is unset or unreachable, Error(RemoteError) on non-2xx or an
/// unexpected body.
class RemoteChatBackend final : public LlmBackend {
public:
    explicit RemoteChatBackend(RemoteChatConfig config);

    std::string generate(const Conversation& conversation, const GenerationConfig& config) override;
    std::string name() const override { return "remote:" + config_.model; }
    bool deterministic() const override { return false; }

    const RemoteChatConfig& config() const { return config_; }

private:
    RemoteChatConfig config_;
};

}  // namespace sonoagent
