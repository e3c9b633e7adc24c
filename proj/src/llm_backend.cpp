#include "sonoagent/llm_backend.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "http_util.hpp"
#include "sonoagent/errors.hpp"
#include "sonoagent/json_util.hpp"
#include "sonoagent/prompt_assembler.hpp"

namespace sonoagent {

std::string_view to_string(Role role) {
    switch (role) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
        case Role::Observation: return "observation";
    }
    return "unknown";
}

void Conversation::validate() const {
    if (messages.empty()) throw Error(ErrorCode::InvalidInput, "conversation is empty");
    if (messages.front().role != Role::System) throw Error(ErrorCode::InvalidInput, "first message must be the system prompt");
    for (std::size_t i = 1; i < messages.size(); ++i) {
        if (messages[i].role == Role::Assistant && messages[i - 1].role == Role::Assistant) {
            throw Error(ErrorCode::InvalidInput, "two consecutive assistant messages");
        }
    }
}

std::string render_observation(const Observation& obs) {
    std::string out = "[observation] api=" + (obs.api_name.empty() ? std::string("-") : obs.api_name) +
                      " ok=" + (obs.ok ? "true" : "false") + " phase=" + std::string(to_string(obs.state_after)) +
                      "\n" + obs.message;
    if (!obs.data.is_null()) out += "\ndata=" + dump_json(obs.data);
    return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> ScriptedBackend::load_script(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::InvalidInput, "cannot read script " + path.string());
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_array()) throw Error(ErrorCode::InvalidInput, "script must be a JSON array of strings");
    std::vector<std::string> turns;
    for (const auto& t : j) {
        if (!t.is_string()) throw Error(ErrorCode::InvalidInput, "script entries must be strings");
        turns.push_back(t.get<std::string>());
    }
    return turns;
}

std::string ScriptedBackend::generate(const Conversation& conversation, const GenerationConfig&) {
    if (conversation.messages.empty()) throw Error(ErrorCode::InvalidInput, "conversation is empty");
    std::lock_guard lock(mutex_);
    if (cursor_ >= turns_.size()) {
        throw Error(ErrorCode::ScriptExhausted, "all " + std::to_string(turns_.size()) + " scripted turns used");
    }
    return turns_[cursor_++];
}

std::size_t ScriptedBackend::remaining() const {
    std::lock_guard lock(mutex_);
    return turns_.size() - cursor_;
}

// ---------------------------------------------------------------------------
// Rule policy

namespace {

std::string lowercase(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

struct PhraseRule {
    std::string_view keyword;
    std::string_view api;
};

// Order matters: "segment the scan image" must not read as a scan step, and
// "print the report" must not read as report generation.
constexpr std::array<PhraseRule, 10> kPhraseTable{{
    {"segment", "Image_Seg"},
    {"print", "Print_Report"},
    {"report", "Generate_Report"},
    {"camera", "Init_Depth_Camera"},
    {"model", "Display_Artery_Model"},
    {"robot", "Activate_Robot"},
    {"scan", "Start_Scan"},
    {"sweep", "Start_Scan"},
    {"acquire", "Start_Scan"},
    {"image the", "Start_Scan"},
}};

std::optional<std::string> target_in(std::string_view text) {
    for (const auto& token : tokenize(text)) {
        if (token == "carotid") return "carotid";
        if (token == "spine" || token == "spinal" || token == "lumbar") return "spine";
        if (token == "rib" || token == "ribs") return "rib";
    }
    return std::nullopt;
}

// Text of the Procedure Guidance block: the lines after its header up to
// the next blank line.
std::optional<std::string> procedure_guidance(std::string_view system) {
    const auto header = system.find(kProcedureGuidanceHeader);
    if (header == std::string_view::npos) return std::nullopt;
    const auto body = system.find('\n', header);
    if (body == std::string_view::npos) return std::nullopt;
    auto end = system.find("\n\n", body + 1);
    if (end == std::string_view::npos) end = system.size();
    return std::string(system.substr(body + 1, end - body - 1));
}

std::vector<std::string> listed_apis(std::string_view system) {
    std::vector<std::string> names;
    std::istringstream in{std::string(system)};
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("[API] ", 0) == 0) names.push_back(line.substr(6));
    }
    return names;
}

struct ParsedObservation {
    std::string api;
    bool ok = false;
    std::optional<Phase> missing;
    nlohmann::json data;
};

std::optional<ParsedObservation> parse_observation(std::string_view content) {
    if (content.rfind("[observation] ", 0) != 0) return std::nullopt;
    ParsedObservation obs;
    const auto first_line = content.substr(0, content.find('\n'));
    std::istringstream fields{std::string(first_line.substr(14))};
    std::string field;
    while (fields >> field) {
        if (field.rfind("api=", 0) == 0) obs.api = field.substr(4);
        if (field.rfind("ok=", 0) == 0) obs.ok = field == "ok=true";
    }
    if (!obs.ok) {
        for (std::string_view marker : {"PreconditionError(", "StaleScan("}) {
            const auto at = content.find(marker);
            if (at == std::string_view::npos) continue;
            const auto name_begin = at + marker.size();
            const auto close = content.find(')', name_begin);
            if (close != std::string_view::npos) {
                obs.missing = phase_from_string(content.substr(name_begin, close - name_begin));
            }
            break;
        }
    }
    const auto data_at = content.find("\ndata=");
    if (data_at != std::string_view::npos) {
        obs.data = nlohmann::json::parse(content.substr(data_at + 6), nullptr, false);
        if (obs.data.is_discarded()) obs.data = nullptr;
    }
    return obs;
}

std::string emit_call(const std::string& thought, const std::string& api, const nlohmann::json& parameters) {
    const nlohmann::json body = {{"api_name", api}, {"parameters", parameters}};
    return "Thought: " + thought + "\n" + std::string(kStartSentinel) + dump_json(body) + std::string(kEndSentinel);
}

}  // namespace

std::optional<std::string> api_for_handbook_step(std::string_view step_text) {
    const auto lower = lowercase(step_text);
    for (const auto& rule : kPhraseTable) {
        if (lower.find(rule.keyword) != std::string::npos) return std::string(rule.api);
    }
    return std::nullopt;
}

std::vector<std::string> handbook_step_apis(std::string_view handbook_text) {
    std::string text = lowercase(handbook_text);
    // Everything before the first ':' is a title, not a step.
    if (const auto colon = text.find(':'); colon != std::string::npos) text = text.substr(colon + 1);
    for (char& c : text) {
        if (c == ',' || c == ';' || c == '.' || c == ':' || c == '\n') c = '|';
    }
    for (std::string_view word : {" then ", " and ", " finally "}) {
        for (auto pos = text.find(word); pos != std::string::npos; pos = text.find(word, pos + 1)) {
            text.replace(pos, word.size(), "|");
        }
    }
    std::vector<std::string> apis;
    std::istringstream in(text);
    std::string fragment;
    while (std::getline(in, fragment, '|')) {
        if (auto api = api_for_handbook_step(fragment)) apis.push_back(*api);
    }
    return apis;
}

std::string rule_policy_next(const Conversation& conversation) {
    if (conversation.messages.empty() || conversation.messages.front().role != Role::System) {
        throw Error(ErrorCode::InvalidInput, "rule policy needs a system message");
    }
    const std::string& system = conversation.messages.front().content;
    std::string instruction;
    std::set<std::string> succeeded;
    std::optional<ParsedObservation> last;
    std::optional<std::array<double, 2>> landmark;
    for (const auto& m : conversation.messages) {
        if (m.role == Role::User && instruction.empty()) instruction = m.content;
        if (m.role != Role::Observation) continue;
        last = parse_observation(m.content);
        if (!last) continue;
        if (last->ok) succeeded.insert(last->api);
        if (last->ok && last->data.is_object() && last->data.contains("landmark")) {
            const auto& lm = last->data["landmark"];
            landmark = std::array<double, 2>{lm[0].get<double>(), lm[1].get<double>()};
        }
    }

    const auto guidance = procedure_guidance(system);
    const std::string target =
        target_in(guidance.value_or("")).value_or(target_in(instruction).value_or("carotid"));
    auto arguments_for = [&](const std::string& api) {
        nlohmann::json p = nlohmann::json::object();
        if (api == "Start_Scan") p["target"] = target;
        if (api == "Image_Seg") {
            const auto pos = landmark.value_or(std::array<double, 2>{0.5, 0.5});
            p["position"] = {pos[0], pos[1]};
            p["threshold"] = 0.2;
        }
        return p;
    };

    if (guidance) {
        const auto steps = handbook_step_apis(*guidance);
        if (last && !last->ok && last->missing) {
            const auto ordinal = static_cast<std::size_t>(*last->missing);
            if (ordinal >= 1 && ordinal <= steps.size()) {
                const auto& api = steps[ordinal - 1];
                return emit_call("The last call needs phase " + std::string(to_string(*last->missing)) +
                                     "; the procedure reaches it with " + api + ".",
                                 api, arguments_for(api));
            }
        }
        for (const auto& api : steps) {
            if (!succeeded.contains(api)) {
                return emit_call("Following the procedure guidance, the next step is " + api + ".", api,
                                 arguments_for(api));
            }
        }
        if (!steps.empty()) return "All procedure steps have been completed.";
    }

    const auto apis = listed_apis(system);
    if (apis.empty()) throw Error(ErrorCode::NoApisListed, "the prompt lists no APIs and no procedure");
    for (const auto& api : apis) {
        if (!succeeded.contains(api)) {
            return emit_call("The request may need " + api + ".", api, arguments_for(api));
        }
    }
    return "All listed APIs have been called.";
}

std::string RulePolicyBackend::generate(const Conversation& conversation, const GenerationConfig&) {
    return rule_policy_next(conversation);
}

// ---------------------------------------------------------------------------

RemoteChatConfig RemoteChatConfig::from_environment() {
    RemoteChatConfig config;
    if (const char* v = std::getenv("LLM_ENDPOINT")) config.endpoint = v;
    if (const char* v = std::getenv("LLM_MODEL")) config.model = v;
    if (const char* v = std::getenv("LLM_API_KEY")) config.api_key = v;
    return config;
}

RemoteChatBackend::RemoteChatBackend(RemoteChatConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) throw Error(ErrorCode::BackendUnavailable, "no LLM endpoint configured");
}

std::string RemoteChatBackend::generate(const Conversation& conversation, const GenerationConfig& config) {
    if (conversation.messages.empty()) throw Error(ErrorCode::InvalidInput, "conversation is empty");
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : conversation.messages) {
        if (m.role == Role::Observation) {
            messages.push_back({{"role", "user"}, {"content", "Observation: " + m.content}});
        } else {
            messages.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
        }
    }
    nlohmann::json body = {{"messages", messages}, {"temperature", config.temperature}, {"top_p", config.top_p}};
    if (!config_.model.empty()) body["model"] = config_.model;
    if (config.max_turn_length > 0) body["max_tokens"] = config.max_turn_length;

    const auto response = detail::post_json(config_.endpoint, body, config_.api_key, config_.timeout_seconds);
    const auto* content = [&]() -> const nlohmann::json* {
        if (!response.contains("choices") || !response["choices"].is_array() || response["choices"].empty()) return nullptr;
        const auto& first = response["choices"][0];
        if (!first.is_object() || !first.contains("message") || !first["message"].is_object()) return nullptr;
        const auto& msg = first["message"];
        if (!msg.contains("content") || !msg["content"].is_string()) return nullptr;
        return &msg["content"];
    }();
    if (!content) throw Error(ErrorCode::RemoteError, "unexpected completion body: " + dump_json(response));
    return content->get<std::string>();
}

}  // namespace sonoagent
