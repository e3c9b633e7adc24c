#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sonoagent/knowledge_store.hpp"
#include "sonoagent/llm_backend.hpp"
#include "sonoagent/prompt_assembler.hpp"
#include "sonoagent/robot_simulator.hpp"
#include "sonoagent/toolcall_parser.hpp"

namespace sonoagent {

enum class Terminal { Completed, ErrorThresholdExceeded, Refused, MaxStepsExceeded, Aborted };
std::string_view to_string(Terminal terminal);

struct GoalPredicate {
    std::string name;
    std::function<bool(const RobotState&)> satisfied;

    static GoalPredicate phase_reached(Phase phase);
};

struct EngineConfig {
    int max_steps = 20;
    int error_threshold = 3;  // consecutive failed steps
    GoalPredicate goal = GoalPredicate::phase_reached(Phase::ReportPrinted);
};

/// Which retrieved context reaches the prompt.
enum class Ablation { None, Uar, UarRhr };
std::string_view to_string(Ablation ablation);  // "none", "uar", "uar+rhr"
std::optional<Ablation> ablation_from_string(std::string_view name);

struct RetrievalConfig {
    bool include_apis = true;
    bool include_handbook = true;
    int api_k = 3;
    int handbook_k = 1;

    static RetrievalConfig for_ablation(Ablation ablation);
};

struct SessionOptions {
    EngineConfig engine;
    RetrievalConfig retrieval;
    GenerationConfig generation;
    std::shared_ptr<const PromptTemplate> prompt_template;  // default template when null
    RefusalClassifier refusals;
};

struct RetrievedItem {
    std::string key;
    EntryKind kind = EntryKind::ApiUsage;
    double score = 0.0;
    std::string label;  // api_name or procedure_id
};

struct CycleStep {
    int index = 0;
    std::optional<Observation> observation_in;  // feedback of the previous step
    std::string turn_text;
    std::string thought;
    std::optional<ParseOutcome> outcome;        // absent when the backend failed
    std::optional<Observation> action_result;   // present iff outcome is a call
    std::optional<Observation> feedback;        // what was appended to the conversation
    std::optional<std::string> backend_error;
    bool failed = false;
    int consecutive_failures = 0;
    Phase phase_after = Phase::Uninitialized;
};

struct InjectedFault {
    int after_step = 0;  // number of steps completed when injected
    FaultSpec fault;
};

struct SessionTranscript {
    std::string instruction;
    std::vector<RetrievedItem> retrieval;
    std::vector<std::string> retrieved_api_names;
    std::vector<std::string> retrieved_procedure_ids;
    AssembledPrompt prompt;
    std::vector<CycleStep> steps;
    std::optional<Terminal> terminal;
    std::string goal;
    std::uint64_t robot_seed = 0;
    std::vector<FaultSpec> initial_faults;
    std::vector<InjectedFault> injected_faults;
    int max_steps = 0;
    int error_threshold = 0;
};

nlohmann::json to_json(const CycleStep& step);
nlohmann::json to_json(const SessionTranscript& transcript);

/// One observe-think-act session against one robot. Not internally
/// synchronized: callers serialize access per session.
class Session {
public:
    Session(std::string instruction, std::shared_ptr<const KnowledgeIndex> index, std::vector<ApiSpec> registry,
            std::shared_ptr<LlmBackend> backend, RobotSimulator robot, SessionOptions options);

    /// One cycle: generate a turn, parse it, validate and invoke a call,
    /// append the feedback observation, update counters and the terminal
    /// status. Throws Error(SessionClosed) on a closed session; backend
    /// errors are recorded as a failed step and then rethrown.
    const CycleStep& step();

    /// Steps until a terminal status is set, absorbing backend errors.
    const SessionTranscript& run_to_completion();

    void abort();
    void inject_fault(FaultSpec fault);

    bool closed() const { return transcript_.terminal.has_value(); }
    const SessionTranscript& transcript() const { return transcript_; }
    const RobotState& robot_state() const { return robot_.state(); }
    const Conversation& conversation() const { return conversation_; }

private:
    const CycleStep& finish_step(CycleStep step, bool refused);

    std::shared_ptr<const KnowledgeIndex> index_;
    std::vector<ApiSpec> registry_;
    std::shared_ptr<LlmBackend> backend_;
    RobotSimulator robot_;
    SessionOptions options_;
    Conversation conversation_;
    SessionTranscript transcript_;
    int consecutive_failures_ = 0;
};

/// Retrieval (U) then prompt assembly (A) then conversation seeding; no
/// steps run. Throws Error(InvalidInput) on an empty instruction and
/// propagates EmptyIndex / MalformedTemplate.
std::unique_ptr<Session> start_session(std::string instruction, std::shared_ptr<const KnowledgeIndex> index,
                                       std::vector<ApiSpec> registry, std::shared_ptr<LlmBackend> backend,
                                       RobotSimulator robot, SessionOptions options = {});

/// Re-runs a closed transcript's turns through a scripted backend against a
/// fresh robot with the same seed and faults (injections re-applied at the
/// same step boundaries).
SessionTranscript replay_transcript(const SessionTranscript& transcript, std::shared_ptr<const KnowledgeIndex> index,
                                    std::vector<ApiSpec> registry, SessionOptions options = {});

}  // namespace sonoagent
