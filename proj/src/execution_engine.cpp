#include "sonoagent/execution_engine.hpp"

#include <set>

#include "sonoagent/errors.hpp"

namespace sonoagent {

std::string_view to_string(Terminal terminal) {
    switch (terminal) {
        case Terminal::Completed: return "Completed";
        case Terminal::ErrorThresholdExceeded: return "ErrorThresholdExceeded";
        case Terminal::Refused: return "Refused";
        case Terminal::MaxStepsExceeded: return "MaxStepsExceeded";
        case Terminal::Aborted: return "Aborted";
    }
    return "Unknown";
}

GoalPredicate GoalPredicate::phase_reached(Phase phase) {
    return {"phase=" + std::string(to_string(phase)), [phase](const RobotState& s) { return s.phase == phase; }};
}

std::string_view to_string(Ablation ablation) {
    switch (ablation) {
        case Ablation::None: return "none";
        case Ablation::Uar: return "uar";
        case Ablation::UarRhr: return "uar+rhr";
    }
    return "unknown";
}

std::optional<Ablation> ablation_from_string(std::string_view name) {
    for (auto a : {Ablation::None, Ablation::Uar, Ablation::UarRhr}) {
        if (to_string(a) == name) return a;
    }
    return std::nullopt;
}

RetrievalConfig RetrievalConfig::for_ablation(Ablation ablation) {
    RetrievalConfig config;
    config.include_apis = ablation != Ablation::None;
    config.include_handbook = ablation == Ablation::UarRhr;
    return config;
}

namespace {

Observation feedback_observation(const RobotState& robot, std::string message, std::string code) {
    Observation obs;
    obs.ok = false;
    obs.message = std::move(message);
    obs.state_after = robot.phase;
    obs.error = std::move(code);
    return obs;
}

nlohmann::json optional_json(const std::optional<Observation>& obs) {
    return obs ? to_json(*obs) : nlohmann::json();
}

}  // namespace

Session::Session(std::string instruction, std::shared_ptr<const KnowledgeIndex> index, std::vector<ApiSpec> registry,
                 std::shared_ptr<LlmBackend> backend, RobotSimulator robot, SessionOptions options)
    : index_(std::move(index)),
      registry_(std::move(registry)),
      backend_(std::move(backend)),
      robot_(std::move(robot)),
      options_(std::move(options)) {
    if (instruction.empty()) throw Error(ErrorCode::InvalidInput, "instruction is empty");
    if (!backend_) throw Error(ErrorCode::InvalidInput, "session needs a backend");
    if (options_.engine.max_steps < 1 || options_.engine.error_threshold < 1) {
        throw Error(ErrorCode::InvalidInput, "max_steps and error_threshold must be at least 1");
    }
    check_registry(registry_);
    if (!options_.prompt_template) {
        options_.prompt_template = std::make_shared<PromptTemplate>(PromptTemplate::default_template());
    }

    transcript_.instruction = instruction;
    transcript_.goal = options_.engine.goal.name;
    transcript_.robot_seed = robot_.state().rng_seed;
    transcript_.initial_faults.assign(robot_.state().pending_faults.begin(), robot_.state().pending_faults.end());
    transcript_.max_steps = options_.engine.max_steps;
    transcript_.error_threshold = options_.engine.error_threshold;

    // U: domain knowledge retrieval.
    const auto& retrieval = options_.retrieval;
    std::vector<ApiSpec> apis;
    std::optional<HandbookEntry> handbook;
    if ((retrieval.include_apis || retrieval.include_handbook) && !index_) {
        throw Error(ErrorCode::EmptyIndex, "retrieval requested without an index");
    }
    if (retrieval.include_apis) {
        const auto hits = retrieve_top_k(*index_, instruction, retrieval.api_k, EntryKind::ApiUsage);
        std::set<std::string> seen;
        for (const auto& hit : hits.ranked) {
            const auto& record = std::get<ApiUsageRecord>(*hit.payload);
            transcript_.retrieval.push_back({hit.key, hit.kind, hit.score, record.api_name});
            const ApiSpec* spec = find_api(registry_, record.api_name);
            if (spec && seen.insert(record.api_name).second) {
                apis.push_back(*spec);
                transcript_.retrieved_api_names.push_back(record.api_name);
            }
        }
    }
    if (retrieval.include_handbook) {
        const auto hits = retrieve_top_k(*index_, instruction, retrieval.handbook_k, EntryKind::Handbook);
        for (const auto& hit : hits.ranked) {
            const auto& entry = std::get<HandbookEntry>(*hit.payload);
            transcript_.retrieval.push_back({hit.key, hit.kind, hit.score, entry.procedure_id});
            transcript_.retrieved_procedure_ids.push_back(entry.procedure_id);
            if (!handbook) handbook = entry;
        }
    }

    // A: prompt assembly.
    transcript_.prompt = assemble_prompt(instruction, apis, handbook, *options_.prompt_template);
    conversation_.add(Role::System, transcript_.prompt.system_text);
    conversation_.add(Role::User, transcript_.prompt.user_text);
}

const CycleStep& Session::step() {
    if (closed()) throw Error(ErrorCode::SessionClosed, "session already ended");

    CycleStep step;
    step.index = static_cast<int>(transcript_.steps.size()) + 1;
    if (!transcript_.steps.empty()) step.observation_in = transcript_.steps.back().feedback;

    std::string turn;
    try {
        turn = backend_->generate(conversation_, options_.generation);
    } catch (const Error& e) {
        step.backend_error = e.what();
        step.feedback = feedback_observation(robot_.state(), e.what(), std::string(to_string(e.code())));
        finish_step(std::move(step), false);
        throw;
    }

    conversation_.add(Role::Assistant, turn);
    step.turn_text = turn;
    step.thought = thought_text(turn);
    step.outcome = extract_tool_call(turn, options_.refusals);

    bool refused = false;
    const auto& outcome = *step.outcome;
    if (outcome.is_call()) {
        try {
            const auto call = validate_call(outcome.call(), registry_);
            step.action_result = robot_.invoke(call);
        } catch (const Error& e) {
            Observation obs = feedback_observation(robot_.state(), e.what(), std::string(to_string(e.code())));
            obs.api_name = outcome.call().api_name;
            step.action_result = std::move(obs);
        }
        step.feedback = step.action_result;
    } else if (outcome.is_refusal()) {
        refused = true;
    } else if (outcome.is_direct()) {
        step.feedback = feedback_observation(
            robot_.state(), "NoCall: the reply contained no API call and the task is not complete.", "NoCall");
    } else {
        const auto& bad = outcome.malformed();
        step.feedback = feedback_observation(
            robot_.state(),
            "Malformed(" + std::string(to_string(bad.reason)) + "): " + bad.detail +
                ". Reply with exactly one <|sot|>{\"api_name\": ..., \"parameters\": {...}}<|eot|> block.",
            "Malformed");
    }
    return finish_step(std::move(step), refused);
}

const CycleStep& Session::finish_step(CycleStep step, bool refused) {
    if (step.feedback) conversation_.add(Role::Observation, render_observation(*step.feedback));

    step.failed = refused || !step.feedback || !step.feedback->ok;
    consecutive_failures_ = step.failed ? consecutive_failures_ + 1 : 0;
    step.consecutive_failures = consecutive_failures_;
    step.phase_after = robot_.state().phase;
    transcript_.steps.push_back(std::move(step));

    if (refused) {
        transcript_.terminal = Terminal::Refused;
    } else if (options_.engine.goal.satisfied(robot_.state())) {
        transcript_.terminal = Terminal::Completed;
    } else if (consecutive_failures_ >= options_.engine.error_threshold) {
        transcript_.terminal = Terminal::ErrorThresholdExceeded;
    } else if (static_cast<int>(transcript_.steps.size()) >= options_.engine.max_steps) {
        transcript_.terminal = Terminal::MaxStepsExceeded;
    }
    return transcript_.steps.back();
}

const SessionTranscript& Session::run_to_completion() {
    if (closed()) throw Error(ErrorCode::SessionClosed, "session already ended");
    while (!closed()) {
        try {
            step();
        } catch (const Error& e) {
            if (e.code() == ErrorCode::SessionClosed) throw;
            // Backend failure already recorded as a failed step.
        }
    }
    return transcript_;
}

void Session::abort() {
    if (closed()) throw Error(ErrorCode::SessionClosed, "session already ended");
    transcript_.terminal = Terminal::Aborted;
}

void Session::inject_fault(FaultSpec fault) {
    if (closed()) throw Error(ErrorCode::SessionClosed, "session already ended");
    transcript_.injected_faults.push_back({static_cast<int>(transcript_.steps.size()), fault});
    robot_.inject_fault(std::move(fault));
}

std::unique_ptr<Session> start_session(std::string instruction, std::shared_ptr<const KnowledgeIndex> index,
                                       std::vector<ApiSpec> registry, std::shared_ptr<LlmBackend> backend,
                                       RobotSimulator robot, SessionOptions options) {
    return std::make_unique<Session>(std::move(instruction), std::move(index), std::move(registry), std::move(backend),
                                     std::move(robot), std::move(options));
}

SessionTranscript replay_transcript(const SessionTranscript& transcript, std::shared_ptr<const KnowledgeIndex> index,
                                    std::vector<ApiSpec> registry, SessionOptions options) {
    std::vector<std::string> turns;
    for (const auto& s : transcript.steps) {
        if (s.backend_error) throw Error(ErrorCode::InvalidInput, "cannot replay a step whose backend failed");
        turns.push_back(s.turn_text);
    }
    RobotState state = initial_robot_state(transcript.robot_seed);
    for (const auto& f : transcript.initial_faults) state.pending_faults.push_back(f);

    options.engine.max_steps = std::max(options.engine.max_steps, static_cast<int>(turns.size()));
    auto session = start_session(transcript.instruction, std::move(index), std::move(registry),
                                 std::make_shared<ScriptedBackend>(std::move(turns)), RobotSimulator(std::move(state)),
                                 std::move(options));
    std::size_t next_injection = 0;
    const auto& injected = transcript.injected_faults;
    for (std::size_t i = 0; i < transcript.steps.size() && !session->closed(); ++i) {
        while (next_injection < injected.size() && injected[next_injection].after_step == static_cast<int>(i)) {
            session->inject_fault(injected[next_injection++].fault);
        }
        session->step();
    }
    return session->transcript();
}

nlohmann::json to_json(const CycleStep& step) {
    nlohmann::json j = {{"index", step.index},
                        {"observation_in", optional_json(step.observation_in)},
                        {"turn", step.turn_text},
                        {"thought", step.thought},
                        {"outcome", step.outcome ? to_json(*step.outcome) : nlohmann::json()},
                        {"action_result", optional_json(step.action_result)},
                        {"feedback", optional_json(step.feedback)},
                        {"failed", step.failed},
                        {"consecutive_failures", step.consecutive_failures},
                        {"phase_after", std::string(to_string(step.phase_after))}};
    if (step.backend_error) j["backend_error"] = *step.backend_error;
    return j;
}

nlohmann::json to_json(const SessionTranscript& t) {
    nlohmann::json retrieval_items = nlohmann::json::array();
    for (const auto& r : t.retrieval) {
        retrieval_items.push_back({{"key", r.key}, {"kind", std::string(to_string(r.kind))}, {"score", r.score}, {"label", r.label}});
    }
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : t.steps) steps.push_back(to_json(s));
    nlohmann::json initial = nlohmann::json::array();
    for (const auto& f : t.initial_faults) initial.push_back(to_json(f));
    nlohmann::json injected = nlohmann::json::array();
    for (const auto& f : t.injected_faults) injected.push_back({{"after_step", f.after_step}, {"fault", to_json(f.fault)}});

    return {{"instruction", t.instruction},
            {"retrieval",
             {{"items", retrieval_items},
              {"api_names", t.retrieved_api_names},
              {"procedure_ids", t.retrieved_procedure_ids}}},
            {"prompt",
             {{"system_text", t.prompt.system_text},
              {"user_text", t.prompt.user_text},
              {"included_api_names", t.prompt.included_api_names},
              {"included_procedure_ids", t.prompt.included_procedure_ids}}},
            {"steps", steps},
            {"terminal", t.terminal ? nlohmann::json(std::string(to_string(*t.terminal))) : nlohmann::json()},
            {"goal", t.goal},
            {"robot_seed", t.robot_seed},
            {"initial_faults", initial},
            {"injected_faults", injected},
            {"max_steps", t.max_steps},
            {"error_threshold", t.error_threshold}};
}

}  // namespace sonoagent
