#include "sonoagent/eval_harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <future>
#include <numeric>
#include <random>

#include "jsonl.hpp"
#include "sonoagent/errors.hpp"

namespace sonoagent {

namespace {

struct TargetWords {
    std::string label;  // lower case, used mid-sentence
    std::string title;
};

const std::array<TargetWords, 3> kTargets{{
    {"carotid artery", "Carotid artery"},
    {"lumbar spine", "Lumbar spine"},
    {"rib cage", "Rib cage"},
}};

// Index order of the registry APIs.
const std::array<std::string, 7> kApiTasks{
    "initialize the depth camera",
    "display the artery model",
    "activate the robotic arm",
    "start the ultrasound scan",
    "segment the target region in the ultrasound image",
    "generate the diagnostic report",
    "print the finished report",
};

const std::array<std::string, 8> kSettings{
    "the patient is lying supine",
    "a new examination is starting",
    "the operator has positioned the patient",
    "a follow-up visit is underway",
    "the probe has just been cleaned",
    "the clinic opens the morning list",
    "a screening campaign is running",
    "the previous session was interrupted",
};

const std::array<std::string, 4> kPurposes{
    "so the workflow stays on schedule",
    "before the physician reviews the case",
    "as the attending doctor requested",
    "so the findings are documented",
};

constexpr int kContexts = static_cast<int>(kSettings.size() * kPurposes.size());

// Slots: {api} {task} {target} {setting} {purpose}
const std::array<std::string, 4> kUsageTemplates{
    "{api} is used to {task} for a {target} examination when {setting}, {purpose}.",
    "When {setting}, call {api} to {task} during the {target} study {purpose}.",
    "To {task} in a {target} session, invoke {api}; this applies when {setting}, {purpose}.",
    "{api}: {task} for the {target} scan if {setting}, {purpose}.",
};

const std::array<std::string, 6> kInstructionTemplates{
    "Perform a {target} ultrasound scan while {setting}, {purpose}.",
    "Carry out an ultrasound examination of the {target} when {setting}, {purpose}.",
    "Run a robotic {target} ultrasound now that {setting}, {purpose}.",
    "Scan the patient's {target} with ultrasound; {setting}, {purpose}.",
    "Do a {target} sonography session while {setting}, {purpose}.",
    "Start an ultrasound study of the {target} as {setting}, {purpose}.",
};

// Query-side phrasings. Never used for index text.
const std::array<std::string, 4> kUsageQueryTemplates{
    "How do I {task} on the {target} while {setting}?",
    "Which API lets me {task} for the {target} exam, {purpose}?",
    "I want to {task} during a {target} procedure; {setting}.",
    "Need to {task} ({target}), {purpose}.",
};

const std::array<std::string, 4> kInstructionQueryTemplates{
    "Please image the {target} with the ultrasound robot; {setting}.",
    "I need an ultrasound of the {target}, {purpose}.",
    "Could you examine the {target} by ultrasound since {setting}?",
    "Begin {target} ultrasound imaging, {purpose}.",
};

// Handbook step wording, one bank per golden-sequence position. Each
// variant carries exactly one phrase-table keyword for its API.
const std::array<std::array<std::string, 3>, 7> kStepVariants{{
    {"initialize the depth camera", "power on the depth camera", "switch on the depth camera"},
    {"display the artery model", "show the 3D artery model on screen", "bring up the vascular model"},
    {"activate the robotic arm", "enable the robot", "power up the robotic arm"},
    {"start the {target} scan", "sweep the probe over the {target}", "acquire ultrasound frames of the {target}"},
    {"segment the {target} in the image", "run segmentation on the {target} image", "segment the region of interest"},
    {"generate the report", "compile a diagnostic report", "write up the findings report"},
    {"print the report", "print a paper copy", "send the report to print"},
}};

struct Slots {
    std::string api;
    std::string task;
    std::string target;
    std::string setting;
    std::string purpose;
};

std::string fill(std::string text, const Slots& slots) {
    const std::array<std::pair<std::string_view, const std::string*>, 5> table{{
        {"{api}", &slots.api},
        {"{task}", &slots.task},
        {"{target}", &slots.target},
        {"{setting}", &slots.setting},
        {"{purpose}", &slots.purpose},
    }};
    for (const auto& [name, value] : table) {
        for (auto pos = text.find(name); pos != std::string::npos; pos = text.find(name, pos + value->size())) {
            text.replace(pos, name.size(), *value);
        }
    }
    return text;
}

Slots context_slots(int target, int context) {
    Slots s;
    s.target = kTargets[target].label;
    s.setting = kSettings[context / kPurposes.size()];
    s.purpose = kPurposes[context % kPurposes.size()];
    return s;
}

struct UsageCombo {
    int api, target, context;
};

struct HandbookCombo {
    int target, tmpl, context;
};

void check_count(int requested, std::size_t available, const char* what) {
    if (requested < 0) throw Error(ErrorCode::InvalidInput, std::string(what) + " count is negative");
    if (static_cast<std::size_t>(requested) > available) {
        throw Error(ErrorCode::InsufficientTemplates, std::string(what) + ": requested " + std::to_string(requested) +
                                                          ", template banks provide " + std::to_string(available));
    }
}

std::string handbook_text(int target, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pick(0, 2);
    std::array<std::string, 7> steps;
    Slots slots;
    slots.target = kTargets[target].label;
    for (std::size_t i = 0; i < steps.size(); ++i) steps[i] = fill(kStepVariants[i][pick(rng)], slots);
    return kTargets[target].title + " ultrasound procedure: " + steps[0] + ", " + steps[1] + ", " + steps[2] + ", " +
           steps[3] + ", " + steps[4] + ", then " + steps[5] + " and " + steps[6] + ".";
}

std::string procedure_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "proc-%04zu", i + 1);
    return buf;
}

}  // namespace

SynthDataset synthesize_dataset(const SynthDatasetSpec& spec) {
    SynthDataset out;
    out.registry = default_registry();
    if (out.registry.size() != kApiTasks.size()) {
        throw Error(ErrorCode::InsufficientTemplates, "task bank does not cover the registry");
    }

    std::vector<UsageCombo> usage_combos;
    for (int a = 0; a < static_cast<int>(kApiTasks.size()); ++a)
        for (int t = 0; t < static_cast<int>(kTargets.size()); ++t)
            for (int c = 0; c < kContexts; ++c) usage_combos.push_back({a, t, c});
    std::vector<HandbookCombo> handbook_combos;
    for (int t = 0; t < static_cast<int>(kTargets.size()); ++t)
        for (int i = 0; i < static_cast<int>(kInstructionTemplates.size()); ++i)
            for (int c = 0; c < kContexts; ++c) handbook_combos.push_back({t, i, c});

    check_count(spec.n_api, usage_combos.size(), "api usage records");
    check_count(spec.n_handbook, handbook_combos.size(), "handbook entries");
    if (spec.n_eval_per_module < 0) throw Error(ErrorCode::InvalidInput, "eval pair count is negative");
    // Small datasets get fewer eval pairs rather than an error.
    const int n_uar = std::min(spec.n_eval_per_module, spec.n_api);
    const int n_rhr = std::min(spec.n_eval_per_module, spec.n_handbook);

    std::mt19937_64 rng(spec.seed);
    std::shuffle(usage_combos.begin(), usage_combos.end(), rng);
    std::shuffle(handbook_combos.begin(), handbook_combos.end(), rng);
    usage_combos.resize(spec.n_api);
    handbook_combos.resize(spec.n_handbook);

    std::uniform_int_distribution<int> pick_usage(0, static_cast<int>(kUsageTemplates.size()) - 1);
    for (const auto& combo : usage_combos) {
        Slots s = context_slots(combo.target, combo.context);
        s.api = out.registry[combo.api].name;
        s.task = kApiTasks[combo.api];
        out.usage.push_back({s.api, fill(kUsageTemplates[pick_usage(rng)], s)});
    }
    for (std::size_t i = 0; i < handbook_combos.size(); ++i) {
        const auto& combo = handbook_combos[i];
        const Slots s = context_slots(combo.target, combo.context);
        out.handbook.push_back(
            {procedure_id(i), fill(kInstructionTemplates[combo.tmpl], s), handbook_text(combo.target, rng)});
    }

    std::vector<std::size_t> order(usage_combos.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<int> pick_uq(0, static_cast<int>(kUsageQueryTemplates.size()) - 1);
    for (int n = 0; n < n_uar; ++n) {
        const std::size_t i = order[n];
        Slots s = context_slots(usage_combos[i].target, usage_combos[i].context);
        s.task = kApiTasks[usage_combos[i].api];
        out.eval_pairs.push_back({"uar", {fill(kUsageQueryTemplates[pick_uq(rng)], s), api_usage_key(i)}});
    }

    order.resize(handbook_combos.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<int> pick_hq(0, static_cast<int>(kInstructionQueryTemplates.size()) - 1);
    for (int n = 0; n < n_rhr; ++n) {
        const std::size_t i = order[n];
        const Slots s = context_slots(handbook_combos[i].target, handbook_combos[i].context);
        out.eval_pairs.push_back({"rhr", {fill(kInstructionQueryTemplates[pick_hq(rng)], s), procedure_id(i)}});
    }
    return out;
}

void write_dataset(const SynthDataset& dataset, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_api_specs(dir / "api_specs.jsonl", dataset.registry);
    write_api_usage(dir / "api_usage.jsonl", dataset.usage);
    write_handbook(dir / "handbook.jsonl", dataset.handbook);
    write_eval_pairs(dir / "eval_pairs.jsonl", dataset.eval_pairs);
}

std::vector<EvalPairRow> load_eval_pairs(const std::filesystem::path& path) {
    std::vector<EvalPairRow> rows;
    for (const auto& j : detail::read_jsonl(path)) {
        for (const char* name : {"module", "query", "gold_key"}) {
            if (!j.contains(name) || !j.at(name).is_string()) {
                throw Error(ErrorCode::DatasetFormat, path.string() + ": missing string field '" + name + "'");
            }
        }
        rows.push_back({j["module"].get<std::string>(), {j["query"].get<std::string>(), j["gold_key"].get<std::string>()}});
    }
    return rows;
}

void write_eval_pairs(const std::filesystem::path& path, std::span<const EvalPairRow> rows) {
    std::vector<nlohmann::json> out;
    for (const auto& r : rows) out.push_back({{"module", r.module}, {"query", r.pair.query}, {"gold_key", r.pair.gold_key}});
    detail::write_jsonl(path, out);
}

std::span<const std::string> carotid_instruction_paraphrases() {
    static const std::array<std::string, 5> phrasings{
        "Perform a carotid artery ultrasound scan",
        "Please image the carotid artery with the ultrasound robot",
        "I need an ultrasound of the carotid artery",
        "Could you examine the carotid artery by ultrasound",
        "Begin carotid artery ultrasound imaging",
    };
    return phrasings;
}

std::shared_ptr<const KnowledgeIndex> build_index(const KnowledgeDataset& dataset,
                                                  std::shared_ptr<const Embedder> embedder) {
    dataset.validate();
    return std::make_shared<const KnowledgeIndex>(KnowledgeIndex::build(dataset.entries(), std::move(embedder)));
}

std::vector<RetrievalRow> eval_retrieval(const KnowledgeIndex& index, std::span<const EvalPairRow> pairs,
                                         std::span<const int> ks) {
    if (pairs.empty()) throw Error(ErrorCode::InvalidInput, "no evaluation pairs");
    if (ks.empty()) throw Error(ErrorCode::InvalidInput, "no k values");
    std::vector<std::string> modules;
    for (const auto& p : pairs) {
        if (p.module != "uar" && p.module != "rhr") {
            throw Error(ErrorCode::InvalidInput, "unknown eval module '" + p.module + "'");
        }
        if (std::find(modules.begin(), modules.end(), p.module) == modules.end()) modules.push_back(p.module);
    }
    std::vector<RetrievalRow> rows;
    for (const auto& module : modules) {
        std::vector<EvalPair> subset;
        for (const auto& p : pairs) {
            if (p.module == module) subset.push_back(p.pair);
        }
        const EntryKind kind = module == "uar" ? EntryKind::ApiUsage : EntryKind::Handbook;
        for (int k : ks) rows.push_back({module, k, recall_at_k(index, subset, k, kind), subset.size()});
    }
    return rows;
}

nlohmann::json to_json(const RetrievalRow& row) {
    return {{"module", row.module}, {"k", row.k}, {"recall", row.recall}, {"queries", row.queries}};
}

std::string_view to_string(BackendKind kind) {
    switch (kind) {
        case BackendKind::Scripted: return "scripted";
        case BackendKind::Rule: return "rule";
        case BackendKind::Remote: return "remote";
    }
    return "unknown";
}

std::optional<BackendKind> backend_kind_from_string(std::string_view name) {
    for (auto k : {BackendKind::Scripted, BackendKind::Rule, BackendKind::Remote}) {
        if (to_string(k) == name) return k;
    }
    return std::nullopt;
}

int percent_half_up(double rate) { return static_cast<int>(std::floor(rate * 100.0 + 0.5)); }

int ExecMetrics::first_step_percent() const { return percent_half_up(first_step_rate); }
int ExecMetrics::overall_percent() const { return percent_half_up(overall_rate); }

bool first_step_succeeded(const SessionTranscript& transcript) {
    for (const auto& step : transcript.steps) {
        if (step.outcome && step.outcome->is_call()) return step.action_result && step.action_result->ok;
    }
    return false;
}

nlohmann::json to_json(const ReplicationRecord& r) {
    return {{"replication", r.replication},
            {"seed", r.seed},
            {"instruction", r.instruction},
            {"first_step_success", r.first_step_success},
            {"overall_success", r.overall_success},
            {"terminal", std::string(to_string(r.terminal))},
            {"steps", r.steps}};
}

nlohmann::json to_json(const ExecMetrics& m) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : m.records) records.push_back(to_json(r));
    return {{"replications", m.replications},
            {"first_step_successes", m.first_step_successes},
            {"overall_successes", m.overall_successes},
            {"first_step_rate", m.first_step_rate},
            {"overall_rate", m.overall_rate},
            {"first_step_percent", m.first_step_percent()},
            {"overall_percent", m.overall_percent()},
            {"provenance", m.provenance},
            {"records", records}};
}

ExecMetrics eval_execution(const ExecEvalSpec& spec, std::shared_ptr<const KnowledgeIndex> index,
                           std::vector<ApiSpec> registry) {
    if (spec.replications < 1) throw Error(ErrorCode::InvalidInput, "replications must be at least 1");
    if (spec.backend == BackendKind::Remote && spec.remote.endpoint.empty()) {
        throw Error(ErrorCode::BackendUnavailable, "no remote chat endpoint configured");
    }

    auto run_one = [&](int r) {
        ReplicationRecord record;
        record.replication = r;
        record.seed = spec.base_seed + static_cast<std::uint64_t>(r);
        const auto phrasings = carotid_instruction_paraphrases();
        record.instruction = spec.paraphrase ? phrasings[r % phrasings.size()] : spec.instruction;

        std::shared_ptr<LlmBackend> backend;
        switch (spec.backend) {
            case BackendKind::Scripted: backend = std::make_shared<ScriptedBackend>(spec.script); break;
            case BackendKind::Rule: backend = std::make_shared<RulePolicyBackend>(); break;
            case BackendKind::Remote: backend = std::make_shared<RemoteChatBackend>(spec.remote); break;
        }
        RobotState state = initial_robot_state(record.seed);
        for (const auto& f : spec.faults) state.pending_faults.push_back(f);

        SessionOptions options = spec.options;
        options.retrieval = RetrievalConfig::for_ablation(spec.ablation);
        auto session = start_session(record.instruction, index, registry, std::move(backend),
                                     RobotSimulator(std::move(state)), std::move(options));
        const auto& transcript = session->run_to_completion();
        record.first_step_success = first_step_succeeded(transcript);
        record.terminal = *transcript.terminal;
        record.overall_success = record.terminal == Terminal::Completed;
        record.steps = static_cast<int>(transcript.steps.size());
        return record;
    };

    ExecMetrics metrics;
    metrics.replications = spec.replications;
    if (spec.parallel) {
        std::vector<std::future<ReplicationRecord>> futures;
        for (int r = 0; r < spec.replications; ++r) futures.push_back(std::async(std::launch::async, run_one, r));
        for (auto& f : futures) metrics.records.push_back(f.get());
    } else {
        for (int r = 0; r < spec.replications; ++r) metrics.records.push_back(run_one(r));
    }
    for (const auto& r : metrics.records) {
        metrics.first_step_successes += r.first_step_success ? 1 : 0;
        metrics.overall_successes += r.overall_success ? 1 : 0;
    }
    metrics.first_step_rate = static_cast<double>(metrics.first_step_successes) / metrics.replications;
    metrics.overall_rate = static_cast<double>(metrics.overall_successes) / metrics.replications;

    switch (spec.backend) {
        case BackendKind::Scripted: metrics.provenance = "scripted (deterministic)"; break;
        case BackendKind::Rule: metrics.provenance = "rule-policy (deterministic)"; break;
        case BackendKind::Remote:
            metrics.provenance =
                "remote endpoint=" + spec.remote.endpoint + " model=" + spec.remote.model + " (non-reproducible)";
            break;
    }
    return metrics;
}

}  // namespace sonoagent
