// sonoagent: dataset synthesis, retrieval and execution evaluation, single
// sessions and the HTTP session service.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sonoagent/errors.hpp"
#include "sonoagent/eval_harness.hpp"
#include "sonoagent/json_util.hpp"
#include "sonoagent/session_service.hpp"

namespace fs = std::filesystem;
using namespace sonoagent;

namespace {

struct KnowledgeOptions {
    std::string data_dir;  // empty: synthesize in memory
    std::uint64_t synth_seed = 7;
    std::string embedder = "hash";
    int dimension = 256;
};

void add_knowledge_options(CLI::App* cmd, KnowledgeOptions& opts, const char* dir_flag = "--data") {
    cmd->add_option(dir_flag, opts.data_dir,
                    "Directory with api_specs.jsonl, api_usage.jsonl, handbook.jsonl (default: synthesize in memory)");
    cmd->add_option("--synth-seed", opts.synth_seed, "Seed for the in-memory dataset")->capture_default_str();
    cmd->add_option("--embedder", opts.embedder, "hash or remote (EMBEDDING_* environment)")
        ->check(CLI::IsMember({"hash", "remote"}))
        ->capture_default_str();
    cmd->add_option("--dim", opts.dimension, "Hash embedder dimension")->capture_default_str();
}

std::shared_ptr<const Embedder> make_embedder(const KnowledgeOptions& opts) {
    if (opts.embedder == "remote") {
        return std::make_shared<RemoteEmbedder>(RemoteEmbedderConfig::from_environment());
    }
    return std::make_shared<HashEmbedder>(opts.dimension);
}

KnowledgeDataset knowledge_dataset(const KnowledgeOptions& opts) {
    if (!opts.data_dir.empty()) return load_dataset(opts.data_dir);
    SynthDatasetSpec spec;
    spec.seed = opts.synth_seed;
    auto synth = synthesize_dataset(spec);
    return {std::move(synth.registry), std::move(synth.usage), std::move(synth.handbook)};
}

// "patient_motion@4" fires after four invocations; "api_failure:Image_Seg"
// fires on that API.
FaultSpec parse_fault(const std::string& text) {
    const auto at = text.find('@');
    const auto colon = text.find(':');
    const auto cut = std::min(at, colon);
    const auto kind = fault_kind_from_string(text.substr(0, cut));
    if (!kind) throw Error(ErrorCode::InvalidInput, "unknown fault kind in '" + text + "'");
    if (cut == std::string::npos) return FaultSpec::after(*kind, 0);
    const std::string rest = text.substr(cut + 1);
    if (cut == colon) return FaultSpec::on(*kind, rest);
    try {
        return FaultSpec::after(*kind, std::stoi(rest));
    } catch (const std::exception&) {
        throw Error(ErrorCode::InvalidInput, "bad invocation count in '" + text + "'");
    }
}

std::vector<FaultSpec> parse_faults(const std::vector<std::string>& texts) {
    std::vector<FaultSpec> faults;
    for (const auto& t : texts) faults.push_back(parse_fault(t));
    return faults;
}

std::string fixed(double v, int digits) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(digits) << v;
    return out.str();
}

void print_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& r : rows)
        for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            std::cout << std::left << std::setw(static_cast<int>(width[c]) + 2) << cells[c];
        }
        std::cout << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
}

int cmd_synth(const SynthDatasetSpec& spec, const std::string& out) {
    const auto dataset = synthesize_dataset(spec);
    write_dataset(dataset, out);
    print_table({"file", "lines"},
                {{"api_specs.jsonl", std::to_string(dataset.registry.size())},
                 {"api_usage.jsonl", std::to_string(dataset.usage.size())},
                 {"handbook.jsonl", std::to_string(dataset.handbook.size())},
                 {"eval_pairs.jsonl", std::to_string(dataset.eval_pairs.size())}});
    std::cout << dump_json({{"out", out},
                            {"seed", spec.seed},
                            {"api_usage", dataset.usage.size()},
                            {"handbook", dataset.handbook.size()},
                            {"eval_pairs", dataset.eval_pairs.size()}})
              << '\n';
    return 0;
}

int cmd_eval_retrieval(const KnowledgeOptions& opts, std::string pairs_path, const std::vector<int>& ks) {
    if (pairs_path.empty()) {
        if (opts.data_dir.empty()) throw Error(ErrorCode::InvalidInput, "--pairs is required without --index");
        pairs_path = (fs::path(opts.data_dir) / "eval_pairs.jsonl").string();
    }
    const auto index = build_index(knowledge_dataset(opts), make_embedder(opts));
    const auto pairs = load_eval_pairs(pairs_path);
    const auto rows = eval_retrieval(*index, pairs, ks);
    std::vector<std::vector<std::string>> table;
    for (const auto& r : rows) {
        table.push_back({r.module, std::to_string(r.k), fixed(r.recall, 4), std::to_string(r.queries)});
    }
    print_table({"module", "k", "recall", "queries"}, table);
    for (const auto& r : rows) {
        auto j = to_json(r);
        j["embedder"] = index->embedder()->name();
        std::cout << dump_json(j) << '\n';
    }
    return 0;
}

struct ExecOptions {
    std::string backend = "rule";
    std::string ablation = "uar+rhr";
    int reps = 20;
    std::uint64_t seed = 0;
    std::string instruction = "Perform a carotid artery ultrasound scan";
    bool paraphrase = false;
    bool serial = false;
    std::vector<std::string> faults;
    std::string script;
    int max_steps = 20;
    int error_threshold = 3;
};

void add_exec_options(CLI::App* cmd, ExecOptions& opts) {
    cmd->add_option("--backend", opts.backend, "scripted, rule or remote (LLM_* environment)")
        ->check(CLI::IsMember({"scripted", "rule", "remote"}))
        ->capture_default_str();
    cmd->add_option("--ablation", opts.ablation, "none, uar or uar+rhr")
        ->check(CLI::IsMember({"none", "uar", "uar+rhr"}))
        ->capture_default_str();
    cmd->add_option("--seed", opts.seed, "Robot seed (replication r uses seed + r)")->capture_default_str();
    cmd->add_option("--instruction", opts.instruction, "Operator instruction")->capture_default_str();
    cmd->add_option("--fault", opts.faults, "kind@N (after N invocations) or kind:Api; repeatable");
    cmd->add_option("--script", opts.script, "JSON array of turns for the scripted backend");
    cmd->add_option("--max-steps", opts.max_steps)->capture_default_str();
    cmd->add_option("--error-threshold", opts.error_threshold)->capture_default_str();
}

ExecEvalSpec exec_spec(const ExecOptions& opts) {
    ExecEvalSpec spec;
    spec.backend = *backend_kind_from_string(opts.backend);
    spec.ablation = *ablation_from_string(opts.ablation);
    spec.replications = opts.reps;
    spec.base_seed = opts.seed;
    spec.instruction = opts.instruction;
    spec.paraphrase = opts.paraphrase;
    spec.parallel = !opts.serial;
    spec.faults = parse_faults(opts.faults);
    if (!opts.script.empty()) spec.script = ScriptedBackend::load_script(opts.script);
    spec.remote = RemoteChatConfig::from_environment();
    spec.options.engine.max_steps = opts.max_steps;
    spec.options.engine.error_threshold = opts.error_threshold;
    return spec;
}

int cmd_eval_exec(const KnowledgeOptions& kopts, const ExecOptions& opts) {
    const auto dataset = knowledge_dataset(kopts);
    const auto index = build_index(dataset, make_embedder(kopts));
    const auto metrics = eval_execution(exec_spec(opts), index, dataset.registry);
    print_table({"backend", "ablation", "reps", "first_step_%", "overall_%"},
                {{opts.backend, opts.ablation, std::to_string(metrics.replications),
                  std::to_string(metrics.first_step_percent()), std::to_string(metrics.overall_percent())}});
    for (const auto& r : metrics.records) std::cout << dump_json(to_json(r)) << '\n';
    auto summary = to_json(metrics);
    summary.erase("records");
    summary["backend"] = opts.backend;
    summary["ablation"] = opts.ablation;
    std::cout << dump_json(summary) << '\n';
    return 0;
}

int cmd_run(const KnowledgeOptions& kopts, const ExecOptions& opts, bool json_only) {
    const auto dataset = knowledge_dataset(kopts);
    const auto index = build_index(dataset, make_embedder(kopts));
    const auto spec = exec_spec(opts);

    std::shared_ptr<LlmBackend> backend;
    switch (spec.backend) {
        case BackendKind::Scripted: backend = std::make_shared<ScriptedBackend>(spec.script); break;
        case BackendKind::Rule: backend = std::make_shared<RulePolicyBackend>(); break;
        case BackendKind::Remote: backend = std::make_shared<RemoteChatBackend>(spec.remote); break;
    }
    RobotState state = initial_robot_state(spec.base_seed);
    for (const auto& f : spec.faults) state.pending_faults.push_back(f);
    SessionOptions options = spec.options;
    options.retrieval = RetrievalConfig::for_ablation(spec.ablation);
    auto session = start_session(spec.instruction, index, dataset.registry, backend, RobotSimulator(std::move(state)),
                                 options);
    const auto& transcript = session->run_to_completion();
    if (json_only) {
        std::cout << dump_json(to_json(transcript), 2) << '\n';
        return 0;
    }
    std::vector<std::vector<std::string>> table;
    for (const auto& s : transcript.steps) {
        std::string action = "-";
        if (s.outcome && s.outcome->is_call()) {
            action = s.outcome->call().api_name;
        } else if (s.outcome) {
            action = "(" + std::string(s.outcome->variant_name()) + ")";
        } else if (s.backend_error) {
            action = "(backend error)";
        }
        std::string result = s.feedback ? s.feedback->message : "";
        if (const auto nl = result.find('\n'); nl != std::string::npos) result = result.substr(0, nl);
        table.push_back({std::to_string(s.index), action, s.failed ? "fail" : "ok",
                         std::string(to_string(s.phase_after)), result});
    }
    std::cout << "instruction: " << transcript.instruction << '\n';
    std::cout << "retrieved apis:";
    for (const auto& a : transcript.retrieved_api_names) std::cout << ' ' << a;
    std::cout << "\nretrieved procedure:";
    for (const auto& p : transcript.retrieved_procedure_ids) std::cout << ' ' << p;
    std::cout << "\n\n";
    print_table({"step", "action", "status", "phase", "observation"}, table);
    std::cout << "\nterminal: " << to_string(*transcript.terminal) << '\n';
    std::cout << dump_json({{"terminal", std::string(to_string(*transcript.terminal))},
                            {"steps", transcript.steps.size()},
                            {"first_step_success", first_step_succeeded(transcript)}})
              << '\n';
    return 0;
}

int cmd_serve(const KnowledgeOptions& kopts, const std::string& host, int port, int delay_ms,
              const std::string& transcripts) {
    const auto dataset = knowledge_dataset(kopts);
    const auto index = build_index(dataset, make_embedder(kopts));
    ServiceConfig config;
    config.remote = RemoteChatConfig::from_environment();
    config.default_step_delay_ms = delay_ms;
    if (!transcripts.empty()) config.transcript_dir = transcripts;
    auto manager = std::make_shared<SessionManager>(index, dataset.registry, config);
    SessionServer server(manager);
    std::cerr << "listening on http://" << host << ':' << port << '\n';
    if (!server.listen(host, port)) {
        std::cerr << "cannot listen on " << host << ':' << port << '\n';
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sonoagent: retrieval-grounded agent for a simulated ultrasound robot"};
    app.require_subcommand(1);

    SynthDatasetSpec synth_spec;
    std::string synth_out = "data";
    auto* synth = app.add_subcommand("synth", "Write a synthetic knowledge dataset");
    synth->add_option("--seed", synth_spec.seed)->capture_default_str();
    synth->add_option("--n-api", synth_spec.n_api)->capture_default_str();
    synth->add_option("--n-handbook", synth_spec.n_handbook)->capture_default_str();
    synth->add_option("--n-eval", synth_spec.n_eval_per_module, "Eval pairs per module")->capture_default_str();
    synth->add_option("--out", synth_out)->capture_default_str();

    KnowledgeOptions retrieval_kopts;
    std::string pairs_path;
    std::vector<int> ks{1, 3, 10};
    auto* eval_retr = app.add_subcommand("eval-retrieval", "Recall@k per retrieval module");
    add_knowledge_options(eval_retr, retrieval_kopts, "--index,--data");
    eval_retr->add_option("--pairs", pairs_path, "eval_pairs.jsonl (default: <index>/eval_pairs.jsonl)");
    eval_retr->add_option("--k", ks)->delimiter(',')->capture_default_str();

    KnowledgeOptions exec_kopts;
    ExecOptions exec_opts;
    auto* eval_exec = app.add_subcommand("eval-exec", "First-step and overall success over replications");
    add_knowledge_options(eval_exec, exec_kopts);
    add_exec_options(eval_exec, exec_opts);
    eval_exec->add_option("--reps", exec_opts.reps)->capture_default_str();
    eval_exec->add_flag("--paraphrase", exec_opts.paraphrase, "Rotate held-out instruction phrasings");
    eval_exec->add_flag("--serial", exec_opts.serial, "Run replications one at a time");

    KnowledgeOptions run_kopts;
    ExecOptions run_opts;
    bool run_json = false;
    auto* run = app.add_subcommand("run", "Run one session and print its transcript");
    add_knowledge_options(run, run_kopts);
    add_exec_options(run, run_opts);
    run->add_flag("--json", run_json, "Print the full transcript as JSON");

    KnowledgeOptions serve_kopts;
    std::string host = "127.0.0.1";
    int port = 8080;
    int delay_ms = 250;
    std::string transcripts;
    auto* serve = app.add_subcommand("serve", "Start the HTTP session service");
    add_knowledge_options(serve, serve_kopts);
    serve->add_option("--host", host)->capture_default_str();
    serve->add_option("--port", port)->capture_default_str();
    serve->add_option("--step-delay-ms", delay_ms, "Pause between auto-mode steps")->capture_default_str();
    serve->add_option("--transcripts", transcripts, "Write closed transcripts to this directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) return cmd_synth(synth_spec, synth_out);
        if (*eval_retr) return cmd_eval_retrieval(retrieval_kopts, pairs_path, ks);
        if (*eval_exec) return cmd_eval_exec(exec_kopts, exec_opts);
        if (*run) return cmd_run(run_kopts, run_opts, run_json);
        if (*serve) return cmd_serve(serve_kopts, host, port, delay_ms, transcripts);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
