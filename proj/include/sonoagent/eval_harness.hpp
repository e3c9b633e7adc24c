#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sonoagent/execution_engine.hpp"
#include "sonoagent/knowledge_store.hpp"

namespace sonoagent {

struct SynthDatasetSpec {
    std::uint64_t seed = 7;
    int n_api = 622;
    int n_handbook = 522;
    int n_eval_per_module = 100;
};

/// One line of eval_pairs.jsonl. module is "uar" or "rhr".
struct EvalPairRow {
    std::string module;
    EvalPair pair;
};

struct SynthDataset {
    std::vector<ApiSpec> registry;
    std::vector<ApiUsageRecord> usage;
    std::vector<HandbookEntry> handbook;
    std::vector<EvalPairRow> eval_pairs;
};

/// Deterministic in `spec`. Eval queries come from phrasing banks that are
/// never used for index text. Throws Error(InsufficientTemplates) when a
/// requested count exceeds the distinct combinations available, and
/// Error(InvalidInput) for negative counts.
SynthDataset synthesize_dataset(const SynthDatasetSpec& spec);

/// Writes api_specs.jsonl, api_usage.jsonl, handbook.jsonl, eval_pairs.jsonl.
void write_dataset(const SynthDataset& dataset, const std::filesystem::path& dir);

std::vector<EvalPairRow> load_eval_pairs(const std::filesystem::path& path);
void write_eval_pairs(const std::filesystem::path& path, std::span<const EvalPairRow> rows);

/// Held-out instruction phrasings for a carotid exam (for --paraphrase).
std::span<const std::string> carotid_instruction_paraphrases();

std::shared_ptr<const KnowledgeIndex> build_index(const KnowledgeDataset& dataset,
                                                  std::shared_ptr<const Embedder> embedder);

struct RetrievalRow {
    std::string module;
    int k = 0;
    double recall = 0.0;
    std::size_t queries = 0;
};

/// One row per (module, k), modules in first-seen order. Throws
/// Error(InvalidInput) for empty pairs or an unknown module.
std::vector<RetrievalRow> eval_retrieval(const KnowledgeIndex& index, std::span<const EvalPairRow> pairs,
                                         std::span<const int> ks);

nlohmann::json to_json(const RetrievalRow& row);

enum class BackendKind { Scripted, Rule, Remote };
std::string_view to_string(BackendKind kind);
std::optional<BackendKind> backend_kind_from_string(std::string_view name);

struct ExecEvalSpec {
    BackendKind backend = BackendKind::Rule;
    Ablation ablation = Ablation::UarRhr;
    int replications = 20;
    std::uint64_t base_seed = 0;  // replication r uses base_seed + r
    std::string instruction = "Perform a carotid artery ultrasound scan";
    bool paraphrase = false;      // rotate through held-out phrasings instead
    std::vector<FaultSpec> faults;
    std::vector<std::string> script;  // scripted backend turns, reused per replication
    RemoteChatConfig remote;
    SessionOptions options;           // retrieval is overridden by `ablation`
    bool parallel = true;
};

struct ReplicationRecord {
    int replication = 0;
    std::uint64_t seed = 0;
    std::string instruction;
    bool first_step_success = false;
    bool overall_success = false;
    Terminal terminal = Terminal::Aborted;
    int steps = 0;
};

struct ExecMetrics {
    int replications = 0;
    int first_step_successes = 0;
    int overall_successes = 0;
    double first_step_rate = 0.0;
    double overall_rate = 0.0;
    std::vector<ReplicationRecord> records;  // in replication order
    std::string provenance;

    int first_step_percent() const;
    int overall_percent() const;
};

nlohmann::json to_json(const ReplicationRecord& record);
nlohmann::json to_json(const ExecMetrics& metrics);

/// Rate as an integer percentage, halves rounded up.
int percent_half_up(double rate);

/// First call of the session validated and executed with ok=true.
bool first_step_succeeded(const SessionTranscript& transcript);

ExecMetrics eval_execution(const ExecEvalSpec& spec, std::shared_ptr<const KnowledgeIndex> index,
                           std::vector<ApiSpec> registry);

}  // namespace sonoagent
