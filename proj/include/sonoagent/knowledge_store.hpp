#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "sonoagent/api_spec.hpp"
#include "sonoagent/embedding.hpp"

namespace sonoagent {

struct ApiUsageRecord {
    std::string api_name;
    std::string usage_narrative;

    friend bool operator==(const ApiUsageRecord&, const ApiUsageRecord&) = default;
};

struct HandbookEntry {
    std::string procedure_id;
    std::string paired_instruction;  // query side; this is what gets embedded
    std::string handbook_text;

    friend bool operator==(const HandbookEntry&, const HandbookEntry&) = default;
};

enum class EntryKind { ApiUsage, Handbook };
std::string_view to_string(EntryKind kind);

using KnowledgePayload = std::variant<ApiUsageRecord, HandbookEntry>;

struct KnowledgeEntry {
    std::string key;
    EntryKind kind = EntryKind::ApiUsage;
    KnowledgePayload payload;

    /// Text that represents the entry in vector space.
    const std::string& embedded_text() const;
};

struct RetrievedEntry {
    std::string key;
    EntryKind kind = EntryKind::ApiUsage;
    double score = 0.0;
    const KnowledgePayload* payload = nullptr;  // owned by the index
};

/// Scores non-increasing, ties by ascending key, size <= requested k.
struct RetrievalResult {
    std::vector<RetrievedEntry> ranked;
};

/// Flat exact-search index over embedded knowledge entries. Immutable once
/// built, so any number of threads may retrieve from one instance.
class KnowledgeIndex {
public:
    using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    /// Embeds every entry with `embedder`. Throws Error(DuplicateKey) on a
    /// repeated key.
    static KnowledgeIndex build(std::vector<KnowledgeEntry> entries,
                                std::shared_ptr<const Embedder> embedder);

    /// Uses precomputed rows (one per entry). `embedder` may be null, in
    /// which case only vector queries work.
    static KnowledgeIndex from_vectors(std::vector<KnowledgeEntry> entries, Matrix vectors,
                                       std::shared_ptr<const Embedder> embedder = nullptr);

    int dimension() const { return static_cast<int>(vectors_.cols()); }
    std::size_t size() const { return entries_.size(); }
    std::span<const KnowledgeEntry> entries() const { return entries_; }
    const Matrix& vectors() const { return vectors_; }
    const Embedder* embedder() const { return embedder_.get(); }

    const KnowledgeEntry* find(std::string_view key) const;

private:
    KnowledgeIndex() = default;

    std::vector<KnowledgeEntry> entries_;
    Matrix vectors_;
    std::shared_ptr<const Embedder> embedder_;
    std::unordered_map<std::string, std::size_t> rows_by_key_;
};

/// Embeds `text` after checking it is non-empty.
EmbeddingVector embed_text(std::string_view text, const Embedder& embedder);

/// Exact top-k by cosine similarity. `filter` restricts to one entry kind.
/// Throws Error(InvalidInput) for k < 1, Error(EmptyIndex) when nothing
/// survives the filter, Error(ZeroVector) for a zero query.
RetrievalResult retrieve_top_k(const KnowledgeIndex& index, const EmbeddingVector& query, int k,
                               std::optional<EntryKind> filter = std::nullopt);
RetrievalResult retrieve_top_k(const KnowledgeIndex& index, std::string_view query_text, int k,
                               std::optional<EntryKind> filter = std::nullopt);

struct EvalPair {
    std::string query;
    std::string gold_key;
};

/// Fraction of pairs whose gold key is in the top-k. Throws
/// Error(UnknownGoldKey) if a gold key is not in the index.
double recall_at_k(const KnowledgeIndex& index, std::span<const EvalPair> pairs, int k,
                   std::optional<EntryKind> filter = std::nullopt);

// Dataset files (UTF-8 JSON lines).

std::vector<ApiSpec> load_api_specs(const std::filesystem::path& path);
std::vector<ApiUsageRecord> load_api_usage(const std::filesystem::path& path);
std::vector<HandbookEntry> load_handbook(const std::filesystem::path& path);

void write_api_specs(const std::filesystem::path& path, std::span<const ApiSpec> specs);
void write_api_usage(const std::filesystem::path& path, std::span<const ApiUsageRecord> records);
void write_handbook(const std::filesystem::path& path, std::span<const HandbookEntry> entries);

/// Key of the i-th (0-based) api-usage line: "uar-0001", "uar-0002", ...
std::string api_usage_key(std::size_t line_index);

struct KnowledgeDataset {
    std::vector<ApiSpec> registry;
    std::vector<ApiUsageRecord> usage;
    std::vector<HandbookEntry> handbook;

    /// Every usage record must name a registry API (Error(UnknownApi)) and
    /// handbook fields must be non-empty (Error(DatasetFormat)).
    void validate() const;

    /// Entries keyed by api_usage_key() / procedure_id.
    std::vector<KnowledgeEntry> entries() const;
};

/// Reads api_specs.jsonl, api_usage.jsonl and handbook.jsonl from `dir`.
KnowledgeDataset load_dataset(const std::filesystem::path& dir);

}  // namespace sonoagent
