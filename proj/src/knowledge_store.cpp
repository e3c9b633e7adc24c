#include "sonoagent/knowledge_store.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "jsonl.hpp"
#include "sonoagent/errors.hpp"
#include "sonoagent/json_util.hpp"

namespace sonoagent {

std::string_view to_string(EntryKind kind) {
    return kind == EntryKind::ApiUsage ? "api-usage" : "handbook";
}

const std::string& KnowledgeEntry::embedded_text() const {
    if (const auto* usage = std::get_if<ApiUsageRecord>(&payload)) return usage->usage_narrative;
    return std::get<HandbookEntry>(payload).paired_instruction;
}

KnowledgeIndex KnowledgeIndex::build(std::vector<KnowledgeEntry> entries,
                                     std::shared_ptr<const Embedder> embedder) {
    if (!embedder) throw Error(ErrorCode::InvalidInput, "index build needs an embedder");
    std::vector<std::string> texts;
    texts.reserve(entries.size());
    for (const auto& e : entries) texts.push_back(e.embedded_text());
    const auto embedded = embedder->embed_batch(texts);

    const int d = embedder->dimension();
    Matrix vectors(static_cast<Eigen::Index>(entries.size()), d);
    for (std::size_t i = 0; i < embedded.size(); ++i) {
        if (embedded[i].size() != d) {
            throw Error(ErrorCode::DimensionMismatch, "entry '" + entries[i].key + "' embedded with dimension " +
                                                          std::to_string(embedded[i].size()));
        }
        vectors.row(static_cast<Eigen::Index>(i)) = embedded[i].transpose();
    }
    return from_vectors(std::move(entries), std::move(vectors), std::move(embedder));
}

KnowledgeIndex KnowledgeIndex::from_vectors(std::vector<KnowledgeEntry> entries, Matrix vectors,
                                            std::shared_ptr<const Embedder> embedder) {
    if (vectors.rows() != static_cast<Eigen::Index>(entries.size())) {
        throw Error(ErrorCode::DimensionMismatch, "one vector row per entry required");
    }
    if (embedder && !entries.empty() && embedder->dimension() != vectors.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "embedder dimension differs from index dimension");
    }
    KnowledgeIndex index;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto row = vectors.row(static_cast<Eigen::Index>(i));
        if (!row.allFinite()) throw Error(ErrorCode::InvalidInput, "non-finite vector for '" + entries[i].key + "'");
        if (row.squaredNorm() == 0.0) throw Error(ErrorCode::ZeroVector, "zero vector for '" + entries[i].key + "'");
        if (!index.rows_by_key_.emplace(entries[i].key, i).second) {
            throw Error(ErrorCode::DuplicateKey, "duplicate key '" + entries[i].key + "'");
        }
    }
    index.entries_ = std::move(entries);
    index.vectors_ = std::move(vectors);
    index.embedder_ = std::move(embedder);
    return index;
}

const KnowledgeEntry* KnowledgeIndex::find(std::string_view key) const {
    auto it = rows_by_key_.find(std::string(key));
    return it == rows_by_key_.end() ? nullptr : &entries_[it->second];
}

EmbeddingVector embed_text(std::string_view text, const Embedder& embedder) {
    if (text.empty()) throw Error(ErrorCode::InvalidInput, "cannot embed empty text");
    return embedder.embed(text);
}

RetrievalResult retrieve_top_k(const KnowledgeIndex& index, const EmbeddingVector& query, int k,
                               std::optional<EntryKind> filter) {
    if (k < 1) throw Error(ErrorCode::InvalidInput, "k must be at least 1");
    if (query.size() != index.dimension() && index.size() > 0) {
        throw Error(ErrorCode::DimensionMismatch, "query dimension " + std::to_string(query.size()) +
                                                      " vs index " + std::to_string(index.dimension()));
    }
    if (query.squaredNorm() == 0.0) throw Error(ErrorCode::ZeroVector, "query vector is zero");

    const auto entries = index.entries();
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (filter && entries[i].kind != *filter) continue;
        scored.emplace_back(
            cosine_similarity(index.vectors().row(static_cast<Eigen::Index>(i)).transpose(), query), i);
    }
    if (scored.empty()) throw Error(ErrorCode::EmptyIndex, "no entries match the kind filter");

    const auto order = [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return entries[a.second].key < entries[b.second].key;
    };
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), order);

    RetrievalResult result;
    result.ranked.reserve(take);
    for (std::size_t r = 0; r < take; ++r) {
        const auto& e = entries[scored[r].second];
        result.ranked.push_back({e.key, e.kind, scored[r].first, &e.payload});
    }
    return result;
}

RetrievalResult retrieve_top_k(const KnowledgeIndex& index, std::string_view query_text, int k,
                               std::optional<EntryKind> filter) {
    if (!index.embedder()) throw Error(ErrorCode::InvalidInput, "index has no embedder for text queries");
    return retrieve_top_k(index, embed_text(query_text, *index.embedder()), k, filter);
}

double recall_at_k(const KnowledgeIndex& index, std::span<const EvalPair> pairs, int k,
                   std::optional<EntryKind> filter) {
    if (pairs.empty()) throw Error(ErrorCode::InvalidInput, "no evaluation pairs");
    for (const auto& p : pairs) {
        if (!index.find(p.gold_key)) throw Error(ErrorCode::UnknownGoldKey, "'" + p.gold_key + "' not in index");
    }
    std::size_t hits = 0;
    for (const auto& p : pairs) {
        const auto result = retrieve_top_k(index, p.query, k, filter);
        hits += std::any_of(result.ranked.begin(), result.ranked.end(),
                            [&](const RetrievedEntry& r) { return r.key == p.gold_key; });
    }
    return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

namespace detail {

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::DatasetFormat, "cannot open " + path.string());
    std::vector<nlohmann::json> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw Error(ErrorCode::DatasetFormat, path.string() + ":" + std::to_string(line_no) + ": not a JSON object");
        }
        rows.push_back(std::move(j));
    }
    return rows;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::DatasetFormat, "cannot write " + path.string());
    for (const auto& r : rows) out << dump_json(r) << '\n';
}

}  // namespace detail

namespace {

using detail::read_jsonl;
using detail::write_jsonl;

std::string field(const nlohmann::json& j, const char* name, const std::filesystem::path& path) {
    if (!j.contains(name) || !j.at(name).is_string()) {
        throw Error(ErrorCode::DatasetFormat, path.string() + ": missing string field '" + name + "'");
    }
    return j.at(name).get<std::string>();
}

}  // namespace

std::vector<ApiSpec> load_api_specs(const std::filesystem::path& path) {
    std::vector<ApiSpec> specs;
    for (const auto& j : read_jsonl(path)) specs.push_back(api_spec_from_json(j));
    check_registry(specs);
    return specs;
}

std::vector<ApiUsageRecord> load_api_usage(const std::filesystem::path& path) {
    std::vector<ApiUsageRecord> records;
    for (const auto& j : read_jsonl(path)) {
        records.push_back({field(j, "api_name", path), field(j, "usage_narrative", path)});
    }
    return records;
}

std::vector<HandbookEntry> load_handbook(const std::filesystem::path& path) {
    std::vector<HandbookEntry> entries;
    for (const auto& j : read_jsonl(path)) {
        entries.push_back({field(j, "procedure_id", path), field(j, "paired_instruction", path),
                           field(j, "handbook_text", path)});
    }
    return entries;
}

void write_api_specs(const std::filesystem::path& path, std::span<const ApiSpec> specs) {
    std::vector<nlohmann::json> rows;
    for (const auto& s : specs) rows.push_back(to_json(s));
    write_jsonl(path, rows);
}

void write_api_usage(const std::filesystem::path& path, std::span<const ApiUsageRecord> records) {
    std::vector<nlohmann::json> rows;
    for (const auto& r : records) rows.push_back({{"api_name", r.api_name}, {"usage_narrative", r.usage_narrative}});
    write_jsonl(path, rows);
}

void write_handbook(const std::filesystem::path& path, std::span<const HandbookEntry> entries) {
    std::vector<nlohmann::json> rows;
    for (const auto& e : entries) {
        rows.push_back({{"procedure_id", e.procedure_id},
                        {"paired_instruction", e.paired_instruction},
                        {"handbook_text", e.handbook_text}});
    }
    write_jsonl(path, rows);
}

std::string api_usage_key(std::size_t line_index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "uar-%04zu", line_index + 1);
    return buf;
}

void KnowledgeDataset::validate() const {
    check_registry(registry);
    for (const auto& r : usage) {
        if (!find_api(registry, r.api_name)) throw Error(ErrorCode::UnknownApi, "usage record names '" + r.api_name + "'");
        if (r.usage_narrative.empty()) throw Error(ErrorCode::DatasetFormat, "empty usage narrative");
    }
    for (const auto& h : handbook) {
        if (h.procedure_id.empty() || h.paired_instruction.empty() || h.handbook_text.empty()) {
            throw Error(ErrorCode::DatasetFormat, "handbook entry '" + h.procedure_id + "' has an empty field");
        }
    }
}

std::vector<KnowledgeEntry> KnowledgeDataset::entries() const {
    std::vector<KnowledgeEntry> out;
    out.reserve(usage.size() + handbook.size());
    for (std::size_t i = 0; i < usage.size(); ++i) out.push_back({api_usage_key(i), EntryKind::ApiUsage, usage[i]});
    for (const auto& h : handbook) out.push_back({h.procedure_id, EntryKind::Handbook, h});
    return out;
}

KnowledgeDataset load_dataset(const std::filesystem::path& dir) {
    KnowledgeDataset ds;
    ds.registry = load_api_specs(dir / "api_specs.jsonl");
    ds.usage = load_api_usage(dir / "api_usage.jsonl");
    ds.handbook = load_handbook(dir / "handbook.jsonl");
    ds.validate();
    return ds;
}

}  // namespace sonoagent
