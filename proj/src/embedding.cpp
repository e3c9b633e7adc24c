#include "sonoagent/embedding.hpp"

#include <cctype>
#include <cstdlib>

#include "http_util.hpp"
#include "sonoagent/json_util.hpp"

namespace sonoagent {

std::vector<EmbeddingVector> Embedder::embed_batch(std::span<const std::string> texts) const {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed(t));
    return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

HashEmbedder::HashEmbedder(int dimension) : dimension_(dimension) {
    if (dimension <= 0) throw Error(ErrorCode::InvalidInput, "embedding dimension must be positive");
}

EmbeddingVector HashEmbedder::embed(std::string_view text) const {
    if (text.empty()) throw Error(ErrorCode::InvalidInput, "cannot embed empty text");
    const auto tokens = tokenize(text);
    if (tokens.empty()) throw Error(ErrorCode::InvalidInput, "text has no alphanumeric tokens");
    EmbeddingVector v = EmbeddingVector::Zero(dimension_);
    for (const auto& token : tokens) {
        v[static_cast<Eigen::Index>(fnv1a64(token) % static_cast<std::uint64_t>(dimension_))] += 1.0;
    }
    v /= v.norm();
    return v;
}

RemoteEmbedderConfig RemoteEmbedderConfig::from_environment() {
    RemoteEmbedderConfig config;
    if (const char* v = std::getenv("EMBEDDING_ENDPOINT")) config.endpoint = v;
    if (const char* v = std::getenv("EMBEDDING_MODEL")) config.model = v;
    if (const char* v = std::getenv("EMBEDDING_API_KEY")) config.api_key = v;
    if (const char* v = std::getenv("EMBEDDING_DIM")) config.dimension = std::atoi(v);
    return config;
}

RemoteEmbedder::RemoteEmbedder(RemoteEmbedderConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) throw Error(ErrorCode::BackendUnavailable, "no embedding endpoint configured");
    learned_dimension_ = config_.dimension;
}

int RemoteEmbedder::dimension() const {
    std::lock_guard lock(mutex_);
    return learned_dimension_;
}

EmbeddingVector RemoteEmbedder::embed(std::string_view text) const {
    std::vector<std::string> one{std::string(text)};
    return embed_batch(one).front();
}

std::vector<EmbeddingVector> RemoteEmbedder::embed_batch(std::span<const std::string> texts) const {
    for (const auto& t : texts) {
        if (t.empty()) throw Error(ErrorCode::InvalidInput, "cannot embed empty text");
    }
    nlohmann::json body = {{"input", std::vector<std::string>(texts.begin(), texts.end())}};
    if (!config_.model.empty()) body["model"] = config_.model;
    const auto response = detail::post_json(config_.endpoint, body, config_.api_key, config_.timeout_seconds);

    if (!response.contains("embeddings") || !response["embeddings"].is_array() ||
        response["embeddings"].size() != texts.size()) {
        throw Error(ErrorCode::RemoteError, "malformed embedding response: " + dump_json(response));
    }
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& row : response["embeddings"]) {
        if (!row.is_array() || row.empty()) throw Error(ErrorCode::RemoteError, "embedding row is not an array");
        EmbeddingVector v(static_cast<Eigen::Index>(row.size()));
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (!row[i].is_number()) throw Error(ErrorCode::RemoteError, "non-numeric embedding component");
            v[static_cast<Eigen::Index>(i)] = row[i].get<double>();
        }
        if (!v.allFinite()) throw Error(ErrorCode::RemoteError, "non-finite embedding component");
        {
            std::lock_guard lock(mutex_);
            if (learned_dimension_ == 0) learned_dimension_ = static_cast<int>(v.size());
            if (v.size() != learned_dimension_) {
                throw Error(ErrorCode::DimensionMismatch, "service returned dimension " +
                                                              std::to_string(v.size()) + ", expected " +
                                                              std::to_string(learned_dimension_));
            }
        }
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace sonoagent
