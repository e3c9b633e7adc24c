#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "sonoagent/errors.hpp"

namespace sonoagent {

template <typename Scalar>
using EmbeddingT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using EmbeddingVector = EmbeddingT<double>;

/// Cosine similarity (a.b) / (|a| |b|).
///
/// Works on any pair of Eigen column expressions of the same scalar type.
/// Throws Error(DimensionMismatch) when sizes differ and Error(ZeroVector)
/// when either norm is zero; a zero-norm vector is never treated as
/// "similarity 0".
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedA>& a,
                                            const Eigen::MatrixBase<DerivedB>& b) {
    using Scalar = typename DerivedA::Scalar;
    static_assert(std::is_same_v<Scalar, typename DerivedB::Scalar>,
                  "cosine_similarity needs matching scalar types");
    if (a.size() != b.size()) {
        throw Error(ErrorCode::DimensionMismatch,
                    std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    const Scalar norm_a = a.norm();
    const Scalar norm_b = b.norm();
    if (norm_a == Scalar(0) || norm_b == Scalar(0)) {
        throw Error(ErrorCode::ZeroVector, "cosine similarity of a zero-norm vector");
    }
    // a.dot(b) and b.dot(a) multiply and sum in the same order, and the
    // norm product is commutative, so the result is exactly symmetric.
    Scalar s = a.dot(b) / (norm_a * norm_b);
    return std::clamp(s, Scalar(-1), Scalar(1));
}

/// Deterministic text -> vector map.
class Embedder {
public:
    virtual ~Embedder() = default;

    virtual int dimension() const = 0;
    virtual std::string name() const = 0;

    /// Throws Error(InvalidInput) for empty text.
    virtual EmbeddingVector embed(std::string_view text) const = 0;

    /// Default implementation embeds one text at a time.
    virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) const;
};

/// FNV-1a, 64-bit.
std::uint64_t fnv1a64(std::string_view bytes);

/// Lowercased ASCII alphanumeric runs of `text`; everything else separates.
std::vector<std::string> tokenize(std::string_view text);

/// Feature-hash embedder: tokenize, add 1 to bucket fnv1a64(token) mod d for
/// every token, then L2-normalize.
class HashEmbedder final : public Embedder {
public:
    static constexpr int kDefaultDimension = 256;

    explicit HashEmbedder(int dimension = kDefaultDimension);

    int dimension() const override { return dimension_; }
    std::string name() const override { return "hash-" + std::to_string(dimension_); }
    EmbeddingVector embed(std::string_view text) const override;

private:
    int dimension_;
};

struct RemoteEmbedderConfig {
    std::string endpoint;  // full URL, e.g. http://127.0.0.1:8080/v1/embeddings
    std::string model;
    std::string api_key;
    int dimension = 0;
    int timeout_seconds = 30;

    /// EMBEDDING_ENDPOINT, EMBEDDING_MODEL, EMBEDDING_API_KEY, EMBEDDING_DIM.
    static RemoteEmbedderConfig from_environment();
};

/// Embedding-service client: POST {"model", "input": [texts]} and expects
/// {"embeddings": [[reals]]} back.
class RemoteEmbedder final : public Embedder {
public:
    explicit RemoteEmbedder(RemoteEmbedderConfig config);

    /// Configured dimension, or the one learned from the first response when
    /// the configuration left it at 0.
    int dimension() const override;
    std::string name() const override { return "remote:" + config_.model; }
    EmbeddingVector embed(std::string_view text) const override;
    std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) const override;

private:
    RemoteEmbedderConfig config_;
    mutable std::mutex mutex_;
    mutable int learned_dimension_ = 0;
};

}  // namespace sonoagent
