#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "crel/embed.hpp"
#include "crel/matrix.hpp"

namespace crel::eval {

struct EvalPair {
    std::string term_a;
    std::string term_b;
    double human_score = 0.0;
    std::string mesh_a; // optional precomputed concept codes
    std::string mesh_b;
};

struct Dataset {
    std::string name;
    std::vector<EvalPair> pairs;
};

// CSV with a header row naming at least term_a, term_b, score; optional
// mesh_a, mesh_b columns carry precomputed concept mappings.
Dataset load_benchmark_csv(const std::string& path, const std::string& name);

// Token-vector source. `vector_for` resolves vocabulary entries (already
// composed when the source supports subwords), `compose` builds vectors for
// out-of-vocabulary words when possible.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::optional<std::vector<float>> vector_for(const std::string& token) const = 0;
    virtual std::optional<std::vector<float>> compose(const std::string& token) const = 0;
    virtual const std::vector<std::string>& tokens() const = 0;
    virtual int dim() const = 0;
};

// Rows of a .vec file (or any token -> row table).
class VecEmbeddings : public EmbeddingProvider {
public:
    VecEmbeddings(std::vector<std::string> tokens, Matrix<float> vectors);
    explicit VecEmbeddings(embed::VecFile file);

    std::optional<std::vector<float>> vector_for(const std::string& token) const override;
    std::optional<std::vector<float>> compose(const std::string&) const override { return std::nullopt; }
    const std::vector<std::string>& tokens() const override { return tokens_; }
    int dim() const override { return static_cast<int>(vectors_.cols()); }

    const Matrix<float>& vectors() const { return vectors_; }
    int id_of(const std::string& token) const;

private:
    std::vector<std::string> tokens_;
    Matrix<float> vectors_;
    std::unordered_map<std::string, int> index_;
};

// Full pre-training model: vocabulary rows compose with their n-gram
// buckets, and unseen words compose from buckets alone.
class ComposedEmbeddings : public EmbeddingProvider {
public:
    explicit ComposedEmbeddings(const embed::EmbeddingModel<float>* model);

    std::optional<std::vector<float>> vector_for(const std::string& token) const override;
    std::optional<std::vector<float>> compose(const std::string& token) const override;
    const std::vector<std::string>& tokens() const override { return token_names_; }
    int dim() const override { return model_->dim(); }

private:
    const embed::EmbeddingModel<float>* model_;
    std::vector<std::string> token_names_;
};

// OOV handling: after the vocabulary lookup, the pre-training stage attempts
// subword composition while the fine-tuned stage falls back to the [UNK] row.
enum class Policy { pretrain, finetuned };

struct TermVector {
    std::vector<float> v;
    bool defined = false;
    bool fallback = false; // some token needed composition, [UNK], or was dropped
};

// Mean vector of the term's tokens under the active policy; undefined only
// when no token resolves.
TermVector term_vector(const std::string& term, const EmbeddingProvider& provider, Policy policy);

enum class ScoreMode { word, mesh, fused };

struct PairScore {
    double score = 0.0;
    bool fallback = false;
};

// Cosine of the two term vectors (word mode) or concept-token vectors (mesh
// mode); either side undefined scores 0.
PairScore pair_score(const EvalPair& pair, const EmbeddingProvider& provider, ScoreMode mode,
                     Policy policy, const std::string& vocab_tag);

// Average ranks (1 = smallest value) with tie averaging.
std::vector<double> average_ranks(const std::vector<double>& values);

// Spearman's rank correlation; throws ConfigError when either rank vector
// has zero variance or fewer than two entries.
double spearman(const std::vector<double>& system_scores, const std::vector<double>& human_scores);

// Ranked item list, rank 1 = highest score, ties averaged.
struct Ranking {
    std::vector<std::string> items; // sorted by descending score, ties by item
    std::vector<double> scores;     // parallel to items
    std::vector<double> ranks;      // parallel to items

    double rank_of(const std::string& item) const;
};
Ranking make_ranking(std::vector<std::string> items, std::vector<double> scores);

// Reciprocal rank fusion: fused(item) = 1/(k + rank_w) + 1/(k + rank_m).
Ranking rank_fusion(const Ranking& word_ranking, const Ranking& mesh_ranking, double k = 60.0);

struct EvalResult {
    double rho = 0.0;
    std::size_t n_used = 0;
    std::size_t n_fallback = 0;
};

// Scores every pair (no instance culling) and correlates with the human
// judgments.
EvalResult evaluate(const Dataset& dataset, const EmbeddingProvider& provider, ScoreMode mode,
                    Policy policy, const std::string& vocab_tag, double fusion_k = 60.0);

enum class NeighborFilter { all, words_only, concepts_only };

struct Neighbor {
    std::string token;
    double score = 0.0;
};

// Full-scan cosine search for the query's mean-composed vector. The query's
// own tokens and the bracketed special tokens are excluded; ties break
// lexicographically.
std::vector<Neighbor> nearest_neighbors(const std::string& query, const EmbeddingProvider& provider,
                                        std::size_t top_k, NeighborFilter filter, Policy policy,
                                        const std::string& vocab_tag);

} // namespace crel::eval
