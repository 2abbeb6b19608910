#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "crel/corpus.hpp"
#include "crel/errors.hpp"
#include "crel/matrix.hpp"
#include "crel/mesh_kb.hpp"
#include "crel/rng.hpp"

namespace crel::embed {

struct TrainerConfig {
    int dim = 396;
    int window = 30;
    int epochs = 5;
    int min_count = 5;
    int minn = 3;
    int maxn = 6;
    int negatives = 5;
    double initial_lr = 0.05;
    double subsample_threshold = 1e-4;
    double unigram_power = 0.75;
    std::uint32_t bucket_count = 2'000'000;
    std::uint64_t seed = 1;
    int workers = 1;

    void validate() const {
        if (dim < 1) throw ConfigError("dim must be >= 1");
        if (window < 1) throw ConfigError("window must be >= 1");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (negatives < 1) throw ConfigError("negatives must be >= 1");
        if (minn < 1 || maxn < minn) throw ConfigError("need 1 <= minn <= maxn");
        if (bucket_count == 0) throw ConfigError("bucket_count must be > 0");
        if (workers < 1) throw ConfigError("workers must be >= 1");
    }
};

struct VocabEntry {
    std::string token;
    std::uint64_t frequency = 0;
    bool is_concept = false;
};

// Token table with concept flags. Non-concept tokens below min_count are
// pruned; every concept token from the knowledge base is retained regardless
// of frequency. Ids are assigned by descending frequency, ties by token.
class Vocabulary {
public:
    Vocabulary() = default;
    Vocabulary(std::vector<VocabEntry> entries, std::uint64_t total_scanned);

    int id_of(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? -1 : it->second;
    }
    const VocabEntry& entry(int id) const { return entries_[static_cast<std::size_t>(id)]; }
    const std::vector<VocabEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    // All token occurrences scanned while counting, including occurrences of
    // tokens that were later pruned. Denominator for subsampling.
    std::uint64_t total_scanned() const { return total_scanned_; }

private:
    std::vector<VocabEntry> entries_;
    std::unordered_map<std::string, int> index_;
    std::uint64_t total_scanned_ = 0;
};

Vocabulary build_vocabulary(const std::vector<corpus::Document>& docs,
                            const mesh::KnowledgeBase& kb, const TrainerConfig& config);
Vocabulary build_vocabulary_file(const std::string& corpus_path, const mesh::KnowledgeBase& kb,
                                 const TrainerConfig& config);

std::uint32_t fnv1a32(std::string_view bytes);

// Hashed character n-gram index. N-grams are taken over code points of the
// token wrapped in '<' ... '>' boundary markers.
class SubwordIndexer {
public:
    SubwordIndexer() = default;
    SubwordIndexer(int minn, int maxn, std::uint32_t bucket_count)
        : minn_(minn), maxn_(maxn), bucket_count_(bucket_count) {}

    std::vector<std::string> ngrams(const std::string& word) const;

    // Sorted, de-duplicated bucket indices for a word's n-grams.
    std::vector<std::uint32_t> buckets(const std::string& word) const;

    int minn() const { return minn_; }
    int maxn() const { return maxn_; }
    std::uint32_t bucket_count() const { return bucket_count_; }

private:
    int minn_ = 3;
    int maxn_ = 6;
    std::uint32_t bucket_count_ = 2'000'000;
};

// Input vectors for tokens and n-gram buckets plus output (context) vectors
// for tokens. A token's composed vector is the mean of its own input row and
// its bucket rows; concept tokens compose to exactly their own row.
template <typename Real>
class EmbeddingModel {
public:
    EmbeddingModel() = default;
    EmbeddingModel(Vocabulary vocab, const TrainerConfig& config)
        : vocab_(std::move(vocab)),
          indexer_(config.minn, config.maxn, config.bucket_count),
          dim_(config.dim),
          input_(vocab_.size() + config.bucket_count, static_cast<std::size_t>(config.dim)),
          output_(vocab_.size(), static_cast<std::size_t>(config.dim)) {}

    void init_weights(std::uint64_t seed) {
        Rng rng(seed);
        const Real bound = Real(1) / Real(dim_);
        for (std::size_t i = 0; i < input_.size(); ++i)
            input_.data()[i] = static_cast<Real>((2.0 * rng.uniform() - 1.0)) * bound;
        output_.fill(Real(0));
    }

    const Vocabulary& vocab() const { return vocab_; }
    const SubwordIndexer& indexer() const { return indexer_; }
    int dim() const { return dim_; }
    Matrix<Real>& input() { return input_; }
    const Matrix<Real>& input() const { return input_; }
    Matrix<Real>& output() { return output_; }
    const Matrix<Real>& output() const { return output_; }

    std::size_t bucket_row(std::uint32_t bucket) const { return vocab_.size() + bucket; }

    // Bucket indices used to compose a token: empty for concept tokens,
    // n-gram buckets for words (in-vocabulary or not).
    std::vector<std::uint32_t> subwords(const std::string& token) const {
        const int id = vocab_.id_of(token);
        if (id >= 0 && vocab_.entry(id).is_concept) return {};
        return indexer_.buckets(token);
    }

    // Mean of the token's own input row (when in vocabulary) and its bucket
    // rows. OOV words compose from bucket rows alone; OOV concept tokens are
    // rejected because the concept set is closed.
    std::vector<Real> composed_vector(const std::string& token) const {
        const int id = vocab_.id_of(token);
        if (id < 0 && mesh::is_concept_token(token, vocab_tag_hint_))
            throw LookupError("concept token not in vocabulary: " + token);
        std::vector<Real> v(static_cast<std::size_t>(dim_), Real(0));
        std::size_t parts = 0;
        if (id >= 0) {
            axpy(Real(1), input_.row(static_cast<std::size_t>(id)), std::span<Real>(v));
            ++parts;
        }
        for (const auto b : subwords(token)) {
            axpy(Real(1), input_.row(bucket_row(b)), std::span<Real>(v));
            ++parts;
        }
        if (parts > 1) {
            const Real inv = Real(1) / static_cast<Real>(parts);
            for (auto& x : v) x *= inv;
        }
        return v;
    }

    void set_vocab_tag_hint(std::string tag) { vocab_tag_hint_ = std::move(tag); }
    const std::string& vocab_tag_hint() const { return vocab_tag_hint_; }

private:
    Vocabulary vocab_;
    SubwordIndexer indexer_;
    int dim_ = 0;
    Matrix<Real> input_;
    Matrix<Real> output_;
    std::string vocab_tag_hint_ = "MeSH";
};

std::vector<corpus::Document> load_corpus_documents(const std::string& path);

// Text .vec interchange: header "<count> <dim>", then one token and dim
// decimal floats per line.
struct VecFile {
    std::vector<std::string> tokens;
    Matrix<float> vectors;
};
void write_vec(std::ostream& out, const std::vector<std::string>& tokens, const Matrix<float>& vectors);
void write_vec_file(const std::string& path, const std::vector<std::string>& tokens,
                    const Matrix<float>& vectors);
VecFile read_vec(std::istream& in, const std::string& source_name);
VecFile read_vec_file(const std::string& path);

// Binary embedding model with bucket matrix, for composition-capable reuse.
void save_model_file(const std::string& path, const EmbeddingModel<float>& model,
                     const TrainerConfig& config);
struct LoadedModel {
    EmbeddingModel<float> model;
    TrainerConfig config;
};
LoadedModel load_model_file(const std::string& path);

// Composed vectors of every vocabulary token, in id order.
Matrix<float> composed_table(const EmbeddingModel<float>& model);

} // namespace crel::embed
