#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>
#include <vector>

#include "crel/embed.hpp"
#include "crel/errors.hpp"
#include "crel/rng.hpp"

namespace crel::embed {

// Skip-gram with negative sampling over composed (token + subword) input
// vectors. Per pair, with v the composed center vector and u_t output rows:
//
//   loss = -log sigmoid(u_ctx . v) - sum_k log sigmoid(-u_neg_k . v)
//
// Gradients flow to the context/negative output rows and to the center
// token's own input row plus all of its bucket rows (scaled by 1/m for a
// composition of m rows). Concept tokens have no buckets, so bucket rows
// never receive gradients from them.
//
// The draw order below is a compatibility contract used by the reproducing
// tests: per in-vocabulary token one subsampling uniform (only when
// subsample_threshold > 0), per kept center one window radius, per context
// `negatives` table draws, redrawn while equal to the context target.
// The learning rate decays linearly over epochs * total_tokens with a floor
// of 1e-4 * initial_lr and is refreshed once per document.

struct TrainStats {
    double total_loss = 0.0;
    std::uint64_t pairs = 0;
    double average_loss() const { return pairs ? total_loss / static_cast<double>(pairs) : 0.0; }
};

namespace detail {

template <typename Real>
inline Real sigmoid(Real x) {
    return Real(1) / (Real(1) + std::exp(-x));
}

// -log sigmoid(s) for label 1 and -log sigmoid(-s) for label 0, in the
// softplus form that is exact at s = 0.
template <typename Real>
inline Real logistic_loss(Real score, bool positive) {
    const Real s = positive ? score : -score;
    if (s > Real(0)) return std::log1p(std::exp(-s));
    return -s + std::log1p(std::exp(s));
}

// Cumulative table over vocabulary frequencies raised to `power`.
class NegativeTable {
public:
    NegativeTable(const Vocabulary& vocab, double power) {
        cumulative_.reserve(vocab.size());
        double total = 0.0;
        for (const auto& e : vocab.entries()) {
            total += std::pow(static_cast<double>(e.frequency), power);
            cumulative_.push_back(total);
        }
        if (total <= 0.0)
            throw GenerationError("negative-sampling table is empty: all frequencies are zero");
    }

    int draw(Rng& rng) const {
        const double u = rng.uniform() * cumulative_.back();
        const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
        const auto idx = static_cast<std::size_t>(it - cumulative_.begin());
        return static_cast<int>(std::min(idx, cumulative_.size() - 1));
    }

private:
    std::vector<double> cumulative_;
};

inline std::vector<double> keep_probabilities(const Vocabulary& vocab, double threshold) {
    std::vector<double> keep(vocab.size(), 1.0);
    if (threshold <= 0.0 || vocab.total_scanned() == 0) return keep;
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        const auto freq = vocab.entry(static_cast<int>(i)).frequency;
        if (freq == 0) continue;
        const double f = static_cast<double>(freq) / static_cast<double>(vocab.total_scanned());
        keep[i] = std::sqrt(threshold / f) + threshold / f;
    }
    return keep;
}

} // namespace detail

// Per-vocabulary-id training context shared by the trainer and its tests.
template <typename Real>
struct SkipgramState {
    std::vector<std::vector<int>> doc_ids;                  // OOV dropped
    std::vector<std::vector<std::uint32_t>> subword_cache;  // per vocab id
    std::vector<double> keep_prob;
    std::uint64_t total_tokens = 0;

    SkipgramState(const std::vector<corpus::Document>& docs, const EmbeddingModel<Real>& model,
                  const TrainerConfig& config) {
        const auto& vocab = model.vocab();
        doc_ids.reserve(docs.size());
        for (const auto& doc : docs) {
            std::vector<int> ids;
            ids.reserve(doc.size());
            for (const auto& tok : doc) {
                const int id = vocab.id_of(tok);
                if (id >= 0) ids.push_back(id);
            }
            total_tokens += ids.size();
            doc_ids.push_back(std::move(ids));
        }
        subword_cache.resize(vocab.size());
        for (std::size_t i = 0; i < vocab.size(); ++i) {
            const auto& e = vocab.entry(static_cast<int>(i));
            if (!e.is_concept) subword_cache[i] = model.indexer().buckets(e.token);
        }
        keep_prob = detail::keep_probabilities(vocab, config.subsample_threshold);
    }
};

// One SGD step on a (center, context, negatives) event. Returns the pair
// loss. Output rows are updated sequentially; the input-row gradient is
// accumulated against pre-update output rows, matching plain SGD on the
// loss at the current parameters.
template <typename Real>
Real skipgram_update(EmbeddingModel<Real>& model, const SkipgramState<Real>& state, int center,
                     int target, const std::vector<int>& negatives, Real lr) {
    const auto& buckets = state.subword_cache[static_cast<std::size_t>(center)];
    const std::size_t dim = static_cast<std::size_t>(model.dim());
    const std::size_t parts = 1 + buckets.size();

    std::vector<Real> v(dim, Real(0));
    axpy(Real(1), model.input().row(static_cast<std::size_t>(center)), std::span<Real>(v));
    for (const auto b : buckets)
        axpy(Real(1), model.input().row(model.bucket_row(b)), std::span<Real>(v));
    if (parts > 1) {
        const Real inv = Real(1) / static_cast<Real>(parts);
        for (auto& x : v) x *= inv;
    }

    std::vector<Real> hidden_grad(dim, Real(0));
    Real loss = Real(0);

    auto train_target = [&](int token, bool positive) {
        auto u = model.output().row(static_cast<std::size_t>(token));
        const Real score = dot(std::span<const Real>(u), std::span<const Real>(v));
        loss += detail::logistic_loss(score, positive);
        const Real g = detail::sigmoid(score) - (positive ? Real(1) : Real(0));
        axpy(g, std::span<const Real>(u), std::span<Real>(hidden_grad));
        axpy(-lr * g, std::span<const Real>(v), u);
    };

    train_target(target, true);
    for (const int neg : negatives) train_target(neg, false);

    const Real scale = -lr / static_cast<Real>(parts);
    axpy(scale, std::span<const Real>(hidden_grad),
         model.input().row(static_cast<std::size_t>(center)));
    for (const auto b : buckets)
        axpy(scale, std::span<const Real>(hidden_grad), model.input().row(model.bucket_row(b)));
    return loss;
}

// Pure loss of one event at the current parameters; used by oracles.
template <typename Real>
Real skipgram_pair_loss(const EmbeddingModel<Real>& model, const SkipgramState<Real>& state,
                        int center, int target, const std::vector<int>& negatives) {
    const auto& buckets = state.subword_cache[static_cast<std::size_t>(center)];
    const std::size_t dim = static_cast<std::size_t>(model.dim());
    std::vector<Real> v(dim, Real(0));
    axpy(Real(1), model.input().row(static_cast<std::size_t>(center)), std::span<Real>(v));
    for (const auto b : buckets)
        axpy(Real(1), model.input().row(model.bucket_row(b)), std::span<Real>(v));
    const std::size_t parts = 1 + buckets.size();
    if (parts > 1) {
        const Real inv = Real(1) / static_cast<Real>(parts);
        for (auto& x : v) x *= inv;
    }
    Real loss = Real(0);
    auto score_of = [&](int token) {
        return dot(std::span<const Real>(model.output().row(static_cast<std::size_t>(token))),
                   std::span<const Real>(v));
    };
    loss += detail::logistic_loss(score_of(target), true);
    for (const int neg : negatives) loss += detail::logistic_loss(score_of(neg), false);
    return loss;
}

template <typename Real>
TrainStats train_worker(EmbeddingModel<Real>& model, const SkipgramState<Real>& state,
                        const TrainerConfig& config, const detail::NegativeTable& table,
                        std::uint64_t seed, int worker, int stride) {
    Rng rng(seed);
    TrainStats stats;
    const double denom =
        static_cast<double>(config.epochs) * static_cast<double>(state.total_tokens);
    std::uint64_t processed = 0;
    std::vector<int> kept;
    std::vector<int> negatives;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t d = static_cast<std::size_t>(worker); d < state.doc_ids.size();
             d += static_cast<std::size_t>(stride)) {
            const auto& ids = state.doc_ids[d];
            if (ids.empty()) continue;

            const double progress =
                static_cast<double>(processed) * static_cast<double>(stride) / denom;
            const Real lr =
                static_cast<Real>(config.initial_lr * std::max(1e-4, 1.0 - progress));

            kept.clear();
            for (const int id : ids) {
                if (config.subsample_threshold > 0.0) {
                    const double u = rng.uniform();
                    if (u >= state.keep_prob[static_cast<std::size_t>(id)]) continue;
                }
                kept.push_back(id);
            }

            for (std::size_t c = 0; c < kept.size(); ++c) {
                const auto radius =
                    static_cast<std::size_t>(rng.uniform_int(1, config.window));
                const std::size_t lo = c >= radius ? c - radius : 0;
                const std::size_t hi = std::min(kept.size() - 1, c + radius);
                for (std::size_t j = lo; j <= hi; ++j) {
                    if (j == c) continue;
                    const int target = kept[j];
                    negatives.clear();
                    for (int k = 0; k < config.negatives; ++k) {
                        int neg = table.draw(rng);
                        while (neg == target) neg = table.draw(rng);
                        negatives.push_back(neg);
                    }
                    const Real loss = skipgram_update(model, state, kept[c], target, negatives, lr);
                    if (!std::isfinite(static_cast<double>(loss)))
                        throw Error("skip-gram loss diverged (non-finite) at pair " +
                                    std::to_string(stats.pairs) + ", center id " +
                                    std::to_string(kept[c]));
                    stats.total_loss += static_cast<double>(loss);
                    ++stats.pairs;
                }
            }
            processed += ids.size();
        }
    }
    return stats;
}

template <typename Real>
TrainStats train_skipgram(EmbeddingModel<Real>& model, const std::vector<corpus::Document>& docs,
                          const TrainerConfig& config) {
    config.validate();
    SkipgramState<Real> state(docs, model, config);
    if (state.total_tokens == 0)
        throw Error("cannot train on an empty corpus (no in-vocabulary tokens)");
    detail::NegativeTable table(model.vocab(), config.unigram_power);

    if (config.workers <= 1)
        return train_worker(model, state, config, table, config.seed, 0, 1);

    // Data-parallel mode: lock-free racy updates to the shared matrices.
    std::vector<std::thread> threads;
    std::vector<TrainStats> partial(static_cast<std::size_t>(config.workers));
    for (int w = 0; w < config.workers; ++w) {
        threads.emplace_back([&, w]() {
            partial[static_cast<std::size_t>(w)] =
                train_worker(model, state, config, table,
                             Rng::derive(config.seed, static_cast<std::uint64_t>(w)), w,
                             config.workers);
        });
    }
    for (auto& t : threads) t.join();
    TrainStats stats;
    for (const auto& p : partial) {
        stats.total_loss += p.total_loss;
        stats.pairs += p.pairs;
    }
    return stats;
}

} // namespace crel::embed
