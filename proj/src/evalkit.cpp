#include "crel/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "crel/corpus.hpp"
#include "crel/errors.hpp"
#include "crel/mesh_kb.hpp"

namespace crel::eval {

namespace {

// Minimal CSV field splitter with double-quote support.
std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

} // namespace

Dataset load_benchmark_csv(const std::string& path, const std::string& name) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open benchmark: " + path);

    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty benchmark file");
    const auto header = split_csv_line(line);
    auto column = [&](const std::string& key) -> int {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == key) return static_cast<int>(i);
        return -1;
    };
    const int col_a = column("term_a");
    const int col_b = column("term_b");
    const int col_score = column("score");
    const int col_ma = column("mesh_a");
    const int col_mb = column("mesh_b");
    if (col_a < 0 || col_b < 0 || col_score < 0)
        throw ParseError(path + ": header must name term_a, term_b, score");

    Dataset ds;
    ds.name = name;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        auto field = [&](int idx) -> std::string {
            return idx >= 0 && static_cast<std::size_t>(idx) < fields.size()
                       ? fields[static_cast<std::size_t>(idx)]
                       : std::string{};
        };
        EvalPair p;
        p.term_a = field(col_a);
        p.term_b = field(col_b);
        try {
            p.human_score = std::stod(field(col_score));
        } catch (const std::exception&) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": bad score '" +
                             field(col_score) + "'");
        }
        if (!std::isfinite(p.human_score))
            throw ValidationError(path + ":" + std::to_string(line_no) + ": non-finite score");
        p.mesh_a = field(col_ma);
        p.mesh_b = field(col_mb);
        ds.pairs.push_back(std::move(p));
    }
    if (ds.pairs.empty()) throw ValidationError(path + ": benchmark has no pairs");
    return ds;
}

VecEmbeddings::VecEmbeddings(std::vector<std::string> tokens, Matrix<float> vectors)
    : tokens_(std::move(tokens)), vectors_(std::move(vectors)) {
    if (tokens_.size() != vectors_.rows()) throw ValidationError("token/vector row mismatch");
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
}

VecEmbeddings::VecEmbeddings(embed::VecFile file)
    : VecEmbeddings(std::move(file.tokens), std::move(file.vectors)) {}

int VecEmbeddings::id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? -1 : it->second;
}

std::optional<std::vector<float>> VecEmbeddings::vector_for(const std::string& token) const {
    const int id = id_of(token);
    if (id < 0) return std::nullopt;
    const auto row = vectors_.row(static_cast<std::size_t>(id));
    return std::vector<float>(row.begin(), row.end());
}

ComposedEmbeddings::ComposedEmbeddings(const embed::EmbeddingModel<float>* model) : model_(model) {
    token_names_.reserve(model_->vocab().size());
    for (const auto& e : model_->vocab().entries()) token_names_.push_back(e.token);
}

std::optional<std::vector<float>> ComposedEmbeddings::vector_for(const std::string& token) const {
    if (model_->vocab().id_of(token) < 0) return std::nullopt;
    return model_->composed_vector(token);
}

std::optional<std::vector<float>> ComposedEmbeddings::compose(const std::string& token) const {
    if (mesh::is_concept_token(token, model_->vocab_tag_hint())) return std::nullopt;
    const auto buckets = model_->indexer().buckets(token);
    if (buckets.empty()) return std::nullopt;
    std::vector<float> v(static_cast<std::size_t>(model_->dim()), 0.0f);
    for (const auto b : buckets)
        axpy(1.0f, model_->input().row(model_->bucket_row(b)), std::span<float>(v));
    const float inv = 1.0f / static_cast<float>(buckets.size());
    for (auto& x : v) x *= inv;
    return v;
}

TermVector term_vector(const std::string& term, const EmbeddingProvider& provider, Policy policy) {
    TermVector out;
    if (term.empty()) return out;
    const auto words = corpus::tokenize(term);
    std::vector<float> acc(static_cast<std::size_t>(provider.dim()), 0.0f);
    std::size_t resolved = 0;

    for (const auto& w : words) {
        if (auto v = provider.vector_for(w)) {
            axpy(1.0f, std::span<const float>(*v), std::span<float>(acc));
            ++resolved;
            continue;
        }
        out.fallback = true;
        if (policy == Policy::pretrain) {
            if (auto v = provider.compose(w)) {
                axpy(1.0f, std::span<const float>(*v), std::span<float>(acc));
                ++resolved;
            }
        } else {
            if (auto v = provider.vector_for("[UNK]")) {
                axpy(1.0f, std::span<const float>(*v), std::span<float>(acc));
                ++resolved;
            }
        }
    }
    if (resolved == 0) return out;
    const float inv = 1.0f / static_cast<float>(resolved);
    for (auto& x : acc) x *= inv;
    out.v = std::move(acc);
    out.defined = true;
    return out;
}

namespace {

PairScore cosine_of(const TermVector& a, const TermVector& b) {
    PairScore out;
    out.fallback = a.fallback || b.fallback;
    if (!a.defined || !b.defined) {
        out.fallback = true;
        return out; // score 0 by default
    }
    double na = 0.0, nb = 0.0;
    for (const float x : a.v) na += static_cast<double>(x) * x;
    for (const float x : b.v) nb += static_cast<double>(x) * x;
    if (na == 0.0 || nb == 0.0) {
        std::cerr << "warning: zero-norm vector in pair score, using 0\n";
        out.fallback = true;
        return out;
    }
    out.score = cosine(std::span<const float>(a.v), std::span<const float>(b.v));
    return out;
}

TermVector concept_vector(const std::string& code, const EmbeddingProvider& provider,
                          const std::string& vocab_tag) {
    TermVector out;
    if (code.empty()) {
        out.fallback = true;
        return out;
    }
    if (auto v = provider.vector_for(mesh::concept_token(code, vocab_tag))) {
        out.v = std::move(*v);
        out.defined = true;
        return out;
    }
    out.fallback = true;
    return out;
}

} // namespace

PairScore pair_score(const EvalPair& pair, const EmbeddingProvider& provider, ScoreMode mode,
                     Policy policy, const std::string& vocab_tag) {
    if (mode == ScoreMode::word) {
        return cosine_of(term_vector(pair.term_a, provider, policy),
                         term_vector(pair.term_b, provider, policy));
    }
    if (mode == ScoreMode::mesh) {
        return cosine_of(concept_vector(pair.mesh_a, provider, vocab_tag),
                         concept_vector(pair.mesh_b, provider, vocab_tag));
    }
    throw ConfigError("pair_score expects word or mesh mode");
}

std::vector<double> average_ranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double spearman(const std::vector<double>& system_scores, const std::vector<double>& human_scores) {
    if (system_scores.size() != human_scores.size())
        throw ConfigError("spearman requires equally sized score lists");
    const std::size_t n = system_scores.size();
    if (n < 2) throw ConfigError("spearman requires at least two pairs");

    const auto rs = average_ranks(system_scores);
    const auto rh = average_ranks(human_scores);
    const double mean = (static_cast<double>(n) + 1.0) / 2.0;
    double cov = 0.0, var_s = 0.0, var_h = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = rs[i] - mean;
        const double b = rh[i] - mean;
        cov += a * b;
        var_s += a * a;
        var_h += b * b;
    }
    if (var_s == 0.0 || var_h == 0.0)
        throw ConfigError("spearman undefined: zero variance in ranks");
    return cov / std::sqrt(var_s * var_h);
}

Ranking make_ranking(std::vector<std::string> items, std::vector<double> scores) {
    if (items.size() != scores.size()) throw ConfigError("ranking items/scores mismatch");
    const std::size_t n = items.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return items[a] < items[b];
    });

    Ranking r;
    r.items.reserve(n);
    r.scores.reserve(n);
    for (const auto idx : order) {
        r.items.push_back(std::move(items[idx]));
        r.scores.push_back(scores[idx]);
    }
    // rank 1 = highest score; ties share the average rank
    std::vector<double> neg(n);
    for (std::size_t i = 0; i < n; ++i) neg[i] = -r.scores[i];
    r.ranks = average_ranks(neg);
    return r;
}

double Ranking::rank_of(const std::string& item) const {
    for (std::size_t i = 0; i < items.size(); ++i)
        if (items[i] == item) return ranks[i];
    throw LookupError("item not in ranking: " + item);
}

Ranking rank_fusion(const Ranking& word_ranking, const Ranking& mesh_ranking, double k) {
    if (word_ranking.items.size() != mesh_ranking.items.size())
        throw ValidationError("rank fusion requires identical item sets");
    std::unordered_map<std::string, double> mesh_rank;
    for (std::size_t i = 0; i < mesh_ranking.items.size(); ++i)
        mesh_rank.emplace(mesh_ranking.items[i], mesh_ranking.ranks[i]);

    std::vector<std::string> items;
    std::vector<double> fused;
    items.reserve(word_ranking.items.size());
    for (std::size_t i = 0; i < word_ranking.items.size(); ++i) {
        const auto& item = word_ranking.items[i];
        auto it = mesh_rank.find(item);
        if (it == mesh_rank.end())
            throw ValidationError("rank fusion requires identical item sets: missing " + item);
        items.push_back(item);
        fused.push_back(1.0 / (k + word_ranking.ranks[i]) + 1.0 / (k + it->second));
    }
    return make_ranking(std::move(items), std::move(fused));
}

EvalResult evaluate(const Dataset& dataset, const EmbeddingProvider& provider, ScoreMode mode,
                    Policy policy, const std::string& vocab_tag, double fusion_k) {
    if (dataset.pairs.empty()) throw ValidationError("empty evaluation dataset");

    EvalResult res;
    res.n_used = dataset.pairs.size();
    std::vector<double> human;
    human.reserve(dataset.pairs.size());
    for (const auto& p : dataset.pairs) human.push_back(p.human_score);

    auto score_all = [&](ScoreMode m, std::vector<bool>& fallback_flags) {
        std::vector<double> scores;
        scores.reserve(dataset.pairs.size());
        fallback_flags.resize(dataset.pairs.size());
        for (std::size_t i = 0; i < dataset.pairs.size(); ++i) {
            const auto ps = pair_score(dataset.pairs[i], provider, m, policy, vocab_tag);
            scores.push_back(ps.score);
            fallback_flags[i] = ps.fallback;
        }
        return scores;
    };

    if (mode == ScoreMode::fused) {
        std::vector<bool> fb_w, fb_m;
        const auto word_scores = score_all(ScoreMode::word, fb_w);
        const auto mesh_scores = score_all(ScoreMode::mesh, fb_m);
        std::vector<std::string> keys(dataset.pairs.size());
        for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = std::to_string(i);
        const auto fused = rank_fusion(make_ranking(keys, word_scores),
                                       make_ranking(keys, mesh_scores), fusion_k);
        std::unordered_map<std::string, double> fused_score;
        for (std::size_t i = 0; i < fused.items.size(); ++i)
            fused_score.emplace(fused.items[i], fused.scores[i]);
        std::vector<double> system(dataset.pairs.size());
        for (std::size_t i = 0; i < system.size(); ++i)
            system[i] = fused_score.at(std::to_string(i));
        res.rho = spearman(system, human);
        for (std::size_t i = 0; i < dataset.pairs.size(); ++i)
            if (fb_w[i] || fb_m[i]) ++res.n_fallback;
        return res;
    }

    std::vector<bool> fallback_flags;
    const auto system = score_all(mode, fallback_flags);
    res.rho = spearman(system, human);
    for (const bool f : fallback_flags)
        if (f) ++res.n_fallback;
    return res;
}

std::vector<Neighbor> nearest_neighbors(const std::string& query, const EmbeddingProvider& provider,
                                        std::size_t top_k, NeighborFilter filter, Policy policy,
                                        const std::string& vocab_tag) {
    if (top_k == 0) throw ConfigError("top_k must be >= 1");
    const auto qv = term_vector(query, provider, policy);
    if (!qv.defined) throw LookupError("query cannot be resolved: " + query);

    std::unordered_set<std::string> exclude;
    for (const auto& w : corpus::tokenize(query)) exclude.insert(w);
    exclude.insert(query);

    std::vector<Neighbor> all;
    for (const auto& token : provider.tokens()) {
        if (exclude.count(token)) continue;
        if (token.size() >= 2 && token.front() == '[' && token.back() == ']') continue;
        const bool is_code = mesh::is_concept_token(token, vocab_tag);
        if (filter == NeighborFilter::words_only && is_code) continue;
        if (filter == NeighborFilter::concepts_only && !is_code) continue;
        const auto v = provider.vector_for(token);
        if (!v) continue;
        all.push_back({token, cosine(std::span<const float>(qv.v), std::span<const float>(*v))});
    }
    std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.token < b.token;
    });
    if (all.size() > top_k) all.resize(top_k);
    return all;
}

} // namespace crel::eval
