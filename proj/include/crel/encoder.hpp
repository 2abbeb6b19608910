#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "crel/errors.hpp"
#include "crel/matrix.hpp"
#include "crel/rng.hpp"

namespace crel::encoder {

struct EncoderConfig {
    int layers = 12;
    int heads = 12;
    int dim = 396;
    int ffn_dim = 0; // 0 means 4 * dim
    int max_len = 64;
    double dropout = 0.1;
    std::uint64_t seed = 1;

    int ffn() const { return ffn_dim > 0 ? ffn_dim : 4 * dim; }
    int head_dim() const { return dim / heads; }
    void validate() const {
        if (layers < 1 || heads < 1 || dim < 1) throw ConfigError("layers, heads, dim must be >= 1");
        if (dim % heads != 0) throw ConfigError("dim must be divisible by heads");
        if (max_len < 5) throw ConfigError("max_len must fit [CLS] code [SEP] code [SEP]");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    }
};

// Selectable parameter groups for gradient computation and updates.
enum ParamGroup : unsigned {
    kGroupEmbeddings = 1u,
    kGroupTheta = 2u,
    kGroupTransformer = 4u, // position/segment/layer-norm/blocks/pooler/classifier
    kGroupAll = kGroupEmbeddings | kGroupTheta | kGroupTransformer,
};

// Fine-tuning token table: four special tokens at fixed ids, then the
// pre-trained vocabulary in its original order.
class TokenTable {
public:
    static constexpr int kPad = 0;
    static constexpr int kCls = 1;
    static constexpr int kSep = 2;
    static constexpr int kUnk = 3;
    static const char* special_name(int id);

    TokenTable() = default;
    // `tokens` must already begin with [PAD] [CLS] [SEP] [UNK].
    explicit TokenTable(std::vector<std::string> tokens);
    static TokenTable with_specials(const std::vector<std::string>& vocab_tokens);

    int id_or_unk(const std::string& token) const;
    int id_or_throw(const std::string& token) const;
    bool contains(const std::string& token) const { return index_.count(token) > 0; }
    const std::vector<std::string>& tokens() const { return tokens_; }
    std::size_t size() const { return tokens_.size(); }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

// Token ids, segment ids and the valid-prefix length of one classifier
// input: [CLS] codeA nameA... [SEP] codeB nameB... [SEP] [PAD]...
struct SequenceInput {
    std::vector<int> ids;
    std::vector<int> segments;
    int valid = 0; // positions >= valid are [PAD]
};

// Builds the two-segment pair input. Names are truncated from the right
// (longer name first) until the sequence fits; codes are never dropped.
SequenceInput build_pair_input(const TokenTable& table, const std::string& code_token_a,
                               const std::vector<std::string>& name_a,
                               const std::string& code_token_b,
                               const std::vector<std::string>& name_b, int max_len);

template <typename Real>
struct LayerTensors {
    Matrix<Real> wq, wk, wv, wo;
    std::vector<Real> bq, bk, bv, bo;
    std::vector<Real> ln1_gain, ln1_bias;
    Matrix<Real> w1, w2;
    std::vector<Real> b1, b2;
    std::vector<Real> ln2_gain, ln2_bias;
};

// All model parameters. Checkpoints and optimizers rely on for_each_array
// visiting tensors in this declared order: embeddings, theta, position,
// segment, embedding layer-norm, per-layer block tensors, pooler, classifier.
template <typename Real>
struct ParamTensors {
    Matrix<Real> token_embeddings; // vocab x dim
    Matrix<Real> theta;            // dim x dim, identity at initialization
    Matrix<Real> position_embeddings;
    Matrix<Real> segment_embeddings; // 2 x dim
    std::vector<Real> embed_ln_gain, embed_ln_bias;
    std::vector<LayerTensors<Real>> layers;
    Matrix<Real> pooler_w;
    std::vector<Real> pooler_b;
    std::vector<Real> classifier_w;
    Real classifier_b = Real(0);

    template <typename F>
    void for_each_array(F&& f) {
        auto mat = [&](Matrix<Real>& m, ParamGroup g) { f(std::span<Real>(m.data(), m.size()), g); };
        auto vec = [&](std::vector<Real>& v, ParamGroup g) { f(std::span<Real>(v.data(), v.size()), g); };
        mat(token_embeddings, kGroupEmbeddings);
        mat(theta, kGroupTheta);
        mat(position_embeddings, kGroupTransformer);
        mat(segment_embeddings, kGroupTransformer);
        vec(embed_ln_gain, kGroupTransformer);
        vec(embed_ln_bias, kGroupTransformer);
        for (auto& l : layers) {
            mat(l.wq, kGroupTransformer); vec(l.bq, kGroupTransformer);
            mat(l.wk, kGroupTransformer); vec(l.bk, kGroupTransformer);
            mat(l.wv, kGroupTransformer); vec(l.bv, kGroupTransformer);
            mat(l.wo, kGroupTransformer); vec(l.bo, kGroupTransformer);
            vec(l.ln1_gain, kGroupTransformer); vec(l.ln1_bias, kGroupTransformer);
            mat(l.w1, kGroupTransformer); vec(l.b1, kGroupTransformer);
            mat(l.w2, kGroupTransformer); vec(l.b2, kGroupTransformer);
            vec(l.ln2_gain, kGroupTransformer); vec(l.ln2_bias, kGroupTransformer);
        }
        mat(pooler_w, kGroupTransformer);
        vec(pooler_b, kGroupTransformer);
        vec(classifier_w, kGroupTransformer);
        f(std::span<Real>(&classifier_b, 1), kGroupTransformer);
    }

    template <typename F>
    void for_each_array(F&& f) const {
        const_cast<ParamTensors*>(this)->for_each_array(
            [&](std::span<Real> s, ParamGroup g) { f(std::span<const Real>(s.data(), s.size()), g); });
    }

    std::size_t total_size() const {
        std::size_t n = 0;
        for_each_array([&](std::span<const Real> s, ParamGroup) { n += s.size(); });
        return n;
    }

    void zero() {
        for_each_array([](std::span<Real> s, ParamGroup) { std::fill(s.begin(), s.end(), Real(0)); });
    }
};

template <typename Real>
ParamTensors<Real> make_params(const EncoderConfig& config, std::size_t vocab_size) {
    const auto d = static_cast<std::size_t>(config.dim);
    const auto f = static_cast<std::size_t>(config.ffn());
    ParamTensors<Real> p;
    p.token_embeddings = Matrix<Real>(vocab_size, d);
    p.theta = Matrix<Real>::identity(d);
    p.position_embeddings = Matrix<Real>(static_cast<std::size_t>(config.max_len), d);
    p.segment_embeddings = Matrix<Real>(2, d);
    p.embed_ln_gain.assign(d, Real(1));
    p.embed_ln_bias.assign(d, Real(0));
    p.layers.resize(static_cast<std::size_t>(config.layers));
    for (auto& l : p.layers) {
        l.wq = Matrix<Real>(d, d); l.bq.assign(d, Real(0));
        l.wk = Matrix<Real>(d, d); l.bk.assign(d, Real(0));
        l.wv = Matrix<Real>(d, d); l.bv.assign(d, Real(0));
        l.wo = Matrix<Real>(d, d); l.bo.assign(d, Real(0));
        l.ln1_gain.assign(d, Real(1)); l.ln1_bias.assign(d, Real(0));
        l.w1 = Matrix<Real>(f, d); l.b1.assign(f, Real(0));
        l.w2 = Matrix<Real>(d, f); l.b2.assign(d, Real(0));
        l.ln2_gain.assign(d, Real(1)); l.ln2_bias.assign(d, Real(0));
    }
    p.pooler_w = Matrix<Real>(d, d);
    p.pooler_b.assign(d, Real(0));
    p.classifier_w.assign(d, Real(0));
    p.classifier_b = Real(0);
    return p;
}

// Gaussian(0, 0.02) init for weight matrices; layer norms stay at (1, 0),
// biases at 0 and theta at the identity. Token embeddings are normally
// loaded from pre-trained vectors afterwards.
template <typename Real>
void init_weights(ParamTensors<Real>& p, std::uint64_t seed) {
    Rng rng(seed);
    auto fill_gauss = [&](Matrix<Real>& m) {
        for (std::size_t i = 0; i < m.size(); ++i)
            m.data()[i] = static_cast<Real>(rng.gaussian() * 0.02);
    };
    fill_gauss(p.token_embeddings);
    fill_gauss(p.position_embeddings);
    fill_gauss(p.segment_embeddings);
    for (auto& l : p.layers) {
        fill_gauss(l.wq);
        fill_gauss(l.wk);
        fill_gauss(l.wv);
        fill_gauss(l.wo);
        fill_gauss(l.w1);
        fill_gauss(l.w2);
    }
    fill_gauss(p.pooler_w);
    for (auto& w : p.classifier_w) w = static_cast<Real>(rng.gaussian() * 0.02);
}

template <typename Real>
struct EncoderModel {
    EncoderConfig config;
    ParamTensors<Real> params;

    EncoderModel() = default;
    EncoderModel(const EncoderConfig& cfg, std::size_t vocab_size) : config(cfg) {
        config.validate();
        params = make_params<Real>(config, vocab_size);
    }
};

namespace nn {

constexpr double kLayerNormEps = 1e-5;

template <typename Real>
inline Real gelu(Real x) {
    return Real(0.5) * x * (Real(1) + std::erf(x * Real(0.7071067811865475)));
}

template <typename Real>
inline Real gelu_grad(Real x) {
    const Real cdf = Real(0.5) * (Real(1) + std::erf(x * Real(0.7071067811865475)));
    const Real pdf = std::exp(Real(-0.5) * x * x) * Real(0.3989422804014327);
    return cdf + x * pdf;
}

template <typename Real>
inline Real sigmoid(Real x) {
    return Real(1) / (Real(1) + std::exp(-x));
}

// y = gain * normalized(x) + bias over the last dimension of one position.
template <typename Real>
inline void layer_norm_forward(std::span<const Real> x, std::span<const Real> gain,
                               std::span<const Real> bias, std::span<Real> normalized,
                               std::span<Real> y, Real& invstd_out) {
    const std::size_t d = x.size();
    Real mean = Real(0);
    for (const Real v : x) mean += v;
    mean /= static_cast<Real>(d);
    Real var = Real(0);
    for (const Real v : x) var += (v - mean) * (v - mean);
    var /= static_cast<Real>(d);
    const Real invstd = Real(1) / std::sqrt(var + static_cast<Real>(kLayerNormEps));
    invstd_out = invstd;
    for (std::size_t i = 0; i < d; ++i) {
        normalized[i] = (x[i] - mean) * invstd;
        y[i] = gain[i] * normalized[i] + bias[i];
    }
}

template <typename Real>
inline void layer_norm_backward(std::span<const Real> dy, std::span<const Real> normalized,
                                Real invstd, std::span<const Real> gain, std::span<Real> dgain,
                                std::span<Real> dbias, std::span<Real> dx, bool accumulate_params) {
    const std::size_t d = dy.size();
    Real mean_dn = Real(0), mean_dn_n = Real(0);
    for (std::size_t i = 0; i < d; ++i) {
        const Real dn = dy[i] * gain[i];
        mean_dn += dn;
        mean_dn_n += dn * normalized[i];
    }
    mean_dn /= static_cast<Real>(d);
    mean_dn_n /= static_cast<Real>(d);
    for (std::size_t i = 0; i < d; ++i) {
        const Real dn = dy[i] * gain[i];
        dx[i] = invstd * (dn - mean_dn - normalized[i] * mean_dn_n);
        if (accumulate_params) {
            dgain[i] += dy[i] * normalized[i];
            dbias[i] += dy[i];
        }
    }
}

} // namespace nn

// Per-example activation cache for the backward pass.
template <typename Real>
struct LayerCache {
    Matrix<Real> q, k, v, ctx;    // T x dim
    std::vector<Real> attn;       // heads x T x T probabilities
    Matrix<Real> attn_drop;       // dropout multipliers (empty when disabled)
    Matrix<Real> n1;              // T x dim normalized values of LN1
    std::vector<Real> invstd1;    // T
    Matrix<Real> x1;              // T x dim LN1 output (FFN input)
    Matrix<Real> h_pre;           // T x ffn
    Matrix<Real> ffn_drop;
    Matrix<Real> n2;
    std::vector<Real> invstd2;
};

template <typename Real>
struct ForwardCache {
    SequenceInput input;
    Matrix<Real> theta_out;          // T x dim (theta applied to embeddings)
    Matrix<Real> n0;                 // embedding layer norm
    std::vector<Real> invstd0;
    Matrix<Real> embed_drop;
    std::vector<Matrix<Real>> hidden; // layers+1 entries of T x dim
    std::vector<LayerCache<Real>> layer;
    std::vector<Real> pooled;        // dim
    Real logit = Real(0);
    Real prob = Real(0);
};

// Numerically stable binary cross-entropy.
template <typename Real>
inline Real bce_from_logit(Real logit, Real label) {
    // softplus(logit) - label * logit
    const Real sp = logit > Real(0) ? logit + std::log1p(std::exp(-logit))
                                    : std::log1p(std::exp(logit));
    return sp - label * logit;
}

template <typename Real>
inline Real binary_cross_entropy(Real prob, Real label) {
    if (prob <= Real(0) || prob >= Real(1)) throw ConfigError("probability must be in (0, 1)");
    return -(label * std::log(prob) + (Real(1) - label) * std::log(Real(1) - prob));
}

// Forward pass for one sequence. When `dropout_rng` is null (or the config's
// dropout is zero) the pass is a deterministic pure function of the inputs.
template <typename Real>
Real encoder_forward(const EncoderModel<Real>& model, const SequenceInput& input,
                     ForwardCache<Real>& cache, Rng* dropout_rng);

// Exact reverse-mode gradients of (d loss / d logit) = upstream for the
// selected parameter groups; unselected groups stay untouched.
template <typename Real>
void encoder_backward(const EncoderModel<Real>& model, const ForwardCache<Real>& cache,
                      Real dlogit, unsigned groups, ParamTensors<Real>& grads);

enum class Reduction { mean, sum };

template <typename Real>
struct BatchStats {
    double loss = 0.0;
    std::size_t correct = 0;
    std::size_t count = 0;
};

template <typename Real>
BatchStats<Real> batch_forward_backward(const EncoderModel<Real>& model,
                                        const std::vector<SequenceInput>& inputs,
                                        const std::vector<Real>& labels, unsigned groups,
                                        Reduction reduction, ParamTensors<Real>& grads,
                                        Rng* dropout_rng);

// Dropout-free forward returning the positive-class probability.
template <typename Real>
Real predict_prob(const EncoderModel<Real>& model, const SequenceInput& input) {
    ForwardCache<Real> cache;
    return encoder_forward(model, input, cache, nullptr);
}

// ---------------------------------------------------------------------------
// implementation

template <typename Real>
Real encoder_forward(const EncoderModel<Real>& model, const SequenceInput& input,
                     ForwardCache<Real>& cache, Rng* dropout_rng) {
    const auto& cfg = model.config;
    const auto& p = model.params;
    const auto T = static_cast<std::size_t>(cfg.max_len);
    const auto d = static_cast<std::size_t>(cfg.dim);
    const auto f = static_cast<std::size_t>(cfg.ffn());
    const auto heads = static_cast<std::size_t>(cfg.heads);
    const auto dh = static_cast<std::size_t>(cfg.head_dim());
    const auto valid = static_cast<std::size_t>(input.valid);
    if (input.ids.size() != T || input.segments.size() != T || valid == 0 || valid > T)
        throw ValidationError("sequence input does not match encoder config");

    const bool use_dropout = dropout_rng != nullptr && cfg.dropout > 0.0;
    const Real keep_scale = use_dropout ? Real(1.0 / (1.0 - cfg.dropout)) : Real(1);
    auto fill_dropout = [&](Matrix<Real>& mask, std::size_t rows, std::size_t cols) {
        if (!use_dropout) { mask = Matrix<Real>(); return; }
        mask = Matrix<Real>(rows, cols);
        for (std::size_t i = 0; i < mask.size(); ++i)
            mask.data()[i] = dropout_rng->uniform() < cfg.dropout ? Real(0) : keep_scale;
    };

    cache.input = input;
    cache.theta_out = Matrix<Real>(T, d);
    cache.n0 = Matrix<Real>(T, d);
    cache.invstd0.assign(T, Real(0));
    cache.hidden.assign(static_cast<std::size_t>(cfg.layers) + 1, Matrix<Real>(T, d));
    cache.layer.assign(static_cast<std::size_t>(cfg.layers), LayerCache<Real>{});

    // Embedding stage: theta(E[id]) + position + segment, layer norm, dropout.
    fill_dropout(cache.embed_drop, T, d);
    for (std::size_t t = 0; t < T; ++t) {
        const auto id = static_cast<std::size_t>(input.ids[t]);
        const auto seg = static_cast<std::size_t>(input.segments[t]);
        auto th = cache.theta_out.row(t);
        matvec(p.theta, p.token_embeddings.row(id), th);
        std::vector<Real> sum(d);
        for (std::size_t i = 0; i < d; ++i)
            sum[i] = th[i] + p.position_embeddings(t, i) + p.segment_embeddings(seg, i);
        std::vector<Real> y(d);
        nn::layer_norm_forward<Real>(sum, p.embed_ln_gain, p.embed_ln_bias, cache.n0.row(t), y,
                                     cache.invstd0[t]);
        auto x0 = cache.hidden[0].row(t);
        for (std::size_t i = 0; i < d; ++i)
            x0[i] = use_dropout ? y[i] * cache.embed_drop(t, i) : y[i];
    }

    const Real inv_sqrt_dh = Real(1) / std::sqrt(static_cast<Real>(dh));
    std::vector<Real> scores(T);

    for (std::size_t l = 0; l < static_cast<std::size_t>(cfg.layers); ++l) {
        const auto& lp = p.layers[l];
        auto& lc = cache.layer[l];
        const auto& x = cache.hidden[l];
        lc.q = Matrix<Real>(T, d);
        lc.k = Matrix<Real>(T, d);
        lc.v = Matrix<Real>(T, d);
        lc.ctx = Matrix<Real>(T, d);
        lc.attn.assign(heads * T * T, Real(0));
        lc.n1 = Matrix<Real>(T, d);
        lc.invstd1.assign(T, Real(0));
        lc.x1 = Matrix<Real>(T, d);
        lc.h_pre = Matrix<Real>(T, f);
        lc.n2 = Matrix<Real>(T, d);
        lc.invstd2.assign(T, Real(0));
        fill_dropout(lc.attn_drop, T, d);
        fill_dropout(lc.ffn_drop, T, d);

        for (std::size_t t = 0; t < T; ++t) {
            matvec(lp.wq, x.row(t), lc.q.row(t));
            matvec(lp.wk, x.row(t), lc.k.row(t));
            matvec(lp.wv, x.row(t), lc.v.row(t));
            for (std::size_t i = 0; i < d; ++i) {
                lc.q(t, i) += lp.bq[i];
                lc.k(t, i) += lp.bk[i];
                lc.v(t, i) += lp.bv[i];
            }
        }

        // Attention: keys are restricted to the valid prefix, so padding can
        // never influence any non-pad position.
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            for (std::size_t t = 0; t < T; ++t) {
                Real max_score = -std::numeric_limits<Real>::infinity();
                for (std::size_t j = 0; j < valid; ++j) {
                    Real s = Real(0);
                    for (std::size_t i = 0; i < dh; ++i) s += lc.q(t, off + i) * lc.k(j, off + i);
                    s *= inv_sqrt_dh;
                    scores[j] = s;
                    max_score = std::max(max_score, s);
                }
                Real denom = Real(0);
                for (std::size_t j = 0; j < valid; ++j) {
                    scores[j] = std::exp(scores[j] - max_score);
                    denom += scores[j];
                }
                Real* alpha = &lc.attn[(h * T + t) * T];
                for (std::size_t j = 0; j < valid; ++j) alpha[j] = scores[j] / denom;
                for (std::size_t i = 0; i < dh; ++i) {
                    Real acc = Real(0);
                    for (std::size_t j = 0; j < valid; ++j) acc += alpha[j] * lc.v(j, off + i);
                    lc.ctx(t, off + i) = acc;
                }
            }
        }

        // Output projection, residual, LN1.
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<Real> attn_out(d);
            matvec(lp.wo, lc.ctx.row(t), std::span<Real>(attn_out));
            std::vector<Real> r1(d), y1(d);
            for (std::size_t i = 0; i < d; ++i) {
                Real a = attn_out[i] + lp.bo[i];
                if (use_dropout) a *= lc.attn_drop(t, i);
                r1[i] = x(t, i) + a;
            }
            nn::layer_norm_forward<Real>(r1, lp.ln1_gain, lp.ln1_bias, lc.n1.row(t), y1,
                                         lc.invstd1[t]);
            for (std::size_t i = 0; i < d; ++i) lc.x1(t, i) = y1[i];
        }

        // FFN, residual, LN2.
        for (std::size_t t = 0; t < T; ++t) {
            matvec(lp.w1, lc.x1.row(t), lc.h_pre.row(t));
            std::vector<Real> act(f);
            for (std::size_t i = 0; i < f; ++i) {
                lc.h_pre(t, i) += lp.b1[i];
                act[i] = nn::gelu(lc.h_pre(t, i));
            }
            std::vector<Real> ffn_out(d), r2(d), y2(d);
            matvec(lp.w2, std::span<const Real>(act), std::span<Real>(ffn_out));
            for (std::size_t i = 0; i < d; ++i) {
                Real v2 = ffn_out[i] + lp.b2[i];
                if (use_dropout) v2 *= lc.ffn_drop(t, i);
                r2[i] = lc.x1(t, i) + v2;
            }
            nn::layer_norm_forward<Real>(r2, lp.ln2_gain, lp.ln2_bias, lc.n2.row(t), y2,
                                         lc.invstd2[t]);
            for (std::size_t i = 0; i < d; ++i) cache.hidden[l + 1](t, i) = y2[i];
        }
    }

    // Pooler over the [CLS] position, then the sigmoid classifier.
    cache.pooled.assign(d, Real(0));
    matvec(p.pooler_w, cache.hidden.back().row(0), std::span<Real>(cache.pooled));
    for (std::size_t i = 0; i < d; ++i) cache.pooled[i] = std::tanh(cache.pooled[i] + p.pooler_b[i]);
    cache.logit = dot(std::span<const Real>(p.classifier_w), std::span<const Real>(cache.pooled)) +
                  p.classifier_b;
    cache.prob = nn::sigmoid(cache.logit);
    return cache.prob;
}

template <typename Real>
void encoder_backward(const EncoderModel<Real>& model, const ForwardCache<Real>& cache,
                      Real dlogit, unsigned groups, ParamTensors<Real>& grads) {
    const auto& cfg = model.config;
    const auto& p = model.params;
    const auto T = static_cast<std::size_t>(cfg.max_len);
    const auto d = static_cast<std::size_t>(cfg.dim);
    const auto f = static_cast<std::size_t>(cfg.ffn());
    const auto heads = static_cast<std::size_t>(cfg.heads);
    const auto dh = static_cast<std::size_t>(cfg.head_dim());
    const auto valid = static_cast<std::size_t>(cache.input.valid);
    const bool use_dropout = cache.embed_drop.size() > 0;
    const bool wants_transformer = (groups & kGroupTransformer) != 0;

    // Classifier and pooler.
    std::vector<Real> d_pooled(d);
    for (std::size_t i = 0; i < d; ++i) d_pooled[i] = dlogit * p.classifier_w[i];
    if (wants_transformer) {
        for (std::size_t i = 0; i < d; ++i) grads.classifier_w[i] += dlogit * cache.pooled[i];
        grads.classifier_b += dlogit;
    }
    std::vector<Real> d_pool_pre(d);
    for (std::size_t i = 0; i < d; ++i)
        d_pool_pre[i] = d_pooled[i] * (Real(1) - cache.pooled[i] * cache.pooled[i]);

    Matrix<Real> dx(T, d);
    {
        const auto cls = cache.hidden.back().row(0);
        std::vector<Real> d_cls(d, Real(0));
        for (std::size_t r = 0; r < d; ++r) {
            const Real g = d_pool_pre[r];
            if (wants_transformer) {
                axpy(g, cls, grads.pooler_w.row(r));
                grads.pooler_b[r] += g;
            }
            axpy(g, p.pooler_w.row(r), std::span<Real>(d_cls));
        }
        for (std::size_t i = 0; i < d; ++i) dx(0, i) = d_cls[i];
    }

    std::vector<Real> d_alpha(T), d_scores(T);

    for (std::size_t l = static_cast<std::size_t>(cfg.layers); l-- > 0;) {
        const auto& lp = p.layers[l];
        const auto& lc = cache.layer[l];
        auto& lg = grads.layers[l];
        const auto& x = cache.hidden[l];

        // LN2 backward into the FFN residual.
        Matrix<Real> d_r2(T, d);
        for (std::size_t t = 0; t < T; ++t) {
            nn::layer_norm_backward<Real>(dx.row(t), lc.n2.row(t), lc.invstd2[t], lp.ln2_gain,
                                          lg.ln2_gain, lg.ln2_bias, d_r2.row(t),
                                          wants_transformer);
        }

        // FFN backward; d_r2 also flows straight to x1 via the residual.
        Matrix<Real> d_x1 = d_r2;
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<Real> d_f(d);
            for (std::size_t i = 0; i < d; ++i) {
                Real g = d_r2(t, i);
                if (use_dropout) g *= lc.ffn_drop(t, i);
                d_f[i] = g;
            }
            std::vector<Real> act(f), d_act(f, Real(0));
            for (std::size_t i = 0; i < f; ++i) act[i] = nn::gelu(lc.h_pre(t, i));
            for (std::size_t r = 0; r < d; ++r) {
                const Real g = d_f[r];
                if (g == Real(0)) continue;
                if (wants_transformer) {
                    axpy(g, std::span<const Real>(act), lg.w2.row(r));
                    lg.b2[r] += g;
                }
                axpy(g, lp.w2.row(r), std::span<Real>(d_act));
            }
            std::vector<Real> d_hpre(f);
            for (std::size_t i = 0; i < f; ++i)
                d_hpre[i] = d_act[i] * nn::gelu_grad(lc.h_pre(t, i));
            for (std::size_t r = 0; r < f; ++r) {
                const Real g = d_hpre[r];
                if (g == Real(0)) continue;
                if (wants_transformer) {
                    axpy(g, lc.x1.row(t), lg.w1.row(r));
                    lg.b1[r] += g;
                }
                axpy(g, lp.w1.row(r), d_x1.row(t));
            }
        }

        // LN1 backward into the attention residual.
        Matrix<Real> d_r1(T, d);
        for (std::size_t t = 0; t < T; ++t) {
            nn::layer_norm_backward<Real>(d_x1.row(t), lc.n1.row(t), lc.invstd1[t], lp.ln1_gain,
                                          lg.ln1_gain, lg.ln1_bias, d_r1.row(t),
                                          wants_transformer);
        }

        // Residual to the block input plus the attention path.
        dx = d_r1;
        Matrix<Real> d_ctx(T, d);
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<Real> d_attn_out(d);
            for (std::size_t i = 0; i < d; ++i) {
                Real g = d_r1(t, i);
                if (use_dropout) g *= lc.attn_drop(t, i);
                d_attn_out[i] = g;
            }
            for (std::size_t r = 0; r < d; ++r) {
                const Real g = d_attn_out[r];
                if (g == Real(0)) continue;
                if (wants_transformer) {
                    axpy(g, lc.ctx.row(t), lg.wo.row(r));
                    lg.bo[r] += g;
                }
                axpy(g, lp.wo.row(r), d_ctx.row(t));
            }
        }

        Matrix<Real> d_q(T, d), d_k(T, d), d_v(T, d);
        const Real inv_sqrt_dh = Real(1) / std::sqrt(static_cast<Real>(dh));
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            for (std::size_t t = 0; t < T; ++t) {
                const Real* alpha = &lc.attn[(h * T + t) * T];
                Real dot_da_a = Real(0);
                for (std::size_t j = 0; j < valid; ++j) {
                    Real da = Real(0);
                    for (std::size_t i = 0; i < dh; ++i) da += d_ctx(t, off + i) * lc.v(j, off + i);
                    d_alpha[j] = da;
                    dot_da_a += da * alpha[j];
                    for (std::size_t i = 0; i < dh; ++i)
                        d_v(j, off + i) += alpha[j] * d_ctx(t, off + i);
                }
                for (std::size_t j = 0; j < valid; ++j)
                    d_scores[j] = alpha[j] * (d_alpha[j] - dot_da_a);
                for (std::size_t j = 0; j < valid; ++j) {
                    const Real s = d_scores[j] * inv_sqrt_dh;
                    if (s == Real(0)) continue;
                    for (std::size_t i = 0; i < dh; ++i) {
                        d_q(t, off + i) += s * lc.k(j, off + i);
                        d_k(j, off + i) += s * lc.q(t, off + i);
                    }
                }
            }
        }

        // Projections back to the block input.
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t r = 0; r < d; ++r) {
                const Real gq = d_q(t, r), gk = d_k(t, r), gv = d_v(t, r);
                if (wants_transformer) {
                    if (gq != Real(0)) { axpy(gq, x.row(t), lg.wq.row(r)); lg.bq[r] += gq; }
                    if (gk != Real(0)) { axpy(gk, x.row(t), lg.wk.row(r)); lg.bk[r] += gk; }
                    if (gv != Real(0)) { axpy(gv, x.row(t), lg.wv.row(r)); lg.bv[r] += gv; }
                }
                if (gq != Real(0)) axpy(gq, lp.wq.row(r), dx.row(t));
                if (gk != Real(0)) axpy(gk, lp.wk.row(r), dx.row(t));
                if (gv != Real(0)) axpy(gv, lp.wv.row(r), dx.row(t));
            }
        }
    }

    // Embedding stage backward.
    const bool wants_theta = (groups & kGroupTheta) != 0;
    const bool wants_embed = (groups & kGroupEmbeddings) != 0;
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<Real> d_y0(d);
        for (std::size_t i = 0; i < d; ++i) {
            Real g = dx(t, i);
            if (use_dropout) g *= cache.embed_drop(t, i);
            d_y0[i] = g;
        }
        std::vector<Real> d_sum(d);
        nn::layer_norm_backward<Real>(d_y0, cache.n0.row(t), cache.invstd0[t], p.embed_ln_gain,
                                      grads.embed_ln_gain, grads.embed_ln_bias, d_sum,
                                      wants_transformer);
        const auto id = static_cast<std::size_t>(cache.input.ids[t]);
        const auto seg = static_cast<std::size_t>(cache.input.segments[t]);
        if (wants_transformer) {
            axpy(Real(1), std::span<const Real>(d_sum), grads.position_embeddings.row(t));
            axpy(Real(1), std::span<const Real>(d_sum), grads.segment_embeddings.row(seg));
        }
        if (wants_theta) {
            const auto e = p.token_embeddings.row(id);
            for (std::size_t r = 0; r < d; ++r) axpy(d_sum[r], e, grads.theta.row(r));
        }
        if (wants_embed) {
            // dE[id] += theta^T d_sum
            auto ge = grads.token_embeddings.row(id);
            for (std::size_t r = 0; r < d; ++r) axpy(d_sum[r], p.theta.row(r), ge);
        }
    }
}

template <typename Real>
BatchStats<Real> batch_forward_backward(const EncoderModel<Real>& model,
                                        const std::vector<SequenceInput>& inputs,
                                        const std::vector<Real>& labels, unsigned groups,
                                        Reduction reduction, ParamTensors<Real>& grads,
                                        Rng* dropout_rng) {
    if (inputs.size() != labels.size()) throw ValidationError("batch inputs/labels mismatch");
    if (inputs.empty()) throw ValidationError("empty batch");
    BatchStats<Real> stats;
    const Real scale = reduction == Reduction::mean
                           ? Real(1) / static_cast<Real>(inputs.size())
                           : Real(1);
    ForwardCache<Real> cache;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Real prob = encoder_forward(model, inputs[i], cache, dropout_rng);
        const Real loss = bce_from_logit(cache.logit, labels[i]);
        stats.loss += static_cast<double>(loss) * static_cast<double>(scale);
        stats.correct += ((prob >= Real(0.5)) == (labels[i] >= Real(0.5))) ? 1u : 0u;
        ++stats.count;
        const Real dlogit = (nn::sigmoid(cache.logit) - labels[i]) * scale;
        encoder_backward(model, cache, dlogit, groups, grads);
    }
    return stats;
}

// Binary checkpoint: "CRL1" magic, version byte, a length-prefixed config
// block (config, token table and opaque run state), then the parameter
// arrays as little-endian 32-bit floats in declared order.
void save_checkpoint(const std::string& path, const EncoderModel<float>& model,
                     const TokenTable& table, const std::string& extra_state);

struct Checkpoint {
    EncoderModel<float> model;
    TokenTable table;
    std::string extra_state;
};
Checkpoint load_checkpoint(const std::string& path);

} // namespace crel::encoder
