#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "patchrec/error.hpp"
#include "patchrec/layout.hpp"
#include "patchrec/rng.hpp"
#include "patchrec/tensor.hpp"
#include "patchrec/vocab.hpp"

#include <json.hpp>

namespace patchrec {

struct ModelConfig {
    std::size_t d = 32;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t max_positions = 512;
    std::size_t vocab_size = 0;

    void validate() const {
        if (d == 0 || n_heads == 0 || d % n_heads != 0) {
            throw ConfigError("model config: d must be a positive multiple of n_heads");
        }
        if (vocab_size == 0) throw ConfigError("model config: vocab_size must be positive");
        if (max_positions == 0) throw ConfigError("model config: max_positions must be positive");
    }

    nlohmann::json to_json() const {
        return {{"version", 1},      {"d", d},
                {"n_layers", n_layers}, {"n_heads", n_heads},
                {"max_positions", max_positions}, {"vocab_size", vocab_size}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        if (!j.contains("version")) throw ConfigError("model config: missing version field");
        if (j["version"].get<int>() != 1) {
            throw ConfigError("model config: unsupported version " + j["version"].dump());
        }
        ModelConfig c;
        c.d = j.at("d").get<std::size_t>();
        c.n_layers = j.at("n_layers").get<std::size_t>();
        c.n_heads = j.at("n_heads").get<std::size_t>();
        c.max_positions = j.at("max_positions").get<std::size_t>();
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.validate();
        return c;
    }
};

/// All trainable parameters. The output head is tied to the token embedding
/// table: logits are computed against the same storage the gather reads, so
/// patch space and decoding space share one set of vectors.
struct ModelState {
    struct Layer {
        Tensor ln1_gain, ln1_bias;
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ln2_gain, ln2_bias;
        Tensor w1, b1, w2, b2;
    };

    ModelConfig config;
    Tensor token_embedding; // [vocab x d]; also the tied output head
    Tensor pos_embedding;   // [max_positions x d]
    std::vector<Layer> layers;

    static ModelState init(const ModelConfig& config, std::uint64_t seed) {
        config.validate();
        Rng rng(mix_seed(seed, 0x5EED));
        const std::size_t d = config.d;
        const double std0 = 0.02;
        ModelState s;
        s.config = config;
        s.token_embedding = Tensor::randn({config.vocab_size, d}, rng, std0, true);
        s.pos_embedding = Tensor::randn({config.max_positions, d}, rng, std0, true);
        for (std::size_t l = 0; l < config.n_layers; ++l) {
            Layer layer;
            layer.ln1_gain = Tensor::from({1, d}, std::vector<double>(d, 1.0), true);
            layer.ln1_bias = Tensor::zeros({1, d}, true);
            layer.wq = Tensor::randn({d, d}, rng, std0, true);
            layer.bq = Tensor::zeros({1, d}, true);
            layer.wk = Tensor::randn({d, d}, rng, std0, true);
            layer.bk = Tensor::zeros({1, d}, true);
            layer.wv = Tensor::randn({d, d}, rng, std0, true);
            layer.bv = Tensor::zeros({1, d}, true);
            layer.wo = Tensor::randn({d, d}, rng, std0, true);
            layer.bo = Tensor::zeros({1, d}, true);
            layer.ln2_gain = Tensor::from({1, d}, std::vector<double>(d, 1.0), true);
            layer.ln2_bias = Tensor::zeros({1, d}, true);
            layer.w1 = Tensor::randn({d, 4 * d}, rng, std0, true);
            layer.b1 = Tensor::zeros({1, 4 * d}, true);
            layer.w2 = Tensor::randn({4 * d, d}, rng, std0, true);
            layer.b2 = Tensor::zeros({1, d}, true);
            s.layers.push_back(std::move(layer));
        }
        return s;
    }

    /// Stable (name, tensor) enumeration; checkpoint and optimizer order.
    std::vector<std::pair<std::string, Tensor>> named_parameters() {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("token_embedding", token_embedding);
        out.emplace_back("pos_embedding", pos_embedding);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            Layer& ly = layers[l];
            out.emplace_back(p + "ln1_gain", ly.ln1_gain);
            out.emplace_back(p + "ln1_bias", ly.ln1_bias);
            out.emplace_back(p + "wq", ly.wq);
            out.emplace_back(p + "bq", ly.bq);
            out.emplace_back(p + "wk", ly.wk);
            out.emplace_back(p + "bk", ly.bk);
            out.emplace_back(p + "wv", ly.wv);
            out.emplace_back(p + "bv", ly.bv);
            out.emplace_back(p + "wo", ly.wo);
            out.emplace_back(p + "bo", ly.bo);
            out.emplace_back(p + "ln2_gain", ly.ln2_gain);
            out.emplace_back(p + "ln2_bias", ly.ln2_bias);
            out.emplace_back(p + "w1", ly.w1);
            out.emplace_back(p + "b1", ly.b1);
            out.emplace_back(p + "w2", ly.w2);
            out.emplace_back(p + "b2", ly.b2);
        }
        return out;
    }

    ModelState clone() const {
        ModelState s;
        s.config = config;
        s.token_embedding = token_embedding.clone();
        s.pos_embedding = pos_embedding.clone();
        for (const Layer& ly : layers) {
            Layer c;
            c.ln1_gain = ly.ln1_gain.clone();
            c.ln1_bias = ly.ln1_bias.clone();
            c.wq = ly.wq.clone();
            c.bq = ly.bq.clone();
            c.wk = ly.wk.clone();
            c.bk = ly.bk.clone();
            c.wv = ly.wv.clone();
            c.bv = ly.bv.clone();
            c.wo = ly.wo.clone();
            c.bo = ly.bo.clone();
            c.ln2_gain = ly.ln2_gain.clone();
            c.ln2_bias = ly.ln2_bias.clone();
            c.w1 = ly.w1.clone();
            c.b1 = ly.b1.clone();
            c.w2 = ly.w2.clone();
            c.b2 = ly.b2.clone();
            s.layers.push_back(std::move(c));
        }
        return s;
    }
};

// ---------------------------------------------------------------------------
// Embedding a layout
// ---------------------------------------------------------------------------

/// Content embeddings of the layout, before positional embeddings: raw and
/// special tokens become table rows, an item patch is the mean of its title
/// token embeddings, a session patch is the mean of its item patches (a mean
/// of means, never a token-weighted mean). Patches are recomputed from the
/// live table on every call, so gradients always reach the token embeddings.
/// With include_target, the target title tokens (not the label-only EOS) are
/// appended as input rows.
inline Tensor embed_segments(const ModelState& state, const PromptLayout& layout,
                             const TokenizedCatalog& tc, bool include_target = true) {
    std::vector<Tensor> pieces;
    std::vector<TokenId> pending;
    auto flush = [&]() {
        if (pending.empty()) return;
        pieces.push_back(embedding_gather(state.token_embedding, pending));
        pending.clear();
    };
    auto item_patch = [&](std::int64_t item) {
        return mean_pool(embedding_gather(state.token_embedding, tc.title_tokens(item)));
    };
    for (const Segment& s : layout.segments) {
        switch (s.kind) {
        case SegmentKind::Special:
        case SegmentKind::RawTokens:
            pending.insert(pending.end(), s.token_ids.begin(), s.token_ids.end());
            break;
        case SegmentKind::ItemPatch:
            flush();
            pieces.push_back(item_patch(s.source_item_ids.at(0)));
            break;
        case SegmentKind::SessionPatch: {
            flush();
            std::vector<Tensor> members;
            for (std::int64_t item : s.source_item_ids) members.push_back(item_patch(item));
            pieces.push_back(mean_pool(concat_rows(members)));
            break;
        }
        }
    }
    if (include_target && layout.target_token_ids.size() > 1) {
        pending.insert(pending.end(), layout.target_token_ids.begin(),
                       layout.target_token_ids.end() - 1);
    }
    flush();
    return concat_rows(pieces);
}

/// Content embeddings plus learned absolute positional embeddings.
inline Tensor embed_layout(const ModelState& state, const PromptLayout& layout,
                           const TokenizedCatalog& tc, bool include_target = true) {
    Tensor x = embed_segments(state, layout, tc, include_target);
    const std::size_t p = x.rows();
    if (p > state.config.max_positions) {
        throw DimensionError("embed_layout: layout needs " + std::to_string(p) +
                             " positions but max_positions is " +
                             std::to_string(state.config.max_positions));
    }
    return add(x, slice_rows(state.pos_embedding, 0, p));
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace detail {

/// Per-layer attention inputs captured for incremental decoding.
struct LayerTrace {
    Tensor k, v; // [P x d] after projection and bias
};

inline Tensor transformer_stack(const ModelState& state, const Tensor& input,
                                std::vector<LayerTrace>* trace) {
    const std::size_t d = state.config.d;
    const std::size_t heads = state.config.n_heads;
    const std::size_t dh = d / heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor x = input;
    for (const ModelState::Layer& ly : state.layers) {
        Tensor h = layer_norm(x, ly.ln1_gain, ly.ln1_bias);
        Tensor q = add_rowvec(matmul(h, ly.wq), ly.bq);
        Tensor k = add_rowvec(matmul(h, ly.wk), ly.bk);
        Tensor v = add_rowvec(matmul(h, ly.wv), ly.bv);
        if (trace) trace->push_back({k, v});
        std::vector<Tensor> ctx;
        for (std::size_t hd = 0; hd < heads; ++hd) {
            Tensor qh = slice_cols(q, hd * dh, dh);
            Tensor kh = slice_cols(k, hd * dh, dh);
            Tensor vh = slice_cols(v, hd * dh, dh);
            Tensor attn = causal_softmax(scale(matmul_nt(qh, kh), att_scale));
            ctx.push_back(matmul(attn, vh));
        }
        Tensor attn_out = add_rowvec(matmul(concat_cols(ctx), ly.wo), ly.bo);
        x = add(x, attn_out);
        Tensor h2 = layer_norm(x, ly.ln2_gain, ly.ln2_bias);
        Tensor mlp = add_rowvec(matmul(gelu(add_rowvec(matmul(h2, ly.w1), ly.b1)), ly.w2), ly.b2);
        x = add(x, mlp);
    }
    return x;
}

} // namespace detail

/// Logits for an already-embedded input (tied head).
inline Tensor forward_from(const ModelState& state, const Tensor& embedded) {
    Tensor x = detail::transformer_stack(state, embedded, nullptr);
    Tensor logits = matmul_nt(x, state.token_embedding);
    for (double v : logits.data()) {
        if (!std::isfinite(v)) throw NumericsError("forward: non-finite logit");
    }
    return logits;
}

/// Causal logits at every position of the layout (history + target inputs).
inline Tensor forward(const ModelState& state, const PromptLayout& layout,
                      const TokenizedCatalog& tc) {
    return forward_from(state, embed_layout(state, layout, tc, true));
}

/// Targets and supervision mask for a layout of `positions` input rows: the
/// positions from ANS through the last target input predict the target title
/// tokens and EOS; everything earlier is masked out.
struct LossTargets {
    std::vector<TokenId> targets;
    std::vector<std::uint8_t> mask;
};

inline LossTargets loss_targets(const PromptLayout& layout) {
    if (layout.target_token_ids.empty()) {
        throw DataError("loss: layout has an empty target");
    }
    const std::size_t prompt = layout.prompt_positions();
    const std::size_t total = layout.model_input_length();
    LossTargets lt;
    lt.targets.assign(total, 0);
    lt.mask.assign(total, 0);
    for (std::size_t j = 0; j < layout.target_token_ids.size(); ++j) {
        const std::size_t pos = prompt - 1 + j;
        lt.targets[pos] = layout.target_token_ids[j];
        lt.mask[pos] = 1;
    }
    return lt;
}

/// Cross entropy over the target positions of precomputed logits.
inline Tensor masked_loss(const Tensor& logits, const PromptLayout& layout) {
    LossTargets lt = loss_targets(layout);
    if (logits.rows() != lt.targets.size()) {
        throw DimensionError("masked_loss: logits rows " + std::to_string(logits.rows()) +
                             " != expected positions " + std::to_string(lt.targets.size()));
    }
    return softmax_cross_entropy(logits, lt.targets, lt.mask);
}

/// Response-masked training loss of one layout.
inline Tensor loss(const ModelState& state, const PromptLayout& layout,
                   const TokenizedCatalog& tc) {
    return masked_loss(forward(state, layout, tc), layout);
}

// ---------------------------------------------------------------------------
// Incremental (cached) decoding
// ---------------------------------------------------------------------------

/// Token-by-token forward pass with per-layer key/value caches. Produces
/// logits identical to the full forward at every step; beams copy the whole
/// decoder when they fork.
class IncrementalDecoder {
public:
    explicit IncrementalDecoder(const ModelState& state) : state_(&state) {
        caches_.resize(state.config.n_layers);
    }

    /// Run the prompt part of a layout through the full-matrix path and keep
    /// the attention caches.
    void prefill(const PromptLayout& layout, const TokenizedCatalog& tc) {
        Tensor x = embed_layout(*state_, layout, tc, /*include_target=*/false);
        std::vector<detail::LayerTrace> trace;
        Tensor top = detail::transformer_stack(*state_, x, &trace);
        const std::size_t d = state_->config.d;
        positions_ = x.rows();
        for (std::size_t l = 0; l < caches_.size(); ++l) {
            caches_[l].k.assign(trace[l].k.data().begin(), trace[l].k.data().end());
            caches_[l].v.assign(trace[l].v.data().begin(), trace[l].v.data().end());
        }
        // Logits of the last prompt position only.
        last_logits_ = logits_row(std::vector<double>(
            top.data().begin() + static_cast<std::ptrdiff_t>((positions_ - 1) * d),
            top.data().begin() + static_cast<std::ptrdiff_t>(positions_ * d)));
    }

    /// Append one generated token and refresh the last-position logits.
    void step(TokenId token) {
        const std::size_t d = state_->config.d;
        if (positions_ >= state_->config.max_positions) {
            throw DimensionError("incremental decode: exceeded max_positions " +
                                 std::to_string(state_->config.max_positions));
        }
        // Embedding row + positional row; mirrors embed_layout arithmetic.
        std::vector<double> x(d);
        const double* emb =
            state_->token_embedding.data().data() + static_cast<std::size_t>(token) * d;
        const double* pos = state_->pos_embedding.data().data() + positions_ * d;
        for (std::size_t j = 0; j < d; ++j) x[j] = emb[j] + pos[j];

        const std::size_t heads = state_->config.n_heads;
        const std::size_t dh = d / heads;
        const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
        for (std::size_t l = 0; l < state_->layers.size(); ++l) {
            const ModelState::Layer& ly = state_->layers[l];
            Cache& cache = caches_[l];
            std::vector<double> h = ln_row(x, ly.ln1_gain, ly.ln1_bias);
            std::vector<double> q = linear_row(h, ly.wq, ly.bq);
            std::vector<double> k = linear_row(h, ly.wk, ly.bk);
            std::vector<double> v = linear_row(h, ly.wv, ly.bv);
            cache.k.insert(cache.k.end(), k.begin(), k.end());
            cache.v.insert(cache.v.end(), v.begin(), v.end());
            const std::size_t rows = cache.k.size() / d;
            std::vector<double> ctx(d, 0.0);
            std::vector<double> weights(rows);
            for (std::size_t hd = 0; hd < heads; ++hd) {
                const std::size_t off = hd * dh;
                // Scores of the newest row against the whole cache.
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* krow = cache.k.data() + r * d + off;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < dh; ++j) acc += q[off + j] * krow[j];
                    weights[r] = acc * att_scale;
                }
                double mx = weights[0];
                for (std::size_t r = 1; r < rows; ++r) mx = std::max(mx, weights[r]);
                double denom = 0.0;
                for (std::size_t r = 0; r < rows; ++r) {
                    weights[r] = std::exp(weights[r] - mx);
                    denom += weights[r];
                }
                const double inv = 1.0 / denom;
                for (std::size_t r = 0; r < rows; ++r) weights[r] *= inv;
                for (std::size_t r = 0; r < rows; ++r) {
                    const double w = weights[r];
                    const double* vrow = cache.v.data() + r * d + off;
                    for (std::size_t j = 0; j < dh; ++j) ctx[off + j] += w * vrow[j];
                }
            }
            std::vector<double> attn_out = linear_row(ctx, ly.wo, ly.bo);
            for (std::size_t j = 0; j < d; ++j) x[j] += attn_out[j];
            std::vector<double> h2 = ln_row(x, ly.ln2_gain, ly.ln2_bias);
            std::vector<double> inner = linear_row(h2, ly.w1, ly.b1);
            constexpr double inv_sqrt2 = 0.70710678118654752440;
            for (double& u : inner) u = 0.5 * u * (1.0 + std::erf(u * inv_sqrt2));
            std::vector<double> mlp = linear_row(inner, ly.w2, ly.b2);
            for (std::size_t j = 0; j < d; ++j) x[j] += mlp[j];
        }
        ++positions_;
        last_logits_ = logits_row(x);
    }

    const std::vector<double>& logits() const { return last_logits_; }
    std::size_t position() const { return positions_; }

private:
    struct Cache {
        std::vector<double> k, v; // rows of d doubles
    };

    std::vector<double> linear_row(const std::vector<double>& x, const Tensor& w,
                                   const Tensor& b) const {
        const std::size_t in = w.rows(), out = w.cols();
        std::vector<double> y(out, 0.0);
        const double* wd = w.data().data();
        for (std::size_t p = 0; p < in; ++p) {
            const double xv = x[p];
            const double* wrow = wd + p * out;
            for (std::size_t j = 0; j < out; ++j) y[j] += xv * wrow[j];
        }
        const double* bd = b.data().data();
        for (std::size_t j = 0; j < out; ++j) y[j] += bd[j];
        return y;
    }

    std::vector<double> ln_row(const std::vector<double>& x, const Tensor& gain,
                               const Tensor& bias, double eps = 1e-5) const {
        const std::size_t n = x.size();
        double mean = 0.0;
        for (double v : x) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : x) {
            const double dv = v - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(n);
        const double istd = 1.0 / std::sqrt(var + eps);
        std::vector<double> y(n);
        for (std::size_t j = 0; j < n; ++j) {
            y[j] = (x[j] - mean) * istd * gain.data()[j] + bias.data()[j];
        }
        return y;
    }

    std::vector<double> logits_row(const std::vector<double>& x) const {
        const std::size_t v = state_->config.vocab_size;
        const std::size_t d = state_->config.d;
        std::vector<double> out(v);
        const double* e = state_->token_embedding.data().data();
        for (std::size_t j = 0; j < v; ++j) {
            const double* row = e + j * d;
            double acc = 0.0;
            for (std::size_t p = 0; p < d; ++p) acc += x[p] * row[p];
            out[j] = acc;
        }
        return out;
    }

    const ModelState* state_;
    std::vector<Cache> caches_;
    std::size_t positions_ = 0;
    std::vector<double> last_logits_;
};

} // namespace patchrec
