#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cct/log.hpp"
#include "cct/nn.hpp"

// GPT-2 style decoder. Nothing in this header knows about the cognitive side-paths, so the plain
// forward here is the reference that a fully bypassed model must reproduce bit for bit.
namespace cct {

struct BackboneConfig {
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t d_model = 64;
    std::size_t d_ff = 256;
    std::size_t vocab_size = 256;
    std::size_t max_seq_len = 64;
    bool tie_embeddings = true;

    std::size_t d_head() const { return d_model / n_heads; }

    void validate() const {
        if (n_layers == 0 || n_heads == 0 || d_model == 0 || d_ff == 0 || vocab_size == 0 || max_seq_len == 0) {
            throw ConfigError("backbone dimensions must be positive");
        }
        if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
        if (!tie_embeddings) throw ConfigError("only tied embeddings are supported");
    }
};

// Token ids for a [B, T] batch, row-major.
struct IdMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<std::int32_t> ids;

    std::int32_t at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
};

template <class T>
struct BlockWeights {
    Tensor<T> ln1_g, ln1_b;
    Linear<T> c_attn;  // d -> 3d
    Linear<T> c_proj;  // d -> d
    Tensor<T> ln2_g, ln2_b;
    Linear<T> c_fc;     // d -> d_ff
    Linear<T> c_fc2;    // d_ff -> d
};

template <class T>
struct GptWeights {
    BackboneConfig cfg;
    Tensor<T> wte;  // [V, d], also the output projection
    Tensor<T> wpe;  // [ctx, d]
    std::vector<BlockWeights<T>> blocks;
    Tensor<T> lnf_g, lnf_b;

    static GptWeights make(ParamSet<T>& ps, const BackboneConfig& cfg) {
        cfg.validate();
        GptWeights w;
        w.cfg = cfg;
        const auto d = cfg.d_model;
        const auto normal = InitSpec::normal(0.02);
        const auto proj = InitSpec::normal(0.02 / std::sqrt(2.0 * static_cast<double>(cfg.n_layers)));
        const auto bb = LrTier::backbone;
        const auto own = Component::backbone;
        w.wte = ps.add("wte", {cfg.vocab_size, d}, normal, LrTier::embedding, own);
        w.wpe = ps.add("wpe", {cfg.max_seq_len, d}, InitSpec::normal(0.01), LrTier::embedding, own);
        for (std::size_t i = 0; i < cfg.n_layers; ++i) {
            const std::string p = "h." + std::to_string(i) + ".";
            BlockWeights<T> b;
            b.ln1_g = ps.add(p + "ln_1.g", {d}, InitSpec::constant(1.0), bb, own);
            b.ln1_b = ps.add(p + "ln_1.b", {d}, InitSpec::zeros(), bb, own);
            b.c_attn = Linear<T>::make(ps, p + "attn.c_attn", d, 3 * d, normal, InitSpec::zeros(), bb, own);
            b.c_proj = Linear<T>::make(ps, p + "attn.c_proj", d, d, proj, InitSpec::zeros(), bb, own);
            b.ln2_g = ps.add(p + "ln_2.g", {d}, InitSpec::constant(1.0), bb, own);
            b.ln2_b = ps.add(p + "ln_2.b", {d}, InitSpec::zeros(), bb, own);
            b.c_fc = Linear<T>::make(ps, p + "mlp.c_fc", d, cfg.d_ff, normal, InitSpec::zeros(), bb, own);
            b.c_fc2 = Linear<T>::make(ps, p + "mlp.c_proj", cfg.d_ff, d, proj, InitSpec::zeros(), bb, own);
            w.blocks.push_back(b);
        }
        w.lnf_g = ps.add("ln_f.g", {d}, InitSpec::constant(1.0), bb, own);
        w.lnf_b = ps.add("ln_f.b", {d}, InitSpec::zeros(), bb, own);
        return w;
    }

    // The tied head reads the embedding table directly; there is no second copy.
    const Tensor<T>& lm_head() const { return wte; }
};

template <class T>
Tensor<T> embed_tokens(const GptWeights<T>& w, const IdMatrix& ids) {
    if (ids.cols > w.cfg.max_seq_len) {
        throw ContractError(fmt::format("sequence length {} exceeds max_seq_len {}", ids.cols, w.cfg.max_seq_len));
    }
    std::vector<std::int32_t> pos(ids.cols);
    for (std::size_t t = 0; t < ids.cols; ++t) pos[t] = static_cast<std::int32_t>(t);
    auto tok = embedding(w.wte, std::span<const std::int32_t>(ids.ids), {ids.rows, ids.cols});
    auto wpe = embedding(w.wpe, std::span<const std::int32_t>(pos), {ids.cols});
    return add(tok, wpe);
}

template <class T>
struct Qkv {
    Tensor<T> q, k, v;  // [B, H, T, dk]
};

template <class T>
Qkv<T> attention_qkv(const BlockWeights<T>& b, const BackboneConfig& cfg, const Tensor<T>& x) {
    auto a = layernorm(x, b.ln1_g, b.ln1_b);
    auto qkv = b.c_attn(a);
    const auto H = cfg.n_heads, dk = cfg.d_head(), d = cfg.d_model;
    return {split_heads(qkv, H, dk, 0), split_heads(qkv, H, dk, d), split_heads(qkv, H, dk, 2 * d)};
}

template <class T>
Tensor<T> attention_scores(const Qkv<T>& qkv, const BackboneConfig& cfg) {
    return scale(matmul_nt(qkv.q, qkv.k), T(1) / std::sqrt(static_cast<T>(cfg.d_head())));
}

// Residual update after attention given (possibly adjusted) pre-softmax scores.
template <class T>
Tensor<T> attention_residual(const BlockWeights<T>& b, const Tensor<T>& x, const Tensor<T>& scores, const Tensor<T>& v) {
    auto p = causal_softmax(scores);
    auto y = merge_heads(matmul(p, v));
    return add(x, b.c_proj(y));
}

template <class T>
Tensor<T> ffn_residual(const BlockWeights<T>& b, const Tensor<T>& x) {
    auto m = b.c_fc2(gelu(b.c_fc(layernorm(x, b.ln2_g, b.ln2_b))));
    return add(x, m);
}

template <class T>
Tensor<T> gpt_block(const BlockWeights<T>& b, const BackboneConfig& cfg, const Tensor<T>& x) {
    auto qkv = attention_qkv(b, cfg, x);
    auto h = attention_residual(b, x, attention_scores(qkv, cfg), qkv.v);
    return ffn_residual(b, h);
}

template <class T>
Tensor<T> lm_logits(const GptWeights<T>& w, const Tensor<T>& h) {
    return matmul_nt(layernorm(h, w.lnf_g, w.lnf_b), w.lm_head());
}

// Plain decoder: ids [B, T] -> logits [B, T, V].
template <class T>
Tensor<T> gpt_forward(const GptWeights<T>& w, const IdMatrix& ids) {
    auto h = embed_tokens(w, ids);
    for (const auto& b : w.blocks) h = gpt_block(b, w.cfg, h);
    return lm_logits(w, h);
}

// ---- bilinear causal scorer ----

template <class T>
struct ScorerWeights {
    Tensor<T> w;       // [H, dk, dk]
    Tensor<T> lambda;  // [1], zero at init

    static ScorerWeights make(ParamSet<T>& ps, const std::string& prefix, const BackboneConfig& cfg) {
        const auto dk = cfg.d_head();
        return {ps.add(prefix + "w", {cfg.n_heads, dk, dk}, InitSpec::normal(0.02), LrTier::cognitive,
                       Component::causal_attn),
                ps.add(prefix + "lambda", {1}, InitSpec::zeros(), LrTier::cognitive, Component::causal_attn)};
    }
};

// Unscaled bilinear logits q W k^T per head: [B, H, T, T].
template <class T>
Tensor<T> scorer_raw_logits(const Tensor<T>& q, const Tensor<T>& k, const ScorerWeights<T>& s) {
    return matmul_nt(matmul_per_head(q, s.w), k);
}

// lambda * (q W k^T); identically zero while lambda is zero.
template <class T>
Tensor<T> scorer_logits(const Tensor<T>& q, const Tensor<T>& k, const ScorerWeights<T>& s) {
    return mul(scorer_raw_logits(q, k, s), s.lambda);
}

// Pearson correlation over paired entries. Zero variance in either input -> 0 with a warning.
inline double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw ContractError("pearson: need two equal-length inputs of size >= 2");
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) {
        warn("correlational metric: zero variance input, reporting 0");
        return 0.0;
    }
    return sab / std::sqrt(saa * sbb);
}

// Correlation between scorer logits and dot-product logits over all causal (head, query, key<=query)
// entries of [B, H, T, T] tensors.
template <class T>
double correlational_metric(const Tensor<T>& scorer, const Tensor<T>& dot) {
    if (scorer.shape() != dot.shape() || scorer.rank() != 4) throw ContractError("correlational_metric: shape mismatch");
    const std::size_t n = scorer.size(3);
    const std::size_t mats = scorer.numel() / (n * n);
    std::vector<double> a, b;
    for (std::size_t m = 0; m < mats; ++m)
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t j = 0; j <= t; ++j) {
                a.push_back(static_cast<double>(scorer[(m * n + t) * n + j]));
                b.push_back(static_cast<double>(dot[(m * n + t) * n + j]));
            }
    return pearson(a, b);
}

}  // namespace cct
