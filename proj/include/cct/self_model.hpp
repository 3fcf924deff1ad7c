#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cct/nn.hpp"

// Probe-based self model: a GRU over detached hidden states predicts the probe response distribution.
namespace cct {

struct SelfModelConfig {
    std::size_t n_probes = 4;
    double temperature = 1.0;
    std::size_t hidden = 16;
};

template <class T>
struct SelfModelWeights {
    Tensor<T> probes;  // [K, d], fixed buffer, not trained
    Linear<T> wz, wr, wh;  // d -> H
    Linear<T> uz, ur, uh;  // H -> H
    Linear<T> head;        // H -> K, zero at init
    SelfModelConfig cfg;

    static SelfModelWeights make(ParamSet<T>& ps, std::uint64_t seed, const std::string& p, std::size_t d,
                                 const SelfModelConfig& cfg) {
        SelfModelWeights w;
        w.cfg = cfg;
        RngStream probe_stream(derive_seed(seed, "buffer/" + p + "probes"));
        w.probes = rng_init<T>(probe_stream, {cfg.n_probes, d}, InitSpec::normal(1.0 / std::sqrt(static_cast<double>(d))));
        const auto H = cfg.hidden;
        const auto n = InitSpec::normal(0.1);
        const auto z = InitSpec::zeros();
        const auto tier = LrTier::cognitive;
        const auto own = Component::self_model;
        w.wz = Linear<T>::make(ps, p + "gru.wz", d, H, n, z, tier, own);
        w.wr = Linear<T>::make(ps, p + "gru.wr", d, H, n, z, tier, own);
        w.wh = Linear<T>::make(ps, p + "gru.wh", d, H, n, z, tier, own);
        w.uz = Linear<T>::make(ps, p + "gru.uz", H, H, n, z, tier, own);
        w.ur = Linear<T>::make(ps, p + "gru.ur", H, H, n, z, tier, own);
        w.uh = Linear<T>::make(ps, p + "gru.uh", H, H, n, z, tier, own);
        w.head = Linear<T>::make(ps, p + "head", H, cfg.n_probes, z, z, tier, own);
        return w;
    }
};

// softmax(h . probe_k / tau) over the K probes: [B, T, d] -> [B, T, K].
template <class T>
Tensor<T> probe_response(const SelfModelWeights<T>& w, const Tensor<T>& h_detached) {
    if (h_detached.requires_grad()) throw ContractError("probe_response: input must be detached");
    return softmax(scale(matmul_nt(h_detached, w.probes), static_cast<T>(1.0 / w.cfg.temperature)));
}

template <class T>
struct SelfPrediction {
    Tensor<T> logits;  // [B, T, K]
    Tensor<T> final_state;  // [B, H]
};

// One GRU step per position from a zero narrative state; the head maps each state to probe logits.
template <class T>
SelfPrediction<T> self_predict(const SelfModelWeights<T>& w, const Tensor<T>& h_detached,
                               Tensor<T> state = Tensor<T>()) {
    if (h_detached.requires_grad()) throw ContractError("self_predict: input must be detached");
    const std::size_t B = h_detached.size(0), S = h_detached.size(1);
    if (!state.defined()) state = Tensor<T>::zeros({B, w.cfg.hidden});
    std::vector<Tensor<T>> out;
    for (std::size_t t = 0; t < S; ++t) {
        auto x = time_slice(h_detached, t);
        auto z = sigmoid(add(w.wz(x), w.uz(state)));
        auto r = sigmoid(add(w.wr(x), w.ur(state)));
        auto c = tanh(add(w.wh(x), w.uh(mul(r, state))));
        state = add(state, mul(z, sub(c, state)));
        out.push_back(w.head(state));
    }
    return {stack_time(out), state};
}

// Cross-entropy of predicted logits against the actual probe response; equals KL plus a constant.
template <class T>
Tensor<T> self_model_loss(const Tensor<T>& logits, const Tensor<T>& actual) {
    return soft_cross_entropy(logits, actual);
}

// exp(-mean_rows KL(actual || predicted)); predicted entries clamped at 1e-9 before the log.
template <class T>
double competence(const Tensor<T>& predicted, const Tensor<T>& actual) {
    if (predicted.shape() != actual.shape()) throw ContractError("competence: shape mismatch");
    const std::size_t K = actual.shape().back();
    const std::size_t rows = actual.numel() / K;
    double kl_sum = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        double kl = 0.0;
        for (std::size_t j = 0; j < K; ++j) {
            const double a = actual[r * K + j];
            if (a <= 0.0) continue;
            const double p = std::max(static_cast<double>(predicted[r * K + j]), 1e-9);
            kl += a * (std::log(a) - std::log(p));
        }
        kl_sum += kl;
    }
    return std::exp(-std::max(0.0, kl_sum / static_cast<double>(rows)));
}

}  // namespace cct
