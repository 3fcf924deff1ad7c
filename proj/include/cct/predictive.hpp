#pragma once

#include <cmath>
#include <string>

#include "cct/nn.hpp"

// Cross-layer precision-weighted prediction with FiLM modulation of the lower layer.
namespace cct {

// b with softplus(b) = 1, i.e. ln(e - 1).
inline double precision_bias_init() { return std::log(std::expm1(1.0)); }

template <class T>
struct PPPairWeights {
    Mlp2<T> predictor;    // d -> d/2 -> d, GELU
    Linear<T> precision;  // d -> d, zero weights, bias ln(e-1)
    Linear<T> film_gamma; // w -> gamma offset, zero at init (gamma = 1)
    Linear<T> film_beta;  // w -> beta, zero at init
    Tensor<T> gate_a;     // [1], 0
    Tensor<T> gate_b;     // [1], -5

    static PPPairWeights make(ParamSet<T>& ps, const std::string& p, std::size_t d) {
        const auto tier = LrTier::cognitive;
        const auto own = Component::pp;
        const auto z = InitSpec::zeros();
        PPPairWeights w;
        w.predictor = {Linear<T>::make(ps, p + "pred.0", d, d / 2, InitSpec::normal(0.02), z, tier, own),
                       Linear<T>::make(ps, p + "pred.1", d / 2, d, InitSpec::normal(0.02), z, tier, own),
                       Mlp2<T>::Act::gelu};
        w.precision = Linear<T>::make(ps, p + "precision", d, d, z, InitSpec::constant(precision_bias_init()), tier, own);
        w.film_gamma = Linear<T>::make(ps, p + "film_gamma", d, d, z, z, tier, own);
        w.film_beta = Linear<T>::make(ps, p + "film_beta", d, d, z, z, tier, own);
        w.gate_a = ps.add(p + "gate_a", {1}, z, tier, own);
        w.gate_b = ps.add(p + "gate_b", {1}, InitSpec::constant(-5.0), tier, own);
        return w;
    }
};

template <class T>
struct PPForward {
    Tensor<T> delta;      // g * (dgamma * h_im1 + beta); modulated lower state is h_im1 + delta
    Tensor<T> error;      // e = h_im1 - f(h_i)
    Tensor<T> precision;  // pi = softplus(g(h_i))
    Tensor<T> gate;       // [B, T, 1]
};

// With gamma = 1 + dgamma, (1 - g) h + g (gamma h + beta) = h + g (dgamma h + beta); the second form
// is used so that the zero-initialised FiLM makes the pathway an exact identity.
template <class T>
PPForward<T> pp_forward(const PPPairWeights<T>& w, const Tensor<T>& h_i, const Tensor<T>& h_im1) {
    if (h_i.shape() != h_im1.shape()) throw ContractError("pp_forward: layer shapes differ");
    PPForward<T> r;
    r.error = sub(h_im1, w.predictor(h_i));
    r.precision = softplus(w.precision(h_i));
    auto weighted = mul(r.precision, r.error);
    r.gate = sigmoid(add(mul(mean_last(r.precision), w.gate_a), w.gate_b));
    auto film = add(mul(w.film_gamma(weighted), h_im1), w.film_beta(weighted));
    r.delta = mul(film, r.gate);
    return r;
}

template <class T>
Tensor<T> pp_modulated(const PPForward<T>& f, const Tensor<T>& h_im1) {
    return add(h_im1, f.delta);
}

// Element mean of 0.5 pi e^2 - 0.5 log pi.
template <class T>
Tensor<T> pp_loss(const Tensor<T>& error, const Tensor<T>& precision) {
    for (T p : precision.data())
        if (!(p > T(0))) throw ContractError("pp_loss: precision must be positive");
    return mean(sub(scale(mul(precision, square(error)), T(0.5)), scale(log(precision), T(0.5))));
}

}  // namespace cct
