#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "cct/log.hpp"
#include "cct/nn.hpp"

// Consistency priors (all disabled by default) and the gradient-conflict diagnostic.
namespace cct {

struct PriorConfig {
    double sheaf_weight = 0.0;
    double adjunction_weight = 0.0;
    double curvature_weight = 0.0;

    bool any() const { return sheaf_weight != 0.0 || adjunction_weight != 0.0 || curvature_weight != 0.0; }
};

// Mean over undirected edges (i, j) of ||h_i - h_j||^2, h viewed as [N, d].
template <class T>
Tensor<T> sheaf_consistency_loss(const Tensor<T>& h, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
    if (edges.empty()) return Tensor<T>::scalar(T(0));
    std::vector<std::size_t> a, b;
    for (auto [i, j] : edges) {
        a.push_back(i);
        b.push_back(j);
    }
    auto diff = sub(gather_rows(h, std::span<const std::size_t>(a)), gather_rows(h, std::span<const std::size_t>(b)));
    return scale(sum(square(diff)), T(1) / static_cast<T>(edges.size()));
}

// mean (dec(enc(h)) - h)^2 + mean (enc(dec(c)) - c)^2
template <class T>
Tensor<T> adjunction_roundtrip_loss(const std::function<Tensor<T>(const Tensor<T>&)>& enc,
                                    const std::function<Tensor<T>(const Tensor<T>&)>& dec, const Tensor<T>& h,
                                    const Tensor<T>& c) {
    return add(mean(square(sub(dec(enc(h)), h))), mean(square(sub(enc(dec(c)), c))));
}

inline double curvature_regularizer(std::span<const double> kappas) {
    if (kappas.empty()) return 0.0;
    double s = 0.0;
    for (double k : kappas) s += k * k;
    return s / static_cast<double>(kappas.size());
}

// Cosine between two flattened gradients; a zero vector gives 0 with a warning.
inline double gradient_cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ContractError("gradient_cosine: length mismatch");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) {
        warn("gradient conflict: zero gradient vector, reporting 0");
        return 0.0;
    }
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

template <class T>
std::vector<double> flatten_grads(const std::vector<Tensor<T>>& params) {
    std::vector<double> out;
    for (const auto& p : params) {
        if (p.has_grad()) {
            out.insert(out.end(), p.grad().begin(), p.grad().end());
        } else {
            out.insert(out.end(), p.numel(), 0.0);
        }
    }
    return out;
}

// Cosine between d loss_a / d params and d loss_b / d params. The tape stays live; param grads are cleared.
template <class T>
double gradient_conflict_report(Tape<T>& tape, const Tensor<T>& loss_a, const Tensor<T>& loss_b,
                                std::vector<Tensor<T>> params) {
    for (auto& p : params) p.clear_grad();
    tape.backward(loss_a, Retain::yes);
    const auto ga = flatten_grads(params);
    for (auto& p : params) p.clear_grad();
    tape.backward(loss_b, Retain::yes);
    const auto gb = flatten_grads(params);
    for (auto& p : params) p.clear_grad();
    return gradient_cosine(ga, gb);
}

}  // namespace cct
