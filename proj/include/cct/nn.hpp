#pragma once

#include <array>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cct/ops.hpp"
#include "cct/rng.hpp"

namespace cct {

struct InitSpec {
    enum class Kind { zeros, constant, normal };
    Kind kind = Kind::zeros;
    double value = 0.0;  // constant value, or stddev for normal

    static InitSpec zeros() { return {Kind::zeros, 0.0}; }
    static InitSpec constant(double v) { return {Kind::constant, v}; }
    static InitSpec normal(double stddev) { return {Kind::normal, stddev}; }
};

template <class T>
Tensor<T> rng_init(RngStream& stream, const Shape& shape, const InitSpec& init, bool requires_grad = false) {
    std::vector<T> data(numel_of(shape));
    switch (init.kind) {
        case InitSpec::Kind::zeros: std::fill(data.begin(), data.end(), T(0)); break;
        case InitSpec::Kind::constant: std::fill(data.begin(), data.end(), static_cast<T>(init.value)); break;
        case InitSpec::Kind::normal:
            for (auto& v : data) v = static_cast<T>(stream.normal() * init.value);
            break;
    }
    return Tensor<T>::from_data(shape, std::move(data), requires_grad);
}

enum class LrTier : std::uint8_t { backbone = 0, embedding = 1, cognitive = 2 };

inline const char* tier_name(LrTier t) {
    switch (t) {
        case LrTier::backbone: return "backbone";
        case LrTier::embedding: return "embedding";
        case LrTier::cognitive: return "cognitive";
    }
    return "?";
}

// Which architectural unit owns a parameter; checkpoints record presence per owner.
enum class Component : std::uint8_t { backbone = 0, causal_attn, gt_full, memory, self_model, pp, priors };

inline constexpr std::array<Component, 7> kAllComponents{Component::backbone, Component::causal_attn, Component::gt_full,
                                                         Component::memory,   Component::self_model,  Component::pp,
                                                         Component::priors};

inline const char* component_name(Component c) {
    switch (c) {
        case Component::backbone: return "backbone";
        case Component::causal_attn: return "causal_attn";
        case Component::gt_full: return "gt_full";
        case Component::memory: return "memory";
        case Component::self_model: return "self_model";
        case Component::pp: return "pp";
        case Component::priors: return "priors";
    }
    return "?";
}

template <class T>
struct ParamEntry {
    std::string name;
    Tensor<T> tensor;
    LrTier tier;
    Component owner;
    InitSpec init;
};

// Named trainable tensors in registration order. Each parameter draws its init from its own stream,
// derived from (seed, name), so values do not depend on which other parameters exist.
template <class T>
class ParamSet {
   public:
    explicit ParamSet(std::uint64_t seed = 0) : seed_(seed) {}

    Tensor<T> add(const std::string& name, const Shape& shape, InitSpec init, LrTier tier, Component owner) {
        if (index_.count(name)) throw ContractError("duplicate parameter name " + name);
        RngStream stream(derive_seed(seed_, "init/" + name));
        auto t = rng_init<T>(stream, shape, init, true);
        index_[name] = entries_.size();
        entries_.push_back({name, t, tier, owner, init});
        return t;
    }

    // Re-draws a parameter's initial value in place (used when a checkpoint lacks it).
    void reinit(const std::string& name) {
        auto& e = entries_.at(index_.at(name));
        RngStream stream(derive_seed(seed_, "init/" + name));
        auto fresh = rng_init<T>(stream, e.tensor.shape(), e.init);
        std::copy(fresh.data().begin(), fresh.data().end(), e.tensor.mutable_data().begin());
    }

    const std::vector<ParamEntry<T>>& entries() const { return entries_; }
    std::vector<ParamEntry<T>>& entries() { return entries_; }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const ParamEntry<T>& at(const std::string& name) const { return entries_.at(index_.at(name)); }
    std::size_t size() const { return entries_.size(); }

    std::size_t numel() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.tensor.numel();
        return n;
    }

    std::vector<Tensor<double>> as_double() const {
        std::vector<Tensor<double>> out;
        for (const auto& e : entries_) out.push_back(cast<double>(e.tensor));
        return out;
    }

    void clear_grads() {
        for (auto& e : entries_) e.tensor.clear_grad();
    }

   private:
    std::uint64_t seed_;
    std::vector<ParamEntry<T>> entries_;
    std::map<std::string, std::size_t> index_;
};

template <class T>
struct Linear {
    Tensor<T> w;  // [in, out]
    Tensor<T> b;  // [out]

    static Linear make(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, InitSpec w_init,
                       InitSpec b_init, LrTier tier, Component owner) {
        return {ps.add(name + ".w", {in, out}, w_init, tier, owner), ps.add(name + ".b", {out}, b_init, tier, owner)};
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return affine(x, w, b); }
};

// Two-layer MLP with an activation in between.
template <class T>
struct Mlp2 {
    Linear<T> l1, l2;
    enum class Act { relu, gelu } act = Act::relu;

    Tensor<T> operator()(const Tensor<T>& x) const {
        auto h = l1(x);
        h = act == Act::relu ? relu(h) : gelu(h);
        return l2(h);
    }
};

}  // namespace cct
