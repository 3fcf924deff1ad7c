#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include "cct/nn.hpp"

// Three-tier slot memory: buffer receives writes, consolidation promotes into working and episodic.
namespace cct {

struct MemoryConfig {
    std::size_t n_buffer = 16;
    std::size_t n_working = 8;
    std::size_t n_episodic = 32;
    std::size_t d_mem = 0;  // 0 -> d_model
    double read_sharpness = 5.0;
    double usage_decay = 0.99;
    std::size_t promote_every = 4;  // C
    std::size_t promote_width = 1;  // u
};

template <class T>
struct MemoryTier {
    std::size_t slots = 0, dim = 0;
    std::vector<T> values;  // [slots, dim]
    std::vector<T> usage;   // [slots], in [0, 1]

    MemoryTier() = default;
    MemoryTier(std::size_t n, std::size_t d) : slots(n), dim(d), values(n * d, T(0)), usage(n, T(0)) {}

    std::span<const T> row(std::size_t i) const { return std::span<const T>(values).subspan(i * dim, dim); }
    std::span<T> row(std::size_t i) { return std::span<T>(values).subspan(i * dim, dim); }

    // Lowest usage, ties to the lowest index.
    std::size_t least_used() const {
        return static_cast<std::size_t>(std::min_element(usage.begin(), usage.end()) - usage.begin());
    }

    // Up to u slots with positive usage, highest usage first, ties to the lowest index.
    std::vector<std::size_t> most_used(std::size_t u) const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < slots; ++i)
            if (usage[i] > T(0)) idx.push_back(i);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return usage[a] > usage[b]; });
        if (idx.size() > u) idx.resize(u);
        return idx;
    }

    void decay(T factor) {
        for (auto& u : usage) u *= factor;
    }

    friend bool operator==(const MemoryTier&, const MemoryTier&) = default;
};

template <class T>
struct MemoryState {
    MemoryTier<T> buffer, working, episodic;
    std::uint64_t step_counter = 0;  // consolidation calls since reset

    MemoryState() = default;
    MemoryState(const MemoryConfig& cfg, std::size_t d_mem)
        : buffer(cfg.n_buffer, d_mem), working(cfg.n_working, d_mem), episodic(cfg.n_episodic, d_mem) {}

    bool finite() const {
        for (const auto* t : {&buffer, &working, &episodic}) {
            for (T v : t->values)
                if (!std::isfinite(v)) return false;
            for (T v : t->usage)
                if (!std::isfinite(v)) return false;
        }
        return true;
    }

    // FNV-1a over the raw bytes of every field; used to assert that reads do not mutate.
    std::uint64_t digest() const {
        std::uint64_t h = 0xCBF29CE484222325ull;
        auto mix = [&](const void* p, std::size_t n) {
            const auto* c = static_cast<const unsigned char*>(p);
            for (std::size_t i = 0; i < n; ++i) {
                h ^= c[i];
                h *= 0x100000001B3ull;
            }
        };
        for (const auto* t : {&buffer, &working, &episodic}) {
            mix(t->values.data(), t->values.size() * sizeof(T));
            mix(t->usage.data(), t->usage.size() * sizeof(T));
        }
        mix(&step_counter, sizeof step_counter);
        return h;
    }

    friend bool operator==(const MemoryState&, const MemoryState&) = default;
};

template <class T>
struct MemoryWeights {
    Linear<T> query;    // d -> d_mem
    Linear<T> out;      // 3 d_mem -> d, zero at init
    std::size_t d_mem = 0;

    static MemoryWeights make(ParamSet<T>& ps, const std::string& p, std::size_t d_model, const MemoryConfig& cfg) {
        MemoryWeights w;
        w.d_mem = cfg.d_mem ? cfg.d_mem : d_model;
        w.query = Linear<T>::make(ps, p + "query", d_model, w.d_mem, InitSpec::normal(0.02), InitSpec::zeros(),
                                  LrTier::cognitive, Component::memory);
        w.out = Linear<T>::make(ps, p + "out", 3 * w.d_mem, d_model, InitSpec::zeros(), InitSpec::zeros(),
                                LrTier::cognitive, Component::memory);
        return w;
    }
};

namespace detail {

// Slot rows scaled to unit norm; all-zero rows stay zero so their similarity is 0.
template <class T>
Tensor<T> normalized_slots(const MemoryTier<T>& tier) {
    std::vector<T> out(tier.values.size());
    for (std::size_t i = 0; i < tier.slots; ++i) {
        const auto r = tier.row(i);
        T n2 = T(0);
        for (T v : r) n2 += v * v;
        const T inv = n2 > T(0) ? T(1) / std::sqrt(n2) : T(0);
        for (std::size_t j = 0; j < tier.dim; ++j) out[i * tier.dim + j] = r[j] * inv;
    }
    return Tensor<T>::from_data({tier.slots, tier.dim}, std::move(out));
}

template <class T>
Tensor<T> read_tier(const Tensor<T>& qn, const MemoryTier<T>& tier, T sharpness) {
    auto sim = matmul_nt(qn, normalized_slots(tier));
    auto w = softmax(scale(sim, sharpness));
    return matmul(w, Tensor<T>::from_data({tier.slots, tier.dim}, tier.values));
}

}  // namespace detail

template <class T>
struct MemoryRead {
    Tensor<T> out;    // [B, T, d] residual contribution
    Tensor<T> query;  // [B, T, d_mem] read keys; their time-mean is what gets written back
};

// Content-addressed read of every position against one frozen snapshot.
template <class T>
MemoryRead<T> batched_read(const MemoryWeights<T>& w, const MemoryConfig& cfg, const Tensor<T>& h,
                           const MemoryState<T>& snapshot) {
    auto q = w.query(h);
    auto qn = div(q, sqrt(add_scalar(sum_last(square(q)), T(1e-12))));
    const T beta = static_cast<T>(cfg.read_sharpness);
    auto r = concat_last<T>({detail::read_tier(qn, snapshot.buffer, beta), detail::read_tier(qn, snapshot.working, beta),
                             detail::read_tier(qn, snapshot.episodic, beta)});
    return {w.out(r), q};
}

// Gated erase/add of `summary` into the least-used buffer slot; usage decays and the written slot is set to 1.
template <class T>
void write_update(MemoryState<T>& s, std::span<const T> summary, T gate, T decay) {
    if (gate == T(0)) return;
    if (summary.size() != s.buffer.dim) throw ContractError("write_update: summary width mismatch");
    const auto slot = s.buffer.least_used();
    auto row = s.buffer.row(slot);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = row[j] * (T(1) - gate) + gate * summary[j];
    s.buffer.decay(decay);
    s.buffer.usage[slot] = T(1);
}

namespace detail {

template <class T>
void promote(const MemoryTier<T>& from, MemoryTier<T>& to, std::size_t width, T decay) {
    const auto hot = from.most_used(width);
    if (hot.empty()) return;
    to.decay(decay);
    for (auto i : hot) {
        const auto slot = to.least_used();
        std::copy(from.row(i).begin(), from.row(i).end(), to.row(slot).begin());
        to.usage[slot] = T(1);
    }
}

}  // namespace detail

// Segment-boundary consolidation: top-u buffer slots into working; every C-th call, top-u working into episodic.
template <class T>
void consolidate(MemoryState<T>& s, const MemoryConfig& cfg) {
    const T decay = static_cast<T>(cfg.usage_decay);
    detail::promote(s.buffer, s.working, cfg.promote_width, decay);
    ++s.step_counter;
    if (cfg.promote_every > 0 && s.step_counter % cfg.promote_every == 0) {
        detail::promote(s.working, s.episodic, cfg.promote_width, decay);
    }
}

template <class T>
void reset(MemoryState<T>& s) {
    for (auto* t : {&s.buffer, &s.working, &s.episodic}) {
        std::fill(t->values.begin(), t->values.end(), T(0));
        std::fill(t->usage.begin(), t->usage.end(), T(0));
    }
    s.step_counter = 0;
}

// Mean over time of a detached [B, T, d] hidden state for batch row b.
template <class T>
std::vector<T> segment_summary(const Tensor<T>& h, std::size_t b) {
    const std::size_t S = h.size(1), d = h.size(2);
    std::vector<T> out(d, T(0));
    for (std::size_t t = 0; t < S; ++t)
        for (std::size_t j = 0; j < d; ++j) out[j] += h[(b * S + t) * d + j];
    for (auto& v : out) v /= static_cast<T>(S);
    return out;
}

}  // namespace cct
