#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "cct/nn.hpp"

namespace cct {

struct LrTiers {
    double lr_cct = 1e-3;
    double lr_backbone = 5e-5;
    double lr_embed = 2e-5;
    double eta_min = 1e-4;  // floor of the cognitive tier; other tiers scale it by peak / lr_cct

    double peak(LrTier t) const {
        switch (t) {
            case LrTier::backbone: return lr_backbone;
            case LrTier::embedding: return lr_embed;
            case LrTier::cognitive: return lr_cct;
        }
        return 0.0;
    }
    double floor(LrTier t) const { return eta_min * peak(t) / lr_cct; }
};

// Linear warmup from 0 to the tier peak over `warmup` steps, then a half cosine that reaches the tier
// floor on the last step of the phase.
inline double lr_at(std::int64_t step, std::int64_t steps, std::int64_t warmup, const LrTiers& tiers, LrTier tier) {
    if (step < 0 || step >= steps) throw ContractError("lr_at: step outside phase");
    const double peak = tiers.peak(tier);
    if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
    const double lo = tiers.floor(tier);
    const std::int64_t span = steps - 1 - warmup;
    if (span <= 0) return peak;
    const double t = static_cast<double>(step - warmup) / static_cast<double>(span);
    return lo + (peak - lo) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Per-parameter moments in fp32. A parameter with no gradient this step is skipped entirely: no moment
// update, no weight decay, no step count.
template <class T>
class AdamW {
   public:
    struct Slot {
        std::vector<float> m, v;
        std::int64_t step = 0;
    };

    AdamW(ParamSet<T>& params, AdamWConfig cfg) : params_(&params), cfg_(cfg), slots_(params.size()) {}

    const AdamWConfig& config() const { return cfg_; }
    std::vector<Slot>& slots() { return slots_; }
    const std::vector<Slot>& slots() const { return slots_; }

    void reset() {
        for (auto& s : slots_) s = Slot{};
    }

    // lr per tier, indexed by LrTier.
    void step(const std::array<double, 3>& lr) {
        auto& entries = params_->entries();
        for (std::size_t i = 0; i < entries.size(); ++i) {
            auto& e = entries[i];
            if (!e.tensor.has_grad()) continue;
            auto& s = slots_[i];
            const auto n = e.tensor.numel();
            if (s.m.empty()) {
                s.m.assign(n, 0.0f);
                s.v.assign(n, 0.0f);
            }
            ++s.step;
            const double a = lr[static_cast<std::size_t>(e.tier)];
            const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.step));
            const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.step));
            const auto g = e.tensor.grad();
            auto p = e.tensor.mutable_data();
            const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
            const double decay = 1.0 - a * cfg_.weight_decay;
            for (std::size_t j = 0; j < n; ++j) {
                const float gj = static_cast<float>(g[j]);
                s.m[j] = b1 * s.m[j] + (1.0f - b1) * gj;
                s.v[j] = b2 * s.v[j] + (1.0f - b2) * gj * gj;
                const double mhat = static_cast<double>(s.m[j]) / bc1;
                const double vhat = static_cast<double>(s.v[j]) / bc2;
                const double updated = static_cast<double>(p[j]) * decay - a * mhat / (std::sqrt(vhat) + cfg_.eps);
                p[j] = static_cast<T>(updated);
            }
        }
    }

   private:
    ParamSet<T>* params_;
    AdamWConfig cfg_;
    std::vector<Slot> slots_;
};

// Global L2 norm of all present gradients (fp64, registration order); scales them by
// max_norm / (norm + 1e-6) when that factor is below 1. Returns the pre-clip norm.
template <class T>
double clip_grad_norm(ParamSet<T>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& e : params.entries()) {
        if (!e.tensor.has_grad()) continue;
        for (T g : e.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
    const double coef = max_norm / (norm + 1e-6);
    if (coef < 1.0) {
        for (auto& e : params.entries()) {
            if (!e.tensor.has_grad()) continue;
            for (auto& g : e.tensor.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * coef);
        }
    }
    return norm;
}

}  // namespace cct
