#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cct/model.hpp"

namespace cct {

enum class ScheduleKind { rc2_full, e2_no_gtfull, e1_baseline };

inline ScheduleKind parse_schedule_kind(const std::string& s) {
    if (s == "rc2_full") return ScheduleKind::rc2_full;
    if (s == "e2_no_gtfull") return ScheduleKind::e2_no_gtfull;
    if (s == "e1_baseline") return ScheduleKind::e1_baseline;
    throw ConfigError("unknown schedule kind '" + s + "' (rc2_full, e2_no_gtfull, e1_baseline)");
}

inline const char* schedule_name(ScheduleKind k) {
    switch (k) {
        case ScheduleKind::rc2_full: return "rc2_full";
        case ScheduleKind::e2_no_gtfull: return "e2_no_gtfull";
        case ScheduleKind::e1_baseline: return "e1_baseline";
    }
    return "?";
}

inline constexpr std::int64_t kFullScaleSteps = 215000;

struct PhaseSpec {
    int id = 0;
    std::string label;
    std::int64_t steps = 0;
    std::int64_t warmup_steps = 0;
    ComponentSet components;
    std::string resume_from;  // "pseudo-pretrain" or "phase:<id>"
    std::int64_t eval_every = 100;
};

namespace detail {

struct PhaseRow {
    const char* label;
    std::int64_t steps, warmup;
    ComponentSet components;
};

inline ComponentSet comps(std::initializer_list<const char*> names) {
    ComponentSet c;
    for (auto n : names) c.set(n, true);
    return c;
}

inline std::int64_t scaled(std::int64_t n, double scale) { return static_cast<std::int64_t>(std::llround(static_cast<double>(n) * scale)); }

}  // namespace detail

// Phase chain for a run kind at `scale`. Step and warmup counts are rounded per phase.
inline std::vector<PhaseSpec> build_schedule(ScheduleKind kind, double scale, std::int64_t eval_every = 100) {
    if (!(scale > 0.0 && scale <= 1.0)) throw ConfigError("scale must be in (0, 1]");
    using detail::comps;
    std::vector<detail::PhaseRow> rows;
    switch (kind) {
        case ScheduleKind::rc2_full:
            rows = {{"Baseline", 20000, 1000, comps({})},
                    {"+ CausalAttention", 10000, 1000, comps({"causal_attn"})},
                    {"+ GT-Full", 15000, 1000, comps({"causal_attn", "gt_full"})},
                    {"+ Memory + SelfModel", 20000, 1000, comps({"causal_attn", "gt_full", "memory", "self_model"})},
                    {"+ TopDown (full stack)", 30000, 2000, comps({"causal_attn", "gt_full", "memory", "self_model", "topdown"})},
                    {"Extended training", 100000, 3000, comps({"causal_attn", "gt_full", "memory", "self_model", "topdown"})},
                    {"+ PrecisionWeightedPP", 20000, 1000,
                     comps({"causal_attn", "gt_full", "memory", "self_model", "topdown", "pp"})}};
            break;
        case ScheduleKind::e2_no_gtfull:
            rows = {{"Baseline", 20000, 1000, comps({})},
                    {"+ CausalAttention", 10000, 1000, comps({"causal_attn"})},
                    {"CA extended", 15000, 1000, comps({"causal_attn"})},
                    {"+ Memory + SelfModel", 20000, 1000, comps({"causal_attn", "memory", "self_model"})},
                    {"+ TopDown (full stack except GT-Full)", 30000, 2000, comps({"causal_attn", "memory", "self_model", "topdown"})},
                    {"Extended training", 100000, 3000, comps({"causal_attn", "memory", "self_model", "topdown"})},
                    {"+ PrecisionWeightedPP", 20000, 1000, comps({"causal_attn", "memory", "self_model", "topdown", "pp"})}};
            break;
        case ScheduleKind::e1_baseline:
            rows = {{"E1 fine-tune", kFullScaleSteps, 500, comps({})}};
            break;
    }
    std::vector<PhaseSpec> out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        PhaseSpec p;
        p.id = static_cast<int>(i);
        p.label = rows[i].label;
        p.steps = detail::scaled(rows[i].steps, scale);
        p.warmup_steps = detail::scaled(rows[i].warmup, scale);
        p.components = rows[i].components;
        p.resume_from = i == 0 ? "pseudo-pretrain" : "phase:" + std::to_string(i - 1);
        p.eval_every = eval_every;
        if (p.steps <= 0) throw ConfigError(fmt::format("scale {} leaves phase {} with no steps", scale, i));
        if (p.warmup_steps >= p.steps) throw ConfigError(fmt::format("phase {}: warmup must be shorter than the phase", i));
        out.push_back(std::move(p));
    }
    return out;
}

inline std::int64_t total_steps(const std::vector<PhaseSpec>& phases) {
    std::int64_t n = 0;
    for (const auto& p : phases) n += p.steps;
    return n;
}

// Activation-only protocol: no phase turns a component off.
inline void validate_chain(const std::vector<PhaseSpec>& phases) {
    for (std::size_t i = 1; i < phases.size(); ++i) {
        if (!phases[i - 1].components.subset_of(phases[i].components)) {
            throw ConfigError(fmt::format("phase {} disables a component enabled in phase {}", phases[i].id, phases[i - 1].id));
        }
    }
    for (const auto& p : phases) {
        if (p.steps <= 0 || p.warmup_steps < 0 || p.warmup_steps >= p.steps) {
            throw ConfigError(fmt::format("phase {} has invalid step counts", p.id));
        }
    }
}

// Removes one component from every phase (retrain-from-scratch ablation).
inline std::vector<PhaseSpec> without_component(std::vector<PhaseSpec> phases, const std::string& component) {
    for (auto& p : phases) {
        if (!p.components.set(component, false)) throw ConfigError("unknown component '" + component + "'");
    }
    return phases;
}

// Every component used anywhere in the chain; the model is built with exactly these present.
inline ComponentSet union_components(const std::vector<PhaseSpec>& phases) {
    ComponentSet u;
    for (const auto& p : phases)
        for (const auto& n : ComponentSet::all().names())
            if (p.components.get(n)) u.set(n, true);
    return u;
}

}  // namespace cct
