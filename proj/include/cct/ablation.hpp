#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cct/trainer.hpp"

namespace cct {

// ---- arithmetic ----

// Signed deltas, negative = the later configuration has lower perplexity.
//   arch  = full - e1 = gt + other
//   gt    = full - e2   (what GT-Full adds on top of everything else)
//   other = e2 - e1
// Shares are fractions of arch; other_share is taken as 1 - gt_share so the pair sums to 1 exactly.
struct Decomposition {
    double ppl_e1 = 0, ppl_e2 = 0, ppl_full = 0;
    std::optional<double> ppl_ref;  // external zero-shot reference
    double arch = 0, gt = 0, other = 0;
    std::optional<double> finetune;  // e1 - ref
    std::optional<double> gt_share, other_share;
    bool negative_improvement = false;  // full ended above e1
};

inline Decomposition decompose(double e1, double e2, double full, std::optional<double> ref = std::nullopt) {
    if (!(e1 > 0 && e2 > 0 && full > 0) || (ref && !(*ref > 0))) throw ConfigError("decompose: perplexities must be positive");
    Decomposition d;
    d.ppl_e1 = e1;
    d.ppl_e2 = e2;
    d.ppl_full = full;
    d.ppl_ref = ref;
    d.gt = full - e2;
    d.other = e2 - e1;
    d.arch = d.gt + d.other;
    if (ref) d.finetune = e1 - *ref;
    if (d.arch != 0.0) {
        d.gt_share = d.gt / d.arch;
        d.other_share = 1.0 - *d.gt_share;
    }
    d.negative_improvement = d.arch > 0.0;
    return d;
}

inline std::string fmt_share(const std::optional<double>& s) { return s ? fmt::format("{:.2f}%", *s * 100.0) : "undefined"; }

inline std::string render(const Decomposition& d) {
    std::string t = fmt::format("{:<44} {:>10} {:>12}\n", "Source", "Delta PPL", "Share");
    if (d.finetune) t += fmt::format("{:<44} {:>+10.2f} {:>12}\n", fmt::format("Fine-tuning (ref {:.2f} -> E1)", *d.ppl_ref), *d.finetune, "-");
    t += fmt::format("{:<44} {:>+10.2f} {:>12}\n", "Other components (E1 -> E2)", d.other, fmt_share(d.other_share));
    t += fmt::format("{:<44} {:>+10.2f} {:>12}\n", "GT-Full marginal (E2 -> full)", d.gt, fmt_share(d.gt_share));
    t += fmt::format("{:<44} {:>+10.2f} {:>12}\n", "Total architectural (E1 -> full)", d.arch, d.arch != 0.0 ? "100.00%" : "undefined");
    t += fmt::format("PPL: E1 {:.2f}, E2 {:.2f}, full {:.2f}\n", d.ppl_e1, d.ppl_e2, d.ppl_full);
    if (d.negative_improvement) t += "note: negative architectural improvement (full is worse than E1)\n";
    return t;
}

inline nlohmann::json to_json(const Decomposition& d) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
    return {{"ppl_e1", d.ppl_e1},   {"ppl_e2", d.ppl_e2},           {"ppl_full", d.ppl_full},
            {"ppl_ref", opt(d.ppl_ref)}, {"arch_delta", d.arch},    {"gt_delta", d.gt},
            {"other_delta", d.other},    {"finetune_delta", opt(d.finetune)}, {"gt_share", opt(d.gt_share)},
            {"other_share", opt(d.other_share)}, {"negative_improvement", d.negative_improvement}};
}

// Percentage of the full-bypass delta explained by one component; undefined for a zero denominator.
inline std::optional<double> eval_share(double delta_component, double delta_full_bypass) {
    if (delta_full_bypass == 0.0) return std::nullopt;
    return 100.0 * delta_component / delta_full_bypass;
}

struct CompoundingSeries {
    std::vector<std::int64_t> steps;
    std::vector<double> deltas;
    std::optional<bool> nondecreasing;  // absent for fewer than two points
};

inline CompoundingSeries compounding_probe(std::vector<std::int64_t> steps, std::vector<double> deltas) {
    if (steps.size() != deltas.size()) throw ContractError("compounding_probe: steps and deltas differ in length");
    for (std::size_t i = 1; i < steps.size(); ++i)
        if (steps[i] <= steps[i - 1]) throw ContractError("compounding_probe: steps must increase");
    CompoundingSeries s{std::move(steps), std::move(deltas), std::nullopt};
    if (s.deltas.size() >= 2) s.nondecreasing = std::is_sorted(s.deltas.begin(), s.deltas.end());
    return s;
}

// ---- eval-only ablation ----

struct EvalOnlyResult {
    std::string component;
    double ppl_full = 0.0, ppl_bypassed = 0.0, delta = 0.0;
    std::size_t eval_batches = 0;
    std::string checkpoint, checkpoint_digest_before, checkpoint_digest_after, param_digest_before, param_digest_after;

    bool unchanged() const {
        return checkpoint_digest_before == checkpoint_digest_after && param_digest_before == param_digest_after;
    }
};

inline nlohmann::json to_json(const EvalOnlyResult& r) {
    return {{"mode", "eval_only"},
            {"component", r.component},
            {"ppl_full", r.ppl_full},
            {"ppl_bypassed", r.ppl_bypassed},
            {"delta", r.delta},
            {"eval_batches", r.eval_batches},
            {"checkpoint", r.checkpoint},
            {"checkpoint_digest_before", r.checkpoint_digest_before},
            {"checkpoint_digest_after", r.checkpoint_digest_after},
            {"parameters_unchanged", r.unchanged()}};
}

inline std::string file_digest(const fs::path& p) { return to_hex(sha256(read_file_bytes(p))); }

// Evaluates the checkpoint with its trained component set plus `component`, then with `component`
// bypassed, on the same validation batches. "all" bypasses every side-path (master bypass).
inline EvalOnlyResult eval_only_ablate(Trainer& t, const fs::path& checkpoint, const std::string& component) {
    EvalOnlyResult r;
    r.component = component;
    r.checkpoint = checkpoint.string();
    r.checkpoint_digest_before = file_digest(checkpoint);
    const auto blob = load_blob(checkpoint);
    auto& model = t.model();
    get_model(blob, model);

    ComponentSet trained;
    for (const auto& n : blob.meta.at("components")) trained.set(n.get<std::string>(), true);
    const auto& present = model.config().present;
    if (!trained.subset_of(present)) throw ContractError("checkpoint components are absent from the model");

    ComponentSet full = trained, ablated = trained;
    bool master_ablated = false;
    if (component == "all") {
        master_ablated = true;
    } else {
        ComponentSet probe;
        if (!probe.set(component, true)) throw ConfigError("unknown component '" + component + "'");
        if (!present.get(component)) throw ContractError("component '" + component + "' is absent from the checkpoint");
        full.set(component, true);
        ablated.set(component, false);
    }
    r.param_digest_before = param_digest(model.params());
    r.ppl_full = t.evaluate(full, t.master_for(full));
    r.ppl_bypassed = t.evaluate(ablated, master_ablated || t.master_for(ablated));
    r.delta = r.ppl_bypassed - r.ppl_full;
    r.eval_batches = t.eval_batches();
    r.param_digest_after = param_digest(model.params());
    r.checkpoint_digest_after = file_digest(checkpoint);
    return r;
}

// Eval-only delta at each checkpoint of one run (ordered by step).
inline CompoundingSeries compounding_probe(Trainer& t, const std::vector<std::pair<std::int64_t, fs::path>>& checkpoints,
                                           const std::string& component) {
    std::vector<std::int64_t> steps;
    std::vector<double> deltas;
    for (const auto& [step, path] : checkpoints) {
        steps.push_back(step);
        deltas.push_back(eval_only_ablate(t, path, component).delta);
    }
    return compounding_probe(std::move(steps), std::move(deltas));
}

// ---- smoke configurations ----

struct SmokeResult {
    std::string name;
    double val_ppl = 0.0;  // at the smoke horizon
    bool finite = true;
    std::uint64_t memory_resets = 0;
    std::int64_t steps = 0;
    std::string config_digest;
};

inline nlohmann::json to_json(const SmokeResult& s) {
    return {{"name", s.name},       {"val_ppl", s.val_ppl},      {"finite", s.finite},
            {"memory_resets", s.memory_resets}, {"steps", s.steps}, {"config_digest", s.config_digest}};
}

inline SmokeResult smoke_from_json(const nlohmann::json& j) {
    SmokeResult s;
    s.name = j.at("name").get<std::string>();
    s.val_ppl = j.at("val_ppl").get<double>();
    s.finite = j.at("finite").get<bool>();
    s.memory_resets = j.at("memory_resets").get<std::uint64_t>();
    s.steps = j.at("steps").get<std::int64_t>();
    s.config_digest = j.at("config_digest").get<std::string>();
    return s;
}

namespace detail {

// Short phase with the shared smoke warmup, so E1 and E2 phase 0 see identical learning rates.
inline PhaseSpec smoke_phase(PhaseSpec p, const RunConfig& cfg) {
    p.steps = cfg.smoke_steps;
    p.warmup_steps = std::min<std::int64_t>(std::llround(500.0 * cfg.scale), cfg.smoke_steps - 1);
    p.eval_every = cfg.smoke_steps;
    return p;
}

inline double horizon_ppl(const PhaseResult& p) {
    for (auto it = p.log.rbegin(); it != p.log.rend(); ++it)
        if (it->val_ppl) return *it->val_ppl;
    return p.initial_val_ppl;
}

}  // namespace detail

// Digest over the fields both halves of the E1 / E2-phase-0 pair must share.
inline std::string smoke_pair_digest(RunConfig c) {
    c.schedule.clear();
    c.ablate_component.clear();
    return config_digest(c);
}

// name: "e1", "e2_phase0" or "e2_phase3". The model is built for the whole schedule of the named run,
// so the E2 smokes carry every E2 component (bypassed until its phase).
inline SmokeResult run_smoke(const std::string& name, RunConfig cfg, std::shared_ptr<const Corpus> corpus, const fs::path& dir) {
    if (name == "e1") {
        cfg.schedule = "e1_baseline";
    } else if (name == "e2_phase0" || name == "e2_phase3") {
        cfg.schedule = "e2_no_gtfull";
    } else {
        throw ConfigError("unknown smoke '" + name + "' (e1, e2_phase0, e2_phase3)");
    }
    Trainer t(cfg, std::move(corpus), dir);
    std::vector<PhaseSpec> phases;
    const std::size_t last = name == "e2_phase3" ? 3 : 0;
    for (std::size_t i = 0; i <= last; ++i) phases.push_back(detail::smoke_phase(t.phases().at(i), cfg));
    t.set_phases(phases);
    const auto r = t.run();

    SmokeResult s;
    s.name = name;
    s.val_ppl = detail::horizon_ppl(r.phases.back());
    s.steps = total_steps(phases);
    s.config_digest = smoke_pair_digest(cfg);
    for (const auto& p : r.phases)
        for (const auto& row : p.log) s.finite = s.finite && std::isfinite(row.train_loss);
    for (const auto& m : t.model().memory_states()) s.finite = s.finite && m.finite();
    s.finite = s.finite && std::isfinite(s.val_ppl);
    s.memory_resets = t.model().memory_resets();
    write_text_atomic(dir / "smoke.json", to_json(s).dump(2) + "\n");
    return s;
}

// ---- LR sweep ----

struct SweepPoint {
    double lr_cct = 0.0;
    double best_val_ppl = 0.0;
    std::int64_t steps = 0;
};

// Runs the rc2 chain up to the GT-Full phase once, then that phase from the same checkpoint for each
// lr_cct value. `steps` overrides the phase length when positive.
inline std::vector<SweepPoint> run_sweep(const RunConfig& cfg, std::shared_ptr<const Corpus> corpus, const fs::path& dir,
                                         const std::vector<double>& lrs, std::int64_t steps = 0) {
    RunConfig base_cfg = cfg;
    base_cfg.schedule = "rc2_full";
    Trainer base(base_cfg, corpus, dir / "base");
    auto phases = base.phases();
    const auto target = phases.at(2);
    base.set_phases({phases.begin(), phases.begin() + 2});
    base.run();

    std::vector<SweepPoint> out;
    for (double lr : lrs) {
        RunConfig c = base_cfg;
        c.lr_cct = lr;
        const auto sub = dir / fmt::format("lr_{}", lr);
        Trainer t(c, corpus, sub);
        RunLock lock(sub);
        PhaseSpec p = target;
        p.resume_from = base.checkpoint_path("phase1_best").string();
        if (steps > 0) {
            p.steps = steps;
            p.warmup_steps = std::min(p.warmup_steps, steps - 1);
        }
        const auto r = t.run_phase(p);
        out.push_back({lr, r.best_val_ppl, p.steps});
    }
    nlohmann::json j = nlohmann::json::array();
    std::string txt = fmt::format("{:>12} {:>8} {:>12}\n", "lr_cct", "steps", "best PPL");
    for (const auto& s : out) {
        j.push_back({{"lr_cct", s.lr_cct}, {"steps", s.steps}, {"best_val_ppl", s.best_val_ppl}});
        txt += fmt::format("{:>12g} {:>8} {:>12.4f}\n", s.lr_cct, s.steps, s.best_val_ppl);
    }
    write_text_atomic(dir / "sweep.json", j.dump(2) + "\n");
    write_text_atomic(dir / "sweep.txt", txt);
    return out;
}

// ---- directional experiment ----

struct DirectionalRun {
    std::string schedule;
    std::int64_t seed = 0;
    std::int64_t total_steps = 0;
    double best_val_ppl = 0.0;
};

struct DirectionalReport {
    std::vector<DirectionalRun> runs;
    bool matched_steps = false;
    std::optional<double> mean_e1, mean_e2, mean_full;
    std::optional<bool> e1_ge_full;  // expected direction, reported only
    std::optional<Decomposition> decomposition;
};

inline DirectionalReport directional_report(std::vector<DirectionalRun> runs) {
    DirectionalReport r;
    r.runs = std::move(runs);
    r.matched_steps = !r.runs.empty();
    for (const auto& x : r.runs) r.matched_steps = r.matched_steps && x.total_steps == r.runs.front().total_steps;
    auto mean = [&](const std::string& kind) -> std::optional<double> {
        double s = 0.0;
        int n = 0;
        for (const auto& x : r.runs)
            if (x.schedule == kind) {
                s += x.best_val_ppl;
                ++n;
            }
        return n ? std::optional<double>(s / n) : std::nullopt;
    };
    r.mean_e1 = mean("e1_baseline");
    r.mean_e2 = mean("e2_no_gtfull");
    r.mean_full = mean("rc2_full");
    // Runs with unequal step totals are not compared.
    if (r.matched_steps && r.mean_e1 && r.mean_full) r.e1_ge_full = *r.mean_e1 >= *r.mean_full;
    if (r.matched_steps && r.mean_e1 && r.mean_e2 && r.mean_full) r.decomposition = decompose(*r.mean_e1, *r.mean_e2, *r.mean_full);
    return r;
}

inline nlohmann::json to_json(const DirectionalReport& r) {
    nlohmann::json j;
    for (const auto& x : r.runs) {
        j["runs"].push_back({{"schedule", x.schedule}, {"seed", x.seed}, {"total_steps", x.total_steps}, {"best_val_ppl", x.best_val_ppl}});
    }
    auto opt = [](const auto& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
    j["matched_steps"] = r.matched_steps;
    j["mean_e1"] = opt(r.mean_e1);
    j["mean_e2"] = opt(r.mean_e2);
    j["mean_full"] = opt(r.mean_full);
    j["e1_ge_full"] = opt(r.e1_ge_full);
    j["decomposition"] = r.decomposition ? to_json(*r.decomposition) : nlohmann::json();
    j["complete"] = true;
    return j;
}

inline std::string render(const DirectionalReport& r) {
    std::string t = fmt::format("{:<14} {:>6} {:>8} {:>12}\n", "schedule", "seed", "steps", "best PPL");
    for (const auto& x : r.runs) t += fmt::format("{:<14} {:>6} {:>8} {:>12.4f}\n", x.schedule, x.seed, x.total_steps, x.best_val_ppl);
    if (!r.matched_steps) return t + "step totals differ: runs are not compared\n";
    auto m = [](const std::optional<double>& v) { return v ? fmt::format("{:.4f}", *v) : std::string("n/a"); };
    t += fmt::format("mean PPL: e1 {}, e2 {}, full {}\n", m(r.mean_e1), m(r.mean_e2), m(r.mean_full));
    if (r.e1_ge_full) t += fmt::format("expected direction mean(e1) >= mean(full): {}\n", *r.e1_ge_full ? "observed" : "not observed");
    if (r.decomposition) t += render(*r.decomposition);
    return t;
}

// Output directory of one directional run under `root`.
inline fs::path directional_run_dir(const fs::path& root, const std::string& schedule, std::int64_t seed) {
    return root / fmt::format("{}_seed{}", schedule, seed);
}

// Reads a finished run (report.json marked complete with the expected config digest), if any.
inline std::optional<DirectionalRun> finished_run(const fs::path& dir, const RunConfig& cfg) {
    const auto path = dir / "report.json";
    if (!fs::exists(path)) return std::nullopt;
    const auto j = nlohmann::json::parse(read_text_file(path));
    if (!j.value("complete", false) || j.value("config_digest", std::string()) != config_digest(cfg)) return std::nullopt;
    return DirectionalRun{cfg.schedule, cfg.seed, j.at("total_steps").get<std::int64_t>(), j.at("best_val_ppl").get<double>()};
}

inline DirectionalReport run_directional(const RunConfig& cfg, std::shared_ptr<const Corpus> corpus, const fs::path& root,
                                         const std::vector<std::int64_t>& seeds, bool reuse_finished = true) {
    std::vector<DirectionalRun> runs;
    for (const char* kind : {"e1_baseline", "e2_no_gtfull", "rc2_full"}) {
        for (auto seed : seeds) {
            RunConfig c = cfg;
            c.schedule = kind;
            c.seed = seed;
            c.run_id = fmt::format("{}_seed{}", kind, seed);
            const auto dir = directional_run_dir(root, kind, seed);
            c.output_dir = dir.string();
            if (reuse_finished) {
                if (auto done = finished_run(dir, c)) {
                    runs.push_back(*done);
                    continue;
                }
            }
            fs::remove_all(dir);
            Trainer t(c, corpus, dir);
            const auto r = t.run();
            runs.push_back({kind, seed, r.total_steps, r.best_val_ppl});
        }
    }
    auto rep = directional_report(std::move(runs));
    write_text_atomic(root / "directional.json", to_json(rep).dump(2) + "\n");
    write_text_atomic(root / "directional.txt", render(rep));
    return rep;
}

}  // namespace cct
