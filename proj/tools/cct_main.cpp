// cct: command-line front end. All numbers come from the library; this file only wires options.
#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"

#include "cct/cct.hpp"

namespace {

using namespace cct;

enum Exit { ok = 0, other_error = 1, config_error = 2, numeric_error = 3, lock_error = 4, check_failed = 5 };

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::string output_dir;
    std::optional<std::int64_t> seed;
    std::optional<double> scale;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "run config file (key = value lines)");
    app->add_option("--set", c.sets, "override, key=value (repeatable)")->take_all()->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    app->add_option("--output-dir", c.output_dir, "run directory");
    app->add_option("--seed", c.seed, "random seed");
    app->add_option("--scale", c.scale, "step scale in (0, 1]");
}

// Config file, then --set overrides, then the dedicated flags. Everything passes the unknown-key filter.
RunConfig resolve(const Common& c) {
    KeyValues kvs;
    if (!c.config.empty()) kvs = parse_key_values(read_text_file(c.config));
    for (const auto& s : c.sets) kvs.push_back(parse_override(s));
    if (c.seed) kvs.emplace_back("seed", std::to_string(*c.seed));
    if (c.scale) kvs.emplace_back("scale", fmt::format("{}", *c.scale));
    if (!c.output_dir.empty()) kvs.emplace_back("output_dir", c.output_dir);
    return resolve_config(kvs);
}

// Without --config, a checkpoint's own run config (../config.resolved) is the base.
RunConfig resolve_for_checkpoint(Common c, const fs::path& checkpoint) {
    const auto run_cfg = checkpoint.parent_path().parent_path() / "config.resolved";
    if (c.config.empty() && fs::exists(run_cfg)) c.config = run_cfg.string();
    auto cfg = resolve(c);
    cfg.output_dir.clear();
    return cfg;
}

fs::path output_root(const Common& c, const std::string& fallback) {
    if (!c.output_dir.empty()) return c.output_dir;
    const char* root = std::getenv("CCT_OUTPUT_ROOT");
    return fs::path(root && *root ? root : "runs") / fallback;
}

int cmd_train_cfg(const RunConfig& cfg) {
    const auto dir = resolve_run_dir(cfg);
    Trainer t(cfg, corpus_for(cfg), dir);
    const auto r = t.run();
    fmt::print("{}", read_text_file(dir / "report.txt"));
    fmt::print("run directory: {}\n", dir.string());
    return r.chain_ok() ? ok : check_failed;
}

int cmd_eval(const Common& c, const std::string& checkpoint) {
    if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
    const auto cfg = resolve_for_checkpoint(c, checkpoint);
    const auto blob = load_blob(checkpoint);
    Trainer t(cfg, corpus_for(cfg), output_root(c, "eval"));
    get_model(blob, t.model());
    ComponentSet comps;
    for (const auto& n : blob.meta.at("components")) comps.set(n.get<std::string>(), true);
    std::optional<double> competence;
    const auto eff = t.effective_components(comps);
    const double ppl = t.evaluate(eff, t.master_for(comps), eff.self_model ? &competence : nullptr);
    nlohmann::json j{{"checkpoint", checkpoint}, {"components", comps.names()}, {"val_ppl", ppl}, {"eval_batches", t.eval_batches()}};
    j["val_competence"] = competence ? nlohmann::json(*competence) : nlohmann::json();
    fmt::print("{}\n", j.dump(2));
    return ok;
}

int cmd_ablate(const Common& c, const std::string& mode, const std::string& component, const std::vector<std::string>& checkpoints,
               const std::vector<std::int64_t>& seeds) {
    auto cfg = resolve(c);
    if (mode == "eval_only" || mode == "compounding") {
        if (checkpoints.empty()) throw ConfigError(mode + " needs --checkpoint");
        if (component.empty()) throw ConfigError(mode + " needs --component");
        cfg = resolve_for_checkpoint(c, checkpoints.front());
        const auto root = output_root(c, "ablate");
        fs::create_directories(root);
        Trainer t(cfg, corpus_for(cfg), root);
        if (mode == "eval_only") {
            const auto r = eval_only_ablate(t, checkpoints.front(), component);
            const auto j = to_json(r);
            write_text_atomic(root / "ablation.json", j.dump(2) + "\n");
            fmt::print("{}\n", j.dump(2));
            return r.unchanged() ? ok : check_failed;
        }
        std::vector<std::pair<std::int64_t, fs::path>> pts;
        for (const auto& p : checkpoints) pts.emplace_back(load_blob(p).meta.at("global_step").get<std::int64_t>(), p);
        std::sort(pts.begin(), pts.end());
        const auto s = compounding_probe(t, pts, component);
        nlohmann::json j{{"component", component}, {"steps", s.steps}, {"deltas", s.deltas}};
        j["nondecreasing"] = s.nondecreasing ? nlohmann::json(*s.nondecreasing) : nlohmann::json();
        write_text_atomic(root / "compounding.json", j.dump(2) + "\n");
        fmt::print("{}\n", j.dump(2));
        return ok;
    }
    if (mode == "retrain") {
        if (component.empty()) throw ConfigError("retrain needs --component");
        cfg.ablate_component = component;
        if (cfg.run_id.empty()) cfg.run_id = fmt::format("{}_minus_{}_seed{}", cfg.schedule, component, cfg.seed);
        return cmd_train_cfg(cfg);
    }
    if (mode == "directional") {
        const auto root = output_root(c, "directional");
        const auto rep = run_directional(cfg, corpus_for(cfg), root, seeds.empty() ? std::vector<std::int64_t>{42, 1337, 2026} : seeds);
        fmt::print("{}", render(rep));
        return rep.matched_steps ? ok : check_failed;
    }
    throw ConfigError("unknown ablation mode '" + mode + "' (eval_only, compounding, retrain, directional)");
}

int cmd_decompose(double e1, double e2, double full, std::optional<double> ref, bool json) {
    const auto d = decompose(e1, e2, full, ref);
    fmt::print("{}", json ? to_json(d).dump(2) + "\n" : render(d));
    return ok;
}

int cmd_sweep(const Common& c, std::vector<double> lrs, std::int64_t steps) {
    auto cfg = resolve(c);
    if (lrs.empty()) lrs = {1e-5, 5e-5, 1e-4, 5e-4, 1e-3};
    const auto pts = run_sweep(cfg, corpus_for(cfg), output_root(c, "sweep"), lrs, steps);
    fmt::print("{:>12} {:>8} {:>12}\n", "lr_cct", "steps", "best PPL");
    for (const auto& p : pts) fmt::print("{:>12g} {:>8} {:>12.4f}\n", p.lr_cct, p.steps, p.best_val_ppl);
    return ok;
}

// Runs one smoke; for the E1 / E2-phase-0 pair, compares against the partner if it has already run
// with a matching config.
int cmd_smoke(const Common& c, const std::string& name) {
    auto cfg = resolve(c);
    const auto root = output_root(c, "smoke");
    auto corpus = corpus_for(cfg);
    auto dir_for = [&](const std::string& n) { return root / fmt::format("{}_seed{}", n, cfg.seed); };
    auto run_one = [&](const std::string& n) {
        fs::remove_all(dir_for(n));
        const auto s = run_smoke(n, cfg, corpus, dir_for(n));
        fmt::print("smoke {}: val PPL {} after {} steps, finite {}, memory resets {}\n", n, s.val_ppl, s.steps, s.finite, s.memory_resets);
        return s;
    };
    auto compare = [&](const SmokeResult& a, const SmokeResult& b) {
        const bool same = a.val_ppl == b.val_ppl;
        fmt::print("{} e1 vs e2_phase0 val PPL: {} vs {}\n", same ? "PASS" : "FAIL", a.val_ppl, b.val_ppl);
        return same ? ok : check_failed;
    };
    if (name == "pair") {
        const auto a = run_one("e1");
        const auto b = run_one("e2_phase0");
        return compare(a, b);
    }
    const auto s = run_one(name);
    if (name == "e2_phase3") {
        const bool pass = s.finite && s.memory_resets == 0;
        fmt::print("{} e2_phase3: finite values and no memory resets\n", pass ? "PASS" : "FAIL");
        return pass ? ok : check_failed;
    }
    const std::string partner = name == "e1" ? "e2_phase0" : "e1";
    const auto partner_file = dir_for(partner) / "smoke.json";
    if (!fs::exists(partner_file)) {
        fmt::print("partner smoke {} not run yet; run it with the same seed to compare\n", partner);
        return s.finite ? ok : check_failed;
    }
    const auto other = smoke_from_json(nlohmann::json::parse(read_text_file(partner_file)));
    if (other.config_digest != s.config_digest) {
        fmt::print("partner smoke {} used a different config; not compared\n", partner);
        return ok;
    }
    return name == "e1" ? compare(s, other) : compare(other, s);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cognitive categorical transformer: desk-scale training and ablation"};
    app.require_subcommand(1);

    Common common;
    auto* train = app.add_subcommand("train", "run a phase schedule");
    add_common(train, common);

    std::string checkpoint;
    auto* eval = app.add_subcommand("eval", "validation perplexity of a checkpoint");
    add_common(eval, common);
    eval->add_option("--checkpoint", checkpoint)->required();

    std::string mode = "eval_only", component;
    std::vector<std::string> checkpoints;
    std::vector<std::int64_t> seeds;
    auto* ablate = app.add_subcommand("ablate", "eval-only, compounding, retrain or directional ablation");
    add_common(ablate, common);
    ablate->add_option("--mode", mode)->check(CLI::IsMember({"eval_only", "compounding", "retrain", "directional"}));
    ablate->add_option("--component", component, "causal_attn, gt_full, memory, self_model, topdown, pp or all");
    ablate->add_option("--checkpoint", checkpoints)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    ablate->add_option("--seeds", seeds)->delimiter(',');

    double e1 = 0, e2 = 0, full = 0;
    std::optional<double> ref;
    bool json = false;
    auto* dec = app.add_subcommand("decompose", "architectural decomposition from three perplexities");
    dec->add_option("--e1", e1)->required();
    dec->add_option("--e2", e2)->required();
    dec->add_option("--full", full)->required();
    dec->add_option("--ref", ref, "zero-shot reference perplexity");
    dec->add_flag("--json", json);

    std::vector<double> lrs;
    std::int64_t sweep_steps = 0;
    auto* sweep = app.add_subcommand("sweep", "lr_cct sweep over the GT-Full phase");
    add_common(sweep, common);
    sweep->add_option("--lr", lrs)->delimiter(',');
    sweep->add_option("--steps", sweep_steps, "steps per sweep point (default: the scaled phase length)");

    std::string smoke_name;
    auto* smoke = app.add_subcommand("smoke", "smoke configurations: e1, e2_phase0, e2_phase3, pair");
    add_common(smoke, common);
    smoke->add_option("name", smoke_name)->required()->check(CLI::IsMember({"e1", "e2_phase0", "e2_phase3", "pair"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        fmt::print(stderr, "error kind=usage message=\"{}\"\n", e.what());
        return config_error;
    }

    auto fail = [](const char* kind, const std::exception& e, int code) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        std::replace(msg.begin(), msg.end(), '"', '\'');
        fmt::print(stderr, "error kind={} message=\"{}\"\n", kind, msg);
        return code;
    };
    try {
        if (*train) return cmd_train_cfg(resolve(common));
        if (*eval) return cmd_eval(common, checkpoint);
        if (*ablate) return cmd_ablate(common, mode, component, checkpoints, seeds);
        if (*dec) return cmd_decompose(e1, e2, full, ref, json);
        if (*sweep) return cmd_sweep(common, lrs, sweep_steps);
        if (*smoke) return cmd_smoke(common, smoke_name);
    } catch (const ConfigError& e) {
        return fail("config", e, config_error);
    } catch (const CorruptionError& e) {
        return fail("corruption", e, config_error);
    } catch (const NumericError& e) {
        return fail("numeric", e, numeric_error);
    } catch (const LockError& e) {
        return fail("lock", e, lock_error);
    } catch (const std::exception& e) {
        return fail("internal", e, other_error);
    }
    return other_error;
}
