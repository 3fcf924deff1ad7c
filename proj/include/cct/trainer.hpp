#pragma once

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cct/checkpoint.hpp"
#include "cct/config.hpp"
#include "cct/data.hpp"
#include "cct/optim.hpp"
#include "cct/schedule.hpp"
#include "cct/synthetic.hpp"

namespace cct {

namespace fs = std::filesystem;
using Model = CctModel<float>;

// ---- run directory and lock ----

// Exclusive ownership of a run directory via an O_EXCL lock file holding the owner pid. A lock left
// by a dead process is taken over.
class RunLock {
   public:
    explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
        fs::create_directories(dir);
        for (int attempt = 0; attempt < 2; ++attempt) {
            const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
            if (fd >= 0) {
                const auto pid = std::to_string(::getpid());
                if (::write(fd, pid.data(), pid.size()) < 0) {
                    ::close(fd);
                    throw LockError("cannot write lock file " + path_.string());
                }
                ::close(fd);
                return;
            }
            long owner = 0;
            if (std::ifstream in(path_); in >> owner && owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno != ESRCH)) {
                throw LockError(fmt::format("run directory {} is locked by pid {}", dir.string(), owner));
            }
            fs::remove(path_);
        }
        throw LockError("cannot acquire lock " + path_.string());
    }
    ~RunLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

   private:
    fs::path path_;
};

// Output directory for a run: explicit output_dir, else $CCT_OUTPUT_ROOT/<run_id>, else ./runs/<run_id>.
inline fs::path resolve_run_dir(const RunConfig& cfg) {
    if (!cfg.output_dir.empty()) return cfg.output_dir;
    const char* root = std::getenv("CCT_OUTPUT_ROOT");
    const std::string id = cfg.run_id.empty() ? fmt::format("{}_seed{}", cfg.schedule, cfg.seed) : cfg.run_id;
    return fs::path(root && *root ? root : "runs") / id;
}

// ---- model construction and (de)serialisation ----

inline ModelConfig model_config(const RunConfig& c, std::size_t vocab_size, const ComponentSet& present) {
    ModelConfig m;
    m.backbone.n_layers = static_cast<std::size_t>(c.n_layers);
    m.backbone.n_heads = static_cast<std::size_t>(c.n_heads);
    m.backbone.d_model = static_cast<std::size_t>(c.d_model);
    m.backbone.d_ff = static_cast<std::size_t>(c.d_ff);
    m.backbone.vocab_size = vocab_size;
    m.backbone.max_seq_len = static_cast<std::size_t>(c.ctx);
    m.gt.k = static_cast<std::size_t>(c.gt_k);
    m.gt.triangle_cap = static_cast<std::size_t>(c.triangle_cap);
    m.gt.d_coord = static_cast<std::size_t>(c.d_coord);
    m.memory.n_buffer = static_cast<std::size_t>(c.memory_buffer);
    m.memory.n_working = static_cast<std::size_t>(c.memory_working);
    m.memory.n_episodic = static_cast<std::size_t>(c.memory_episodic);
    m.memory_write_gate = c.memory_write_gate;
    m.self_model.n_probes = static_cast<std::size_t>(c.probes);
    m.self_model.temperature = c.probe_temperature;
    m.self_model.hidden = static_cast<std::size_t>(c.narrative_dim);
    m.present = present;
    m.adjunction_decoder = c.adjunction_weight != 0.0;
    m.seed = static_cast<std::uint64_t>(c.seed);
    return m;
}

inline void put_model(CheckpointBlob& blob, const Model& model) {
    for (const auto& e : model.params().entries()) blob.put<float>("param/" + e.name, e.tensor.shape(), e.tensor.data());
    for (std::size_t l = 0; l < model.memory_states().size(); ++l) {
        const auto& s = model.memory_states()[l];
        const std::string p = fmt::format("memory/{}/", l);
        const std::pair<const char*, const MemoryTier<float>*> tiers[] = {{"buffer", &s.buffer}, {"working", &s.working}, {"episodic", &s.episodic}};
        for (const auto& [name, t] : tiers) {
            blob.put<float>(p + name + ".values", {t->slots, t->dim}, t->values);
            blob.put<float>(p + name + ".usage", {t->slots}, t->usage);
        }
        const std::int64_t counter = static_cast<std::int64_t>(s.step_counter);
        blob.put<std::int64_t>(p + "step_counter", {1}, std::span(&counter, 1));
    }
}

// Loads parameters and memory state. Parameters missing from the blob are re-drawn from their init
// (passthrough values for side-paths) and the owning components are reported once.
inline std::vector<std::string> get_model(const CheckpointBlob& blob, Model& model) {
    std::vector<std::string> missing;
    auto& ps = model.params();
    for (auto& e : ps.entries()) {
        const auto key = "param/" + e.name;
        if (!blob.has(key)) {
            ps.reinit(e.name);
            const std::string owner = component_name(e.owner);
            if (std::find(missing.begin(), missing.end(), owner) == missing.end()) missing.push_back(owner);
            continue;
        }
        const auto shape = e.tensor.shape();
        const auto v = blob.get<float>(key, &shape);
        std::copy(v.begin(), v.end(), e.tensor.mutable_data().begin());
    }
    for (std::size_t l = 0; l < model.memory_states().size(); ++l) {
        auto& s = model.memory_states()[l];
        const std::string p = fmt::format("memory/{}/", l);
        if (!blob.has(p + "step_counter")) {
            reset(s);
            continue;
        }
        const std::pair<const char*, MemoryTier<float>*> tiers[] = {{"buffer", &s.buffer}, {"working", &s.working}, {"episodic", &s.episodic}};
        for (const auto& [name, t] : tiers) {
            const Shape vs{t->slots, t->dim}, us{t->slots};
            t->values = blob.get<float>(p + name + ".values", &vs);
            t->usage = blob.get<float>(p + name + ".usage", &us);
        }
        s.step_counter = static_cast<std::uint64_t>(blob.get<std::int64_t>(p + "step_counter").at(0));
    }
    if (!missing.empty()) {
        warn(fmt::format("checkpoint lacks components [{}]; initialised them at passthrough values", fmt::join(missing, ", ")));
    }
    return missing;
}

inline void put_optimizer(CheckpointBlob& blob, const AdamW<float>& opt, const ParamSet<float>& ps) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& s = opt.slots()[i];
        if (s.step == 0) continue;
        const auto& e = ps.entries()[i];
        blob.put<float>("adam/" + e.name + "/m", e.tensor.shape(), s.m);
        blob.put<float>("adam/" + e.name + "/v", e.tensor.shape(), s.v);
        blob.put<std::int64_t>("adam/" + e.name + "/step", {1}, std::span(&s.step, 1));
    }
}

inline void get_optimizer(const CheckpointBlob& blob, AdamW<float>& opt, const ParamSet<float>& ps) {
    opt.reset();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& e = ps.entries()[i];
        const auto key = "adam/" + e.name + "/step";
        if (!blob.has(key)) continue;
        auto& s = opt.slots()[i];
        const auto shape = e.tensor.shape();
        s.m = blob.get<float>("adam/" + e.name + "/m", &shape);
        s.v = blob.get<float>("adam/" + e.name + "/v", &shape);
        s.step = blob.get<std::int64_t>(key).at(0);
    }
}

// Order-sensitive digest of the parameters owned by `owner` (all parameters when nullopt).
inline std::string param_digest(const ParamSet<float>& ps, std::optional<Component> owner = std::nullopt) {
    Sha256Builder h;
    for (const auto& e : ps.entries()) {
        if (owner && e.owner != *owner) continue;
        h.update(e.name);
        h.update(e.tensor.data().data(), e.tensor.numel() * sizeof(float));
    }
    const auto d = h.finish();
    return to_hex(d);
}

// ---- logs ----

struct StepLog {
    std::int64_t step = 0;  // global step across the schedule; pretrain rows use their own counter
    int phase = 0;          // -1 for the pseudo-pretrain
    std::int64_t phase_step = 0;
    double train_loss = 0.0;
    std::optional<double> val_ppl;
    std::array<double, 3> lr{};
    std::optional<double> competence, val_competence, conflict_cosine, curvature_reg;
};

inline std::string csv_header() {
    return "step,phase,phase_step,train_loss,val_ppl,lr_backbone,lr_embedding,lr_cognitive,competence,val_competence,"
           "conflict_cosine,curvature_reg\n";
}

inline std::string csv_row(const StepLog& r) {
    auto opt = [](const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); };
    return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", r.step, r.phase, r.phase_step, r.train_loss, opt(r.val_ppl),
                       r.lr[0], r.lr[1], r.lr[2], opt(r.competence), opt(r.val_competence), opt(r.conflict_cosine),
                       opt(r.curvature_reg));
}

struct PhaseResult {
    int phase = 0;
    std::string label;
    std::int64_t steps = 0;
    double initial_val_ppl = 0.0;
    std::optional<double> expected_initial_val_ppl;  // best val PPL of the resume source
    double best_val_ppl = 0.0;
    std::int64_t best_step = 0;  // phase step after which the best checkpoint was taken (0 = initial state)
    fs::path best_checkpoint;
    int evals = 0;  // periodic evaluations (the boundary evaluation is not counted)
    bool completed = true;
    std::vector<StepLog> log;

    bool chain_ok() const { return !expected_initial_val_ppl || *expected_initial_val_ppl == initial_val_ppl; }
};

inline nlohmann::json to_json(const PhaseResult& p) {
    nlohmann::json j{{"phase", p.phase},
                     {"label", p.label},
                     {"steps", p.steps},
                     {"initial_val_ppl", p.initial_val_ppl},
                     {"best_val_ppl", p.best_val_ppl},
                     {"best_step", p.best_step},
                     {"best_checkpoint", p.best_checkpoint.string()},
                     {"evals", p.evals},
                     {"chain_ok", p.chain_ok()}};
    j["expected_initial_val_ppl"] = p.expected_initial_val_ppl ? nlohmann::json(*p.expected_initial_val_ppl) : nlohmann::json();
    // Gradient-conflict summary over the steps that had an active prior.
    std::vector<double> cos;
    for (const auto& r : p.log)
        if (r.conflict_cosine) cos.push_back(*r.conflict_cosine);
    if (!cos.empty()) {
        j["conflict_cosine_mean"] = std::accumulate(cos.begin(), cos.end(), 0.0) / static_cast<double>(cos.size());
        j["conflict_cosine_min"] = *std::min_element(cos.begin(), cos.end());
    }
    return j;
}

struct RunResult {
    std::string schedule;
    std::int64_t total_steps = 0;
    PhaseResult pretrain;
    std::vector<PhaseResult> phases;
    double best_val_ppl = 0.0;  // best of the final phase
    fs::path dir;

    bool chain_ok() const {
        for (const auto& p : phases)
            if (!p.chain_ok()) return false;
        return true;
    }
};

// Options for splitting a phase across processes (used by resume tests).
struct PhaseControl {
    std::int64_t stop_after = -1;  // stop once this many phase steps are done, saving a resumable checkpoint
    bool resume_latest = false;    // continue from the phase's latest checkpoint
};

// ---- trainer ----

class Trainer {
   public:
    Trainer(RunConfig cfg, std::shared_ptr<const Corpus> corpus, fs::path dir)
        : cfg_(std::move(cfg)), corpus_(std::move(corpus)), dir_(std::move(dir)) {
        validate(cfg_);
        phases_ = build_schedule(parse_schedule_kind(cfg_.schedule), cfg_.scale, cfg_.eval_every);
        if (!cfg_.ablate_component.empty()) phases_ = without_component(phases_, cfg_.ablate_component);
        validate_chain(phases_);
        model_ = std::make_unique<Model>(model_config(cfg_, corpus_->vocab_size, union_components(phases_)));
        tiers_ = {cfg_.lr_cct, cfg_.lr_backbone, cfg_.lr_embed, cfg_.eta_min};
        build_eval_set();
        fs::create_directories(dir_ / "checkpoints");
    }

    const RunConfig& config() const { return cfg_; }
    const std::vector<PhaseSpec>& phases() const { return phases_; }
    Model& model() { return *model_; }
    const fs::path& dir() const { return dir_; }
    fs::path checkpoint_path(const std::string& name) const { return dir_ / "checkpoints" / (name + ".ckpt"); }

    void set_phases(std::vector<PhaseSpec> p) {
        validate_chain(p);
        if (!union_components(p).subset_of(model_->config().present)) throw ConfigError("schedule needs components the model lacks");
        phases_ = std::move(p);
    }

    // Pseudo-pretrain, then every phase in order, each resuming from the previous best.
    RunResult run() {
        RunLock lock(dir_);
        write_run_metadata();
        start_ = std::chrono::steady_clock::now();
        RunResult r;
        r.schedule = cfg_.schedule;
        r.total_steps = total_steps(phases_);
        r.dir = dir_;
        r.pretrain = pretrain();
        for (const auto& p : phases_) {
            r.phases.push_back(run_phase(p));
            if (!r.phases.back().chain_ok()) {
                warn(fmt::format("resume chain broken at phase {}: step-0 val PPL {} != previous best {}", p.id,
                                 r.phases.back().initial_val_ppl, *r.phases.back().expected_initial_val_ppl));
            }
        }
        r.best_val_ppl = r.phases.back().best_val_ppl;
        write_report(r);
        return r;
    }

    // Backbone-only warm start standing in for pretrained weights. All tiers share pretrain_lr.
    PhaseResult pretrain() {
        PhaseSpec p;
        p.id = -1;
        p.label = "pseudo-pretrain";
        p.steps = cfg_.pretrain_steps;
        p.warmup_steps = std::min(cfg_.pretrain_warmup, std::max<std::int64_t>(cfg_.pretrain_steps - 1, 0));
        p.eval_every = std::max<std::int64_t>(cfg_.pretrain_steps, 1);
        const LrTiers flat{cfg_.pretrain_lr, cfg_.pretrain_lr, cfg_.pretrain_lr, cfg_.pretrain_lr * 0.1};
        return run_phase_impl(p, std::nullopt, flat, {});
    }

    PhaseResult run_phase(const PhaseSpec& phase, const PhaseControl& ctl = {}) {
        std::optional<fs::path> resume;
        if (phase.resume_from == "pseudo-pretrain") {
            resume = checkpoint_path("pretrain_best");
        } else if (phase.resume_from.rfind("phase:", 0) == 0) {
            resume = checkpoint_path("phase" + phase.resume_from.substr(6) + "_best");
        } else if (!phase.resume_from.empty()) {
            resume = fs::path(phase.resume_from);
        }
        if (resume && !fs::exists(*resume)) throw ConfigError("resume source missing: " + resume->string());
        return run_phase_impl(phase, resume, tiers_, ctl);
    }

    // Validation perplexity with the given side-paths enabled. Memory is read, never written.
    double evaluate(const ComponentSet& enabled, bool master, std::optional<double>* competence = nullptr) {
        model_->set_enabled(enabled, master);
        NllAccumulator acc;
        double comp_sum = 0.0;
        std::size_t comp_n = 0;
        ForwardOptions opt;
        opt.memory_writes = false;
        opt.self_model_aux = competence != nullptr;
        for (const auto& b : eval_set_) {
            auto out = model_->forward(b.inputs, opt);
            acc.add(out.logits, std::span<const std::int32_t>(b.targets.ids));
            if (out.competence >= 0.0) {
                comp_sum += out.competence;
                ++comp_n;
            }
        }
        if (competence) *competence = comp_n ? std::optional<double>(comp_sum / static_cast<double>(comp_n)) : std::nullopt;
        return acc.ppl();
    }

    std::size_t eval_batches() const { return eval_set_.size(); }

    // false removes the prior losses and the conflict diagnostic from the step entirely.
    void set_priors_module(bool on) { priors_module_ = on; }

    bool master_for(const ComponentSet& c) const { return c.empty() || cfg_.cct_master_bypass; }

    ComponentSet effective_components(ComponentSet c) const {
        if (cfg_.bypass_self_model) c.self_model = false;
        return c;
    }

   private:
    PhaseResult run_phase_impl(const PhaseSpec& phase, const std::optional<fs::path>& resume, const LrTiers& tiers,
                               const PhaseControl& ctl) {
        const std::string tag = phase.id < 0 ? "pretrain" : fmt::format("phase{}", phase.id);
        const auto comps = effective_components(phase.components);
        const bool master = master_for(phase.components);

        PhaseResult res;
        res.phase = phase.id;
        res.label = phase.label;
        res.steps = phase.steps;
        res.best_checkpoint = checkpoint_path(tag + "_best");

        // Phase-scoped seeding: nothing below depends on what earlier phases consumed.
        const auto phase_seed = derive_seed(static_cast<std::uint64_t>(cfg_.seed), "phase/" + tag);
        BatchStream stream(corpus_->train, static_cast<std::size_t>(cfg_.batch_size), static_cast<std::size_t>(cfg_.bptt),
                           derive_seed(phase_seed, "data"), true, corpus_->digest);
        AdamW<float> opt(model_->params(), {cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps, cfg_.weight_decay});

        std::int64_t start = 0;
        if (ctl.resume_latest) {
            const auto blob = load_blob(checkpoint_path(tag + "_latest"));
            get_model(blob, *model_);
            get_optimizer(blob, opt, model_->params());
            const auto& m = blob.meta;
            stream.restore({m.at("data_epoch").get<std::uint64_t>(), m.at("data_cursor").get<std::size_t>()});
            start = m.at("phase_step").get<std::int64_t>();
            res.initial_val_ppl = m.at("initial_val_ppl").get<double>();
            if (!m.at("expected_initial_val_ppl").is_null()) res.expected_initial_val_ppl = m.at("expected_initial_val_ppl").get<double>();
            res.best_val_ppl = m.at("best_val_ppl").get<double>();
            res.best_step = m.at("best_step").get<std::int64_t>();
            res.evals = m.at("evals").get<int>();
        } else {
            if (resume) {
                const auto blob = load_blob(*resume);
                get_model(blob, *model_);
                if (blob.meta.contains("best_val_ppl")) res.expected_initial_val_ppl = blob.meta.at("best_val_ppl").get<double>();
            } else {
                for (const auto& e : model_->params().entries()) model_->params().reinit(e.name);
                model_->reset_memory();
            }
            // Boundary evaluation: the state this phase starts from is its first best candidate.
            res.initial_val_ppl = evaluate(comps, master);
            res.best_val_ppl = res.initial_val_ppl;
            res.best_step = 0;
            save_state(res.best_checkpoint, phase, 0, res, nullptr, nullptr);
        }
        info("[{}] {}: {} steps, components [{}], start val PPL {:.4f}", tag, phase.label, phase.steps,
             fmt::join(comps.names(), ","), res.initial_val_ppl);

        const std::int64_t base_step = global_offset(phase);
        std::ofstream csv = open_metrics();
        const PriorConfig priors =
            priors_module_ ? PriorConfig{cfg_.sheaf_weight, cfg_.adjunction_weight, cfg_.curvature_weight} : PriorConfig{};

        for (std::int64_t s = start; s < phase.steps; ++s) {
            if (ctl.stop_after >= 0 && s >= ctl.stop_after) {
                save_state(checkpoint_path(tag + "_latest"), phase, s, res, &opt, &stream);
                res.completed = false;
                return res;
            }
            const std::int64_t global = phase.id < 0 ? s : base_step + s;
            numeric_step_context() = global;
            const Batch batch = stream.next_cycling();

            StepLog row;
            row.step = global;
            row.phase = phase.id;
            row.phase_step = s;
            for (auto t : {LrTier::backbone, LrTier::embedding, LrTier::cognitive}) {
                row.lr[static_cast<std::size_t>(t)] = lr_at(s, phase.steps, phase.warmup_steps, tiers, t);
            }

            model_->set_enabled(comps, master);
            model_->params().clear_grads();
            {
                Tape<float> tape;
                ForwardOptions fo;
                fo.memory_writes = true;
                fo.self_model_aux = cfg_.self_model_weight != 0.0;
                fo.priors = priors;
                auto out = model_->forward(batch.inputs, fo);
                const std::size_t rows = batch.targets.ids.size();
                const auto ce = cross_entropy(reshape(out.logits, {rows, out.logits.shape().back()}),
                                              std::span<const std::int32_t>(batch.targets.ids));

                std::optional<Tensor<float>> total;
                auto add_term = [&](const Tensor<float>& t, double w) {
                    if (w == 0.0 || !t.defined()) return;
                    const auto term = w == 1.0 ? t : scale(t, static_cast<float>(w));
                    total = total ? add(*total, term) : term;
                };
                add_term(ce, cfg_.lm_weight);
                add_term(out.pp_loss, cfg_.pp_weight);
                add_term(out.self_model_loss, cfg_.self_model_weight);

                std::optional<Tensor<float>> prior_total;
                auto add_prior = [&](const Tensor<float>& t, double w) {
                    if (w == 0.0 || !t.defined()) return;
                    const auto term = scale(t, static_cast<float>(w));
                    prior_total = prior_total ? add(*prior_total, term) : term;
                };
                if (priors_module_) {
                    add_prior(out.sheaf_loss, cfg_.sheaf_weight);
                    add_prior(out.adjunction_loss, cfg_.adjunction_weight);
                }
                if (prior_total) {
                    std::vector<Tensor<float>> ps;
                    for (const auto& e : model_->params().entries()) ps.push_back(e.tensor);
                    row.conflict_cosine = gradient_conflict_report(tape, ce, *prior_total, ps);
                    total = total ? add(*total, *prior_total) : *prior_total;
                }
                if (priors_module_ && cfg_.curvature_weight != 0.0 && !out.curvatures.empty()) {
                    row.curvature_reg = curvature_regularizer(out.curvatures);
                }
                if (!total) throw ConfigError("every loss term has weight 0");
                row.train_loss = static_cast<double>(total->item());
                if (!std::isfinite(row.train_loss)) {
                    throw NumericError(fmt::format("non-finite training loss at step {} (phase {})", global, phase.id));
                }
                if (out.competence >= 0.0) row.competence = out.competence;
                if (total->requires_grad()) tape.backward(*total);
            }
            clip_grad_norm(model_->params(), cfg_.grad_clip);
            opt.step(row.lr);

            const std::int64_t done = s + 1;
            if (done % phase.eval_every == 0 || done == phase.steps) {
                std::optional<double> comp;
                const double v = evaluate(comps, master, comps.self_model ? &comp : nullptr);
                row.val_ppl = v;
                row.val_competence = comp;
                ++res.evals;
                if (v < res.best_val_ppl) {
                    res.best_val_ppl = v;
                    res.best_step = done;
                    save_state(res.best_checkpoint, phase, done, res, nullptr, nullptr);
                }
                info("[{}] step {}/{} loss {:.4f} val PPL {:.4f}", tag, done, phase.steps, row.train_loss, v);
                latest_val_ = v;
                best_seen_ = best_seen_ ? std::min(*best_seen_, v) : v;
                write_progress(phase, global + 1);
            }
            if (cfg_.checkpoint_every > 0 && phase.id >= 0 && done % cfg_.checkpoint_every == 0) {
                save_state(checkpoint_path(fmt::format("{}_step{}", tag, done)), phase, done, res, nullptr, nullptr);
            }
            csv << csv_row(row);
            res.log.push_back(row);
        }
        numeric_step_context() = -1;
        return res;
    }

    std::int64_t global_offset(const PhaseSpec& phase) const {
        std::int64_t off = 0;
        for (const auto& p : phases_) {
            if (p.id == phase.id) break;
            off += p.steps;
        }
        return off;
    }

    void save_state(const fs::path& path, const PhaseSpec& phase, std::int64_t phase_step, const PhaseResult& res,
                    const AdamW<float>* opt, const BatchStream* stream) const {
        CheckpointBlob blob;
        put_model(blob, *model_);
        auto& m = blob.meta;
        m["phase"] = phase.id;
        m["phase_label"] = phase.label;
        m["phase_step"] = phase_step;
        m["global_step"] = phase.id < 0 ? phase_step : global_offset(phase) + phase_step;
        m["best_val_ppl"] = res.best_val_ppl;
        m["best_step"] = res.best_step;
        m["initial_val_ppl"] = res.initial_val_ppl;
        m["expected_initial_val_ppl"] = res.expected_initial_val_ppl ? nlohmann::json(*res.expected_initial_val_ppl) : nlohmann::json();
        m["evals"] = res.evals;
        m["config_digest"] = config_digest(cfg_);
        m["schedule"] = cfg_.schedule;
        m["seed"] = cfg_.seed;
        m["components"] = phase.components.names();
        m["present"] = model_->config().present.names();
        if (opt) put_optimizer(blob, *opt, model_->params());
        if (stream) {
            m["data_epoch"] = stream->state().epoch;
            m["data_cursor"] = stream->state().cursor;
        }
        save_blob(path, blob);
    }

    std::ofstream open_metrics() const {
        const auto path = dir_ / "metrics.csv";
        const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
        std::ofstream out(path, std::ios::app);
        if (!out) throw std::runtime_error("cannot open " + path.string());
        if (fresh) out << csv_header();
        return out;
    }

    void write_progress(const PhaseSpec& phase, std::int64_t step) const {
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        nlohmann::json j{{"run_id", run_id()},
                         {"phase", phase.id},
                         {"step", step},
                         {"total_steps", total_steps(phases_)},
                         {"latest_val_ppl", latest_val_ ? nlohmann::json(*latest_val_) : nlohmann::json()},
                         {"best_val_ppl", best_seen_ ? nlohmann::json(*best_seen_) : nlohmann::json()},
                         {"wall_seconds", wall}};
        write_text_atomic(dir_ / "progress.json", j.dump(2) + "\n");
    }

    std::string run_id() const { return cfg_.run_id.empty() ? dir_.filename().string() : cfg_.run_id; }

    void write_run_metadata() const {
        auto j = to_json(cfg_);
        j["config_digest"] = config_digest(cfg_);
        j["corpus_digest"] = corpus_->digest;
        j["vocab_size"] = corpus_->vocab_size;
        j["eval_batches_used"] = eval_set_.size();
        nlohmann::json tiers = nlohmann::json::object();
        for (const auto& e : model_->params().entries()) tiers[e.name] = tier_name(e.tier);
        j["parameter_tiers"] = tiers;
        write_text_atomic(dir_ / "config.json", j.dump(2) + "\n");
        write_text_atomic(dir_ / "config.resolved", to_text(cfg_));
    }

    void write_report(const RunResult& r) const {
        nlohmann::json j{{"run_id", run_id()},
                         {"schedule", r.schedule},
                         {"total_steps", r.total_steps},
                         {"best_val_ppl", r.best_val_ppl},
                         {"chain_ok", r.chain_ok()},
                         {"complete", true},
                         {"config_digest", config_digest(cfg_)},
                         {"pretrain", to_json(r.pretrain)}};
        for (const auto& p : r.phases) j["phases"].push_back(to_json(p));
        write_text_atomic(dir_ / "report.json", j.dump(2) + "\n");

        std::string txt = fmt::format("run {} ({}), {} steps, seed {}\n", run_id(), r.schedule, r.total_steps, cfg_.seed);
        txt += fmt::format("{:<6} {:<40} {:>8} {:>12} {:>12} {:>6}\n", "phase", "label", "steps", "start PPL", "best PPL", "chain");
        for (const auto& p : r.phases) {
            txt += fmt::format("{:<6} {:<40} {:>8} {:>12.4f} {:>12.4f} {:>6}\n", p.phase, p.label, p.steps, p.initial_val_ppl,
                               p.best_val_ppl, p.chain_ok() ? "ok" : "BROKEN");
        }
        txt += fmt::format("final best val PPL {:.4f}\n", r.best_val_ppl);
        write_text_atomic(dir_ / "report.txt", txt);
    }

    void build_eval_set() {
        BatchStream s(corpus_->valid, static_cast<std::size_t>(cfg_.batch_size), static_cast<std::size_t>(cfg_.bptt), 0, false);
        const auto limit = cfg_.eval_batches > 0 ? static_cast<std::size_t>(cfg_.eval_batches) : s.batches_per_epoch();
        while (eval_set_.size() < limit) {
            auto b = s.next_batch();
            if (!b) break;
            eval_set_.push_back(std::move(*b));
        }
        if (eval_set_.empty()) throw ConfigError("validation split too small for one batch");
    }

    RunConfig cfg_;
    std::shared_ptr<const Corpus> corpus_;
    fs::path dir_;
    std::vector<PhaseSpec> phases_;
    std::unique_ptr<Model> model_;
    LrTiers tiers_;
    std::vector<Batch> eval_set_;
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
    std::optional<double> latest_val_, best_seen_;
    bool priors_module_ = true;
};

// Corpus named by the config, or the built-in synthetic text.
inline std::shared_ptr<const Corpus> corpus_for(const RunConfig& cfg) {
    TokenizerSpec tokenization;
    if (cfg.tokenizer == "bpe") {
        tokenization.kind = TokenizerSpec::Kind::bpe;
        tokenization.vocab_size = static_cast<std::size_t>(cfg.bpe_vocab);
    }
    if (cfg.corpus.empty()) {
        return std::make_shared<const Corpus>(corpus_from_text(synthetic_corpus(static_cast<std::size_t>(cfg.corpus_bytes)), tokenization));
    }
    return std::make_shared<const Corpus>(load_corpus(cfg.corpus, tokenization));
}

}  // namespace cct
