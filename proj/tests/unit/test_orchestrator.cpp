#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "cct/trainer.hpp"

using namespace cct;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config(std::int64_t seed = 42) {
    RunConfig c;
    c.seed = seed;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_model = 16;
    c.d_ff = 32;
    c.ctx = 8;
    c.bptt = 8;
    c.batch_size = 2;
    c.corpus_bytes = 20000;
    c.pretrain_steps = 0;
    c.eval_batches = 2;
    c.memory_buffer = 4;
    c.memory_working = 2;
    c.memory_episodic = 4;
    c.probes = 2;
    c.narrative_dim = 4;
    return c;
}

PhaseSpec phase(int id, std::int64_t steps, ComponentSet comps = {}, std::string resume = "") {
    PhaseSpec p;
    p.id = id;
    p.label = "unit";
    p.steps = steps;
    p.warmup_steps = 2;
    p.components = comps;
    p.resume_from = std::move(resume);
    p.eval_every = 5;
    return p;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("cct_unit_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

struct Quiet {
    Quiet() { info_enabled() = false; }
    ~Quiet() { info_enabled() = true; }
};

}  // namespace

// ---- learning-rate schedule ----

TEST(LrSchedule, WarmupAndCosineEndpoints) {
    const LrTiers t{1e-3, 5e-5, 2e-5, 1e-4};
    EXPECT_EQ(lr_at(0, 100, 10, t, LrTier::cognitive), 0.0);
    EXPECT_DOUBLE_EQ(lr_at(5, 100, 10, t, LrTier::cognitive), 5e-4);
    EXPECT_DOUBLE_EQ(lr_at(10, 100, 10, t, LrTier::cognitive), 1e-3);
    EXPECT_DOUBLE_EQ(lr_at(99, 100, 10, t, LrTier::cognitive), 1e-4);
    EXPECT_NEAR(lr_at(50, 101, 0, t, LrTier::cognitive), 1e-3 / 2 + 1e-4 / 2, 1e-18);
    EXPECT_DOUBLE_EQ(lr_at(10, 100, 10, t, LrTier::backbone), 5e-5);
    EXPECT_DOUBLE_EQ(lr_at(99, 100, 10, t, LrTier::embedding), 2e-6);
    EXPECT_THROW(lr_at(100, 100, 10, t, LrTier::cognitive), ContractError);
}

TEST(AdamW, ParameterWithoutGradientIsUntouched) {
    ParamSet<float> ps(1);
    auto a = ps.add("a", {3}, InitSpec::constant(1.0), LrTier::cognitive, Component::pp);
    auto b = ps.add("b", {3}, InitSpec::constant(1.0), LrTier::cognitive, Component::pp);
    AdamW<float> opt(ps, {});
    {
        Tape<float> tape;
        tape.backward(sum(square(a)));
    }
    opt.step({1e-2, 1e-2, 1e-2});
    EXPECT_LT(a[0], 1.0f);
    EXPECT_EQ(b[0], 1.0f);
    EXPECT_EQ(opt.slots()[1].step, 0);
}

// ---- phase schedules ----

TEST(Schedule, FullScaleTotalsAndVariants) {
    EXPECT_EQ(total_steps(build_schedule(ScheduleKind::rc2_full, 1.0)), 215000);
    EXPECT_EQ(total_steps(build_schedule(ScheduleKind::e2_no_gtfull, 1.0)), 215000);
    EXPECT_EQ(total_steps(build_schedule(ScheduleKind::e1_baseline, 1.0)), 215000);
    const auto e2 = build_schedule(ScheduleKind::e2_no_gtfull, 1.0);
    EXPECT_EQ(e2[2].label, "CA extended");
    for (const auto& p : e2) EXPECT_FALSE(p.components.gt_full);
    const auto rc2 = build_schedule(ScheduleKind::rc2_full, 1.0);
    EXPECT_TRUE(rc2[2].components.gt_full);
    EXPECT_TRUE(rc2.back().components.pp);
    EXPECT_EQ(rc2[3].resume_from, "phase:2");
    EXPECT_NO_THROW(validate_chain(rc2));
}

TEST(Schedule, ScaledAndInvalid) {
    EXPECT_NEAR(static_cast<double>(total_steps(build_schedule(ScheduleKind::rc2_full, 0.01))), 2150.0, 7.0);
    EXPECT_THROW(build_schedule(ScheduleKind::rc2_full, 0.0), ConfigError);
    EXPECT_THROW(build_schedule(ScheduleKind::rc2_full, 1.5), ConfigError);
    EXPECT_THROW(build_schedule(ScheduleKind::rc2_full, 1e-6), ConfigError);
    EXPECT_THROW(parse_schedule_kind("e3"), ConfigError);
    auto bad = build_schedule(ScheduleKind::rc2_full, 1.0);
    bad[4].components.memory = false;
    EXPECT_THROW(validate_chain(bad), ConfigError);
}

// ---- configuration ----

TEST(Config, UnknownKeysWarnOnce) {
    int warnings = 0;
    auto saved = warning_sink();
    warning_sink() = [&](std::string_view) { ++warnings; };
    const auto c = resolve_config({{"seed", "7"}, {"mystery", "1"}, {"future_weight", "0.5"}});
    warning_sink() = saved;
    EXPECT_EQ(warnings, 1);
    EXPECT_EQ(c.seed, 7);
    EXPECT_EQ(c.unknown_keys.size(), 2u);
    EXPECT_EQ(c.extras.at("future_weight"), 0.5);
    EXPECT_THROW(resolve_config({{"seed", "abc"}}), ConfigError);
}

TEST(Config, DigestIgnoresOutputLocation) {
    auto a = tiny_config(), b = tiny_config();
    b.output_dir = "/elsewhere";
    b.run_id = "x";
    EXPECT_EQ(config_digest(a), config_digest(b));
    b.seed = 43;
    EXPECT_NE(config_digest(a), config_digest(b));
}

// ---- checkpoints ----

TEST(Checkpoint, RoundTripIsByteIdentical) {
    CheckpointBlob blob;
    blob.meta["phase"] = 3;
    const std::vector<float> f{1.5f, -2.0f, 3.25f, 0.0f};
    const std::vector<double> d{1.0 / 3.0};
    const std::vector<std::int64_t> n{7, -9};
    blob.put<float>("w", {2, 2}, f);
    blob.put<double>("x", {1}, d);
    blob.put<std::int64_t>("n", {2}, n);
    const auto bytes = serialize(blob);
    const auto back = deserialize(bytes);
    EXPECT_EQ(back, blob);
    EXPECT_EQ(back.get<float>("w"), f);
    EXPECT_EQ(back.get<double>("x"), d);
    EXPECT_EQ(serialize(back), bytes);
    EXPECT_THROW(back.get<double>("w"), CorruptionError);
}

TEST(Checkpoint, CorruptionIsDetected) {
    CheckpointBlob blob;
    const std::vector<float> f{1.0f, 2.0f};
    blob.put<float>("w", {2}, f);
    auto bytes = serialize(blob);
    auto flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x01;
    EXPECT_THROW(deserialize(flipped), CorruptionError);
    EXPECT_THROW(deserialize(std::span(bytes).first(bytes.size() - 1)), CorruptionError);
    EXPECT_THROW(deserialize(std::span(bytes).first(10)), CorruptionError);
}

TEST(Checkpoint, MissingComponentsFallBackToInit) {
    ModelConfig small;
    small.backbone.n_layers = 1;
    small.backbone.n_heads = 2;
    small.backbone.d_model = 8;
    small.backbone.d_ff = 16;
    small.backbone.vocab_size = 16;
    small.backbone.max_seq_len = 4;
    Model a(small);
    auto big = small;
    big.present.memory = true;
    Model fresh(big), loaded(big);
    for (auto& e : loaded.params().entries()) std::fill(e.tensor.mutable_data().begin(), e.tensor.mutable_data().end(), 9.0f);

    CheckpointBlob blob;
    put_model(blob, a);
    auto saved = warning_sink();
    warning_sink() = [](std::string_view) {};
    const auto missing = get_model(blob, loaded);
    warning_sink() = saved;
    EXPECT_EQ(missing, std::vector<std::string>{"memory"});
    EXPECT_EQ(param_digest(loaded.params()), param_digest(fresh.params()));
}

// ---- trainer ----

TEST(Trainer, EvalCountFollowsInterval) {
    Quiet q;
    TempDir dir("evals");
    const auto cfg = tiny_config();
    Trainer t(cfg, corpus_for(cfg), dir.path);
    const auto r = t.run_phase(phase(0, 10));
    EXPECT_EQ(r.evals, 2);
    EXPECT_EQ(r.log.size(), 10u);
    EXPECT_TRUE(r.log[4].val_ppl && r.log[9].val_ppl && !r.log[3].val_ppl);
    EXPECT_TRUE(fs::exists(t.checkpoint_path("phase0_best")));
    EXPECT_TRUE(fs::exists(dir.path / "metrics.csv"));
}

TEST(Trainer, ResumeSpliceIsBitIdentical) {
    Quiet q;
    TempDir a("splice_a"), b("splice_b");
    ComponentSet comps;
    comps.causal_attn = true;
    comps.memory = true;
    const auto cfg = tiny_config();
    const auto corpus = corpus_for(cfg);

    Trainer straight(cfg, corpus, a.path);
    const auto whole = straight.run_phase(phase(0, 20, comps));

    {
        Trainer first(cfg, corpus, b.path);
        const auto part = first.run_phase(phase(0, 20, comps), {10, false});
        EXPECT_FALSE(part.completed);
    }
    Trainer second(cfg, corpus, b.path);
    const auto rest = second.run_phase(phase(0, 20, comps), {-1, true});
    ASSERT_EQ(rest.log.size(), 10u);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(rest.log[i].train_loss, whole.log[10 + i].train_loss);
    EXPECT_EQ(rest.best_val_ppl, whole.best_val_ppl);
    EXPECT_EQ(param_digest(second.model().params()), param_digest(straight.model().params()));
}

TEST(Trainer, SeedsChangeTheFirstStep) {
    Quiet q;
    TempDir a("seed_a"), b("seed_b"), c("seed_c");
    const auto c42 = tiny_config(42), c1337 = tiny_config(1337);
    const auto corpus = corpus_for(c42);
    Trainer t1(c42, corpus, a.path), t2(c1337, corpus, b.path), t3(c42, corpus, c.path);
    const auto r1 = t1.run_phase(phase(0, 1)), r2 = t2.run_phase(phase(0, 1)), r3 = t3.run_phase(phase(0, 1));
    EXPECT_NE(r1.log[0].train_loss, r2.log[0].train_loss);
    EXPECT_EQ(r1.log[0].train_loss, r3.log[0].train_loss);
}

TEST(Trainer, PhaseStreamsDoNotDependOnEarlierPhases) {
    Quiet q;
    TempDir a("rng_a"), b("rng_b"), src("rng_src");
    const auto cfg = tiny_config();
    const auto corpus = corpus_for(cfg);
    Trainer seed_run(cfg, corpus, src.path);
    seed_run.run_phase(phase(0, 5));
    const auto start = seed_run.checkpoint_path("phase0_best").string();

    ComponentSet ca;
    ca.causal_attn = true;
    Trainer t1(cfg, corpus, a.path), t2(cfg, corpus, b.path);
    t1.set_phases({phase(0, 3), phase(1, 8, ca, start)});
    t2.set_phases({phase(0, 3), phase(1, 8, ca, start)});
    t2.run_phase(phase(0, 3));  // consumes its own stream first
    const auto r1 = t1.run_phase(t1.phases()[1]), r2 = t2.run_phase(t2.phases()[1]);
    for (std::size_t i = 0; i < r1.log.size(); ++i) EXPECT_EQ(r1.log[i].train_loss, r2.log[i].train_loss);
}

TEST(Trainer, LockRejectsSecondOwner) {
    TempDir dir("lock");
    RunLock held(dir.path);
    EXPECT_THROW(RunLock again(dir.path), LockError);
}

TEST(Trainer, StaleLockIsTakenOver) {
    TempDir dir("stale");
    std::ofstream(dir.path / ".lock") << 999999999;
    EXPECT_NO_THROW(RunLock taken(dir.path));
    EXPECT_FALSE(fs::exists(dir.path / ".lock"));
}
