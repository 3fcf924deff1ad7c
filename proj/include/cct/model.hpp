#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cct/backbone.hpp"
#include "cct/memory.hpp"
#include "cct/predictive.hpp"
#include "cct/priors.hpp"
#include "cct/self_model.hpp"
#include "cct/simplicial.hpp"

namespace cct {

// Side-paths named the way phase schedules name them. topdown is the PP modulation, pp its loss.
struct ComponentSet {
    bool causal_attn = false;
    bool gt_full = false;
    bool memory = false;
    bool self_model = false;
    bool topdown = false;
    bool pp = false;

    static ComponentSet all() { return {true, true, true, true, true, true}; }
    static ComponentSet none() { return {}; }

    bool empty() const { return !(causal_attn || gt_full || memory || self_model || topdown || pp); }
    bool subset_of(const ComponentSet& o) const {
        return (!causal_attn || o.causal_attn) && (!gt_full || o.gt_full) && (!memory || o.memory) &&
               (!self_model || o.self_model) && (!topdown || o.topdown) && (!pp || o.pp);
    }
    bool has_pp_weights() const { return topdown || pp; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        if (causal_attn) out.emplace_back("causal_attn");
        if (gt_full) out.emplace_back("gt_full");
        if (memory) out.emplace_back("memory");
        if (self_model) out.emplace_back("self_model");
        if (topdown) out.emplace_back("topdown");
        if (pp) out.emplace_back("pp");
        return out;
    }

    // Sets one named flag; returns false for an unknown name.
    bool set(const std::string& name, bool on) {
        if (name == "causal_attn") causal_attn = on;
        else if (name == "gt_full") gt_full = on;
        else if (name == "memory") memory = on;
        else if (name == "self_model") self_model = on;
        else if (name == "topdown") topdown = on;
        else if (name == "pp") pp = on;
        else return false;
        return true;
    }

    bool get(const std::string& name) const {
        if (name == "causal_attn") return causal_attn;
        if (name == "gt_full") return gt_full;
        if (name == "memory") return memory;
        if (name == "self_model") return self_model;
        if (name == "topdown") return topdown;
        if (name == "pp") return pp;
        throw ContractError("unknown component " + name);
    }

    friend bool operator==(const ComponentSet&, const ComponentSet&) = default;
};

struct BlockBypass {
    bool master_bypass = false;
    bool bypass_geo = true;
    bool bypass_memory = true;
    bool bypass_self_model = true;
    bool bypass_causal_scorer = true;
    bool bypass_topdown = true;
    bool bypass_pp = true;

    // master_bypass forces every other flag on.
    BlockBypass effective() const {
        if (!master_bypass) return *this;
        return {true, true, true, true, true, true, true};
    }

    static BlockBypass from(const ComponentSet& enabled, bool master) {
        return {master, !enabled.gt_full, !enabled.memory, !enabled.self_model, !enabled.causal_attn, !enabled.topdown,
                !enabled.pp};
    }

    friend bool operator==(const BlockBypass&, const BlockBypass&) = default;
};

struct ModelConfig {
    BackboneConfig backbone;
    GtConfig gt;
    MemoryConfig memory;
    SelfModelConfig self_model;
    ComponentSet present;
    bool adjunction_decoder = false;  // learned inverse of the coordinate map for the adjunction prior
    double memory_write_gate = 1.0;
    std::uint64_t seed = 42;
};

struct ForwardOptions {
    bool memory_writes = false;  // training only; evaluation never mutates memory
    bool self_model_aux = true;
    bool capture_scorer = false;
    PriorConfig priors;
};

template <class T>
struct ScorerCapture {
    Tensor<T> scorer;  // q W k^T, [B, H, T, T]
    Tensor<T> dot;     // q k^T, [B, H, T, T]
};

template <class T>
struct ForwardOutput {
    Tensor<T> logits;
    Tensor<T> pp_loss;          // undefined when the PP loss is bypassed everywhere
    Tensor<T> self_model_loss;  // undefined when the self model is bypassed
    double competence = -1.0;   // < 0 when not computed
    Tensor<T> sheaf_loss;
    Tensor<T> adjunction_loss;
    std::vector<double> curvatures;
    std::vector<ScorerCapture<T>> scorer;
};

template <class T>
class CctModel {
   public:
    explicit CctModel(const ModelConfig& cfg) : cfg_(cfg), params_(cfg.seed) {
        const auto& bb = cfg.backbone;
        gpt_ = GptWeights<T>::make(params_, bb);
        for (std::size_t i = 0; i < bb.n_layers; ++i) {
            const std::string p = "h." + std::to_string(i) + ".";
            if (cfg.present.causal_attn) scorer_.push_back(ScorerWeights<T>::make(params_, p + "scorer.", bb));
            if (cfg.present.gt_full) gt_.push_back(GtFullWeights<T>::make(params_, p + "gt.", bb.d_model, cfg.gt));
            if (cfg.present.memory) {
                mem_.push_back(MemoryWeights<T>::make(params_, p + "mem.", bb.d_model, cfg.memory));
                mem_state_.emplace_back(cfg.memory, mem_.back().d_mem);
            }
            if (cfg.present.has_pp_weights() && i >= 1) {
                pp_.push_back(PPPairWeights<T>::make(params_, "pp." + std::to_string(i - 1) + ".", bb.d_model));
            }
        }
        if (cfg.present.self_model) {
            sm_ = SelfModelWeights<T>::make(params_, cfg.seed, "self_model.", bb.d_model, cfg.self_model);
        }
        if (cfg.adjunction_decoder && cfg.present.gt_full) {
            adj_dec_ = Linear<T>::make(params_, "priors.adjunction_dec", gt_[0].d_coord, bb.d_model,
                                       InitSpec::normal(0.02), InitSpec::zeros(), LrTier::cognitive, Component::priors);
        }
        bypass_.assign(bb.n_layers, BlockBypass{});
        set_enabled(ComponentSet::none(), true);
    }

    CctModel(const CctModel&) = delete;
    CctModel& operator=(const CctModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }
    const GptWeights<T>& gpt() const { return gpt_; }

    std::vector<BlockBypass>& bypass() { return bypass_; }
    const std::vector<BlockBypass>& bypass() const { return bypass_; }

    // Enabled side-paths must be present. master=true gives the pure decoder forward.
    void set_enabled(const ComponentSet& enabled, bool master) {
        if (!enabled.subset_of(cfg_.present)) throw ContractError("enabling a component that is not present");
        for (auto& b : bypass_) b = BlockBypass::from(enabled, master);
    }

    std::vector<MemoryState<T>>& memory_states() { return mem_state_; }
    const std::vector<MemoryState<T>>& memory_states() const { return mem_state_; }
    std::uint64_t memory_resets() const { return memory_resets_; }

    bool has_self_model() const { return sm_.has_value(); }
    const SelfModelWeights<T>& self_model() const { return *sm_; }
    const std::vector<GtFullWeights<T>>& gt() const { return gt_; }
    const std::vector<MemoryWeights<T>>& memory() const { return mem_; }
    const std::vector<PPPairWeights<T>>& pp_pairs() const { return pp_; }
    const std::vector<ScorerWeights<T>>& scorers() const { return scorer_; }

    ForwardOutput<T> forward(const IdMatrix& ids, const ForwardOptions& opt = {}) {
        const auto& bb = cfg_.backbone;
        ForwardOutput<T> out;
        std::vector<Tensor<T>> pp_terms, sheaf_terms, adj_terms;
        std::vector<Tensor<T>> write_queries(mem_state_.size());

        auto h = embed_tokens(gpt_, ids);
        for (std::size_t i = 0; i < bb.n_layers; ++i) {
            const auto& blk = gpt_.blocks[i];
            const auto by = bypass_[i].effective();
            const auto x_in = h;

            auto qkv = attention_qkv(blk, bb, h);
            auto scores = attention_scores(qkv, bb);
            if (!by.bypass_causal_scorer && !scorer_.empty()) {
                if (opt.capture_scorer) {
                    out.scorer.push_back({scorer_raw_logits(qkv.q, qkv.k, scorer_[i]), matmul_nt(qkv.q, qkv.k)});
                }
                scores = add(scores, scorer_logits(qkv.q, qkv.k, scorer_[i]));
            }
            h = attention_residual(blk, h, scores, qkv.v);

            if (!by.bypass_geo && !gt_.empty()) {
                auto g = gt_full_forward(gt_[i], cfg_.gt, h);
                if (opt.priors.sheaf_weight != 0.0) sheaf_terms.push_back(sheaf_term(h, g.topology));
                if (opt.priors.adjunction_weight != 0.0 && adj_dec_) adj_terms.push_back(adjunction_term(gt_[i], h));
                if (opt.priors.curvature_weight != 0.0) {
                    for (const auto& sc : g.topology) {
                        const auto k = edge_curvatures(sc);
                        out.curvatures.insert(out.curvatures.end(), k.begin(), k.end());
                    }
                }
                h = g.h;
            }

            if (!by.bypass_memory && !mem_.empty()) {
                auto r = batched_read(mem_[i], cfg_.memory, h, mem_state_[i]);
                h = add(h, r.out);
                if (opt.memory_writes) write_queries[i] = detach(r.query);
            }

            h = ffn_residual(blk, h);

            if (i >= 1 && !pp_.empty() && (!by.bypass_topdown || !by.bypass_pp)) {
                auto f = pp_forward(pp_[i - 1], h, x_in);
                if (!by.bypass_pp) pp_terms.push_back(pp_loss(f.error, f.precision));
                if (!by.bypass_topdown) h = add(h, f.delta);
            }
        }
        out.logits = lm_logits(gpt_, h);

        if (!pp_terms.empty()) out.pp_loss = average(pp_terms);
        if (!sheaf_terms.empty()) out.sheaf_loss = average(sheaf_terms);
        if (!adj_terms.empty()) out.adjunction_loss = average(adj_terms);

        if (sm_ && opt.self_model_aux && !bypass_.back().effective().bypass_self_model) {
            auto hd = detach(h);
            auto actual = probe_response(*sm_, hd);
            auto pred = self_predict(*sm_, hd);
            out.self_model_loss = self_model_loss(pred.logits, actual);
            out.competence = competence(softmax(detach(pred.logits)), actual);
        }

        for (std::size_t i = 0; i < mem_state_.size(); ++i)
            if (write_queries[i].defined()) commit_writes(i, write_queries[i]);
        return out;
    }

    void reset_memory() {
        for (auto& s : mem_state_) reset(s);
    }

   private:
    static Tensor<T> average(const std::vector<Tensor<T>>& terms) {
        auto acc = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
        return terms.size() == 1 ? acc : scale(acc, T(1) / static_cast<T>(terms.size()));
    }

    Tensor<T> sheaf_term(const Tensor<T>& h, const std::vector<SimplicialComplex>& topo) {
        const std::size_t S = h.size(1);
        std::vector<std::pair<std::size_t, std::size_t>> edges;
        for (std::size_t b = 0; b < topo.size(); ++b)
            for (auto [i, j] : topo[b].undirected_edges()) edges.emplace_back(b * S + i, b * S + j);
        return sheaf_consistency_loss(reshape(h, {h.size(0) * S, h.size(2)}), edges);
    }

    Tensor<T> adjunction_term(const GtFullWeights<T>& g, const Tensor<T>& h) {
        const T bound = static_cast<T>(cfg_.gt.coord_clamp);
        const auto& dec = *adj_dec_;
        std::function<Tensor<T>(const Tensor<T>&)> enc_fn = [&](const Tensor<T>& x) { return project_coords(g.coord, x, bound); };
        std::function<Tensor<T>(const Tensor<T>&)> dec_fn = [&](const Tensor<T>& c) { return dec(c); };
        return adjunction_roundtrip_loss(enc_fn, dec_fn, h, detach(enc_fn(h)));
    }

    // One write per sequence from its time-mean read key, then one consolidation.
    void commit_writes(std::size_t layer, const Tensor<T>& query) {
        auto& st = mem_state_[layer];
        const auto gate = static_cast<T>(cfg_.memory_write_gate);
        const auto decay = static_cast<T>(cfg_.memory.usage_decay);
        for (std::size_t b = 0; b < query.size(0); ++b) {
            const auto summary = segment_summary(query, b);
            write_update(st, std::span<const T>(summary), gate, decay);
        }
        consolidate(st, cfg_.memory);
        if (!st.finite()) {
            reset(st);
            ++memory_resets_;
            warn(fmt::format("memory state of layer {} became non-finite and was reset", layer));
        }
    }

    ModelConfig cfg_;
    ParamSet<T> params_;
    GptWeights<T> gpt_;
    std::vector<ScorerWeights<T>> scorer_;
    std::vector<GtFullWeights<T>> gt_;
    std::vector<MemoryWeights<T>> mem_;
    std::vector<MemoryState<T>> mem_state_;
    std::vector<PPPairWeights<T>> pp_;
    std::optional<SelfModelWeights<T>> sm_;
    std::optional<Linear<T>> adj_dec_;
    std::vector<BlockBypass> bypass_;
    std::uint64_t memory_resets_ = 0;
};

}  // namespace cct
