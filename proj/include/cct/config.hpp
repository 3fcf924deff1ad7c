#pragma once

#include <charconv>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "cct/data.hpp"
#include "cct/log.hpp"

// Flat `key = value` run configuration with a typed schema.
namespace cct {

struct RunConfig {
    // run
    std::string run_id;
    std::string output_dir;
    std::int64_t seed = 42;
    std::string schedule = "rc2_full";
    double scale = 0.01;
    std::string ablate_component;  // retrain ablation: held bypassed in every phase

    // data
    std::string corpus;  // empty -> built-in synthetic corpus
    std::int64_t corpus_bytes = 1000000;
    std::string tokenizer = "byte";
    std::int64_t bpe_vocab = 512;

    // model
    std::int64_t n_layers = 2, n_heads = 4, d_model = 64, d_ff = 256, ctx = 64;
    std::int64_t gt_k = 4, triangle_cap = 64, d_coord = 0;
    std::int64_t memory_buffer = 16, memory_working = 8, memory_episodic = 32;
    double memory_write_gate = 1.0;
    std::int64_t probes = 4, narrative_dim = 16;
    double probe_temperature = 1.0;

    // optimisation
    std::int64_t batch_size = 4, bptt = 64;
    double lr_cct = 1e-3, lr_backbone = 5e-5, lr_embed = 2e-5, eta_min = 1e-4;
    double weight_decay = 0.01, grad_clip = 0.5;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    std::int64_t eval_every = 100, eval_batches = 0;  // 0 -> full validation split
    std::int64_t checkpoint_every = 0;                // 0 -> only best/latest

    // losses
    double lm_weight = 1.0, pp_weight = 0.1, self_model_weight = 0.1;
    double sheaf_weight = 0.0, adjunction_weight = 0.0, curvature_weight = 0.0;

    // bypass flags
    bool cct_master_bypass = false;
    bool bypass_self_model = false;

    // warm start standing in for pretrained weights
    std::int64_t pretrain_steps = 500, pretrain_warmup = 50;
    double pretrain_lr = 2e-3;

    std::int64_t smoke_steps = 100;

    // keys that matched no field, as given; and the subset of *_weight keys with a nonzero value
    std::map<std::string, std::string> unknown_keys;
    std::map<std::string, double> extras;
};

namespace detail {

template <class P>
struct member_type;
template <class M>
struct member_type<M RunConfig::*> {
    using type = M;
};

using FieldPtr = std::variant<std::string RunConfig::*, std::int64_t RunConfig::*, double RunConfig::*, bool RunConfig::*>;

inline const std::vector<std::pair<const char*, FieldPtr>>& config_fields() {
    static const std::vector<std::pair<const char*, FieldPtr>> f{
        {"run_id", &RunConfig::run_id},
        {"output_dir", &RunConfig::output_dir},
        {"seed", &RunConfig::seed},
        {"schedule", &RunConfig::schedule},
        {"scale", &RunConfig::scale},
        {"ablate_component", &RunConfig::ablate_component},
        {"corpus", &RunConfig::corpus},
        {"corpus_bytes", &RunConfig::corpus_bytes},
        {"tokenizer", &RunConfig::tokenizer},
        {"bpe_vocab", &RunConfig::bpe_vocab},
        {"n_layers", &RunConfig::n_layers},
        {"n_heads", &RunConfig::n_heads},
        {"d_model", &RunConfig::d_model},
        {"d_ff", &RunConfig::d_ff},
        {"ctx", &RunConfig::ctx},
        {"gt_k", &RunConfig::gt_k},
        {"triangle_cap", &RunConfig::triangle_cap},
        {"d_coord", &RunConfig::d_coord},
        {"memory_buffer", &RunConfig::memory_buffer},
        {"memory_working", &RunConfig::memory_working},
        {"memory_episodic", &RunConfig::memory_episodic},
        {"memory_write_gate", &RunConfig::memory_write_gate},
        {"probes", &RunConfig::probes},
        {"narrative_dim", &RunConfig::narrative_dim},
        {"probe_temperature", &RunConfig::probe_temperature},
        {"batch_size", &RunConfig::batch_size},
        {"bptt", &RunConfig::bptt},
        {"lr_cct", &RunConfig::lr_cct},
        {"lr_backbone", &RunConfig::lr_backbone},
        {"lr_embed", &RunConfig::lr_embed},
        {"eta_min", &RunConfig::eta_min},
        {"weight_decay", &RunConfig::weight_decay},
        {"grad_clip", &RunConfig::grad_clip},
        {"adam_beta1", &RunConfig::adam_beta1},
        {"adam_beta2", &RunConfig::adam_beta2},
        {"adam_eps", &RunConfig::adam_eps},
        {"eval_every", &RunConfig::eval_every},
        {"eval_batches", &RunConfig::eval_batches},
        {"checkpoint_every", &RunConfig::checkpoint_every},
        {"lm_weight", &RunConfig::lm_weight},
        {"pp_weight", &RunConfig::pp_weight},
        {"self_model_weight", &RunConfig::self_model_weight},
        {"sheaf_weight", &RunConfig::sheaf_weight},
        {"adjunction_weight", &RunConfig::adjunction_weight},
        {"curvature_weight", &RunConfig::curvature_weight},
        {"cct_master_bypass", &RunConfig::cct_master_bypass},
        {"bypass_self_model", &RunConfig::bypass_self_model},
        {"pretrain_steps", &RunConfig::pretrain_steps},
        {"pretrain_warmup", &RunConfig::pretrain_warmup},
        {"pretrain_lr", &RunConfig::pretrain_lr},
        {"smoke_steps", &RunConfig::smoke_steps},
    };
    return f;
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
    std::int64_t out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError(fmt::format("{}: expected an integer, got '{}'", key, v));
    return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(fmt::format("{}: expected a number, got '{}'", key, v));
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(fmt::format("{}: expected a boolean, got '{}'", key, v));
}

inline bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace detail

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// "key = value" lines; '#' starts a comment.
inline KeyValues parse_key_values(std::string_view text) {
    KeyValues out;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const auto t = detail::trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError(fmt::format("config line {}: expected key = value", lineno));
        auto key = detail::trim(std::string_view(t).substr(0, eq));
        if (key.empty()) throw ConfigError(fmt::format("config line {}: empty key", lineno));
        out.emplace_back(std::move(key), detail::trim(std::string_view(t).substr(eq + 1)));
    }
    return out;
}

// "k=v" override strings.
inline std::pair<std::string, std::string> parse_override(std::string_view s) {
    const auto eq = s.find('=');
    if (eq == std::string_view::npos || eq == 0) throw ConfigError(fmt::format("override '{}' is not key=value", s));
    return {detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1))};
}

// Applies key/values in order on top of `base`. Unknown keys get one combined warning and are recorded.
inline RunConfig resolve_config(const KeyValues& kvs, RunConfig base = {}) {
    std::vector<std::string> unknown;
    for (const auto& [key, value] : kvs) {
        bool matched = false;
        for (const auto& [name, field] : detail::config_fields()) {
            if (key != name) continue;
            matched = true;
            std::visit(
                [&](auto ptr) {
                    using M = typename detail::member_type<decltype(ptr)>::type;
                    if constexpr (std::is_same_v<M, std::string>) {
                        base.*ptr = value;
                    } else if constexpr (std::is_same_v<M, std::int64_t>) {
                        base.*ptr = detail::parse_int(key, value);
                    } else if constexpr (std::is_same_v<M, double>) {
                        base.*ptr = detail::parse_double(key, value);
                    } else {
                        base.*ptr = detail::parse_bool(key, value);
                    }
                },
                field);
            break;
        }
        if (matched) continue;
        if (!base.unknown_keys.count(key)) unknown.push_back(key);
        base.unknown_keys[key] = value;
        if (detail::ends_with(key, "_weight")) {
            double v = 0.0;
            try {
                v = std::stod(value);
            } catch (const std::exception&) {
            }
            if (v != 0.0) {
                base.extras[key] = v;
            } else {
                base.extras.erase(key);
            }
        }
    }
    if (!unknown.empty()) {
        warn(fmt::format("ignoring unknown config keys: {}", fmt::join(unknown, ", ")));
    }
    return base;
}

inline RunConfig load_config(const std::filesystem::path& path, const KeyValues& overrides = {}) {
    auto kvs = parse_key_values(read_text_file(path));
    kvs.insert(kvs.end(), overrides.begin(), overrides.end());
    return resolve_config(kvs);
}

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    for (const auto& [name, field] : detail::config_fields()) {
        std::visit([&](auto ptr) { j[name] = c.*ptr; }, field);
    }
    j["unknown_keys"] = c.unknown_keys;
    j["extras"] = c.extras;
    return j;
}

// key = value rendering that parses back to the same config (minus unknown-key records).
inline std::string to_text(const RunConfig& c) {
    std::string out;
    for (const auto& [name, field] : detail::config_fields()) {
        std::visit(
            [&](auto ptr) {
                using M = typename detail::member_type<decltype(ptr)>::type;
                if constexpr (std::is_same_v<M, bool>) {
                    out += fmt::format("{} = {}\n", name, (c.*ptr) ? "true" : "false");
                } else {
                    out += fmt::format("{} = {}\n", name, c.*ptr);
                }
            },
            field);
    }
    return out;
}

// Digest of every field that influences training numbers (run_id and output_dir excluded).
inline std::string config_digest(const RunConfig& c) {
    auto j = to_json(c);
    j.erase("run_id");
    j.erase("output_dir");
    return to_hex(sha256(j.dump()));
}

inline void validate(const RunConfig& c) {
    if (c.scale <= 0.0 || c.scale > 1.0) throw ConfigError("scale must be in (0, 1]");
    if (c.batch_size <= 0 || c.bptt <= 0) throw ConfigError("batch_size and bptt must be positive");
    if (c.bptt > c.ctx) throw ConfigError("bptt must not exceed ctx");
    if (c.eval_every <= 0) throw ConfigError("eval_every must be positive");
    if (c.tokenizer != "byte" && c.tokenizer != "bpe") throw ConfigError("tokenizer must be byte or bpe");
    if (c.lr_cct <= 0.0 || c.lr_backbone < 0.0 || c.lr_embed < 0.0 || c.eta_min < 0.0) throw ConfigError("learning rates must be non-negative");
    if (c.pretrain_steps < 0 || c.smoke_steps <= 0) throw ConfigError("pretrain_steps must be >= 0 and smoke_steps > 0");
}

}  // namespace cct
