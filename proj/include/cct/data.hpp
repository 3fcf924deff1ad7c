#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cct/backbone.hpp"
#include "cct/digest.hpp"

namespace cct {

// Strict UTF-8 check (no overlongs, no surrogates, max U+10FFFF).
inline bool valid_utf8(std::string_view s) {
    std::size_t i = 0;
    const auto* p = reinterpret_cast<const unsigned char*>(s.data());
    const std::size_t n = s.size();
    while (i < n) {
        const unsigned c = p[i];
        std::size_t len;
        std::uint32_t cp;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > n) return false;
        for (std::size_t k = 1; k < len; ++k) {
            if ((p[i + k] & 0xC0) != 0x80) return false;
            cp = (cp << 6) | (p[i + k] & 0x3F);
        }
        if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000)) return false;
        if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
        i += len;
    }
    return true;
}

// ---- tokenizers ----

struct TokenizerSpec {
    enum class Kind { byte, bpe } kind = Kind::byte;
    std::size_t vocab_size = 256;  // bpe: 256 + number of merges
};

// Byte-level BPE. Merges are learned on the training split only; ties go to the smallest pair.
class Tokenizer {
   public:
    static Tokenizer bytes() { return Tokenizer(); }

    static Tokenizer train_bpe(std::string_view text, std::size_t vocab_size) {
        if (vocab_size < 256) throw ConfigError("bpe vocab_size must be >= 256");
        Tokenizer tok;
        std::vector<std::int32_t> ids(text.begin(), text.end());
        for (auto& v : ids) v &= 0xFF;
        while (tok.vocab_size() < vocab_size) {
            std::map<std::pair<std::int32_t, std::int32_t>, std::size_t> counts;
            for (std::size_t i = 0; i + 1 < ids.size(); ++i) ++counts[{ids[i], ids[i + 1]}];
            std::pair<std::int32_t, std::int32_t> best{-1, -1};
            std::size_t best_n = 1;  // a pair must occur twice to be worth a token
            for (const auto& [pair, n] : counts)
                if (n > best_n) {
                    best = pair;
                    best_n = n;
                }
            if (best.first < 0) break;
            const auto id = static_cast<std::int32_t>(tok.vocab_size());
            tok.merges_.push_back(best);
            auto expansion = tok.pieces_[static_cast<std::size_t>(best.first)];
            expansion += tok.pieces_[static_cast<std::size_t>(best.second)];
            tok.pieces_.push_back(std::move(expansion));
            ids = apply_merge(ids, best, id);
        }
        return tok;
    }

    std::size_t vocab_size() const { return pieces_.size(); }
    const std::vector<std::pair<std::int32_t, std::int32_t>>& merges() const { return merges_; }

    std::vector<std::int32_t> encode(std::string_view s) const {
        std::vector<std::int32_t> ids(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) ids[i] = static_cast<unsigned char>(s[i]);
        for (std::size_t m = 0; m < merges_.size(); ++m) ids = apply_merge(ids, merges_[m], static_cast<std::int32_t>(256 + m));
        return ids;
    }

    std::string decode(std::span<const std::int32_t> ids) const {
        std::string out;
        for (auto id : ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size()) throw ContractError("decode: id out of range");
            out += pieces_[static_cast<std::size_t>(id)];
        }
        return out;
    }

   private:
    Tokenizer() {
        for (int b = 0; b < 256; ++b) pieces_.emplace_back(1, static_cast<char>(b));
    }

    static std::vector<std::int32_t> apply_merge(const std::vector<std::int32_t>& ids, std::pair<std::int32_t, std::int32_t> pair,
                                                 std::int32_t id) {
        std::vector<std::int32_t> out;
        out.reserve(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (i + 1 < ids.size() && ids[i] == pair.first && ids[i + 1] == pair.second) {
                out.push_back(id);
                ++i;
            } else {
                out.push_back(ids[i]);
            }
        }
        return out;
    }

    std::vector<std::pair<std::int32_t, std::int32_t>> merges_;
    std::vector<std::string> pieces_;
};

// ---- corpus ----

struct SplitSizes {
    std::size_t train, valid, test;
};

// 90/5/5 with integer floor on the first two; test takes the remainder.
inline SplitSizes split_90_5_5(std::size_t n) {
    const std::size_t train = n * 90 / 100;
    const std::size_t valid = n * 5 / 100;
    return {train, valid, n - train - valid};
}

struct Corpus {
    std::vector<std::int32_t> train, valid, test;
    std::size_t vocab_size = 256;
    std::string digest;             // sha256 hex of the source bytes
    SplitSizes byte_bounds{0, 0, 0};  // byte lengths of the three splits in the source
};

inline Corpus corpus_from_text(std::string_view text, const TokenizerSpec& tokenization = {}) {
    if (!valid_utf8(text)) throw ConfigError("corpus is not valid UTF-8");
    const auto sz = split_90_5_5(text.size());
    if (sz.train == 0 || sz.valid == 0 || sz.test == 0) throw ConfigError("corpus too small: empty split");
    const auto train_text = text.substr(0, sz.train);
    const auto valid_text = text.substr(sz.train, sz.valid);
    const auto test_text = text.substr(sz.train + sz.valid);
    const Tokenizer tok = tokenization.kind == TokenizerSpec::Kind::bpe ? Tokenizer::train_bpe(train_text, tokenization.vocab_size)
                                                                : Tokenizer::bytes();
    Corpus c;
    c.train = tok.encode(train_text);
    c.valid = tok.encode(valid_text);
    c.test = tok.encode(test_text);
    c.vocab_size = tok.vocab_size();
    const auto d = sha256(text);
    c.digest = to_hex(d);
    c.byte_bounds = sz;
    return c;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read corpus file " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline Corpus load_corpus(const std::filesystem::path& path, const TokenizerSpec& tokenization = {}) {
    return corpus_from_text(read_text_file(path), tokenization);
}

// ---- batching ----

struct Batch {
    IdMatrix inputs, targets;
};

// BPTT windows of length T+1 starting at multiples of T; S = floor((n - 1) / T) windows, B per batch,
// partial final batch dropped. With shuffling, the window order is permuted per epoch from a seed
// derived from (shuffle_seed, corpus digest, epoch).
class BatchStream {
   public:
    struct State {
        std::uint64_t epoch = 0;
        std::size_t cursor = 0;  // batches already emitted in this epoch
        friend bool operator==(const State&, const State&) = default;
    };

    BatchStream(std::span<const std::int32_t> tokens, std::size_t batch_size, std::size_t bptt_len, std::uint64_t shuffle_seed,
                bool shuffle, std::string_view corpus_digest = {})
        : tokens_(tokens), B_(batch_size), T_(bptt_len), seed_(derive_seed(shuffle_seed, corpus_digest)), shuffle_(shuffle) {
        if (B_ == 0 || T_ == 0) throw ConfigError("batch_size and bptt_len must be positive");
        windows_ = tokens_.size() > 0 ? (tokens_.size() - 1) / T_ : 0;
        start_epoch(0);
    }

    std::size_t batch_size() const { return B_; }
    std::size_t bptt_len() const { return T_; }
    std::size_t windows() const { return windows_; }
    std::size_t batches_per_epoch() const { return windows_ / B_; }
    const State& state() const { return state_; }

    void restore(const State& s) {
        start_epoch(s.epoch);
        state_.cursor = s.cursor;
    }

    // Next batch of the current epoch, or nullopt at epoch end.
    std::optional<Batch> next_batch() {
        if (state_.cursor >= batches_per_epoch()) return std::nullopt;
        Batch b;
        b.inputs = {B_, T_, std::vector<std::int32_t>(B_ * T_)};
        b.targets = {B_, T_, std::vector<std::int32_t>(B_ * T_)};
        for (std::size_t r = 0; r < B_; ++r) {
            const std::size_t start = order_[state_.cursor * B_ + r] * T_;
            for (std::size_t t = 0; t < T_; ++t) {
                b.inputs.ids[r * T_ + t] = tokens_[start + t];
                b.targets.ids[r * T_ + t] = tokens_[start + t + 1];
            }
        }
        ++state_.cursor;
        return b;
    }

    // Like next_batch but rolls into the next epoch; throws if the split cannot fill one batch.
    Batch next_cycling() {
        if (batches_per_epoch() == 0) throw ConfigError("split too small for one batch");
        if (auto b = next_batch()) return *b;
        start_epoch(state_.epoch + 1);
        return *next_batch();
    }

    void start_epoch(std::uint64_t e) {
        state_ = {e, 0};
        order_.resize(windows_);
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        if (shuffle_) {
            RngStream rng(derive_seed(seed_, "epoch/" + std::to_string(e)));
            for (std::size_t i = windows_; i > 1; --i) std::swap(order_[i - 1], order_[rng.below(i)]);
        }
    }

   private:
    std::span<const std::int32_t> tokens_;
    std::size_t B_, T_;
    std::uint64_t seed_;
    bool shuffle_;
    std::size_t windows_ = 0;
    std::vector<std::size_t> order_;
    State state_;
};

// ---- perplexity ----

// Running sum of token NLL in fp64.
struct NllAccumulator {
    double total = 0.0;
    std::size_t tokens = 0;

    template <class T>
    void add(const Tensor<T>& logits, std::span<const std::int32_t> targets) {
        const std::size_t V = logits.shape().back();
        const std::size_t rows = logits.numel() / V;
        if (rows != targets.size()) throw ContractError("perplexity: targets do not match logits");
        const auto x = logits.data();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* row = x.data() + r * V;
            double m = static_cast<double>(row[0]);
            for (std::size_t j = 1; j < V; ++j) m = std::max(m, static_cast<double>(row[j]));
            double s = 0.0;
            for (std::size_t j = 0; j < V; ++j) s += std::exp(static_cast<double>(row[j]) - m);
            const auto t = targets[r];
            if (t < 0 || static_cast<std::size_t>(t) >= V) throw ContractError("perplexity: target out of range");
            const double nll = m + std::log(s) - static_cast<double>(row[t]);
            if (!std::isfinite(nll)) throw NumericError("perplexity: non-finite NLL");
            total += nll;
        }
        tokens += rows;
    }

    double ppl() const {
        if (tokens == 0) throw ContractError("perplexity of zero tokens");
        const double p = std::exp(total / static_cast<double>(tokens));
        if (!std::isfinite(p)) throw NumericError("perplexity: overflow");
        return p;
    }
};

template <class T>
double perplexity(const Tensor<T>& logits, const IdMatrix& targets) {
    NllAccumulator acc;
    acc.add(logits, std::span<const std::int32_t>(targets.ids));
    return acc.ppl();
}

}  // namespace cct
