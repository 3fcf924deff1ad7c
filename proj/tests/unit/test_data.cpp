#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "cct/data.hpp"
#include "cct/synthetic.hpp"

using namespace cct;
namespace fs = std::filesystem;

TEST(Tokenizer, ByteLevelRoundTrip) {
    const auto tok = Tokenizer::bytes();
    EXPECT_EQ(tok.vocab_size(), 256u);
    const auto ids = tok.encode("abab");
    EXPECT_EQ(ids, (std::vector<std::int32_t>{97, 98, 97, 98}));
    EXPECT_EQ(tok.decode(ids), "abab");
}

TEST(Tokenizer, BpeMergesFrequentPairAndDecodesBack) {
    const std::string text = "abababab cdcd";
    const auto tok = Tokenizer::train_bpe(text, 257);
    ASSERT_EQ(tok.merges().size(), 1u);
    EXPECT_EQ(tok.merges()[0], (std::pair<std::int32_t, std::int32_t>{'a', 'b'}));
    const auto ids = tok.encode("abab");
    EXPECT_EQ(ids, (std::vector<std::int32_t>{256, 256}));
    EXPECT_EQ(tok.decode(tok.encode(text)), text);
    EXPECT_THROW(Tokenizer::train_bpe(text, 100), ConfigError);
}

TEST(Corpus, SplitIsNinetyFiveFive) {
    const auto s = split_90_5_5(1000);
    EXPECT_EQ(s.train, 900u);
    EXPECT_EQ(s.valid, 50u);
    EXPECT_EQ(s.test, 50u);
    const auto c = corpus_from_text(std::string(1000, 'x'));
    EXPECT_EQ(c.train.size(), 900u);
    EXPECT_EQ(c.valid.size(), 50u);
    EXPECT_EQ(c.test.size(), 50u);
    EXPECT_EQ(c.vocab_size, 256u);
}

TEST(Corpus, LoadingTwiceIsIdentical) {
    const auto dir = fs::temp_directory_path() / "cct_unit_data";
    fs::create_directories(dir);
    const auto path = dir / "corpus.txt";
    std::ofstream(path, std::ios::binary) << synthetic_corpus(4000, 7);
    const auto a = load_corpus(path);
    const auto b = load_corpus(path);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.valid, b.valid);
    EXPECT_EQ(a.test, b.test);
    EXPECT_EQ(a.digest, b.digest);
    fs::remove_all(dir);
}

TEST(Corpus, RejectsInvalidUtf8AndTinyInput) {
    EXPECT_THROW(corpus_from_text(std::string(1000, '\xff')), ConfigError);
    EXPECT_THROW(corpus_from_text("abc"), ConfigError);
    EXPECT_THROW(load_corpus("/nonexistent/corpus.txt"), ConfigError);
}

TEST(BatchStream, WindowsAreShiftedByOne) {
    std::vector<std::int32_t> toks(10);
    std::iota(toks.begin(), toks.end(), 1);
    BatchStream s(toks, 1, 4, 0, false);
    const auto b = s.next_batch();
    ASSERT_TRUE(b);
    EXPECT_EQ(b->inputs.ids, (std::vector<std::int32_t>{1, 2, 3, 4}));
    EXPECT_EQ(b->targets.ids, (std::vector<std::int32_t>{2, 3, 4, 5}));
}

TEST(BatchStream, PartialFinalBatchIsDropped) {
    std::vector<std::int32_t> toks(9);
    std::iota(toks.begin(), toks.end(), 0);
    BatchStream s(toks, 2, 4, 0, false);
    EXPECT_EQ(s.windows(), 2u);
    EXPECT_TRUE(s.next_batch());
    EXPECT_FALSE(s.next_batch());
}

TEST(BatchStream, SameSeedSameOrderAndRestore) {
    std::vector<std::int32_t> toks(401);
    std::iota(toks.begin(), toks.end(), 0);
    BatchStream a(toks, 2, 4, 99, true, "d"), b(toks, 2, 4, 99, true, "d"), c(toks, 2, 4, 100, true, "d");
    bool differs = false;
    for (int i = 0; i < 30; ++i) {
        const auto x = a.next_cycling(), y = b.next_cycling(), z = c.next_cycling();
        EXPECT_EQ(x.inputs.ids, y.inputs.ids);
        differs = differs || x.inputs.ids != z.inputs.ids;
    }
    EXPECT_TRUE(differs);
    BatchStream r(toks, 2, 4, 99, true, "d");
    r.restore(a.state());
    EXPECT_EQ(r.next_cycling().inputs.ids, a.next_cycling().inputs.ids);
}

TEST(Perplexity, UniformOneHotAndKnownValue) {
    const std::size_t V = 256;
    const IdMatrix tgt{1, 2, {3, 7}};
    EXPECT_NEAR(perplexity(Tensor<double>::zeros({1, 2, V}), tgt), 256.0, 1e-9);

    std::vector<double> hot(2 * V, -1e4);
    hot[3] = 0.0;
    hot[V + 7] = 0.0;
    EXPECT_NEAR(perplexity(Tensor<double>::from_data({1, 2, V}, hot), tgt), 1.0, 1e-12);

    // p(target) = 1/2 then 1/4: ppl = exp((ln 2 + ln 4) / 2) = 2^1.5
    const IdMatrix t2{1, 2, {0, 0}};
    std::vector<double> l{0.0, 0.0, std::log(1.0), std::log(3.0)};
    EXPECT_NEAR(perplexity(Tensor<double>::from_data({1, 2, 2}, l), t2), 2.8284271247, 1e-9);
}
