#include <gtest/gtest.h>

#include <cmath>

#include "cct/backbone.hpp"

using namespace cct;

namespace {

BackboneConfig tiny() {
    BackboneConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 16;
    c.d_ff = 32;
    c.vocab_size = 32;
    c.max_seq_len = 8;
    return c;
}

}  // namespace

TEST(Backbone, OutputShapeAndTiedHead) {
    ParamSet<double> ps(1);
    const auto w = GptWeights<double>::make(ps, tiny());
    EXPECT_TRUE(w.lm_head().same_storage(w.wte));
    const auto logits = gpt_forward(w, IdMatrix{1, 1, {5}});
    EXPECT_EQ(logits.shape(), (Shape{1, 1, 32}));
    EXPECT_THROW(gpt_forward(w, IdMatrix{1, 9, std::vector<std::int32_t>(9, 0)}), ContractError);
}

TEST(Backbone, ChangingTokenOnlyAffectsLaterPositions) {
    ParamSet<double> ps(2);
    const auto w = GptWeights<double>::make(ps, tiny());
    IdMatrix ids{1, 8, {1, 2, 3, 4, 5, 6, 7, 8}};
    const auto base = gpt_forward(w, ids);
    for (std::size_t t = 0; t < 8; ++t) {
        auto mod = ids;
        mod.ids[t] = 30;
        const auto out = gpt_forward(w, mod);
        for (std::size_t p = 0; p < 8; ++p) {
            bool same = true;
            for (std::size_t v = 0; v < 32; ++v) same = same && out[p * 32 + v] == base[p * 32 + v];
            if (p < t) EXPECT_TRUE(same) << "position " << p << " changed after editing " << t;
            else EXPECT_FALSE(same) << "position " << p << " ignored edit at " << t;
        }
    }
}

TEST(Backbone, CausalSoftmaxMasksFuture) {
    const auto p = causal_softmax(Tensor<double>::zeros({1, 1, 3, 3}));
    const double expect[9] = {1, 0, 0, 0.5, 0.5, 0, 1.0 / 3, 1.0 / 3, 1.0 / 3};
    for (int i = 0; i < 9; ++i) EXPECT_NEAR(p[i], expect[i], 1e-15);
}

TEST(Scorer, ZeroLambdaGivesZeroLogits) {
    ParamSet<double> ps(3);
    const auto s = ScorerWeights<double>::make(ps, "s.", tiny());
    std::vector<double> qv(2 * 4 * 8);
    for (std::size_t i = 0; i < qv.size(); ++i) qv[i] = std::sin(0.3 * static_cast<double>(i));
    const auto q = Tensor<double>::from_data({1, 2, 4, 8}, qv);
    {
        const auto got = scorer_logits(q, q, s);
        for (double v : got.data()) EXPECT_EQ(v, 0.0);
    }
}

TEST(Scorer, IdentityWithUnitLambdaEqualsDotProduct) {
    ParamSet<double> ps(4);
    auto s = ScorerWeights<double>::make(ps, "s.", tiny());
    auto w = s.w.mutable_data();
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t i = 0; i < 8; ++i) w[(h * 8 + i) * 8 + i] = 1.0;
    s.lambda.mutable_data()[0] = 1.0;
    std::vector<double> qv(64), kv(64);
    for (std::size_t i = 0; i < 64; ++i) {
        qv[i] = std::cos(0.7 * static_cast<double>(i));
        kv[i] = std::sin(0.2 * static_cast<double>(i));
    }
    const auto q = Tensor<double>::from_data({1, 2, 4, 8}, qv), k = Tensor<double>::from_data({1, 2, 4, 8}, kv);
    const auto a = scorer_logits(q, k, s), b = matmul_nt(q, k);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Pearson, PerfectAndIndependent) {
    const std::vector<double> a{1, 2, 3, 4, 5}, b{2, 4, 6, 8, 10}, c{5, 4, 3, 2, 1};
    EXPECT_NEAR(pearson(a, b), 1.0, 1e-15);
    EXPECT_NEAR(pearson(a, c), -1.0, 1e-15);
    RngStream r(11);
    std::vector<double> x(10000), y(10000);
    for (auto& v : x) v = r.normal();
    for (auto& v : y) v = r.normal();
    EXPECT_LT(std::abs(pearson(x, y)), 0.05);
    EXPECT_EQ(pearson(a, std::vector<double>(5, 1.0)), 0.0);
}
