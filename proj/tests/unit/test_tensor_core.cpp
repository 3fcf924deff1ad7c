#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "cct/grad_check.hpp"
#include "cct/nn.hpp"
#include "cct/ops.hpp"
#include "cct/rng.hpp"

using namespace cct;

namespace {

Tensor<double> random_tensor(RngStream& rng, Shape s, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel_of(s));
    for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
    return Tensor<double>::from_data(std::move(s), std::move(v), true);
}

// Weighted sum so every output element gets a distinct upstream gradient.
Tensor<double> probe_loss(const Tensor<double>& y, std::uint64_t seed) {
    RngStream rng(seed);
    std::vector<double> w(y.numel());
    for (auto& x : w) x = rng.uniform() * 2.0 - 1.0;
    return sum(mul(y, Tensor<double>::from_data(y.shape(), w)));
}

}  // namespace

TEST(Philox, KnownAnswerVectors) {
    EXPECT_EQ(Philox4x32::generate({0, 0, 0, 0}, {0, 0}),
              (Philox4x32::Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
    EXPECT_EQ(Philox4x32::generate({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}),
              (Philox4x32::Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
    EXPECT_EQ(Philox4x32::generate({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}),
              (Philox4x32::Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(RngStream, SameSeedAndCounterGiveSameOutput) {
    RngStream a(42, 7), b(42, 7);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.normal(), b.normal());
    EXPECT_EQ(a, b);
    RngStream c(43, 7);
    EXPECT_NE(RngStream(42, 7).uniform(), c.uniform());
}

TEST(RngInit, ZerosConstantNormal) {
    RngStream s(1);
    auto z = rng_init<float>(s, {2, 2}, InitSpec::zeros());
    for (float v : z.data()) EXPECT_EQ(v, 0.0f);
    auto c = rng_init<float>(s, {4}, InitSpec::constant(-5.0));
    for (float v : c.data()) EXPECT_EQ(v, -5.0f);
    RngStream a(42), b(42);
    auto n1 = rng_init<float>(a, {3, 5}, InitSpec::normal(0.02));
    auto n2 = rng_init<float>(b, {3, 5}, InitSpec::normal(0.02));
    EXPECT_TRUE(std::equal(n1.data().begin(), n1.data().end(), n2.data().begin()));
}

TEST(Primitives, WorkedExamples) {
    auto c = clamp(Tensor<float>::from_data({3}, {-30.f, 0.f, 30.f}), -20.f, 20.f);
    EXPECT_EQ(c[0], -20.f);
    EXPECT_EQ(c[1], 0.f);
    EXPECT_EQ(c[2], 20.f);
    auto s = softmax(Tensor<float>::from_data({2}, {0.f, 0.f}));
    EXPECT_EQ(s[0], 0.5f);
    EXPECT_EQ(s[1], 0.5f);
    EXPECT_NEAR(sigmoid(Tensor<double>::scalar(-5.0)).item(), 0.006693, 5e-7);
}

TEST(Primitives, ShapeMismatchIsContractError) {
    auto a = Tensor<float>::zeros({2, 3});
    auto b = Tensor<float>::zeros({3, 2});
    EXPECT_THROW(add(a, b), ContractError);
    EXPECT_THROW(matmul(a, Tensor<float>::zeros({2, 2})), ContractError);
}

TEST(Primitives, NonFiniteOutputIsNumericError) {
    numeric_step_context() = 17;
    try {
        (void)log(Tensor<double>::from_data({1}, {-1.0}));
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("'log'"), std::string::npos);
        EXPECT_NE(msg.find("17"), std::string::npos);
    }
    numeric_step_context() = -1;
}

TEST(Backward, SumOfSquares) {
    auto x = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
    Tape<double> tape;
    tape.backward(sum(mul(x, x)));
    ASSERT_TRUE(x.has_grad());
    EXPECT_EQ(x.grad()[0], 2.0);
    EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Backward, DetachBlocksGradient) {
    auto x = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
    auto w = Tensor<double>::from_data({2}, {3.0, 4.0}, true);
    Tape<double> tape;
    auto d = detach(mul(x, x));
    tape.backward(sum(mul(d, w)));
    EXPECT_FALSE(x.has_grad());
    EXPECT_TRUE(w.has_grad());
}

TEST(Backward, ConsumedTapeIsContractError) {
    auto x = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
    Tape<double> tape;
    auto loss = sum(mul(x, x));
    tape.backward(loss);
    EXPECT_THROW(tape.backward(loss), ContractError);
}

TEST(Backward, RetainAllowsSecondPass) {
    auto x = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
    Tape<double> tape;
    auto loss = sum(mul(x, x));
    tape.backward(loss, Retain::yes);
    x.clear_grad();
    tape.backward(loss);
    EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Backward, NonScalarLossRejected) {
    auto x = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
    Tape<double> tape;
    EXPECT_THROW(tape.backward(mul(x, x)), ContractError);
}

TEST(Backward, ClampGradient) {
    auto x = Tensor<double>::from_data({3}, {-30.0, 0.5, 30.0}, true);
    Tape<double> tape;
    tape.backward(sum(clamp(x, -20.0, 20.0)));
    EXPECT_EQ(x.grad()[0], 0.0);
    EXPECT_EQ(x.grad()[1], 1.0);
    EXPECT_EQ(x.grad()[2], 0.0);
}

TEST(GradCheck, IdentityIsExact) {
    for (double v : {0.3, -1.2, 2.0, 1e-3, 417.25}) {
        auto x = Tensor<double>::from_data({1}, {v}, true);
        EXPECT_LT(grad_check([&] { return reshape(x, {}); }, {x}), 1e-12) << v;
    }
}

TEST(GradCheck, ThreeLayerMlp) {
    RngStream rng(5);
    auto x = random_tensor(rng, {4, 5});
    auto w1 = random_tensor(rng, {5, 6}), b1 = random_tensor(rng, {6});
    auto w2 = random_tensor(rng, {6, 6}), b2 = random_tensor(rng, {6});
    auto w3 = random_tensor(rng, {6, 1}), b3 = random_tensor(rng, {1});
    auto f = [&] {
        auto h = tanh(affine(x, w1, b1));
        h = gelu(affine(h, w2, b2));
        return mean(square(affine(h, w3, b3)));
    };
    EXPECT_LT(grad_check(f, {x, w1, b1, w2, b2, w3, b3}), 1e-5);
}

// Every differentiable primitive at 100 random points.
struct PrimitiveCase {
    const char* name;
    std::function<std::vector<Tensor<double>>(RngStream&)> inputs;
    std::function<Tensor<double>(const std::vector<Tensor<double>>&)> apply;
};

void PrintTo(const PrimitiveCase& c, std::ostream* os) { *os << c.name; }

class PrimitiveGrad : public ::testing::TestWithParam<PrimitiveCase> {};

TEST_P(PrimitiveGrad, HundredRandomPoints) {
    const auto& c = GetParam();
    double worst = 0.0;
    for (std::uint64_t point = 0; point < 100; ++point) {
        RngStream rng(derive_seed(point, c.name));
        const auto in = c.inputs(rng);
        worst = std::max(worst, grad_check([&] { return probe_loss(c.apply(in), point); }, in));
    }
    EXPECT_LT(worst, 1e-5);
}

namespace {

using Ins = std::vector<Tensor<double>>;

auto one(Shape s, double lo = -1.0, double hi = 1.0) {
    return [=](RngStream& r) { return Ins{random_tensor(r, s, lo, hi)}; };
}
auto two(Shape a, Shape b) {
    return [=](RngStream& r) { return Ins{random_tensor(r, a), random_tensor(r, b)}; };
}

// Values bounded away from relu/clamp kinks by more than 10 eps.
Ins away_from_kinks(RngStream& r, Shape s, std::vector<double> kinks) {
    std::vector<double> v(numel_of(s));
    for (auto& x : v) {
        do {
            x = -3.0 + 6.0 * r.uniform();
        } while (std::any_of(kinks.begin(), kinks.end(), [&](double k) { return std::abs(x - k) < 1e-3; }));
    }
    return {Tensor<double>::from_data(s, v, true)};
}

}  // namespace

INSTANTIATE_TEST_SUITE_P(
    All, PrimitiveGrad,
    ::testing::Values(
        PrimitiveCase{"add", two({3, 4}, {4}), [](const Ins& i) { return add(i[0], i[1]); }},
        PrimitiveCase{"sub_column", two({3, 4}, {3, 1}), [](const Ins& i) { return sub(i[0], i[1]); }},
        PrimitiveCase{"mul_scalar", two({3, 4}, {1}), [](const Ins& i) { return mul(i[0], i[1]); }},
        PrimitiveCase{"mul", two({3, 4}, {3, 4}), [](const Ins& i) { return mul(i[0], i[1]); }},
        PrimitiveCase{"div", [](RngStream& r) { return Ins{random_tensor(r, {3, 4}), random_tensor(r, {4}, 0.5, 2.0)}; },
                      [](const Ins& i) { return div(i[0], i[1]); }},
        PrimitiveCase{"matmul", two({2, 3, 4}, {4, 5}), [](const Ins& i) { return matmul(i[0], i[1]); }},
        PrimitiveCase{"matmul_batched", two({2, 3, 4}, {2, 4, 5}), [](const Ins& i) { return matmul(i[0], i[1]); }},
        PrimitiveCase{"matmul_nt", two({2, 3, 4}, {2, 5, 4}), [](const Ins& i) { return matmul_nt(i[0], i[1]); }},
        PrimitiveCase{"matmul_per_head", two({2, 3, 4, 5}, {3, 5, 2}),
                      [](const Ins& i) { return matmul_per_head(i[0], i[1]); }},
        PrimitiveCase{"clamp", [](RngStream& r) { return away_from_kinks(r, {10}, {-1.0, 1.0}); },
                      [](const Ins& i) { return clamp(i[0], -1.0, 1.0); }},
        PrimitiveCase{"relu", [](RngStream& r) { return away_from_kinks(r, {10}, {0.0}); },
                      [](const Ins& i) { return relu(i[0]); }},
        PrimitiveCase{"gelu", one({10}, -3, 3), [](const Ins& i) { return gelu(i[0]); }},
        PrimitiveCase{"sigmoid", one({10}, -6, 6), [](const Ins& i) { return sigmoid(i[0]); }},
        PrimitiveCase{"softplus", one({10}, -6, 6), [](const Ins& i) { return softplus(i[0]); }},
        PrimitiveCase{"tanh", one({10}, -3, 3), [](const Ins& i) { return tanh(i[0]); }},
        PrimitiveCase{"log", one({10}, 0.1, 3), [](const Ins& i) { return log(i[0]); }},
        PrimitiveCase{"exp", one({10}, -2, 2), [](const Ins& i) { return exp(i[0]); }},
        PrimitiveCase{"sqrt", one({10}, 0.1, 3), [](const Ins& i) { return sqrt(i[0]); }},
        PrimitiveCase{"softmax", one({3, 5}, -3, 3), [](const Ins& i) { return softmax(i[0]); }},
        PrimitiveCase{"causal_softmax", one({2, 4, 4}, -3, 3), [](const Ins& i) { return causal_softmax(i[0]); }},
        PrimitiveCase{"layernorm",
                      [](RngStream& r) { return Ins{random_tensor(r, {3, 6}, -2, 2), random_tensor(r, {6}), random_tensor(r, {6})}; },
                      [](const Ins& i) { return layernorm(i[0], i[1], i[2]); }},
        PrimitiveCase{"sum_last", one({3, 4}), [](const Ins& i) { return sum_last(i[0]); }},
        PrimitiveCase{"mean", one({3, 4}), [](const Ins& i) { return mean(i[0]); }},
        PrimitiveCase{"concat_last", two({3, 2}, {3, 4}), [](const Ins& i) { return concat_last<double>({i[0], i[1]}); }},
        PrimitiveCase{"concat_rows", two({2, 3}, {4, 3}), [](const Ins& i) { return concat_rows<double>({i[0], i[1]}); }},
        PrimitiveCase{"slice_last", one({3, 6}), [](const Ins& i) { return slice_last(i[0], 1, 4); }},
        PrimitiveCase{"reshape", one({3, 4}), [](const Ins& i) { return reshape(i[0], {4, 3}); }},
        PrimitiveCase{"split_merge_heads", one({2, 3, 8}),
                      [](const Ins& i) { return merge_heads(split_heads(i[0], 2, 3, 1)); }},
        PrimitiveCase{"time_slice_stack", one({2, 3, 4}),
                      [](const Ins& i) { return stack_time<double>({time_slice(i[0], 2), time_slice(i[0], 0)}); }},
        PrimitiveCase{"embedding", one({5, 3}),
                      [](const Ins& i) {
                          const std::vector<std::int32_t> ids{4, 0, 4, 2};
                          return embedding(i[0], std::span<const std::int32_t>(ids), {2, 2});
                      }},
        PrimitiveCase{"gather_scatter", one({5, 3}),
                      [](const Ins& i) {
                          const std::vector<std::size_t> g{0, 3, 3, 1}, s{2, 2, 0, 4};
                          return scatter_mean(gather_rows(i[0], std::span<const std::size_t>(g)),
                                              std::span<const std::size_t>(s), 5);
                      }},
        PrimitiveCase{"cross_entropy", one({3, 5}, -3, 3),
                      [](const Ins& i) {
                          const std::vector<std::int32_t> t{1, 4, 0};
                          return cross_entropy(i[0], std::span<const std::int32_t>(t));
                      }},
        PrimitiveCase{"soft_cross_entropy", one({3, 4}, -3, 3), [](const Ins& i) {
                          auto p = softmax(Tensor<double>::from_data({3, 4}, {1, 2, 3, 4, 0, 0, 1, 0, 2, 2, 2, 2}));
                          return soft_cross_entropy(i[0], p);
                      }}));
