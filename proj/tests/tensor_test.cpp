#include <gtest/gtest.h>

#include <cstring>

#include "grad_suite.hpp"
#include "layoutgen/optim.hpp"
#include "layoutgen/tensor.hpp"
#include "testutil.hpp"

using namespace layoutgen;
using lgtest::random_values;

namespace {

TEST(Matmul, IdentityTimesMatrix) {
    Graph<double> g;
    std::vector<double> id = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    std::vector<double> m = {2, -1, 3, 0.5, 4, -2, 7, 1, 9};
    auto a = g.input({3, 3}, id.data(), false);
    auto b = g.input({3, 3}, m.data(), false);
    auto c = g.matmul(a, b);
    for (int i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(g.value(c)[i], m[size_t(i)]);
}

TEST(Matmul, HandComputedProduct) {
    Graph<double> g;
    std::vector<double> a = {1, 2, 3, 4};
    std::vector<double> b = {1, 1};
    auto c = g.matmul(g.input({2, 2}, a.data(), false), g.input({2, 1}, b.data(), false));
    EXPECT_DOUBLE_EQ(g.value(c)[0], 3.0);
    EXPECT_DOUBLE_EQ(g.value(c)[1], 7.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    Graph<double> g;
    std::vector<double> a(12), b(12);
    auto ra = g.input({3, 4}, a.data(), false);
    auto rb = g.input({3, 4}, b.data(), false);
    try {
        g.matmul(ra, rb);
        FAIL() << "expected shape mismatch";
    } catch (const std::exception& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[3,4]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
    }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
    // random 4x5 . 5x3 against the central-difference oracle
    Rng rng(7);
    auto a = random_values(20, rng);
    auto b = random_values(15, rng);
    auto loss = [](lgtest::G& g, const std::vector<lgtest::Ref>& in) {
        return g.sum(g.matmul(in[0], in[1]));
    };
    EXPECT_LE(lgtest::max_grad_discrepancy({{{4, 5}, &a}, {{5, 3}, &b}}, loss), 1e-6);
}

TEST(MaskedSoftmax, AllTrueEqualsOrdinarySoftmax) {
    Rng rng(11);
    const int s = 5;
    AttentionMask mask(s);
    for (int q = 0; q < s; ++q)
        for (int k = 0; k < s; ++k) mask.set(q, k, true);
    auto logits = random_values(s * s, rng);
    Graph<double> g;
    auto in = g.input({s, s}, logits.data(), false);
    auto with_mask = g.masked_softmax(in, &mask);
    auto without = g.masked_softmax(in, nullptr);
    for (int i = 0; i < s * s; ++i)
        EXPECT_DOUBLE_EQ(g.value(with_mask)[i], g.value(without)[i]);
}

TEST(MaskedSoftmax, SingleAllowedKeyIsOneHot) {
    AttentionMask mask(3);
    for (int q = 0; q < 3; ++q) mask.set(q, 0, true);
    mask.set(1, 1, true);  // diagonal invariant of real masks
    mask.set(2, 2, true);
    std::vector<double> logits = {5, -2, 0.1, -3, -3, 9, 0, 0, 0};
    Graph<double> g;
    auto out = g.masked_softmax(g.input({3, 3}, logits.data(), false), &mask);
    EXPECT_DOUBLE_EQ(g.value(out)[0], 1.0);
    EXPECT_DOUBLE_EQ(g.value(out)[1], 0.0);
    EXPECT_DOUBLE_EQ(g.value(out)[2], 0.0);
}

TEST(MaskedSoftmax, RowsSumToOneAndZeroAtMaskedKeys) {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const int s = 3 + int(rng.uniform_int(6));
        AttentionMask mask(s);
        for (int q = 0; q < s; ++q) {
            mask.set(q, q, true);
            for (int k = 0; k < s; ++k)
                if (rng.uniform() < 0.5) mask.set(q, k, true);
        }
        auto logits = random_values(s * s, rng, 3.0);
        Graph<double> g;
        auto out = g.masked_softmax(g.input({s, s}, logits.data(), false), &mask);
        for (int q = 0; q < s; ++q) {
            double total = 0;
            for (int k = 0; k < s; ++k) {
                const double p = g.value(out)[q * s + k];
                if (!mask.at(q, k)) EXPECT_EQ(p, 0.0);
                total += p;
            }
            EXPECT_NEAR(total, 1.0, 1e-12);
        }
    }
}

TEST(MaskedSoftmax, EmptyRowRejected) {
    AttentionMask mask(2);
    mask.set(0, 0, true);  // row 1 has no allowed keys
    std::vector<double> logits = {0, 0, 0, 0};
    Graph<double> g;
    auto in = g.input({2, 2}, logits.data(), false);
    EXPECT_THROW(g.masked_softmax(in, &mask), std::runtime_error);
}

TEST(CrossEntropy, ConfidentCorrectIsNearZero) {
    std::vector<double> logits = {30, 0, 0, 0, 30, 0};
    Graph<double> g;
    auto loss = g.cross_entropy(g.input({2, 3}, logits.data(), false), {0, 1}, {1, 1});
    EXPECT_NEAR(g.scalar(loss), 0.0, 1e-10);
}

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
    for (int v : {2, 5, 16, 64}) {
        std::vector<double> logits(static_cast<size_t>(v), 0.7);
        Graph<double> g;
        auto loss = g.cross_entropy(g.input({1, v}, logits.data(), false), {v / 2}, {1});
        EXPECT_NEAR(g.scalar(loss), std::log(double(v)), 1e-12) << "V=" << v;
    }
}

TEST(CrossEntropy, MatchesNaivePerPositionOracle) {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const int m = 2 + int(rng.uniform_int(6)), v = 2 + int(rng.uniform_int(10));
        auto logits = random_values(m * v, rng, 2.0);
        std::vector<int> targets(static_cast<size_t>(m));
        std::vector<uint8_t> select(static_cast<size_t>(m), 0);
        for (auto& t : targets) t = int(rng.uniform_int(v));
        select[0] = 1;
        for (auto& s : select)
            if (rng.uniform() < 0.5) s = 1;

        // independent scalar loop: -log(exp(x_t) / sum exp(x_j)) per row
        double expected = 0;
        int count = 0;
        for (int i = 0; i < m; ++i) {
            if (!select[size_t(i)]) continue;
            double denom = 0;
            for (int j = 0; j < v; ++j) denom += std::exp(logits[size_t(i * v + j)]);
            expected += -std::log(std::exp(logits[size_t(i * v + targets[size_t(i)])]) / denom);
            ++count;
        }
        expected /= count;

        Graph<double> g;
        auto loss = g.cross_entropy(g.input({m, v}, logits.data(), false), targets, select);
        EXPECT_NEAR(g.scalar(loss), expected, 1e-8);
    }
}

TEST(CrossEntropy, EmptySelectionRejected) {
    std::vector<double> logits = {0, 0, 0};
    Graph<double> g;
    auto in = g.input({1, 3}, logits.data(), false);
    EXPECT_THROW(g.cross_entropy(in, {0}, {0}), std::runtime_error);
}

TEST(Attention, FusedMatchesComposedOps) {
    Rng rng(23);
    const int s = 7, heads = 2, d = 8, hd = d / heads;
    AttentionMask mask(s);
    for (int q = 0; q < s; ++q) {
        mask.set(q, q, true);
        for (int k = 0; k < s; ++k)
            if (rng.uniform() < 0.6) mask.set(q, k, true);
    }
    auto qv = random_values(s * d, rng), kv = random_values(s * d, rng),
         vv = random_values(s * d, rng);
    Graph<double> g;
    auto q = g.input({s, d}, qv.data(), false);
    auto k = g.input({s, d}, kv.data(), false);
    auto v = g.input({s, d}, vv.data(), false);
    auto fused = g.attention(q, k, v, mask, heads);

    std::vector<Graph<double>::Ref> head_outs;
    for (int h = 0; h < heads; ++h) {
        auto qh = g.col_slice(q, h * hd, (h + 1) * hd);
        auto kh = g.col_slice(k, h * hd, (h + 1) * hd);
        auto vh = g.col_slice(v, h * hd, (h + 1) * hd);
        auto scores = g.scale(g.matmul_nt(qh, kh), 1.0 / std::sqrt(double(hd)));
        head_outs.push_back(g.matmul(g.masked_softmax(scores, &mask), vh));
    }
    auto composed = g.col_concat(head_outs);
    for (int i = 0; i < s * d; ++i)
        EXPECT_NEAR(g.value(fused)[i], g.value(composed)[i], 1e-12);
}

TEST(Forward, DeterministicBitwise) {
    Rng rng(29);
    auto a = random_values(64, rng), b = random_values(64, rng);
    auto run = [&]() {
        Graph<double> g;
        auto x = g.input({8, 8}, a.data(), false);
        auto y = g.input({8, 8}, b.data(), false);
        auto out = g.gelu(g.matmul(x, y));
        return std::vector<double>(g.value(out), g.value(out) + 64);
    };
    auto r1 = run(), r2 = run();
    EXPECT_EQ(0, std::memcmp(r1.data(), r2.data(), sizeof(double) * 64));
}

TEST(GradientSweep, AllOpsPassFiniteDifferenceCheck) {
    // Smoke pass; the acceptance suite runs >= 50 cases per op.
    for (const auto& r : lgtest::run_gradient_sweep(6, 1234)) {
        EXPECT_LE(r.worst, 1e-5) << r.op;
    }
}

TEST(AdamW, ZeroGradZeroDecayLeavesParamsUnchanged) {
    ParamStore<float> store;
    auto& p = store.add("w", {4, 4});
    Rng rng(31);
    for (auto& v : p.value) v = float(rng.normal());
    const std::vector<float> before = p.value;
    AdamWConfig cfg;
    cfg.lr = 0.5;
    cfg.weight_decay = 0.0;
    AdamW<float> opt(store, cfg);
    store.zero_grad();
    opt.step();
    EXPECT_EQ(0, std::memcmp(before.data(), p.value.data(), sizeof(float) * before.size()));
}

TEST(AdamW, StepCounterIncreases) {
    ParamStore<float> store;
    store.add("w", {2});
    AdamW<float> opt(store, {});
    EXPECT_EQ(opt.step_count(), 0);
    opt.step();
    opt.step();
    EXPECT_EQ(opt.step_count(), 2);
}

TEST(AdamW, DescendsSimpleQuadratic) {
    ParamStore<double> store;
    auto& p = store.add("x", {1});
    p.value[0] = 3.0;
    AdamWConfig cfg;
    cfg.lr = 0.05;
    AdamW<double> opt(store, cfg);
    for (int i = 0; i < 400; ++i) {
        p.grad[0] = 2.0 * p.value[0];  // d/dx x^2
        opt.step();
    }
    EXPECT_NEAR(p.value[0], 0.0, 1e-2);
}

}  // namespace
