#include <gtest/gtest.h>

#include <random>

#include "aasdet/eval.hpp"
#include "oracles.hpp"

using namespace aas;

TEST(Auc, Examples) {
    EXPECT_EQ(roc_auc({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0}).auc, 1.0);
    EXPECT_EQ(roc_auc({0.9, 0.4, 0.1, 0.6}, {1, 1, 0, 0}).auc, 0.75);
    EXPECT_EQ(roc_auc({0.3, 0.3, 0.3, 0.3, 0.3}, {1, 0, 1, 0, 0}).auc, 0.5);
}

TEST(Auc, Errors) {
    EXPECT_THROW(roc_auc({0.1, 0.2}, {1, 1}), EvalError);
    EXPECT_THROW(roc_auc({0.1, 0.2}, {0, 0}), EvalError);
    EXPECT_THROW(roc_auc({0.1}, {1, 0}), EvalError);
    EXPECT_THROW(roc_auc({0.1, 0.2}, {1, 2}), EvalError);
    EXPECT_THROW(roc_auc({NAN, 0.2}, {1, 0}), EvalError);
}

TEST(Auc, MatchesPairwiseOracleWithTies) {
    std::mt19937_64 rng(17);
    for (int t = 0; t < 300; ++t) {
        const std::size_t n = 2 + rng() % 60;
        std::vector<double> s(n);
        std::vector<int> y(n);
        const int levels = 1 + static_cast<int>(rng() % 6);  // few levels -> many ties
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng() % levels) / levels;
            y[i] = static_cast<int>(rng() % 2);
        }
        y[0] = 1;
        y[1] = 0;
        const auto r = roc_auc(s, y);
        EXPECT_NEAR(r.auc, oracle::pairwise_auc(s, y), 1e-12);
        std::vector<int> flipped(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) flipped[i] = 1 - y[i];
        EXPECT_NEAR(r.auc + roc_auc(s, flipped).auc, 1.0, 1e-12);
    }
}

TEST(Auc, CurveShapeAndTrapezoid) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0, 1);
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < 80; ++i) {
        y.push_back(i % 3 == 0);
        s.push_back(std::round((g(rng) + y.back()) * 4) / 4);
    }
    const auto r = roc_auc(s, y);
    ASSERT_GE(r.curve.size(), 2u);
    EXPECT_EQ(r.curve.front().fpr, 0.0);
    EXPECT_EQ(r.curve.front().tpr, 0.0);
    EXPECT_EQ(r.curve.back().fpr, 1.0);
    EXPECT_EQ(r.curve.back().tpr, 1.0);
    for (std::size_t i = 1; i < r.curve.size(); ++i) {
        EXPECT_GE(r.curve[i].fpr, r.curve[i - 1].fpr);
        EXPECT_GE(r.curve[i].tpr, r.curve[i - 1].tpr);
        EXPECT_LT(r.curve[i].threshold, r.curve[i - 1].threshold);
    }
    EXPECT_NEAR(trapezoid_auc(r.curve), r.auc, 1e-12);
}

TEST(Bootstrap, SeparatedSampleIntervalIsOne) {
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < 100; ++i) {
        s.push_back(i < 50 ? 0.6 + i * 0.001 : 0.1 + i * 0.001);
        y.push_back(i < 50);
    }
    const auto r = evaluate_scores(s, y, {500, 0.95, 1, 1});
    EXPECT_EQ(r.auc, 1.0);
    EXPECT_GE(r.ci_low, 0.99);
    EXPECT_LE(r.ci_high, 1.0);
}

TEST(Bootstrap, DeterministicAndThreadIndependent) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0, 1);
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < 280; ++i) {
        y.push_back(i < 50);
        s.push_back(g(rng) + 1.2 * y.back());
    }
    const auto a = bootstrap_ci(s, y, {400, 0.95, 42, 1});
    const auto b = bootstrap_ci(s, y, {400, 0.95, 42, 1});
    const auto c = bootstrap_ci(s, y, {400, 0.95, 42, 4});
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, c);
    EXPECT_NE(a, bootstrap_ci(s, y, {400, 0.95, 43, 1}));
    EXPECT_LT(a.first, a.second);
}

TEST(Bootstrap, WidthOn50By230TestSet) {
    // 50 positives / 230 negatives with separation giving AUC near 0.96.
    std::mt19937_64 rng(12);
    std::normal_distribution<double> g(0, 1);
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < 280; ++i) {
        y.push_back(i < 50);
        s.push_back(g(rng) + 2.5 * y.back());
    }
    const auto r = evaluate_scores(s, y, {2000, 0.95, 5, 2});
    EXPECT_GT(r.auc, 0.93);
    EXPECT_LT(r.auc, 0.99);
    const double width = r.ci_high - r.ci_low;
    EXPECT_GT(width, 0.02);
    EXPECT_LT(width, 0.12);
    EXPECT_TRUE(r.ci_brackets_auc());
}

TEST(Bootstrap, RejectsTooFewReplicates) {
    EXPECT_THROW(bootstrap_ci({0.1, 0.9}, {0, 1}, {99, 0.95, 0, 1}), EvalError);
    EXPECT_THROW(bootstrap_ci({0.1, 0.9}, {0, 1}, {100, 1.0, 0, 1}), EvalError);
}

TEST(Quantile, LinearInterpolation) {
    const std::vector<double> v{1, 2, 3, 4};
    EXPECT_EQ(quantile_sorted(v, 0.0), 1.0);
    EXPECT_EQ(quantile_sorted(v, 1.0), 4.0);
    EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.5), 2.5);
}
