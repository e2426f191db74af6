#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/verify.hpp"
#include "prefopt/worlds.hpp"

using namespace prefopt;

TEST(Policy, ProbsOfSimpleLogits) {
    TabularPolicy p{{{0.0, 0.0, 0.0}}};
    for (double v : probs(p, 0)) EXPECT_NEAR(v, 1.0 / 3, 1e-15);
    p.logits = {{std::log(0.4), std::log(0.4), std::log(0.2)}};
    const auto q = p.probs(0);
    EXPECT_NEAR(q[0], 0.4, 1e-15);
    EXPECT_NEAR(q[2], 0.2, 1e-15);
    p.logits = {{1000.0, 0.0, 0.0}};
    EXPECT_NEAR(p.probs(0)[0], 1.0, 1e-15);
}

TEST(Policy, InitFromReferenceRoundTrips) {
    for (const DiscreteWorld& w : {worlds::interpolation(), worlds::preservation(), worlds::kl_duality()}) {
        const TabularPolicy p = init_from_reference(w);
        const Table q = p.all_probs();
        for (std::size_t x = 0; x < w.num_prompts(); ++x)
            for (std::size_t y = 0; y < q[x].size(); ++y) EXPECT_NEAR(q[x][y], w.pi_ref[x][y], 1e-12);
    }
    const TabularPolicy u = init_from_reference(worlds::kl_duality());
    EXPECT_EQ(u.logits[0][0], u.logits[0][1]);
}

TEST(Policy, ShiftInvariance) {
    const DiscreteWorld w = worlds::preservation();
    Rng rng(1);
    for (int i = 0; i < 20; ++i) {
        TabularPolicy p = random_policy(w, rng, 3.0);
        const Table before = p.all_probs();
        for (auto& row : p.logits)
            for (double& v : row) v += 17.25;
        const Table after = p.all_probs();
        for (std::size_t x = 0; x < 2; ++x)
            for (std::size_t y = 0; y < 3; ++y) EXPECT_NEAR(before[x][y], after[x][y], 1e-12);
    }
}

TEST(Policy, ShapeCheckNamesPrompt) {
    const DiscreteWorld w = worlds::preservation();
    TabularPolicy p = zero_policy(w);
    p.logits[1].pop_back();
    try {
        check_policy_shape(p, w);
        FAIL();
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("'x_b'"), std::string::npos);
    }
    p = zero_policy(w);
    p.logits[0][0] = NAN;
    EXPECT_THROW(check_policy_shape(p, w), DomainError);
}

TEST(Distance, KnownValues) {
    const Distribution p{0.5, 0.5}, q{0.25, 0.75};
    EXPECT_NEAR(distribution_distance(p, q, PolicyMetric::ForwardKL), 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3), 1e-15);
    EXPECT_NEAR(distribution_distance(p, q, PolicyMetric::ForwardKL), 0.14384, 1e-5);
    EXPECT_NEAR(distribution_distance(p, q, PolicyMetric::BackwardKL),
                0.25 * std::log(0.5) + 0.75 * std::log(1.5), 1e-15);
    EXPECT_DOUBLE_EQ(distribution_distance(p, q, PolicyMetric::TotalVariation), 0.25);
    EXPECT_NEAR(distribution_distance(p, q, PolicyMetric::L2), std::sqrt(2 * 0.0625), 1e-15);
    for (auto m : {PolicyMetric::TotalVariation, PolicyMetric::ForwardKL, PolicyMetric::BackwardKL, PolicyMetric::L2})
        EXPECT_EQ(distribution_distance(q, q, m), 0.0);
    EXPECT_THROW(distribution_distance({1.0, 0.0}, {0.0, 1.0}, PolicyMetric::ForwardKL), DomainError);
    EXPECT_NO_THROW(distribution_distance({1.0, 0.0}, {0.0, 1.0}, PolicyMetric::TotalVariation));
}

TEST(Distance, TvIsAMetricAndKlIsNot) {
    Rng rng(9);
    const DiscreteWorld w = worlds::interpolation();
    bool asymmetric = false;
    for (int i = 0; i < 50; ++i) {
        const auto a = random_policy(w, rng).probs(0);
        const auto b = random_policy(w, rng).probs(0);
        const auto c = random_policy(w, rng).probs(0);
        const auto tv = [](const auto& u, const auto& v) {
            return distribution_distance(u, v, PolicyMetric::TotalVariation);
        };
        EXPECT_DOUBLE_EQ(tv(a, b), tv(b, a));
        EXPECT_LE(tv(a, c), tv(a, b) + tv(b, c) + 1e-15);
        EXPECT_NEAR(tv(a, b), oracle::tv(a, b), 1e-15);
        asymmetric = asymmetric || std::abs(distribution_distance(a, b, PolicyMetric::ForwardKL) -
                                            distribution_distance(b, a, PolicyMetric::ForwardKL)) > 1e-6;
    }
    EXPECT_TRUE(asymmetric);
}

TEST(Distance, PromptWeightingAndSubsets) {
    const DiscreteWorld w = make_world({0.25, 0.75}, {{0.5, 0.5}, {0.9, 0.1}}, {{0.5, 0.5}, {0.5, 0.5}});
    const Table a{{0.5, 0.5}, {0.9, 0.1}};
    const Table b{{0.7, 0.3}, {0.5, 0.5}};
    const auto tv = PolicyMetric::TotalVariation;
    EXPECT_NEAR(policy_distance(a, b, w, tv), 0.25 * 0.2 + 0.75 * 0.4, 1e-15);
    EXPECT_NEAR(policy_distance(a, b, w, tv, std::vector<std::size_t>{1}), 0.4, 1e-15);
    EXPECT_NEAR(policy_distance(a, b, w, tv, std::vector<std::size_t>{0, 1}), policy_distance(a, b, w, tv), 1e-15);
    EXPECT_THROW(policy_distance(a, b, w, tv, std::vector<std::size_t>{}), DomainError);
    EXPECT_THROW(policy_distance(a, b, w, tv, std::vector<std::size_t>{2}), DomainError);
}

TEST(Distance, MetricNamesRoundTrip) {
    for (auto m : {PolicyMetric::TotalVariation, PolicyMetric::ForwardKL, PolicyMetric::BackwardKL, PolicyMetric::L2})
        EXPECT_EQ(parse_metric(metric_name(m)), m);
    EXPECT_THROW(parse_metric("hellinger"), DomainError);
}
