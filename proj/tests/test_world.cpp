#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <string>

#include "oracles.hpp"
#include "prefopt/world.hpp"
#include "prefopt/worlds.hpp"

using namespace prefopt;

namespace {

void expect_domain_error(const std::function<void()>& f, const std::string& needle) {
    try {
        f();
        ADD_FAILURE() << "expected DomainError containing '" << needle << "'";
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
}

}  // namespace

TEST(World, ValidationNamesTheField) {
    DiscreteWorld w = worlds::interpolation();
    w.pi_star[0] = {0.5, 0.3, 0.1};
    expect_domain_error([&] { w.validate(); }, "pi_star.x");
    w = worlds::interpolation();
    w.pi_ref[0] = {0.8, 0.2, 0.0};
    expect_domain_error([&] { w.validate(); }, "pi_ref.x: entries must be strictly positive");
    w = worlds::interpolation();
    w.prompt_mass = {0.9};
    expect_domain_error([&] { w.validate(); }, "prompts.mass");
    expect_domain_error([] { make_world({1.0}, {{1.0}}, {{1.0}}); }, "at least 2 responses");
}

TEST(World, SumToleranceIs1e12) {
    EXPECT_NO_THROW(make_world({1.0}, {{0.5 + 4e-13, 0.5}}, {{0.5, 0.5}}));
    EXPECT_THROW(make_world({1.0}, {{0.5 + 1e-11, 0.5}}, {{0.5, 0.5}}), DomainError);
}

TEST(World, NamesResolve) {
    const DiscreteWorld w = worlds::preservation();
    EXPECT_EQ(w.prompt_index("x_b"), 1u);
    EXPECT_EQ(w.response_index(1, "y_bc"), 2u);
    expect_domain_error([&] { w.prompt_index("nope"); }, "unknown prompt id 'nope'");
    expect_domain_error([&] { w.response_index(0, "y_ba"); }, "for prompt 'x_g'");
}

TEST(BradleyTerry, PreferenceRatio) {
    const DiscreteWorld w = worlds::interpolation();
    EXPECT_NEAR(bt_preference(w, 0, 0, 1), 0.6 / 0.9, 1e-15);
    EXPECT_EQ(bt_preference(w, 0, 2, 2), 0.5);
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b)
            if (a != b) {
                EXPECT_NEAR(bt_preference(w, 0, a, b) + bt_preference(w, 0, b, a), 1.0, 1e-15);
            }
    const DiscreteWorld u = make_world({1.0}, {{0.5, 0.5}}, {{0.5, 0.5}});
    EXPECT_EQ(bt_preference(u, 0, 0, 1), 0.5);
}

TEST(BradleyTerry, FromRewardIsShiftInvariant) {
    const DiscreteWorld w = worlds::preservation();
    Table r = bt_optimal_reward(w);
    for (std::size_t x = 0; x < 2; ++x)
        for (double& v : r[x]) v += 3.7 * static_cast<double>(x + 1);
    for (std::size_t x = 0; x < 2; ++x)
        for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t b = 0; b < 3; ++b)
                EXPECT_NEAR(bt_from_reward(r, x, a, b), bt_preference(w, x, a, b), 1e-12);
    const Table big{{20.0, 0.0}};
    EXPECT_GT(bt_from_reward(big, 0, 0, 1), 0.999999);
    EXPECT_LT(bt_from_reward(big, 0, 0, 1), 1.0);
    EXPECT_EQ(bt_from_reward({{1.0, 1.0}}, 0, 0, 1), 0.5);
    EXPECT_THROW(bt_from_reward({{NAN, 1.0}}, 0, 0, 1), DomainError);
    EXPECT_THROW(bt_from_reward({{1.0, 1.0}}, 0, 0, 2), DomainError);
}

TEST(ModePolicy, ArgmaxAndTies) {
    EXPECT_EQ(mode_policy(worlds::interpolation()), (Table{{1.0, 0.0, 0.0}}));
    EXPECT_EQ(mode_policy(make_world({1.0}, {{0.1, 0.3, 0.6}}, {{0.4, 0.4, 0.2}})), (Table{{0.0, 0.0, 1.0}}));
    EXPECT_THROW(mode_policy(worlds::preservation()), TieError);
}

TEST(IpoReward, BruteForceSum) {
    const DiscreteWorld w = worlds::interpolation();
    const Table r = ipo_reward(w);
    EXPECT_NEAR(r[0][0], 0.4 * 0.5 + 0.4 * (0.6 / 0.9) + 0.2 * (0.6 / 0.7), 1e-15);
    EXPECT_NEAR(r[0][0], 0.63810, 1e-5);
    for (std::size_t y = 0; y < 3; ++y) {
        double s = 0.0;
        for (std::size_t z = 0; z < 3; ++z) s += w.pi_ref[0][z] * (y == z ? 0.5 : oracle::pref(w, 0, y, z));
        EXPECT_NEAR(r[0][y], s, 1e-15);
    }
    const Table u = ipo_reward(make_world({1.0}, {{1 / 3.0, 1 / 3.0, 1 / 3.0}}, {{0.4, 0.4, 0.2}}));
    for (double v : u[0]) EXPECT_NEAR(v, 0.5, 1e-15);
    const Table e = ipo_reward(make_world({1.0}, {{0.9, 0.1}}, {{1 - 1e-9, 1e-9}}));
    for (double v : e[0]) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(PopulationData, TwoResponseEnumeration) {
    const DiscreteWorld w = make_world({1.0}, {{0.7, 0.3}}, {{0.6, 0.4}});
    const PreferenceData d = build_preference_data(w, Population{});
    ASSERT_EQ(d.tuples.size(), 2u);
    // Conditional winner frequencies reproduce p*.
    EXPECT_NEAR(d.tuples[0].weight / (d.tuples[0].weight + d.tuples[1].weight), 0.7, 1e-12);
    EXPECT_NEAR(d.tuples[0].weight / d.tuples[1].weight, 0.7 / 0.3, 1e-12);
}

TEST(PopulationData, WeightsAndInvariants) {
    for (const DiscreteWorld& w : {worlds::interpolation(), worlds::preservation()}) {
        const PreferenceData d = build_preference_data(w, Population{});
        EXPECT_EQ(d.tuples.size(), 6u * w.num_prompts());
        double expected = 0.0;
        for (std::size_t x = 0; x < w.num_prompts(); ++x) {
            double sq = 0.0;
            for (double r : w.pi_ref[x]) sq += r * r;
            expected += w.prompt_mass[x] * (1 - sq);
        }
        EXPECT_NEAR(d.total_weight(), expected, 1e-12);
        std::map<std::tuple<std::size_t, std::size_t, std::size_t>, double> wt;
        for (const auto& t : d.tuples) {
            EXPECT_GE(t.weight, 0.0);
            EXPECT_NE(t.winner, t.loser);
            wt[{t.prompt, t.winner, t.loser}] = t.weight;
        }
        for (const auto& [k, v] : wt) {
            const auto [x, a, b] = k;
            EXPECT_NEAR(v / (v + wt[{x, b, a}]), bt_preference(w, x, a, b), 1e-12);
        }
    }
}

TEST(SampledData, DeterministicPerSeed) {
    const DiscreteWorld w = worlds::preservation();
    const auto a = build_preference_data(w, Sampled{5, 500});
    const auto b = build_preference_data(w, Sampled{5, 500});
    const auto c = build_preference_data(w, Sampled{6, 500});
    EXPECT_EQ(a.tuples, b.tuples);
    EXPECT_NE(a.tuples, c.tuples);
    ASSERT_EQ(a.tuples.size(), 500u);
    for (const auto& t : a.tuples) {
        EXPECT_EQ(t.weight, 1.0 / 500);
        EXPECT_NE(t.winner, t.loser);
    }
    EXPECT_THROW(build_preference_data(w, Sampled{1, 0}), DomainError);
    EXPECT_THROW(build_preference_data(w, Labeled{}), DomainError);
}

TEST(SampledData, WinnerFrequenciesConvergeToBradleyTerry) {
    const DiscreteWorld w = worlds::interpolation();
    const auto d = build_preference_data(w, Sampled{2024, 1000000});
    std::map<std::pair<std::size_t, std::size_t>, double> n;
    for (const auto& t : d.tuples) n[{t.winner, t.loser}] += 1;
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = a + 1; b < 3; ++b) {
            const double f = n[{a, b}] / (n[{a, b}] + n[{b, a}]);
            EXPECT_NEAR(f, bt_preference(w, 0, a, b), 0.005);
        }
    // Pair frequencies follow pi_ref conditioned on distinct draws.
    const double pair_ab = (n[{0, 1}] + n[{1, 0}]) / 1e6;
    EXPECT_NEAR(pair_ab, 2 * 0.4 * 0.4 / (1 - 0.16 - 0.16 - 0.04), 0.005);
}

TEST(DegenerateData, TotalOrdering) {
    const DiscreteWorld w = worlds::interpolation();
    const auto d = degenerate_dataset(w, {{0, 0, 1}, {0, 1, 2}, {0, 0, 2}});
    ASSERT_EQ(d.tuples.size(), 3u);
    for (const auto& t : d.tuples) EXPECT_DOUBLE_EQ(t.weight, 1.0 / 3);
    EXPECT_TRUE(std::holds_alternative<Labeled>(d.mode));
    const DiscreteWorld two = make_world({1.0}, {{0.7, 0.3}}, {{0.5, 0.5}});
    EXPECT_EQ(degenerate_dataset(two, {{0, 1, 0}}).tuples.size(), 1u);
}

TEST(DegenerateData, RejectsBadLabelings) {
    const DiscreteWorld w = worlds::interpolation();
    expect_domain_error([&] { degenerate_dataset(w, {{0, 0, 1}, {0, 1, 0}, {0, 1, 2}, {0, 0, 2}}); },
                        "labeled more than once");
    expect_domain_error([&] { degenerate_dataset(w, {{0, 0, 1}, {0, 1, 2}}); }, "missing pair labels");
    expect_domain_error([&] { degenerate_dataset(w, {{0, 1, 1}}); }, "with itself");
    EXPECT_THROW(degenerate_dataset(w, {{0, 0, 5}}), DomainError);
}
