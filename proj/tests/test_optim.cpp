#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "prefopt/optim.hpp"
#include "prefopt/verify.hpp"
#include "prefopt/worlds.hpp"

using namespace prefopt;

namespace {

double dot(const Table& a, const Table& b) {
    double s = 0.0;
    for (std::size_t x = 0; x < a.size(); ++x)
        for (std::size_t k = 0; k < a[x].size(); ++k) s += a[x][k] * b[x][k];
    return s;
}

}  // namespace

TEST(Clip, OnlyRescalesLongGradients) {
    const Table g{{3.0, 4.0}};  // norm 5
    EXPECT_EQ(clip_gradient(g, 10.0), g);
    const Table big{{12.0, 16.0}};  // norm 20
    const Table c = clip_gradient(big, 10.0);
    EXPECT_NEAR(table_norm(c), 10.0, 1e-12);
    EXPECT_NEAR(dot(c, big) / (table_norm(c) * table_norm(big)), 1.0, 1e-15);
    EXPECT_EQ(clip_gradient(Table{{0.0, 0.0}, {0.0}}, 10.0), (Table{{0.0, 0.0}, {0.0}}));
    EXPECT_THROW(clip_gradient(g, 0.0), DomainError);
}

TEST(Clip, NormSpansPrompts) {
    const Table g{{6.0}, {8.0}};  // norm 10 exactly
    EXPECT_EQ(clip_gradient(g, 10.0), g);
    const Table c = clip_gradient(g, 5.0);
    EXPECT_NEAR(c[0][0], 3.0, 1e-15);
    EXPECT_NEAR(c[1][0], 4.0, 1e-15);
}

TEST(Adam, ZeroGradientLeavesLogits) {
    TabularPolicy p{{{0.3, -1.0, 2.0}}};
    const TabularPolicy before = p;
    AdamState s = AdamState::for_policy(p);
    OptimConfig c;
    for (int i = 0; i < 5; ++i) adam_step(s, p, Table{{0.0, 0.0, 0.0}}, c);
    EXPECT_EQ(p.logits, before.logits);
    EXPECT_EQ(s.step, 5u);
}

TEST(Adam, ConstantGradientStepsAreLearningRate) {
    // With bias correction the update is lr * g / (|g| + eps) from the first step.
    TabularPolicy p{{{0.0, 0.0}}};
    AdamState s = AdamState::for_policy(p);
    OptimConfig c;
    c.learning_rate = 0.01;
    double prev = 0.0;
    for (int i = 0; i < 50; ++i) {
        adam_step(s, p, Table{{2.0, -0.5}}, c);
        EXPECT_NEAR(prev - p.logits[0][0], 0.01, 1e-8);
        prev = p.logits[0][0];
    }
    EXPECT_NEAR(p.logits[0][1], 0.5, 1e-6);
}

TEST(Adam, MatchesHandComputedSecondStep) {
    TabularPolicy p{{{0.0}}};
    AdamState s = AdamState::for_policy(p);
    OptimConfig c;
    c.learning_rate = 0.1;
    adam_step(s, p, Table{{1.0}}, c);
    adam_step(s, p, Table{{3.0}}, c);
    const double m = 0.9 * 0.1 + 0.1 * 3.0;
    const double v = 0.999 * 0.001 + 0.001 * 9.0;
    const double second = 0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
    EXPECT_NEAR(p.logits[0][0], -0.1 * 1.0 / (1.0 + 1e-8) - second, 1e-12);
}

TEST(OptimConfig, RejectsBadValues) {
    OptimConfig c;
    EXPECT_NO_THROW(c.validate());
    for (auto bad : {+[](OptimConfig& o) { o.learning_rate = 0; }, +[](OptimConfig& o) { o.beta1 = 1.0; },
                     +[](OptimConfig& o) { o.epsilon = 0; }, +[](OptimConfig& o) { o.epochs = 0; },
                     +[](OptimConfig& o) { o.record_every = 0; }, +[](OptimConfig& o) { o.batch = Minibatch{0, 1}; }}) {
        OptimConfig o;
        bad(o);
        EXPECT_THROW(o.validate(), DomainError);
    }
}

TEST(Train, TrajectoryIsRecordedAtExpectedEpochs) {
    const DiscreteWorld w = worlds::interpolation();
    const auto data = build_preference_data(w, Population{});
    OptimConfig c;
    c.epochs = 25;
    c.record_every = 10;
    const auto r = train({DpoLoss{1.0}, std::nullopt}, w, data, init_from_reference(w), c);
    std::vector<std::size_t> epochs;
    for (const auto& p : r.trajectory) epochs.push_back(p.epoch);
    EXPECT_EQ(epochs, (std::vector<std::size_t>{0, 1, 10, 20, 25}));
    EXPECT_NEAR(r.trajectory.front().loss, std::log(2.0), 1e-15);
    for (const auto& p : r.trajectory) {
        double s = 0.0;
        for (double v : p.probs[0]) s += v;
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Train, LossDecreasesOnConvexProblem) {
    const DiscreteWorld w = worlds::interpolation();
    OptimConfig c;
    c.learning_rate = 1e-2;
    c.epochs = 200;
    c.record_every = 50;
    c.steps_per_epoch = 10;
    const auto r = train({RlhfLoss{RewardSource::BtOptimal, 1.0, {}}, std::nullopt}, w, {}, zero_policy(w), c);
    for (std::size_t i = 1; i < r.trajectory.size(); ++i)
        EXPECT_LE(r.trajectory[i].loss, r.trajectory[i - 1].loss + 1e-12);
    EXPECT_TRUE(r.converged);
}

TEST(Train, RlhfReachesClosedForm) {
    const DiscreteWorld w = worlds::preservation();
    OptimConfig c;
    c.learning_rate = 1e-2;
    c.epochs = 1000;
    c.record_every = 1000;
    c.steps_per_epoch = 10;
    for (double lam : {0.1, 1.0, 10.0}) {
        const Table r = bt_optimal_reward(w);
        const auto res = train({RlhfLoss{RewardSource::BtOptimal, lam, {}}, std::nullopt}, w, {}, init_from_reference(w), c);
        EXPECT_LT(oracle::tv(w, res.policy.all_probs(), rlhf_closed_form(w, r, lam)), 1e-3) << lam;
    }
}

TEST(Train, AbortsOnNonFiniteLoss) {
    const DiscreteWorld w = worlds::interpolation();
    OptimConfig c;
    c.epochs = 3;
    const Table nan_reward{{std::numeric_limits<double>::quiet_NaN(), 0.0, 0.0}};
    try {
        train({RlhfLoss{RewardSource::Table, 1.0, nan_reward}, std::nullopt}, w, {}, init_from_reference(w), c);
        FAIL() << "expected an abort";
    } catch (const DomainError&) {
        // the reward table is rejected up front
    }
    // Huge logits overflow the logit penalty to inf.
    TabularPolicy huge{{{1e200, 0.0, 0.0}}};
    try {
        train({DpoLoss{1.0}, Penalty{1.0, PenaltyTarget::Logits}}, w, build_preference_data(w, Population{}), huge, c);
        FAIL() << "expected an abort";
    } catch (const TrainingAbort& e) {
        EXPECT_EQ(e.step(), 0u);
        EXPECT_NE(std::string(e.what()).find("loss"), std::string::npos);
    }
}

TEST(Train, MinibatchRunsAreSeedDeterministic) {
    const DiscreteWorld w = worlds::preservation();
    const auto data = build_preference_data(w, Sampled{3, 200});
    OptimConfig c;
    c.epochs = 20;
    c.batch = Minibatch{20, 11};
    const LossSpec s{DpoLoss{0.5}, std::nullopt};
    const auto a = train(s, w, data, init_from_reference(w), c);
    const auto b = train(s, w, data, init_from_reference(w), c);
    EXPECT_EQ(a.policy.logits, b.policy.logits);
    c.batch = Minibatch{20, 12};
    const auto d = train(s, w, data, init_from_reference(w), c);
    EXPECT_NE(a.policy.logits, d.policy.logits);
}

TEST(Train, MinibatchEpochIsOnePass) {
    // 200 tuples in batches of 20 is 10 Adam steps per epoch; with a constant
    // gradient direction each step moves about lr.
    const DiscreteWorld w = make_world({1.0}, {{0.6, 0.4}}, {{0.5, 0.5}});
    PreferenceData d{Sampled{0, 200}, {}};
    for (int i = 0; i < 200; ++i) d.tuples.push_back({0, 0, 1, 1.0 / 200});
    OptimConfig c;
    c.learning_rate = 1e-3;
    c.epochs = 1;
    c.batch = Minibatch{20, 1};
    const auto r = train({DpoLoss{1.0}, std::nullopt}, w, d, init_from_reference(w), c);
    EXPECT_NEAR(r.policy.logits[0][0] - std::log(0.5), 10 * 1e-3, 1e-5);
}

TEST(Train, ZeroInitIsUniform) {
    const DiscreteWorld w = worlds::preservation();
    const TabularPolicy p = initial_policy(w, InitKind::Zeros);
    for (std::size_t x = 0; x < 2; ++x)
        for (double v : p.probs(x)) EXPECT_NEAR(v, 1.0 / 3, 1e-15);
    EXPECT_EQ(initial_policy(w, InitKind::Reference).logits, init_from_reference(w).logits);
}
