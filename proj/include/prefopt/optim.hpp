#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <variant>
#include <vector>

#include "prefopt/error.hpp"
#include "prefopt/losses.hpp"
#include "prefopt/numeric.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/world.hpp"

namespace prefopt {

// Exact gradient over all tuples, `steps_per_epoch` times per epoch.
struct FullPopulation {};
// One epoch is a shuffled pass over the tuples in batches of `size`.
struct Minibatch {
    std::size_t size;
    std::uint64_t seed;
};

using BatchMode = std::variant<FullPopulation, Minibatch>;

enum class InitKind { Reference, Zeros };

struct OptimConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip_norm = 10.0;
    std::size_t epochs = 1000;
    std::size_t record_every = 1;
    std::size_t steps_per_epoch = 1;
    BatchMode batch = FullPopulation{};
    InitKind init = InitKind::Reference;
    double converged_tolerance = 1e-6;

    void validate() const {
        if (!(learning_rate > 0.0)) throw DomainError("lr: must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0)) throw DomainError("beta1: must lie in [0, 1)");
        if (!(beta2 >= 0.0 && beta2 < 1.0)) throw DomainError("beta2: must lie in [0, 1)");
        if (!(epsilon > 0.0)) throw DomainError("epsilon: must be positive");
        if (!(clip_norm > 0.0)) throw DomainError("clip_norm: must be positive");
        if (epochs == 0) throw DomainError("epochs: must be a positive integer");
        if (record_every == 0) throw DomainError("record_every: must be a positive integer");
        if (steps_per_epoch == 0) throw DomainError("steps_per_epoch: must be a positive integer");
        if (const auto* mb = std::get_if<Minibatch>(&batch); mb && mb->size == 0)
            throw DomainError("batch: minibatch size must be a positive integer");
    }
};

// Global L2 clipping; the direction is never changed.
inline Table clip_gradient(Table g, double clip_norm) {
    if (!(clip_norm > 0.0)) throw DomainError("clip_norm must be positive");
    const double n = table_norm(g);
    if (n <= clip_norm) return g;
    const double scale = clip_norm / n;
    for (auto& row : g)
        for (double& v : row) v *= scale;
    return g;
}

struct AdamState {
    Table m;
    Table v;
    std::size_t step = 0;

    static AdamState for_policy(const TabularPolicy& p) { return {zeros_like(p.logits), zeros_like(p.logits), 0}; }
};

// One bias-corrected Adam update of the logits.
inline void adam_step(AdamState& state, TabularPolicy& policy, const Table& g, const OptimConfig& config) {
    const std::size_t t = ++state.step;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
    for (std::size_t x = 0; x < g.size(); ++x)
        for (std::size_t k = 0; k < g[x].size(); ++k) {
            double& m = state.m[x][k];
            double& v = state.v[x][k];
            m = config.beta1 * m + (1.0 - config.beta1) * g[x][k];
            v = config.beta2 * v + (1.0 - config.beta2) * g[x][k] * g[x][k];
            const double mhat = m / c1;
            const double vhat = v / c2;
            policy.logits[x][k] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.epsilon);
        }
}

struct TrajectoryPoint {
    std::size_t epoch;
    double loss;
    Table probs;
};

struct TrainResult {
    TabularPolicy policy;
    std::vector<TrajectoryPoint> trajectory;  // epoch 0 is the initialization
    double final_gradient_norm = 0.0;
    bool converged = false;
};

inline TabularPolicy initial_policy(const DiscreteWorld& world, InitKind init) {
    return init == InitKind::Reference ? init_from_reference(world) : zero_policy(world);
}

// Runs exactly config.epochs epochs of clipped Adam on the full-data loss (or
// seeded minibatches of it). Records epochs 0 and 1, every record_every-th
// epoch and the last one; the recorded loss is always the full-data loss.
inline TrainResult train(const LossSpec& spec, const DiscreteWorld& world, const PreferenceData& data,
                         const TabularPolicy& init, const OptimConfig& config) {
    spec.validate();
    config.validate();
    check_policy_shape(init, world);

    TrainResult result{init, {}, 0.0, false};
    TabularPolicy& policy = result.policy;
    AdamState state = AdamState::for_policy(policy);
    std::size_t step = 0;

    auto checked = [&](const PreferenceData& d) {
        LossEvaluation e = evaluate(spec, policy, world, d);
        if (!std::isfinite(e.value)) throw TrainingAbort(step, e.value, "loss");
        const double n = table_norm(e.gradient);
        if (!std::isfinite(n)) throw TrainingAbort(step, n, "gradient norm");
        return e;
    };
    auto update = [&](const PreferenceData& d) {
        const LossEvaluation e = checked(d);
        ++step;
        adam_step(state, policy, clip_gradient(e.gradient, config.clip_norm), config);
    };
    auto record = [&](std::size_t epoch) {
        result.trajectory.push_back({epoch, checked(data).value, policy.all_probs()});
    };

    record(0);
    const auto* mb = std::get_if<Minibatch>(&config.batch);
    std::vector<std::size_t> order(data.tuples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mb ? mb->seed : 0);

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        if (!mb || order.empty()) {
            for (std::size_t s = 0; s < config.steps_per_epoch; ++s) update(data);
        } else {
            rng.shuffle(order);
            for (std::size_t start = 0; start < order.size(); start += mb->size) {
                PreferenceData batch{data.mode, {}};
                const std::size_t end = std::min(order.size(), start + mb->size);
                for (std::size_t i = start; i < end; ++i) batch.tuples.push_back(data.tuples[order[i]]);
                update(batch);
            }
        }
        if (epoch == 1 || epoch % config.record_every == 0 || epoch == config.epochs) record(epoch);
    }

    const LossEvaluation last = checked(data);
    result.final_gradient_norm = table_norm(last.gradient);
    result.converged = result.final_gradient_norm < config.converged_tolerance;
    return result;
}

}  // namespace prefopt
