#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "prefopt/error.hpp"
#include "prefopt/numeric.hpp"
#include "prefopt/world.hpp"

namespace prefopt {

// pi_theta(y|x) = softmax(theta_x)[y], one free logit per (prompt, response).
struct TabularPolicy {
    Table logits;

    std::size_t num_prompts() const { return logits.size(); }

    Distribution probs(std::size_t x) const { return softmax(logits.at(x)); }
    Distribution log_probs(std::size_t x) const { return log_softmax(logits.at(x)); }

    Table all_probs() const {
        Table out;
        out.reserve(logits.size());
        for (const auto& row : logits) out.push_back(softmax(row));
        return out;
    }
};

inline Distribution probs(const TabularPolicy& policy, std::size_t x) { return policy.probs(x); }

// theta_x = log pi_ref(.|x).
inline TabularPolicy init_from_reference(const DiscreteWorld& world) {
    TabularPolicy p{world.pi_ref};
    for (auto& row : p.logits)
        for (double& v : row) v = std::log(v);
    return p;
}

inline TabularPolicy zero_policy(const DiscreteWorld& world) {
    TabularPolicy p;
    for (std::size_t x = 0; x < world.num_prompts(); ++x) p.logits.emplace_back(world.num_responses(x), 0.0);
    return p;
}

inline void check_policy_shape(const TabularPolicy& policy, const DiscreteWorld& world) {
    if (policy.num_prompts() != world.num_prompts())
        throw DomainError("policy has " + std::to_string(policy.num_prompts()) + " prompts, world has " +
                          std::to_string(world.num_prompts()));
    for (std::size_t x = 0; x < world.num_prompts(); ++x) {
        if (policy.logits[x].size() != world.num_responses(x))
            throw DomainError("policy logits for prompt '" + world.prompt_names[x] + "' have " +
                              std::to_string(policy.logits[x].size()) + " entries, expected " +
                              std::to_string(world.num_responses(x)));
        for (double v : policy.logits[x])
            if (!std::isfinite(v))
                throw DomainError("policy logits for prompt '" + world.prompt_names[x] + "' are not finite");
    }
}

enum class PolicyMetric { TotalVariation, ForwardKL, BackwardKL, L2 };

inline std::string_view metric_name(PolicyMetric m) {
    switch (m) {
        case PolicyMetric::TotalVariation: return "tv";
        case PolicyMetric::ForwardKL: return "fkl";
        case PolicyMetric::BackwardKL: return "bkl";
        case PolicyMetric::L2: return "l2";
    }
    return "?";
}

inline PolicyMetric parse_metric(std::string_view s) {
    if (s == "tv") return PolicyMetric::TotalVariation;
    if (s == "fkl") return PolicyMetric::ForwardKL;
    if (s == "bkl") return PolicyMetric::BackwardKL;
    if (s == "l2") return PolicyMetric::L2;
    throw DomainError("unknown metric '" + std::string(s) + "' (expected tv|fkl|bkl|l2)");
}

namespace detail {

// KL(p || q); q must be positive wherever it is evaluated.
inline double kl(const Distribution& p, const Distribution& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (q[i] <= 0.0) throw DomainError("KL divergence with a zero in the second argument");
        if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
    }
    return s;
}

}  // namespace detail

// Distance between two distributions over the same responses.
inline double distribution_distance(const Distribution& p1, const Distribution& p2, PolicyMetric metric) {
    if (p1.size() != p2.size()) throw DomainError("distributions have different supports");
    switch (metric) {
        case PolicyMetric::TotalVariation: {
            double s = 0.0;
            for (std::size_t i = 0; i < p1.size(); ++i) s += std::abs(p1[i] - p2[i]);
            return 0.5 * s;
        }
        case PolicyMetric::ForwardKL: return detail::kl(p1, p2);
        case PolicyMetric::BackwardKL: return detail::kl(p2, p1);
        case PolicyMetric::L2: {
            double s = 0.0;
            for (std::size_t i = 0; i < p1.size(); ++i) s += (p1[i] - p2[i]) * (p1[i] - p2[i]);
            return std::sqrt(s);
        }
    }
    return 0.0;
}

// Prompt-mass-weighted average of the per-prompt distance. With `prompts`
// given, only those prompts count and their masses are renormalized.
inline double policy_distance(const Table& p1, const Table& p2, const DiscreteWorld& world, PolicyMetric metric,
                              const std::optional<std::vector<std::size_t>>& prompts = std::nullopt) {
    if (p1.size() != world.num_prompts() || p2.size() != world.num_prompts())
        throw DomainError("policy tables do not match the world's prompts");
    std::vector<std::size_t> idx;
    if (prompts) {
        idx = *prompts;
    } else {
        for (std::size_t x = 0; x < world.num_prompts(); ++x) idx.push_back(x);
    }
    if (idx.empty()) throw DomainError("policy_distance over an empty prompt set");
    double mass = 0.0;
    double total = 0.0;
    for (std::size_t x : idx) {
        world.check_prompt(x);
        mass += world.prompt_mass[x];
        total += world.prompt_mass[x] * distribution_distance(p1[x], p2[x], metric);
    }
    return total / mass;
}

}  // namespace prefopt
