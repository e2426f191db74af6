#pragma once

// Executable versions of the algebraic identities behind the preference
// losses. "Equal up to a constant" claims are checked as constancy of the
// difference across random probes (the spread max - min).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <tuple>
#include <vector>

#include "prefopt/error.hpp"
#include "prefopt/losses.hpp"
#include "prefopt/numeric.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/world.hpp"
#include "prefopt/worlds.hpp"

namespace prefopt {

struct IdentityReport {
    std::string name;
    std::size_t probes = 0;
    double max_error = 0.0;
    double threshold = 1e-9;
    bool passed = false;
};

inline IdentityReport make_report(std::string name, std::size_t probes, double max_error, double threshold) {
    return {std::move(name), probes, max_error, threshold, max_error < threshold};
}

inline TabularPolicy random_policy(const DiscreteWorld& world, Rng& rng, double spread = 2.0) {
    TabularPolicy p = zero_policy(world);
    for (auto& row : p.logits)
        for (double& v : row) v = rng.uniform(-spread, spread);
    return p;
}

namespace detail {

class Spread {
public:
    void add(double v) {
        lo_ = std::min(lo_, v);
        hi_ = std::max(hi_, v);
    }
    double value() const { return hi_ >= lo_ ? hi_ - lo_ : 0.0; }
    double mid() const { return 0.5 * (hi_ + lo_); }

private:
    double lo_ = std::numeric_limits<double>::infinity();
    double hi_ = -std::numeric_limits<double>::infinity();
};

inline void require_probes(std::size_t probes) {
    if (probes == 0) throw DomainError("probes must be >= 1");
}

// -log N(v | 0, gamma I) for v in R^2, as a function of gamma.
inline double neg_log_gaussian_2d(double vv, double gamma) {
    return 0.5 * vv / gamma + std::log(2.0 * std::numbers::pi * gamma);
}

struct GridMinimum {
    double gamma;
    double value;
};

// 1-D brute force over gamma in logspace[1e-6, 1e6] followed by golden-section
// refinement in log gamma around the best grid point.
inline GridMinimum minimize_over_gamma(double vv) {
    constexpr std::size_t kPoints = 10000;
    const double lo = std::log(1e-6);
    const double hi = std::log(1e6);
    const double h = (hi - lo) / static_cast<double>(kPoints - 1);
    std::size_t best = 0;
    double best_v = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < kPoints; ++i) {
        const double v = neg_log_gaussian_2d(vv, std::exp(lo + h * static_cast<double>(i)));
        if (v < best_v) {
            best_v = v;
            best = i;
        }
    }
    if (best == 0 || best == kPoints - 1)
        throw PreconditionError("gaussian check: minimizing variance falls outside [1e-6, 1e6]");
    double a = lo + h * static_cast<double>(best - 1);
    double b = lo + h * static_cast<double>(best + 1);
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    auto f = [vv](double s) { return neg_log_gaussian_2d(vv, std::exp(s)); };
    double c = b - r * (b - a);
    double d = a + r * (b - a);
    double fc = f(c);
    double fd = f(d);
    for (int it = 0; it < 200 && b - a > 1e-13; ++it) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    const double s = 0.5 * (a + b);
    return {std::exp(s), f(s)};
}

inline double bernoulli_kl(double p, double q) {
    double s = 0.0;
    if (p > 0.0) s += p * std::log(p / q);
    if (p < 1.0) s += (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
    return s;
}

inline double bernoulli_entropy(double p) {
    double s = 0.0;
    if (p > 0.0) s -= p * std::log(p);
    if (p < 1.0) s -= (1.0 - p) * std::log(1.0 - p);
    return s;
}

}  // namespace detail

// -log sigma(lambda Delta) = log(gamma + u) - log gamma with
// gamma = (pi_ref(y_l)/pi_ref(y_w))^lambda and u = (pi(y_l)/pi(y_w))^lambda.
inline IdentityReport check_dpo_rewrite(const DiscreteWorld& world, double lambda, std::size_t probes,
                                        std::uint64_t seed = 1) {
    detail::require_probes(probes);
    const PreferenceData pairs = build_preference_data(world, Population{});
    Rng rng(seed);
    double err = 0.0;
    for (std::size_t i = 0; i < probes; ++i) {
        const TabularPolicy policy = random_policy(world, rng);
        const auto& t = pairs.tuples[rng.below(pairs.tuples.size())];
        const Distribution p = policy.probs(t.prompt);
        const Distribution lp = policy.log_probs(t.prompt);
        const auto& ref = world.pi_ref[t.prompt];
        const double lhs = detail::dpo_pair(lp[t.winner], lp[t.loser], std::log(ref[t.winner]),
                                            std::log(ref[t.loser]), lambda)
                               .value;
        const double gamma = std::pow(ref[t.loser] / ref[t.winner], lambda);
        const double u = std::pow(p[t.loser] / p[t.winner], lambda);
        const double rhs = std::log(gamma + u) - std::log(gamma);
        err = std::max(err, std::abs(lhs - rhs));
    }
    return make_report("dpo_rewrite(lambda=" + format_short(lambda) + ")", probes, err, 1e-10);
}

// (i) min over gamma > 0 of -log N([xi_theta, xi_ref] | 0, gamma I), found by
//     brute force, differs from log(xi_theta^2 + xi_ref^2) by one constant for
//     every probe;
// (ii) log(xi_theta^2 + xi_ref^2) differs from the per-tuple DPO loss by a
//     constant that does not depend on the policy (checked per tuple),
// with xi = (pi(y_l)/pi(y_w))^(lambda/2).
inline IdentityReport check_gaussian_dpo(const DiscreteWorld& world, double lambda, std::size_t probes,
                                         std::uint64_t seed = 2) {
    detail::require_probes(probes);
    const PreferenceData pairs = build_preference_data(world, Population{});
    Rng rng(seed);
    detail::Spread inner;
    std::vector<detail::Spread> per_tuple(pairs.tuples.size());
    double argmin_err = 0.0;
    for (std::size_t i = 0; i < probes; ++i) {
        const std::size_t ti = i % pairs.tuples.size();
        const auto& t = pairs.tuples[ti];
        const TabularPolicy policy = random_policy(world, rng, 1.0);
        const Distribution p = policy.probs(t.prompt);
        const Distribution lp = policy.log_probs(t.prompt);
        const auto& ref = world.pi_ref[t.prompt];
        const double xi_theta = std::pow(p[t.loser] / p[t.winner], 0.5 * lambda);
        const double xi_ref = std::pow(ref[t.loser] / ref[t.winner], 0.5 * lambda);
        const double vv = xi_theta * xi_theta + xi_ref * xi_ref;

        const detail::GridMinimum m = detail::minimize_over_gamma(vv);
        inner.add(m.value - std::log(vv));
        argmin_err = std::max(argmin_err, std::abs(m.gamma - 0.5 * vv) / (0.5 * vv));

        const double dpo =
            detail::dpo_pair(lp[t.winner], lp[t.loser], std::log(ref[t.winner]), std::log(ref[t.loser]), lambda).value;
        per_tuple[ti].add(std::log(vv) - dpo);
    }
    double outer = 0.0;
    for (const auto& s : per_tuple) outer = std::max(outer, s.value());
    // The golden-section argmin is only accurate to ~sqrt(machine eps); the
    // minimum value, which is what the identity is about, is much tighter.
    const double err = std::max({inner.value(), outer, argmin_err > 1e-6 ? argmin_err : 0.0});
    return make_report("gaussian_dpo(lambda=" + format_short(lambda) + ")", probes, err, 1e-9);
}

// On a world with two responses per prompt, pi_ref = (1/2, 1/2) and lambda = 1:
// rlhf_loss - E_x KL(pi || pi*) and dpo_loss - E_x KL(pi* || pi) are both
// constant in pi.
inline IdentityReport check_kl_duality(const DiscreteWorld& world, std::size_t probes, std::uint64_t seed = 3) {
    detail::require_probes(probes);
    for (std::size_t x = 0; x < world.num_prompts(); ++x) {
        if (world.num_responses(x) != 2)
            throw PreconditionError("kl duality: prompt '" + world.prompt_names[x] + "' must have exactly 2 responses");
        if (world.pi_ref[x][0] != 0.5 || world.pi_ref[x][1] != 0.5)
            throw PreconditionError("kl duality: pi_ref of prompt '" + world.prompt_names[x] + "' must be (1/2, 1/2)");
    }
    const PreferenceData data = build_preference_data(world, Population{});
    const Table reward = bt_optimal_reward(world);
    Rng rng(seed);
    detail::Spread rlhf;
    detail::Spread dpo;
    for (std::size_t i = 0; i < probes; ++i) {
        const TabularPolicy policy = random_policy(world, rng);
        const Table p = policy.all_probs();
        rlhf.add(rlhf_loss(policy, world, reward, 1.0) -
                 policy_distance(p, world.pi_star, world, PolicyMetric::ForwardKL));
        dpo.add(dpo_loss(policy, world, data, 1.0) -
                policy_distance(world.pi_star, p, world, PolicyMetric::ForwardKL));
    }
    return make_report("kl_duality", probes, std::max(rlhf.value(), dpo.value()), 1e-9);
}

// Pairwise KL form of the TYPO supervised term, E_pairs KL[p_hat || p_theta]
// with p_theta(y1 > y2) = pi(y1)/(pi(y1)+pi(y2)), minus the tuple form
// E log(1 + pi(y_l)/pi(y_w)) is the negative weighted Bernoulli entropy of
// p_hat. p_hat is read off the data's conditional winner frequencies.
inline IdentityReport check_supervised_equivalence(const DiscreteWorld& world, const PreferenceData& data,
                                                   std::size_t probes, std::uint64_t seed = 4) {
    detail::require_probes(probes);
    detail::check_tuples(data, world);
    // (x, lo, hi) -> {weight lo wins, weight hi wins}
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::pair<double, double>> pairs;
    for (const auto& t : data.tuples) {
        const auto [lo, hi] = std::minmax(t.winner, t.loser);
        auto& e = pairs[{t.prompt, lo, hi}];
        (t.winner == lo ? e.first : e.second) += t.weight;
    }
    const double total = data.total_weight();
    double entropy = 0.0;
    for (const auto& [key, w] : pairs) entropy += (w.first + w.second) / total * detail::bernoulli_entropy(w.first / (w.first + w.second));

    Rng rng(seed);
    detail::Spread diff;
    double err_const = 0.0;
    for (std::size_t i = 0; i < probes; ++i) {
        const TabularPolicy policy = random_policy(world, rng);
        const Table p = policy.all_probs();
        double kl = 0.0;
        for (const auto& [key, w] : pairs) {
            const auto [x, lo, hi] = key;
            const double q = p[x][lo] / (p[x][lo] + p[x][hi]);
            kl += (w.first + w.second) / total * detail::bernoulli_kl(w.first / (w.first + w.second), q);
        }
        const double d = typo_loss(policy, world, data, 1.0).supervised - kl;
        diff.add(d);
        err_const = std::max(err_const, std::abs(d - entropy));
    }
    return make_report("supervised_equivalence", probes, std::max(diff.value(), err_const), 1e-10);
}

inline IdentityReport check_supervised_equivalence(const DiscreteWorld& world, std::size_t probes,
                                                   std::uint64_t seed = 4) {
    return check_supervised_equivalence(world, build_preference_data(world, Population{}), probes, seed);
}

// sigma(r*(y1) - r*(y2)) = pi*(y1)/(pi*(y1)+pi*(y2)) with r* = log pi*, and the
// expected-reward maximizer over the simplex vertices is the mode policy.
inline IdentityReport check_bt_softmax(const DiscreteWorld& world) {
    const Table r = bt_optimal_reward(world);
    const Table mode = mode_policy(world);
    double err = 0.0;
    std::size_t probes = 0;
    for (std::size_t x = 0; x < world.num_prompts(); ++x) {
        const std::size_t k = world.num_responses(x);
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) {
                if (a == b) continue;
                err = std::max(err, std::abs(bt_from_reward(r, x, a, b) - bt_preference(world, x, a, b)));
                ++probes;
            }
        double mode_value = 0.0;
        for (std::size_t y = 0; y < k; ++y) mode_value += mode[x][y] * r[x][y];
        for (std::size_t v = 0; v < k; ++v) {
            err = std::max(err, r[x][v] - mode_value);
            ++probes;
        }
    }
    return make_report("bt_softmax", probes, err, 1e-12);
}

// Analytic logit gradients against central differences. Per component the
// error is relative, except that absolute differences below 1e-8 count as 0.
inline IdentityReport check_gradients(const std::vector<LossSpec>& specs, const DiscreteWorld& world,
                                      const PreferenceData& data, std::size_t probes, std::uint64_t seed = 5,
                                      double step = 1e-5) {
    detail::require_probes(probes);
    Rng rng(seed);
    double err = 0.0;
    for (const auto& spec : specs)
        for (std::size_t i = 0; i < probes; ++i) {
            TabularPolicy policy = random_policy(world, rng);
            const Table g = loss_gradient(spec, policy, world, data);
            for (std::size_t x = 0; x < g.size(); ++x)
                for (std::size_t k = 0; k < g[x].size(); ++k) {
                    const double keep = policy.logits[x][k];
                    policy.logits[x][k] = keep + step;
                    const double up = loss_value(spec, policy, world, data);
                    policy.logits[x][k] = keep - step;
                    const double down = loss_value(spec, policy, world, data);
                    policy.logits[x][k] = keep;
                    const double numeric = (up - down) / (2.0 * step);
                    const double diff = std::abs(numeric - g[x][k]);
                    if (diff < 1e-8) continue;
                    err = std::max(err, diff / std::max(std::abs(numeric), std::abs(g[x][k])));
                }
        }
    return make_report("gradients", probes * specs.size(), err, 1e-5);
}

// Specs covering every loss kind, with and without penalties.
inline std::vector<LossSpec> gradient_probe_specs() {
    std::vector<LossSpec> s;
    const Penalty probs{0.3, PenaltyTarget::Probabilities};
    const Penalty logits{0.05, PenaltyTarget::Logits};
    const std::vector<LossKind> kinds = {
        DpoLoss{0.7},
        IpoLoss{0.5},
        FdpoLoss{Divergence::ReverseKL, 1.3},
        FdpoLoss{Divergence::JensenShannon, 0.8},
        QpoLoss{shapes::square(), links::jensen_shannon(), 0.6},
        QpoLoss{shapes::logistic(), links::log(), 2.0},
        TypoLoss{0.4},
        RlhfLoss{RewardSource::BtOptimal, 0.9, {}},
        RlhfLoss{RewardSource::IpoReward, 0.2, {}},
    };
    for (const auto& k : kinds) {
        s.push_back({k, std::nullopt});
        s.push_back({k, probs});
        s.push_back({k, logits});
    }
    return s;
}

// Every identity check on the built-in worlds.
inline std::vector<IdentityReport> run_identity_suite(std::size_t probes = 100, std::uint64_t seed = 1) {
    std::vector<IdentityReport> out;
    const DiscreteWorld interp = worlds::interpolation();
    const DiscreteWorld pres = worlds::preservation();
    for (double lam : {0.1, 1.0, 5.0}) out.push_back(check_dpo_rewrite(interp, lam, probes, seed));
    for (double lam : {0.5, 1.0, 2.0}) out.push_back(check_gaussian_dpo(interp, lam, probes, seed + 1));
    out.push_back(check_kl_duality(worlds::kl_duality(), probes, seed + 2));
    out.push_back(check_bt_softmax(interp));
    out.push_back(check_supervised_equivalence(interp, probes, seed + 3));
    out.push_back(check_supervised_equivalence(pres, probes, seed + 4));
    out.push_back(check_gradients(gradient_probe_specs(), interp, build_preference_data(interp, Population{}),
                                  probes, seed + 5));
    out.push_back(check_gradients(gradient_probe_specs(), pres, build_preference_data(pres, Population{}), probes,
                                  seed + 6));
    return out;
}

}  // namespace prefopt
