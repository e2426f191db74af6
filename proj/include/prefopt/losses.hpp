#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <type_traits>
#include <variant>
#include <vector>

#include "prefopt/error.hpp"
#include "prefopt/numeric.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/world.hpp"

namespace prefopt {

// psi(t, lambda) of the quasi-convex family, with its derivative in t.
// Each shape documents how it couples to lambda.
struct ShapeFn {
    std::string name;
    std::function<double(double, double)> value;
    std::function<double(double, double)> slope;
};

// mu, a strictly increasing link on ratios u > 0. Stored as a function of
// s = log u so policies with tiny probabilities stay finite.
struct LinkFn {
    std::string name;
    std::function<double(double)> value_at_log;
    std::function<double(double)> slope_at_log;  // d mu / d log u

    double operator()(double u) const {
        if (!(u > 0.0)) throw DomainError("link '" + name + "' evaluated at nonpositive ratio");
        return value_at_log(std::log(u));
    }

    double derivative(double u) const {
        if (!(u > 0.0)) throw DomainError("link '" + name + "' evaluated at nonpositive ratio");
        return slope_at_log(std::log(u)) / u;
    }
};

namespace shapes {

// -log sigma(lambda t); lambda scales the argument.
inline ShapeFn logistic() {
    return {"logistic", [](double t, double lam) { return softplus(-lam * t); },
            [](double t, double lam) { return -lam * sigmoid(-lam * t); }};
}

// (t - 1/(2 lambda))^2; lambda sets the target.
inline ShapeFn square() {
    return {"square",
            [](double t, double lam) {
                const double r = t - 0.5 / lam;
                return r * r;
            },
            [](double t, double lam) { return 2.0 * (t - 0.5 / lam); }};
}

// max(0, 1 - lambda t), SLiC-style. Not differentiable at lambda t = 1.
inline ShapeFn hinge() {
    return {"hinge", [](double t, double lam) { return std::max(0.0, 1.0 - lam * t); },
            [](double t, double lam) { return lam * t < 1.0 ? -lam : 0.0; }};
}

inline ShapeFn by_name(std::string_view name) {
    if (name == "logistic") return logistic();
    if (name == "square") return square();
    if (name == "hinge") return hinge();
    throw DomainError("unknown psi '" + std::string(name) + "' (expected logistic|square|hinge)");
}

}  // namespace shapes

namespace links {

inline LinkFn log() {
    return {"log", [](double s) { return s; }, [](double) { return 1.0; }};
}

// f'(u) = log u + 1 for f(u) = u log u.
inline LinkFn reverse_kl() {
    return {"reverse_kl", [](double s) { return s + 1.0; }, [](double) { return 1.0; }};
}

// f'(u) = log(2u / (1 + u)) for the Jensen-Shannon generator.
inline LinkFn jensen_shannon() {
    return {"jensen_shannon", [](double s) { return std::numbers::ln2 + s - softplus(s); },
            [](double s) { return sigmoid(-s); }};
}

inline LinkFn by_name(std::string_view name) {
    if (name == "log") return log();
    if (name == "reverse_kl") return reverse_kl();
    if (name == "jensen_shannon") return jensen_shannon();
    throw DomainError("unknown mu '" + std::string(name) + "' (expected log|reverse_kl|jensen_shannon)");
}

}  // namespace links

enum class Divergence { ReverseKL, JensenShannon };

inline LinkFn divergence_link(Divergence d) {
    return d == Divergence::ReverseKL ? links::reverse_kl() : links::jensen_shannon();
}

enum class RewardSource { BtOptimal, IpoReward, Table };
enum class PenaltyTarget { Probabilities, Logits };

struct DpoLoss {
    double lambda;
};
struct IpoLoss {
    double lambda;
};
struct FdpoLoss {
    Divergence divergence;
    double lambda;
};
struct QpoLoss {
    ShapeFn psi;
    LinkFn mu;
    double lambda;
};
struct TypoLoss {
    double lambda;
};
struct RlhfLoss {
    RewardSource reward;
    double lambda;
    prefopt::Table table;  // used when reward == RewardSource::Table
};

using LossKind = std::variant<DpoLoss, IpoLoss, FdpoLoss, QpoLoss, TypoLoss, RlhfLoss>;

struct Penalty {
    double alpha = 0.0;
    PenaltyTarget target = PenaltyTarget::Probabilities;
};

struct LossSpec {
    LossKind kind;
    std::optional<Penalty> penalty;

    double lambda() const {
        return std::visit([](const auto& k) { return k.lambda; }, kind);
    }

    LossSpec with_lambda(double lambda) const {
        LossSpec s = *this;
        std::visit([lambda](auto& k) { k.lambda = lambda; }, s.kind);
        return s;
    }

    LossSpec with_penalty(std::optional<Penalty> p) const {
        LossSpec s = *this;
        s.penalty = p;
        return s;
    }

    void validate() const {
        const double lam = lambda();
        if (!(lam > 0.0) || !std::isfinite(lam)) throw DomainError("lambda: must be a finite positive number");
        if (penalty && (!(penalty->alpha >= 0.0) || !std::isfinite(penalty->alpha)))
            throw DomainError("penalty.alpha: must be a finite nonnegative number");
        if (const auto* q = std::get_if<QpoLoss>(&kind)) {
            if (!q->psi.value || !q->psi.slope) throw DomainError("psi: plugin is incomplete");
            if (!q->mu.value_at_log || !q->mu.slope_at_log) throw DomainError("mu: plugin is incomplete");
        }
    }

    // Short name used in reports.
    std::string name() const {
        struct Namer {
            std::string operator()(const DpoLoss&) const { return "dpo"; }
            std::string operator()(const IpoLoss&) const { return "ipo"; }
            std::string operator()(const FdpoLoss& f) const {
                return f.divergence == Divergence::ReverseKL ? "fdpo_rkl" : "fdpo_js";
            }
            std::string operator()(const QpoLoss& q) const { return "qpo_" + q.psi.name + "_" + q.mu.name; }
            std::string operator()(const TypoLoss&) const { return "typo"; }
            std::string operator()(const RlhfLoss& r) const {
                switch (r.reward) {
                    case RewardSource::BtOptimal: return "rlhf_bt";
                    case RewardSource::IpoReward: return "rlhf_ipo";
                    case RewardSource::Table: return "rlhf_table";
                }
                return "rlhf";
            }
        };
        return std::visit(Namer{}, kind);
    }
};

// ---------------------------------------------------------------------------
// Evaluation engine. Every loss is a function of the per-prompt log-probs
// lp = log_softmax(theta); it accumulates dL/dlp, which is then pushed through
// the softmax Jacobian: dL/dtheta_k = G_k - pi_k * sum_y G_y.

namespace detail {

inline Table log_probs(const TabularPolicy& policy) {
    Table out;
    out.reserve(policy.logits.size());
    for (const auto& row : policy.logits) out.push_back(log_softmax(row));
    return out;
}

inline Table log_table(const Table& t) {
    Table out = t;
    for (auto& row : out)
        for (double& v : row) v = std::log(v);
    return out;
}

// f(lp_w, lp_l, lref_w, lref_l) -> {value, dvalue/dlp_w, dvalue/dlp_l}.
// Returns the weight-normalized sum; adds normalized derivatives into grad.
template <typename PairFn>
double pairwise(const Table& lp, const Table& lref, const PreferenceData& data, PairFn&& f, Table* grad) {
    const double total = data.total_weight();
    if (!(total > 0.0)) throw DomainError("preference data has zero total weight");
    double sum = 0.0;
    for (const auto& t : data.tuples) {
        if (t.weight == 0.0) continue;
        const auto [v, gw, gl] = f(lp[t.prompt][t.winner], lp[t.prompt][t.loser], lref[t.prompt][t.winner],
                                   lref[t.prompt][t.loser]);
        const double w = t.weight / total;
        sum += w * v;
        if (grad) {
            (*grad)[t.prompt][t.winner] += w * gw;
            (*grad)[t.prompt][t.loser] += w * gl;
        }
    }
    return sum;
}

inline void check_tuples(const PreferenceData& data, const DiscreteWorld& world) {
    for (const auto& t : data.tuples) {
        world.check_response(t.prompt, t.winner);
        world.check_response(t.prompt, t.loser);
    }
}

struct PairTerms {
    double value;
    double d_winner;
    double d_loser;
};

inline PairTerms dpo_pair(double lw, double ll, double rw, double rl, double lam) {
    const double delta = (lw - rw) - (ll - rl);
    const double s = sigmoid(-lam * delta);
    return {softplus(-lam * delta), -lam * s, lam * s};
}

inline PairTerms ipo_pair(double lw, double ll, double rw, double rl, double lam) {
    const double r = (lw - rw) - (ll - rl) - 0.5 / lam;
    return {r * r, 2.0 * r, -2.0 * r};
}

inline PairTerms qpo_pair(double lw, double ll, double rw, double rl, const ShapeFn& psi, const LinkFn& mu,
                          double lam) {
    const double sw = lw - rw;
    const double sl = ll - rl;
    const double t = mu.value_at_log(sw) - mu.value_at_log(sl);
    const double g = psi.slope(t, lam);
    return {psi.value(t, lam), g * mu.slope_at_log(sw), -g * mu.slope_at_log(sl)};
}

// log(1 + pi_l / pi_w)
inline PairTerms typo_pair(double lw, double ll) {
    const double s = sigmoid(ll - lw);
    return {softplus(ll - lw), -s, s};
}

// Turns dL/dlog-pi into dL/dtheta in place.
inline void through_softmax(Table& g, const Table& lp) {
    for (std::size_t x = 0; x < g.size(); ++x) {
        double s = 0.0;
        for (double v : g[x]) s += v;
        for (std::size_t k = 0; k < g[x].size(); ++k) g[x][k] -= std::exp(lp[x][k]) * s;
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Individual objectives. Pairwise losses are weighted means over the tuples.

inline double dpo_loss(const TabularPolicy& policy, const DiscreteWorld& world, const PreferenceData& data,
                       double lambda) {
    check_policy_shape(policy, world);
    detail::check_tuples(data, world);
    const Table lref = detail::log_table(world.pi_ref);
    return detail::pairwise(
        detail::log_probs(policy), lref, data,
        [lambda](double lw, double ll, double rw, double rl) {
            const auto p = detail::dpo_pair(lw, ll, rw, rl, lambda);
            return std::tuple{p.value, p.d_winner, p.d_loser};
        },
        nullptr);
}

inline double ipo_loss(const TabularPolicy& policy, const DiscreteWorld& world, const PreferenceData& data,
                       double lambda) {
    check_policy_shape(policy, world);
    detail::check_tuples(data, world);
    const Table lref = detail::log_table(world.pi_ref);
    return detail::pairwise(
        detail::log_probs(policy), lref, data,
        [lambda](double lw, double ll, double rw, double rl) {
            const auto p = detail::ipo_pair(lw, ll, rw, rl, lambda);
            return std::tuple{p.value, p.d_winner, p.d_loser};
        },
        nullptr);
}

inline double qpo_loss(const TabularPolicy& policy, const DiscreteWorld& world, const PreferenceData& data,
                       const ShapeFn& psi, const LinkFn& mu, double lambda) {
    check_policy_shape(policy, world);
    detail::check_tuples(data, world);
    const Table lref = detail::log_table(world.pi_ref);
    return detail::pairwise(
        detail::log_probs(policy), lref, data,
        [&](double lw, double ll, double rw, double rl) {
            const auto p = detail::qpo_pair(lw, ll, rw, rl, psi, mu, lambda);
            return std::tuple{p.value, p.d_winner, p.d_loser};
        },
        nullptr);
}

// QPO with psi = -log sigma(lambda .) and mu = f'.
inline double fdpo_loss(const TabularPolicy& policy, const DiscreteWorld& world, const PreferenceData& data,
                        Divergence divergence, double lambda) {
    return qpo_loss(policy, world, data, shapes::logistic(), divergence_link(divergence), lambda);
}

struct TypoValue {
    double total;
    double supervised;
    double unsupervised;
};

// supervised: E_tuples log(1 + pi(y_l)/pi(y_w))
// unsupervised: sum_x p(x) sum_y pi_ref(y|x) (-log pi(y|x)), the cross-entropy
// form of KL(pi_ref || pi_theta) without its entropy constant.
inline TypoValue typo_loss(const TabularPolicy& policy, const DiscreteWorld& world, const PreferenceData& data,
                           double lambda) {
    check_policy_shape(policy, world);
    detail::check_tuples(data, world);
    const Table lp = detail::log_probs(policy);
    const double sup = detail::pairwise(
        lp, lp, data,
        [](double lw, double ll, double, double) {
            const auto p = detail::typo_pair(lw, ll);
            return std::tuple{p.value, p.d_winner, p.d_loser};
        },
        nullptr);
    double unsup = 0.0;
    for (std::size_t x = 0; x < world.num_prompts(); ++x)
        for (std::size_t y = 0; y < lp[x].size(); ++y) unsup -= world.prompt_mass[x] * world.pi_ref[x][y] * lp[x][y];
    return {sup + lambda * unsup, sup, unsup};
}

inline double penalty_term(const TabularPolicy& policy, const DiscreteWorld& world, double alpha,
                           PenaltyTarget target) {
    check_policy_shape(policy, world);
    if (!(alpha >= 0.0)) throw DomainError("penalty alpha must be nonnegative");
    double s = 0.0;
    for (std::size_t x = 0; x < world.num_prompts(); ++x) {
        const Distribution v = target == PenaltyTarget::Probabilities ? policy.probs(x) : policy.logits[x];
        double sq = 0.0;
        for (double e : v) sq += e * e;
        s += world.prompt_mass[x] * sq;
    }
    return alpha * s;
}

inline Table resolve_reward(const RlhfLoss& r, const DiscreteWorld& world) {
    switch (r.reward) {
        case RewardSource::BtOptimal: return bt_optimal_reward(world);
        case RewardSource::IpoReward: return ipo_reward(world);
        case RewardSource::Table: break;
    }
    if (r.table.size() != world.num_prompts()) throw DomainError("reward table does not match the world's prompts");
    for (std::size_t x = 0; x < world.num_prompts(); ++x) {
        if (r.table[x].size() != world.num_responses(x))
            throw DomainError("reward table row for prompt '" + world.prompt_names[x] + "' has the wrong length");
        for (double v : r.table[x])
            if (!std::isfinite(v)) throw DomainError("reward table entries must be finite");
    }
    return r.table;
}

// sum_x p(x) [ -E_{pi_theta} r + lambda KL(pi_theta || pi_ref) ] (+ penalty),
// evaluated exactly over the finite response sets.
inline double rlhf_loss(const TabularPolicy& policy, const DiscreteWorld& world, const Table& reward, double lambda,
                        const std::optional<Penalty>& penalty = std::nullopt) {
    check_policy_shape(policy, world);
    double s = 0.0;
    for (std::size_t x = 0; x < world.num_prompts(); ++x) {
        const Distribution lp = policy.log_probs(x);
        double px = 0.0;
        for (std::size_t y = 0; y < lp.size(); ++y) {
            if (!std::isfinite(reward.at(x).at(y))) throw DomainError("reward entries must be finite");
            const double p = std::exp(lp[y]);
            px += p * (-reward[x][y] + lambda * (lp[y] - std::log(world.pi_ref[x][y])));
        }
        s += world.prompt_mass[x] * px;
    }
    if (penalty) s += penalty_term(policy, world, penalty->alpha, penalty->target);
    return s;
}

// pi_r(y|x) = pi_ref(y|x) exp(r(y,x)/lambda) / Z(x).
inline Table rlhf_closed_form(const DiscreteWorld& world, const Table& reward, double lambda) {
    if (!(lambda > 0.0)) throw DomainError("lambda must be positive");
    Table out(world.num_prompts());
    for (std::size_t x = 0; x < world.num_prompts(); ++x) {
        std::vector<double> logits(world.num_responses(x));
        for (std::size_t y = 0; y < logits.size(); ++y) {
            if (!std::isfinite(reward.at(x).at(y))) throw DomainError("reward entries must be finite");
            logits[y] = std::log(world.pi_ref[x][y]) + reward[x][y] / lambda;
        }
        out[x] = softmax(logits);
    }
    return out;
}

// lambda log(pi(y|x) / pi_ref(y|x)); the lambda log Z(x) term is a per-prompt
// constant and is dropped.
inline Table implicit_reward(const Table& policy_probs, const DiscreteWorld& world, double lambda) {
    if (!(lambda > 0.0)) throw DomainError("lambda must be positive");
    if (policy_probs.size() != world.num_prompts()) throw DomainError("policy does not match the world's prompts");
    Table out = policy_probs;
    for (std::size_t x = 0; x < out.size(); ++x)
        for (std::size_t y = 0; y < out[x].size(); ++y)
            out[x][y] = lambda * std::log(policy_probs[x][y] / world.pi_ref[x][y]);
    return out;
}

inline Table implicit_reward(const TabularPolicy& policy, const DiscreteWorld& world, double lambda) {
    check_policy_shape(policy, world);
    if (!(lambda > 0.0)) throw DomainError("lambda must be positive");
    Table out = detail::log_probs(policy);
    for (std::size_t x = 0; x < out.size(); ++x)
        for (std::size_t y = 0; y < out[x].size(); ++y)
            out[x][y] = lambda * (out[x][y] - std::log(world.pi_ref[x][y]));
    return out;
}

// ---------------------------------------------------------------------------
// Spec-driven evaluation with exact logit gradients.

struct LossEvaluation {
    double value = 0.0;
    Table gradient;  // dL/dtheta, same shape as the policy logits
};

inline LossEvaluation evaluate(const LossSpec& spec, const TabularPolicy& policy, const DiscreteWorld& world,
                               const PreferenceData& data) {
    spec.validate();
    check_policy_shape(policy, world);
    const bool needs_data = !std::holds_alternative<RlhfLoss>(spec.kind);
    if (needs_data) detail::check_tuples(data, world);

    const Table lp = detail::log_probs(policy);
    const Table lref = detail::log_table(world.pi_ref);
    Table g = zeros_like(policy.logits);
    double value = 0.0;

    auto as_tuple = [](const detail::PairTerms& p) { return std::tuple{p.value, p.d_winner, p.d_loser}; };

    std::visit(
        [&](const auto& k) {
            using K = std::decay_t<decltype(k)>;
            const double lam = k.lambda;
            if constexpr (std::is_same_v<K, DpoLoss>) {
                value = detail::pairwise(
                    lp, lref, data,
                    [&](double a, double b, double c, double d) { return as_tuple(detail::dpo_pair(a, b, c, d, lam)); },
                    &g);
            } else if constexpr (std::is_same_v<K, IpoLoss>) {
                value = detail::pairwise(
                    lp, lref, data,
                    [&](double a, double b, double c, double d) { return as_tuple(detail::ipo_pair(a, b, c, d, lam)); },
                    &g);
            } else if constexpr (std::is_same_v<K, FdpoLoss> || std::is_same_v<K, QpoLoss>) {
                ShapeFn psi;
                LinkFn mu;
                if constexpr (std::is_same_v<K, FdpoLoss>) {
                    psi = shapes::logistic();
                    mu = divergence_link(k.divergence);
                } else {
                    psi = k.psi;
                    mu = k.mu;
                }
                value = detail::pairwise(
                    lp, lref, data,
                    [&](double a, double b, double c, double d) {
                        return as_tuple(detail::qpo_pair(a, b, c, d, psi, mu, lam));
                    },
                    &g);
            } else if constexpr (std::is_same_v<K, TypoLoss>) {
                value = detail::pairwise(
                    lp, lp, data,
                    [&](double a, double b, double, double) { return as_tuple(detail::typo_pair(a, b)); }, &g);
                for (std::size_t x = 0; x < world.num_prompts(); ++x)
                    for (std::size_t y = 0; y < lp[x].size(); ++y) {
                        const double c = world.prompt_mass[x] * world.pi_ref[x][y];
                        value -= lam * c * lp[x][y];
                        g[x][y] -= lam * c;
                    }
            } else if constexpr (std::is_same_v<K, RlhfLoss>) {
                const Table r = resolve_reward(k, world);
                for (std::size_t x = 0; x < world.num_prompts(); ++x)
                    for (std::size_t y = 0; y < lp[x].size(); ++y) {
                        const double p = std::exp(lp[x][y]);
                        const double a = -r[x][y] + lam * (lp[x][y] - lref[x][y]);
                        value += world.prompt_mass[x] * p * a;
                        g[x][y] += world.prompt_mass[x] * p * (a + lam);
                    }
            }
        },
        spec.kind);

    if (spec.penalty && spec.penalty->alpha > 0.0) {
        const double alpha = spec.penalty->alpha;
        if (spec.penalty->target == PenaltyTarget::Probabilities) {
            for (std::size_t x = 0; x < world.num_prompts(); ++x)
                for (std::size_t y = 0; y < lp[x].size(); ++y) {
                    const double p = std::exp(lp[x][y]);
                    value += alpha * world.prompt_mass[x] * p * p;
                    g[x][y] += 2.0 * alpha * world.prompt_mass[x] * p * p;
                }
        }
    }

    detail::through_softmax(g, lp);

    if (spec.penalty && spec.penalty->alpha > 0.0 && spec.penalty->target == PenaltyTarget::Logits) {
        const double alpha = spec.penalty->alpha;
        for (std::size_t x = 0; x < world.num_prompts(); ++x)
            for (std::size_t y = 0; y < lp[x].size(); ++y) {
                const double th = policy.logits[x][y];
                value += alpha * world.prompt_mass[x] * th * th;
                g[x][y] += 2.0 * alpha * world.prompt_mass[x] * th;
            }
    }
    return {value, std::move(g)};
}

inline double loss_value(const LossSpec& spec, const TabularPolicy& policy, const DiscreteWorld& world,
                         const PreferenceData& data) {
    return evaluate(spec, policy, world, data).value;
}

inline Table loss_gradient(const LossSpec& spec, const TabularPolicy& policy, const DiscreteWorld& world,
                           const PreferenceData& data) {
    return evaluate(spec, policy, world, data).gradient;
}

}  // namespace prefopt
