#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "prefopt/error.hpp"
#include "prefopt/numeric.hpp"

namespace prefopt {

inline constexpr double kSimplexTolerance = 1e-12;

// A finite preference world: prompts x ~ p(x), a response list per prompt, the
// BT-optimal policy pi* and the reference policy pi_ref. Ids are dense indices;
// names only matter for file I/O.
struct DiscreteWorld {
    std::vector<std::string> prompt_names;
    std::vector<double> prompt_mass;
    std::vector<std::vector<std::string>> response_names;
    Table pi_star;
    Table pi_ref;

    std::size_t num_prompts() const { return prompt_mass.size(); }
    std::size_t num_responses(std::size_t x) const { return pi_star.at(x).size(); }

    std::size_t prompt_index(std::string_view name) const {
        for (std::size_t i = 0; i < prompt_names.size(); ++i)
            if (prompt_names[i] == name) return i;
        throw DomainError("unknown prompt id '" + std::string(name) + "'");
    }

    std::size_t response_index(std::size_t x, std::string_view name) const {
        const auto& names = response_names.at(x);
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        throw DomainError("unknown response id '" + std::string(name) + "' for prompt '" +
                          prompt_names.at(x) + "'");
    }

    void check_prompt(std::size_t x) const {
        if (x >= num_prompts())
            throw DomainError("prompt index " + std::to_string(x) + " out of range");
    }

    void check_response(std::size_t x, std::size_t y) const {
        check_prompt(x);
        if (y >= num_responses(x))
            throw DomainError("response index " + std::to_string(y) + " out of range for prompt '" +
                              prompt_names[x] + "'");
    }

    // Throws DomainError naming the offending field, e.g. "pi_star.x: ...".
    void validate() const;
};

namespace detail {

inline void validate_distribution(const std::vector<double>& p, const std::string& field,
                                  bool strictly_positive) {
    double s = 0.0;
    for (double v : p) {
        if (!std::isfinite(v) || v < 0.0)
            throw DomainError(field + ": entries must be finite and nonnegative");
        if (strictly_positive && v <= 0.0)
            throw DomainError(field + ": entries must be strictly positive");
        s += v;
    }
    if (std::abs(s - 1.0) > kSimplexTolerance)
        throw DomainError(field + ": probabilities must sum to 1 (got " + std::to_string(s) + ")");
}

}  // namespace detail

inline void DiscreteWorld::validate() const {
    const std::size_t n = prompt_mass.size();
    if (n == 0) throw DomainError("prompts: at least one prompt required");
    if (prompt_names.size() != n || response_names.size() != n || pi_star.size() != n ||
        pi_ref.size() != n)
        throw DomainError("prompts: field lengths disagree");
    detail::validate_distribution(prompt_mass, "prompts.mass", false);
    for (std::size_t x = 0; x < n; ++x) {
        const std::string& name = prompt_names[x];
        const std::size_t k = response_names[x].size();
        if (k < 2) throw DomainError("responses." + name + ": at least 2 responses required");
        if (pi_star[x].size() != k)
            throw DomainError("pi_star." + name + ": expected " + std::to_string(k) + " entries");
        if (pi_ref[x].size() != k)
            throw DomainError("pi_ref." + name + ": expected " + std::to_string(k) + " entries");
        detail::validate_distribution(pi_star[x], "pi_star." + name, true);
        detail::validate_distribution(pi_ref[x], "pi_ref." + name, true);
    }
}

// Convenience constructor with generated names x0.., y0...
inline DiscreteWorld make_world(std::vector<double> mass, Table pi_star, Table pi_ref) {
    DiscreteWorld w;
    w.prompt_mass = std::move(mass);
    w.pi_star = std::move(pi_star);
    w.pi_ref = std::move(pi_ref);
    for (std::size_t x = 0; x < w.prompt_mass.size(); ++x) {
        w.prompt_names.push_back("x" + std::to_string(x));
        std::vector<std::string> names;
        for (std::size_t y = 0; y < w.pi_star.at(x).size(); ++y) names.push_back("y" + std::to_string(y));
        w.response_names.push_back(std::move(names));
    }
    w.validate();
    return w;
}

// p*(y1 > y2 | x) = pi*(y1) / (pi*(y1) + pi*(y2)); exactly 1/2 for y1 == y2.
inline double bt_preference(const DiscreteWorld& world, std::size_t x, std::size_t y1, std::size_t y2) {
    world.check_response(x, y1);
    world.check_response(x, y2);
    if (y1 == y2) return 0.5;
    const double a = world.pi_star[x][y1];
    const double b = world.pi_star[x][y2];
    return a / (a + b);
}

// sigma(r(y1,x) - r(y2,x)).
inline double bt_from_reward(const Table& reward, std::size_t x, std::size_t y1, std::size_t y2) {
    if (x >= reward.size() || y1 >= reward[x].size() || y2 >= reward[x].size())
        throw DomainError("reward table index out of range");
    const double r1 = reward[x][y1];
    const double r2 = reward[x][y2];
    if (!std::isfinite(r1) || !std::isfinite(r2)) throw DomainError("reward entries must be finite");
    return sigmoid(r1 - r2);
}

// r* represented as log pi*; any other valid r* differs by a per-prompt constant.
inline Table bt_optimal_reward(const DiscreteWorld& world) {
    Table r = world.pi_star;
    for (auto& row : r)
        for (double& v : row) v = std::log(v);
    return r;
}

// pi^delta: all mass on argmax pi*(.|x).
inline Table mode_policy(const DiscreteWorld& world) {
    Table out(world.num_prompts());
    for (std::size_t x = 0; x < world.num_prompts(); ++x) {
        const auto& p = world.pi_star[x];
        std::size_t best = 0;
        for (std::size_t y = 1; y < p.size(); ++y)
            if (p[y] > p[best]) best = y;
        for (std::size_t y = 0; y < p.size(); ++y)
            if (y != best && p[y] == p[best])
                throw TieError("pi_star." + world.prompt_names[x] + " has tied maxima; mode is undefined");
        out[x].assign(p.size(), 0.0);
        out[x][best] = 1.0;
    }
    return out;
}

// r_IPO(y,x) = sum_{y'} pi_ref(y'|x) p*(y > y'|x), with the y' = y term at 1/2.
inline Table ipo_reward(const DiscreteWorld& world) {
    Table out(world.num_prompts());
    for (std::size_t x = 0; x < world.num_prompts(); ++x) {
        const std::size_t k = world.num_responses(x);
        out[x].assign(k, 0.0);
        for (std::size_t y = 0; y < k; ++y)
            for (std::size_t yp = 0; yp < k; ++yp)
                out[x][y] += world.pi_ref[x][yp] * bt_preference(world, x, y, yp);
    }
    return out;
}

struct PreferenceTuple {
    std::size_t prompt;
    std::size_t winner;
    std::size_t loser;
    double weight;

    friend bool operator==(const PreferenceTuple&, const PreferenceTuple&) = default;
};

// Exact expectation over the data-generating process.
struct Population {};
// Finite i.i.d. sample of `count` tuples.
struct Sampled {
    std::uint64_t seed;
    std::size_t count;
};
// Fixed winner per unordered pair (one label each), equal weights.
struct Labeled {};

using DataMode = std::variant<Population, Sampled, Labeled>;

struct PreferenceData {
    DataMode mode;
    std::vector<PreferenceTuple> tuples;

    double total_weight() const {
        double s = 0.0;
        for (const auto& t : tuples) s += t.weight;
        return s;
    }
};

// Tuples (x, y_w, y_l) distributed as in the standard preference-sampling
// model: x ~ p(x), y1 != y2 drawn from pi_ref, winner decided by p*.
//
// Population mode emits one tuple per ordered pair (y1, y2), y1 != y2, with
// weight 2 p(x) pi_ref(y1) pi_ref(y2) p*(y1 > y2): the probability that an
// i.i.d. draw of two distinct responses yields y1 as winner and y2 as loser.
// Weights therefore sum to sum_x p(x) (1 - sum_y pi_ref(y|x)^2).
inline PreferenceData build_preference_data(const DiscreteWorld& world, const DataMode& mode) {
    PreferenceData data{mode, {}};
    if (std::holds_alternative<Population>(mode)) {
        for (std::size_t x = 0; x < world.num_prompts(); ++x) {
            const auto& ref = world.pi_ref[x];
            for (std::size_t y1 = 0; y1 < ref.size(); ++y1)
                for (std::size_t y2 = 0; y2 < ref.size(); ++y2) {
                    if (y1 == y2) continue;
                    const double w =
                        2.0 * world.prompt_mass[x] * ref[y1] * ref[y2] * bt_preference(world, x, y1, y2);
                    data.tuples.push_back({x, y1, y2, w});
                }
        }
        return data;
    }
    if (const auto* s = std::get_if<Sampled>(&mode)) {
        if (s->count == 0) throw DomainError("sampled preference data requires count >= 1");
        Rng rng(s->seed);
        const double w = 1.0 / static_cast<double>(s->count);
        data.tuples.reserve(s->count);
        for (std::size_t i = 0; i < s->count; ++i) {
            const std::size_t x = rng.categorical(world.prompt_mass);
            const auto& ref = world.pi_ref[x];
            // Redraw the whole pair: redrawing only y2 would skew toward
            // pairs containing likely responses.
            std::size_t y1 = 0;
            std::size_t y2 = 0;
            do {
                y1 = rng.categorical(ref);
                y2 = rng.categorical(ref);
            } while (y1 == y2);
            const bool first_wins = rng.uniform() < bt_preference(world, x, y1, y2);
            data.tuples.push_back(first_wins ? PreferenceTuple{x, y1, y2, w} : PreferenceTuple{x, y2, y1, w});
        }
        return data;
    }
    throw DomainError("labeled data must be built with degenerate_dataset");
}

struct PairLabel {
    std::size_t prompt;
    std::size_t winner;
    std::size_t loser;
};

// Deterministic labels: every unordered response pair of every prompt appears
// exactly once with its fixed winner, so the empirical p* is 0 or 1.
inline PreferenceData degenerate_dataset(const DiscreteWorld& world, const std::vector<PairLabel>& labels) {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    std::map<std::size_t, std::size_t> per_prompt;
    for (const auto& l : labels) {
        world.check_response(l.prompt, l.winner);
        world.check_response(l.prompt, l.loser);
        if (l.winner == l.loser) throw DomainError("label pairs a response with itself");
        const auto key = std::minmax(l.winner, l.loser);
        const auto flat = std::make_pair(l.prompt, key.first * world.num_responses(l.prompt) + key.second);
        if (!seen.insert(flat).second)
            throw DomainError("pair (" + world.response_names[l.prompt][key.first] + ", " +
                              world.response_names[l.prompt][key.second] + ") of prompt '" +
                              world.prompt_names[l.prompt] + "' is labeled more than once");
        ++per_prompt[l.prompt];
    }
    for (std::size_t x = 0; x < world.num_prompts(); ++x) {
        const std::size_t k = world.num_responses(x);
        if (per_prompt[x] != k * (k - 1) / 2)
            throw DomainError("prompt '" + world.prompt_names[x] + "' is missing pair labels (" +
                              std::to_string(per_prompt[x]) + " of " + std::to_string(k * (k - 1) / 2) + ")");
    }
    PreferenceData data{Labeled{}, {}};
    const double w = 1.0 / static_cast<double>(labels.size());
    for (const auto& l : labels) data.tuples.push_back({l.prompt, l.winner, l.loser, w});
    return data;
}

}  // namespace prefopt
