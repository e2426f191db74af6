#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace prefopt {

using Distribution = std::vector<double>;
// One row per prompt. Used for policies, rewards and logit gradients alike.
using Table = std::vector<std::vector<double>>;

inline double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

// log(1 + exp(t)) without overflow.
inline double softplus(double t) {
    if (t > 0.0) return t + std::log1p(std::exp(-t));
    return std::log1p(std::exp(t));
}

inline double log_sigmoid(double t) { return -softplus(-t); }

inline double log_sum_exp(std::span<const double> v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

inline Distribution softmax(std::span<const double> logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    Distribution out(logits.size());
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        s += out[i];
    }
    for (double& p : out) p /= s;
    return out;
}

inline Distribution log_softmax(std::span<const double> logits) {
    const double lse = log_sum_exp(logits);
    Distribution out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

inline double table_norm(const Table& t) {
    double s = 0.0;
    for (const auto& row : t)
        for (double v : row) s += v * v;
    return std::sqrt(s);
}

inline Table zeros_like(const Table& t) {
    Table out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) out[i].assign(t[i].size(), 0.0);
    return out;
}

// Round-trip text form of a double; every report and CSV uses it.
inline std::string format_exact(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string format_short(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

// Seedable generator with platform-independent draws: std::mt19937_64 is fully
// specified by the standard, and the conversions below avoid the
// implementation-defined std:: distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n) by rejection, no modulo bias.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return r % n;
    }

    // Index drawn from a discrete distribution by inverse CDF.
    std::size_t categorical(std::span<const double> p) {
        const double u = uniform();
        double c = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            c += p[i];
            if (u < c) return i;
        }
        return p.size() - 1;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace prefopt
