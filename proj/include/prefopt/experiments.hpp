#pragma once

// Grid studies over the tabular worlds. Each grid cell trains independently;
// cells may run on a bounded thread pool and the report is merged by key, so
// the output never depends on scheduling.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "prefopt/error.hpp"
#include "prefopt/losses.hpp"
#include "prefopt/numeric.hpp"
#include "prefopt/optim.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/world.hpp"
#include "prefopt/worlds.hpp"

namespace prefopt {

enum class ExperimentKind { Interpolation, Preservation, Constraint, Degenerate };

inline std::string experiment_name(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::Interpolation: return "interpolation";
        case ExperimentKind::Preservation: return "preservation";
        case ExperimentKind::Constraint: return "constraint";
        case ExperimentKind::Degenerate: return "degenerate";
    }
    return "?";
}

// 13 points log-spaced in [1e-5, 1e3].
inline std::vector<double> default_lambda_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 12; ++i) g.push_back(std::pow(10.0, -5.0 + 8.0 * i / 12.0));
    g.front() = 1e-5;
    g.back() = 1e3;
    return g;
}

inline std::vector<double> default_alpha_grid() { return {0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0}; }

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::Interpolation;
    DiscreteWorld world;
    std::vector<LossSpec> losses;
    std::vector<double> lambda_grid;
    std::vector<double> alpha_grid{0.0};          // constraint only
    PenaltyTarget penalty_target = PenaltyTarget::Probabilities;
    OptimConfig optimizer;                        // used by losses without a preset
    std::map<std::string, OptimConfig> presets;   // keyed by LossSpec::name()
    std::vector<PolicyMetric> metrics{PolicyMetric::TotalVariation};
    std::vector<Table> references;                // degenerate: alternative pi_ref tables
    std::vector<PairLabel> labels;                // degenerate
    std::uint64_t seed = 0;
    bool paper_batches = false;                   // sampled data + minibatches instead of population
    std::size_t sample_count = 200;
    std::size_t batch_size = 20;
    std::size_t jobs = 1;
    bool trajectories = true;

    void validate() const {
        world.validate();
        if (losses.empty()) throw ConfigError("losses: non-empty list required");
        if (lambda_grid.empty()) throw ConfigError("lambda_grid: non-empty list required");
        for (double l : lambda_grid)
            if (!(l > 0.0) || !std::isfinite(l)) throw ConfigError("lambda_grid: entries must be finite and positive");
        if (alpha_grid.empty()) throw ConfigError("alpha_grid: non-empty list required");
        for (double a : alpha_grid)
            if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError("alpha_grid: entries must be finite and >= 0");
        if (metrics.empty()) throw ConfigError("metrics: non-empty list required");
        if (jobs == 0) throw ConfigError("jobs: must be >= 1");
        if (paper_batches && (sample_count == 0 || batch_size == 0))
            throw ConfigError("paper_batches: sample_count and batch_size must be positive");
        for (const auto& [name, preset] : presets) {
            if (std::none_of(losses.begin(), losses.end(), [&](const LossSpec& s) { return s.name() == name; }))
                throw ConfigError("presets." + name + ": no such loss in losses");
            try {
                preset.validate();
            } catch (const DomainError& e) {
                throw ConfigError("presets." + name + "." + e.what());
            }
        }
        try {
            optimizer.validate();
        } catch (const DomainError& e) {
            throw ConfigError(std::string("optimizer.") + e.what());
        }
        if (kind == ExperimentKind::Constraint) {
            const auto n = std::count_if(losses.begin(), losses.end(),
                                         [](const LossSpec& s) { return std::holds_alternative<RlhfLoss>(s.kind); });
            if (n != 1) throw ConfigError("losses: constraint needs exactly one rlhf loss to compare against");
            if (losses.size() < 2) throw ConfigError("losses: constraint needs at least one preference loss");
        }
        if (kind == ExperimentKind::Degenerate) {
            if (references.size() < 2) throw ConfigError("references: at least two reference policies required");
            for (std::size_t i = 0; i < references.size(); ++i) {
                DiscreteWorld w = world;
                w.pi_ref = references[i];
                try {
                    w.validate();
                    degenerate_dataset(w, labels);
                } catch (const DomainError& e) {
                    throw ConfigError("references[" + std::to_string(i) + "]: " + e.what());
                }
            }
            for (const auto& s : losses)
                if (std::holds_alternative<RlhfLoss>(s.kind))
                    throw ConfigError("losses: rlhf does not train on preference labels");
        }
    }
};

struct ReportRow {
    std::string experiment;
    std::string loss;
    double lambda = 0.0;
    double alpha = 0.0;
    std::string partition;
    std::string metric;
    std::size_t epoch = 0;
    double value = 0.0;
    std::uint64_t seed = 0;
};

struct ExperimentReport {
    std::string experiment;
    std::vector<ReportRow> rows;

    // Rows matching every given field; empty strings / nullopt match anything.
    std::vector<ReportRow> select(const std::string& loss, const std::string& partition, const std::string& metric,
                                  std::optional<double> lambda = std::nullopt,
                                  std::optional<double> alpha = std::nullopt) const {
        std::vector<ReportRow> out;
        for (const auto& r : rows) {
            if (!loss.empty() && r.loss != loss) continue;
            if (!partition.empty() && r.partition != partition) continue;
            if (!metric.empty() && r.metric != metric) continue;
            if (lambda && r.lambda != *lambda) continue;
            if (alpha && r.alpha != *alpha) continue;
            out.push_back(r);
        }
        return out;
    }

    // The single row for a final metric; throws if absent or ambiguous.
    double value(const std::string& loss, const std::string& partition, const std::string& metric, double lambda,
                 double alpha = 0.0) const {
        const auto rs = select(loss, partition, metric, lambda, alpha);
        if (rs.size() != 1)
            throw DomainError("report has " + std::to_string(rs.size()) + " rows for " + loss + "/" + partition + "/" +
                              metric + " at lambda " + format_short(lambda));
        return rs.front().value;
    }
};

namespace detail {

inline bool row_less(const ReportRow& a, const ReportRow& b) {
    return std::tie(a.experiment, a.loss, a.lambda, a.alpha, a.epoch, a.partition, a.metric) <
           std::tie(b.experiment, b.loss, b.lambda, b.alpha, b.epoch, b.partition, b.metric);
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. If cells throw, the
// exception of the lowest index is rethrown, whatever finished first.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::min(std::max<std::size_t>(jobs, 1), std::max<std::size_t>(n, 1));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline ExperimentReport assemble(const std::string& name, std::vector<std::vector<ReportRow>> cells) {
    ExperimentReport report{name, {}};
    for (auto& c : cells)
        for (auto& r : c) {
            if (!std::isfinite(r.value))
                throw DomainError(name + ": non-finite value for " + r.loss + "/" + r.partition + "/" + r.metric);
            report.rows.push_back(std::move(r));
        }
    std::stable_sort(report.rows.begin(), report.rows.end(), row_less);
    return report;
}

inline OptimConfig optimizer_for(const ExperimentConfig& cfg, const LossSpec& spec) {
    const auto it = cfg.presets.find(spec.name());
    OptimConfig o = it == cfg.presets.end() ? cfg.optimizer : it->second;
    if (cfg.paper_batches) o.batch = Minibatch{cfg.batch_size, cfg.seed};
    else if (auto* mb = std::get_if<Minibatch>(&o.batch)) mb->seed += cfg.seed;  // preset seed is an offset
    return o;
}

inline PreferenceData data_for(const ExperimentConfig& cfg, const DiscreteWorld& world) {
    if (cfg.paper_batches) return build_preference_data(world, Sampled{cfg.seed, cfg.sample_count});
    return build_preference_data(world, Population{});
}

inline std::string cell_context(const std::string& experiment, const std::string& loss, double lambda,
                                double alpha) {
    return experiment + "[loss=" + loss + " lambda=" + format_short(lambda) + " alpha=" + format_short(alpha) + "]";
}

inline TrainResult train_in_cell(const std::string& context, const LossSpec& spec, const DiscreteWorld& world,
                                 const PreferenceData& data, const OptimConfig& optim) {
    try {
        return train(spec, world, data, initial_policy(world, optim.init), optim);
    } catch (const TrainingAbort& e) {
        throw TrainingAbort(context, e);
    }
}

// Row factory for one cell.
struct RowSink {
    std::string experiment;
    std::string loss;
    double lambda;
    double alpha;
    std::uint64_t seed;
    std::vector<ReportRow>* rows;

    void add(const std::string& partition, const std::string& metric, std::size_t epoch, double value) const {
        rows->push_back({experiment, loss, lambda, alpha, partition, metric, epoch, value, seed});
    }
};

inline void trajectory_rows(const RowSink& sink, const TrainResult& r, const DiscreteWorld& world,
                            const std::string& partition_prefix = "") {
    for (const auto& p : r.trajectory) {
        sink.add(partition_prefix + "all", "loss", p.epoch, p.loss);
        for (std::size_t x = 0; x < world.num_prompts(); ++x)
            for (std::size_t y = 0; y < world.num_responses(x); ++y)
                sink.add(partition_prefix + world.prompt_names[x], "prob:" + world.response_names[x][y], p.epoch,
                         p.probs[x][y]);
    }
}

// Final distances of `probs` to pi*, pi_ref and (when defined) the mode policy,
// over all prompts and, for multi-prompt worlds, per prompt.
inline void distance_rows(const RowSink& sink, const Table& probs, const DiscreteWorld& world,
                          const std::vector<PolicyMetric>& metrics, std::size_t epoch,
                          const std::string& partition_prefix = "") {
    std::optional<Table> mode;
    try {
        mode = mode_policy(world);
    } catch (const TieError&) {
    }
    std::vector<std::pair<std::string, std::optional<std::vector<std::size_t>>>> parts{{"all", std::nullopt}};
    if (world.num_prompts() > 1)
        for (std::size_t x = 0; x < world.num_prompts(); ++x)
            parts.push_back({world.prompt_names[x], std::vector<std::size_t>{x}});
    for (const auto& m : metrics) {
        const std::string name(metric_name(m));
        for (const auto& [part, subset] : parts) {
            const std::string p = partition_prefix + part;
            sink.add(p, name + "_to_star", epoch, policy_distance(probs, world.pi_star, world, m, subset));
            sink.add(p, name + "_to_ref", epoch, policy_distance(probs, world.pi_ref, world, m, subset));
            if (mode && m != PolicyMetric::ForwardKL && m != PolicyMetric::BackwardKL)
                sink.add(p, name + "_to_mode", epoch, policy_distance(probs, *mode, world, m, subset));
        }
    }
}

inline std::size_t final_epoch(const TrainResult& r) { return r.trajectory.back().epoch; }

// Interpolation and preservation share this cell: one loss at one lambda.
inline ExperimentReport run_loss_lambda_grid(const ExperimentConfig& cfg, const std::string& name) {
    cfg.validate();
    const PreferenceData data = data_for(cfg, cfg.world);
    std::vector<std::pair<LossSpec, double>> grid;
    for (const auto& spec : cfg.losses)
        for (double lam : cfg.lambda_grid) grid.emplace_back(spec, lam);

    std::vector<std::vector<ReportRow>> cells(grid.size());
    parallel_for(grid.size(), cfg.jobs, [&](std::size_t i) {
        const LossSpec spec = grid[i].first.with_lambda(grid[i].second);
        const RowSink sink{name, spec.name(), grid[i].second, 0.0, cfg.seed, &cells[i]};
        const TrainResult r = train_in_cell(cell_context(name, spec.name(), grid[i].second, 0.0), spec, cfg.world,
                                            data, optimizer_for(cfg, spec));
        if (cfg.trajectories) trajectory_rows(sink, r, cfg.world);
        else sink.add("all", "loss", final_epoch(r), r.trajectory.back().loss);
        distance_rows(sink, r.policy.all_probs(), cfg.world, cfg.metrics, final_epoch(r));
        sink.add("all", "grad_norm", final_epoch(r), r.final_gradient_norm);
    });
    return assemble(name, std::move(cells));
}

}  // namespace detail

// For every loss and lambda: trajectories of the per-response probabilities
// and final distances to pi*, the mode policy and pi_ref.
inline ExperimentReport run_interpolation(const ExperimentConfig& cfg) {
    return detail::run_loss_lambda_grid(cfg, "interpolation");
}

// As interpolation, with per-prompt partitions, plus the reference policy's
// own distances as loss "reference" (lambda 0, epoch 0).
inline ExperimentReport run_preservation(const ExperimentConfig& cfg) {
    ExperimentReport report = detail::run_loss_lambda_grid(cfg, "preservation");
    std::vector<ReportRow> base;
    const detail::RowSink sink{"preservation", "reference", 0.0, 0.0, cfg.seed, &base};
    detail::distance_rows(sink, cfg.world.pi_ref, cfg.world, cfg.metrics, 0);
    report.rows.insert(report.rows.end(), base.begin(), base.end());
    std::stable_sort(report.rows.begin(), report.rows.end(), detail::row_less);
    return report;
}

// For every lambda and alpha, trains the RLHF loss and each preference loss
// with the same penalty from the same initialization, and reports the
// distance between the resulting policies ("<metric>_to_rlhf").
inline ExperimentReport run_constraint(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::string name = "constraint";
    const PreferenceData data = detail::data_for(cfg, cfg.world);
    std::vector<std::pair<double, double>> grid;
    for (double lam : cfg.lambda_grid)
        for (double a : cfg.alpha_grid) grid.emplace_back(lam, a);

    std::vector<std::vector<ReportRow>> cells(grid.size());
    detail::parallel_for(grid.size(), cfg.jobs, [&](std::size_t i) {
        const auto [lam, alpha] = grid[i];
        std::optional<TrainResult> rlhf;
        std::vector<std::pair<LossSpec, TrainResult>> others;
        for (const auto& base : cfg.losses) {
            const LossSpec spec = base.with_lambda(lam).with_penalty(Penalty{alpha, cfg.penalty_target});
            TrainResult r = detail::train_in_cell(detail::cell_context(name, spec.name(), lam, alpha), spec,
                                                  cfg.world, data, detail::optimizer_for(cfg, spec));
            const detail::RowSink sink{name, spec.name(), lam, alpha, cfg.seed, &cells[i]};
            if (cfg.trajectories) {
                for (const auto& p : r.trajectory) sink.add("all", "loss", p.epoch, p.loss);
            }
            detail::distance_rows(sink, r.policy.all_probs(), cfg.world, cfg.metrics, detail::final_epoch(r));
            if (std::holds_alternative<RlhfLoss>(spec.kind)) rlhf = std::move(r);
            else others.emplace_back(spec, std::move(r));
        }
        const Table target = rlhf->policy.all_probs();
        for (const auto& [spec, r] : others) {
            const detail::RowSink sink{name, spec.name(), lam, alpha, cfg.seed, &cells[i]};
            for (const auto& m : cfg.metrics)
                sink.add("all", std::string(metric_name(m)) + "_to_rlhf", detail::final_epoch(r),
                         policy_distance(r.policy.all_probs(), target, cfg.world, m));
        }
    });
    return detail::assemble(name, std::move(cells));
}

// Trains each loss on deterministic pair labels once per reference policy and
// reports how far apart the resulting policies are ("<metric>_between_refs",
// partition "refI~refJ"). Per-reference trajectories use partitions "refI/...".
inline ExperimentReport run_degenerate(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::string name = "degenerate";
    std::vector<std::pair<LossSpec, double>> grid;
    for (const auto& spec : cfg.losses)
        for (double lam : cfg.lambda_grid) grid.emplace_back(spec, lam);

    std::vector<std::vector<ReportRow>> cells(grid.size());
    detail::parallel_for(grid.size(), cfg.jobs, [&](std::size_t i) {
        const LossSpec spec = grid[i].first.with_lambda(grid[i].second);
        const double lam = grid[i].second;
        const detail::RowSink sink{name, spec.name(), lam, 0.0, cfg.seed, &cells[i]};
        std::vector<Table> finals;
        std::size_t epoch = 0;
        for (std::size_t k = 0; k < cfg.references.size(); ++k) {
            DiscreteWorld w = cfg.world;
            w.pi_ref = cfg.references[k];
            const PreferenceData data = degenerate_dataset(w, cfg.labels);
            const std::string ref = "ref" + std::to_string(k);
            const TrainResult r =
                detail::train_in_cell(detail::cell_context(name, spec.name(), lam, 0.0) + "[" + ref + "]", spec, w,
                                      data, detail::optimizer_for(cfg, spec));
            if (cfg.trajectories) detail::trajectory_rows(sink, r, w, ref + "/");
            else sink.add(ref + "/all", "loss", detail::final_epoch(r), r.trajectory.back().loss);
            detail::distance_rows(sink, r.policy.all_probs(), w, cfg.metrics, detail::final_epoch(r), ref + "/");
            finals.push_back(r.policy.all_probs());
            epoch = detail::final_epoch(r);
        }
        for (std::size_t a = 0; a < finals.size(); ++a)
            for (std::size_t b = a + 1; b < finals.size(); ++b)
                for (const auto& m : cfg.metrics)
                    sink.add("ref" + std::to_string(a) + "~ref" + std::to_string(b),
                             std::string(metric_name(m)) + "_between_refs", epoch,
                             policy_distance(finals[a], finals[b], cfg.world, m));
    });
    return detail::assemble(name, std::move(cells));
}

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    switch (cfg.kind) {
        case ExperimentKind::Interpolation: return run_interpolation(cfg);
        case ExperimentKind::Preservation: return run_preservation(cfg);
        case ExperimentKind::Constraint: return run_constraint(cfg);
        case ExperimentKind::Degenerate: return run_degenerate(cfg);
    }
    throw ConfigError("experiment: unknown kind");
}

// ---------------------------------------------------------------------------
// Shipped presets.

namespace presets {

// Adam budgets per loss. One epoch is 10 updates, matching a pass over 200
// sampled tuples in batches of 20.
inline OptimConfig adam(double lr, std::size_t epochs, std::size_t record_every = 10) {
    OptimConfig o;
    o.learning_rate = lr;
    o.epochs = epochs;
    o.record_every = record_every;
    o.steps_per_epoch = 10;
    return o;
}

inline std::vector<LossSpec> interpolation_losses() {
    return {{DpoLoss{1.0}, std::nullopt},
            {IpoLoss{1.0}, std::nullopt},
            {FdpoLoss{Divergence::JensenShannon, 1.0}, std::nullopt},
            {TypoLoss{1.0}, std::nullopt}};
}

inline std::map<std::string, OptimConfig> interpolation_presets() {
    return {{"dpo", adam(1e-3, 1000)},
            {"ipo", adam(1e-3, 1000)},
            {"fdpo_js", adam(1e-3, 3000, 30)},
            {"typo", adam(5e-4, 1000)}};
}

inline ExperimentConfig interpolation() {
    ExperimentConfig c;
    c.kind = ExperimentKind::Interpolation;
    c.world = worlds::interpolation();
    c.losses = interpolation_losses();
    c.lambda_grid = default_lambda_grid();
    c.optimizer = adam(1e-3, 1000);
    c.presets = interpolation_presets();
    c.metrics = {PolicyMetric::TotalVariation, PolicyMetric::ForwardKL, PolicyMetric::BackwardKL, PolicyMetric::L2};
    return c;
}

inline ExperimentConfig preservation() {
    ExperimentConfig c = interpolation();
    c.kind = ExperimentKind::Preservation;
    c.world = worlds::preservation();
    return c;
}

inline ExperimentConfig constraint() {
    ExperimentConfig c;
    c.kind = ExperimentKind::Constraint;
    c.world = worlds::interpolation();
    c.losses = {{RlhfLoss{RewardSource::BtOptimal, 0.1, {}}, std::nullopt}, {DpoLoss{0.1}, std::nullopt}};
    c.lambda_grid = {0.1};
    c.alpha_grid = default_alpha_grid();
    c.optimizer = adam(1e-2, 100, 1);
    c.metrics = {PolicyMetric::TotalVariation, PolicyMetric::ForwardKL, PolicyMetric::BackwardKL, PolicyMetric::L2};
    return c;
}

inline ExperimentConfig degenerate() {
    ExperimentConfig c;
    c.kind = ExperimentKind::Degenerate;
    c.world = worlds::interpolation();
    c.losses = {{DpoLoss{1.0}, std::nullopt},
                {FdpoLoss{Divergence::JensenShannon, 1.0}, std::nullopt},
                {TypoLoss{1.0}, std::nullopt}};
    c.lambda_grid = {1.0};
    c.optimizer = adam(1e-3, 1000);
    c.references = {{{0.4, 0.4, 0.2}}, {{0.2, 0.3, 0.5}}};
    c.labels = {{0, 0, 1}, {0, 1, 2}, {0, 0, 2}};
    c.metrics = {PolicyMetric::TotalVariation, PolicyMetric::L2};
    return c;
}

}  // namespace presets

}  // namespace prefopt
