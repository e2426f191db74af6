// prefopt: run the tabular preference-optimization studies from the shell.
//
// Exit codes: 0 ok, 1 a verify check failed, 2 bad configuration or input,
// 3 training aborted or I/O failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "prefopt/prefopt.hpp"

namespace fs = std::filesystem;
using namespace prefopt;

namespace {

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kConfigError = 2;
constexpr int kAbort = 3;

struct RunOptions {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string format = "csv";
    bool svg = false;
    bool paper_batches = false;
    std::size_t jobs = 1;
};

std::string default_out() {
    const char* env = std::getenv("PREFOPT_OUT");
    return env && *env ? env : "out";
}

ExperimentConfig preset_for(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::Interpolation: return presets::interpolation();
        case ExperimentKind::Preservation: return presets::preservation();
        case ExperimentKind::Constraint: return presets::constraint();
        case ExperimentKind::Degenerate: return presets::degenerate();
    }
    return presets::interpolation();
}

int run_study(ExperimentKind kind, const RunOptions& o) {
    ExperimentConfig c = o.config.empty() ? preset_for(kind) : load_config(o.config);
    if (c.kind != kind)
        throw ConfigError("experiment: config is for '" + experiment_name(c.kind) + "', subcommand runs '" +
                          experiment_name(kind) + "'");
    if (o.seed) c.seed = *o.seed;
    if (o.paper_batches) c.paper_batches = true;
    c.jobs = o.jobs;
    const ExperimentReport r = run_experiment(c);
    const auto files =
        write_report(r, o.out.empty() ? default_out() : o.out, o.format == "json" ? ReportFormat::Json : ReportFormat::Csv, o.svg);
    for (const auto& f : files) std::cerr << "wrote " << f.string() << '\n';
    return kOk;
}

int run_verify(std::size_t probes, std::uint64_t seed, const std::string& format, const std::string& out) {
    const auto reports = run_identity_suite(probes, seed);
    const std::string text = format == "json" ? identity_json(reports).dump(1) + "\n" : identity_csv(reports);
    std::cout << text;
    if (!out.empty()) write_atomic(fs::path(out) / (format == "json" ? "verify.json" : "verify.csv"), text);
    bool ok = true;
    for (const auto& r : reports) {
        if (!r.passed) std::cerr << "FAILED " << r.name << ": max error " << r.max_error << " >= " << r.threshold << '\n';
        ok = ok && r.passed;
    }
    return ok ? kOk : kVerifyFailed;
}

int run_eval(const std::string& config, const std::string& snapshot, const std::string& loss_name,
             std::optional<double> lambda) {
    const ExperimentConfig c = load_config(config);
    const LossSpec* spec = &c.losses.front();
    if (!loss_name.empty()) {
        spec = nullptr;
        for (const auto& s : c.losses)
            if (s.name() == loss_name) spec = &s;
        if (!spec) throw ConfigError("--loss: no loss named '" + loss_name + "' in " + config);
    }
    LossSpec s = lambda ? spec->with_lambda(*lambda) : *spec;
    const TabularPolicy policy = snapshot.empty() ? init_from_reference(c.world) : parse_snapshot(cfg::read_file(snapshot), c.world);
    const PreferenceData data = c.kind == ExperimentKind::Degenerate ? degenerate_dataset(c.world, c.labels)
                                                                     : detail::data_for(c, c.world);
    const LossEvaluation e = evaluate(s, policy, c.world, data);
    Json probs = Json::object();
    for (std::size_t x = 0; x < c.world.num_prompts(); ++x) probs[c.world.prompt_names[x]] = policy.probs(x);
    const Json j = {{"loss_name", s.name()},
                    {"lambda", s.lambda()},
                    {"loss", e.value},
                    {"gradient_norm", table_norm(e.gradient)},
                    {"probabilities", probs}};
    std::cout << j.dump(1) << '\n';
    return kOk;
}

void add_run_options(CLI::App* sub, RunOptions& o) {
    sub->add_option("-c,--config", o.config, "experiment config (JSON); shipped preset when omitted")
        ->check(CLI::ExistingFile);
    sub->add_option("-o,--out", o.out, "output directory (default: $PREFOPT_OUT or ./out)");
    sub->add_option("--seed", o.seed, "override the config seed");
    sub->add_option("--format", o.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    sub->add_flag("--svg", o.svg, "also write SVG line charts");
    sub->add_flag("--paper-batches", o.paper_batches, "sample 200 tuples and train on minibatches of 20");
    sub->add_option("-j,--jobs", o.jobs, "worker threads for grid cells")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Preference-optimization studies on small discrete worlds"};
    app.require_subcommand(1);

    RunOptions interp, pres, cons, degen;
    auto* s_interp = app.add_subcommand("interpolate", "lambda sweep on the single-prompt world");
    auto* s_pres = app.add_subcommand("preserve", "good/bad prompt preservation sweep");
    auto* s_cons = app.add_subcommand("constrain", "DPO vs RLHF under a norm penalty, alpha sweep");
    auto* s_degen = app.add_subcommand("degenerate", "deterministic labels under two reference policies");
    add_run_options(s_interp, interp);
    add_run_options(s_pres, pres);
    add_run_options(s_cons, cons);
    add_run_options(s_degen, degen);

    std::size_t probes = 100;
    std::uint64_t verify_seed = 1;
    std::string verify_format = "csv";
    std::string verify_out;
    auto* s_verify = app.add_subcommand("verify", "run the identity checks on the built-in worlds");
    s_verify->add_option("--probes", probes, "random probes per check")->check(CLI::PositiveNumber);
    s_verify->add_option("--seed", verify_seed, "probe seed");
    s_verify->add_option("--format", verify_format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    s_verify->add_option("-o,--out", verify_out, "also write verify.csv/json here");

    std::string eval_config, eval_snapshot, eval_loss;
    std::optional<double> eval_lambda;
    auto* s_eval = app.add_subcommand("eval-loss", "evaluate one loss at a policy snapshot");
    s_eval->add_option("-c,--config", eval_config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    s_eval->add_option("--snapshot", eval_snapshot, "policy snapshot {prompt: [logits]}; reference when omitted")
        ->check(CLI::ExistingFile);
    s_eval->add_option("--loss", eval_loss, "loss name from the config (default: first)");
    s_eval->add_option("--lambda", eval_lambda, "override lambda");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    try {
        if (*s_interp) return run_study(ExperimentKind::Interpolation, interp);
        if (*s_pres) return run_study(ExperimentKind::Preservation, pres);
        if (*s_cons) return run_study(ExperimentKind::Constraint, cons);
        if (*s_degen) return run_study(ExperimentKind::Degenerate, degen);
        if (*s_verify) return run_verify(probes, verify_seed, verify_format, verify_out);
        if (*s_eval) return run_eval(eval_config, eval_snapshot, eval_loss, eval_lambda);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const TrainingAbort& e) {
        std::cerr << "aborted: " << e.what() << '\n';
        return kAbort;
    } catch (const DomainError& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kAbort;
    }
    return kConfigError;
}
