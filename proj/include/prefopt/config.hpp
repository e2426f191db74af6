#pragma once

// JSON configuration files: worlds, loss specs, optimizer settings, whole
// experiment configs and policy snapshots. Every error names the field it is
// about, e.g. "losses[1].penalty.alpha: must be a number".

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefopt/error.hpp"
#include "prefopt/experiments.hpp"
#include "prefopt/losses.hpp"
#include "prefopt/optim.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/world.hpp"

namespace prefopt {

using Json = nlohmann::json;

namespace cfg {

[[noreturn]] inline void fail(const std::string& field, const std::string& msg) {
    throw ConfigError(field + ": " + msg);
}

inline std::string join(const std::string& parent, const std::string& key) {
    return parent.empty() ? key : parent + "." + key;
}

inline void require_object(const Json& j, const std::string& field) {
    if (!j.is_object()) fail(field, "must be an object");
}

// Rejects keys outside `allowed`, which catches typos such as "learning_rate".
inline void check_keys(const Json& j, const std::string& field, std::initializer_list<const char*> allowed) {
    require_object(j, field);
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) fail(join(field, key), "unknown field");
    }
}

inline double number(const Json& j, const std::string& field) {
    if (!j.is_number()) fail(field, "must be a number");
    return j.get<double>();
}

inline std::uint64_t unsigned_int(const Json& j, const std::string& field) {
    if (!j.is_number_integer() || (j.is_number_integer() && j.get<std::int64_t>() < 0 && !j.is_number_unsigned()))
        fail(field, "must be a nonnegative integer");
    return j.get<std::uint64_t>();
}

inline std::size_t positive_int(const Json& j, const std::string& field) {
    const std::uint64_t v = unsigned_int(j, field);
    if (v == 0) fail(field, "must be a positive integer");
    return static_cast<std::size_t>(v);
}

inline std::string string(const Json& j, const std::string& field) {
    if (!j.is_string()) fail(field, "must be a string");
    return j.get<std::string>();
}

inline bool boolean(const Json& j, const std::string& field) {
    if (!j.is_boolean()) fail(field, "must be true or false");
    return j.get<bool>();
}

inline std::vector<double> number_list(const Json& j, const std::string& field) {
    if (!j.is_array() || j.empty()) fail(field, "non-empty list required");
    std::vector<double> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], field + "[" + std::to_string(i) + "]"));
    return out;
}

// {prompt id: [values]} with one row per world prompt, each of the right length.
inline Table prompt_table(const Json& j, const std::string& field, const DiscreteWorld& world) {
    require_object(j, field);
    for (const auto& [key, _] : j.items()) {
        if (std::find(world.prompt_names.begin(), world.prompt_names.end(), key) == world.prompt_names.end())
            fail(join(field, key), "unknown prompt id");
    }
    Table out;
    for (std::size_t x = 0; x < world.num_prompts(); ++x) {
        const std::string& id = world.prompt_names[x];
        const std::string f = join(field, id);
        if (!j.contains(id)) fail(f, "missing row for prompt");
        const auto row = number_list(j.at(id), f);
        if (row.size() != world.response_names[x].size())
            fail(f, "expected " + std::to_string(world.response_names[x].size()) + " entries, got " +
                        std::to_string(row.size()));
        out.push_back(row);
    }
    return out;
}

inline Json parse_text(const std::string& text, const std::string& source) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        std::size_t line = 1;
        std::size_t col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        std::string what = e.what();
        if (const auto p = what.find("parse error"); p != std::string::npos) what = what.substr(p);
        throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + what);
    }
}

inline Json read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path.string() + ": cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str(), path.string());
}

}  // namespace cfg

// World definition: prompts [{id, mass}], responses {prompt: [ids]},
// pi_star and pi_ref {prompt: [probabilities]}.
inline DiscreteWorld parse_world(const Json& j, const std::string& field = "") {
    cfg::check_keys(j, field, {"prompts", "responses", "pi_star", "pi_ref"});
    for (const char* k : {"prompts", "responses", "pi_star", "pi_ref"})
        if (!j.contains(k)) cfg::fail(cfg::join(field, k), "required field is missing");
    DiscreteWorld w;
    const Json& prompts = j.at("prompts");
    const std::string pf = cfg::join(field, "prompts");
    if (!prompts.is_array() || prompts.empty()) cfg::fail(pf, "non-empty list required");
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const std::string f = pf + "[" + std::to_string(i) + "]";
        cfg::check_keys(prompts[i], f, {"id", "mass"});
        if (!prompts[i].contains("id")) cfg::fail(f + ".id", "required field is missing");
        if (!prompts[i].contains("mass")) cfg::fail(f + ".mass", "required field is missing");
        const std::string id = cfg::string(prompts[i]["id"], f + ".id");
        if (std::find(w.prompt_names.begin(), w.prompt_names.end(), id) != w.prompt_names.end())
            cfg::fail(f + ".id", "duplicate prompt id '" + id + "'");
        w.prompt_names.push_back(id);
        w.prompt_mass.push_back(cfg::number(prompts[i]["mass"], f + ".mass"));
    }
    const Json& responses = j.at("responses");
    const std::string rf = cfg::join(field, "responses");
    cfg::require_object(responses, rf);
    for (const auto& [key, _] : responses.items())
        if (std::find(w.prompt_names.begin(), w.prompt_names.end(), key) == w.prompt_names.end())
            cfg::fail(cfg::join(rf, key), "unknown prompt id");
    for (const auto& id : w.prompt_names) {
        const std::string f = cfg::join(rf, id);
        if (!responses.contains(id)) cfg::fail(f, "missing response list for prompt");
        const Json& list = responses.at(id);
        if (!list.is_array()) cfg::fail(f, "must be a list of response ids");
        std::vector<std::string> names;
        std::set<std::string> seen;
        for (std::size_t i = 0; i < list.size(); ++i) {
            names.push_back(cfg::string(list[i], f + "[" + std::to_string(i) + "]"));
            if (!seen.insert(names.back()).second) cfg::fail(f, "duplicate response id '" + names.back() + "'");
        }
        if (names.size() < 2) cfg::fail(f, "at least 2 responses required");
        w.response_names.push_back(std::move(names));
    }
    w.pi_star = cfg::prompt_table(j.at("pi_star"), cfg::join(field, "pi_star"), w);
    w.pi_ref = cfg::prompt_table(j.at("pi_ref"), cfg::join(field, "pi_ref"), w);
    try {
        w.validate();
    } catch (const DomainError& e) {
        throw ConfigError(field.empty() ? std::string(e.what()) : field + "." + e.what());
    }
    return w;
}

inline DiscreteWorld load_world(const std::filesystem::path& path) { return parse_world(cfg::read_file(path)); }

inline Json world_to_json(const DiscreteWorld& w) {
    Json j;
    j["prompts"] = Json::array();
    for (std::size_t x = 0; x < w.num_prompts(); ++x) {
        j["prompts"].push_back({{"id", w.prompt_names[x]}, {"mass", w.prompt_mass[x]}});
        j["responses"][w.prompt_names[x]] = w.response_names[x];
        j["pi_star"][w.prompt_names[x]] = w.pi_star[x];
        j["pi_ref"][w.prompt_names[x]] = w.pi_ref[x];
    }
    return j;
}

// Optimizer fragment, applied on top of `base`. "batch" is "population" or a
// minibatch size; "seed" is added to the experiment seed for shuffling.
inline OptimConfig parse_optimizer(const Json& j, const std::string& field, OptimConfig base = {}) {
    cfg::check_keys(j, field,
                    {"lr", "epochs", "clip_norm", "batch", "seed", "init", "record_every", "steps_per_epoch", "beta1",
                     "beta2", "epsilon"});
    OptimConfig o = base;
    auto f = [&](const char* k) { return cfg::join(field, k); };
    if (j.contains("lr")) o.learning_rate = cfg::number(j["lr"], f("lr"));
    if (j.contains("epochs")) o.epochs = cfg::positive_int(j["epochs"], f("epochs"));
    if (j.contains("clip_norm")) o.clip_norm = cfg::number(j["clip_norm"], f("clip_norm"));
    if (j.contains("record_every")) o.record_every = cfg::positive_int(j["record_every"], f("record_every"));
    if (j.contains("steps_per_epoch")) o.steps_per_epoch = cfg::positive_int(j["steps_per_epoch"], f("steps_per_epoch"));
    if (j.contains("beta1")) o.beta1 = cfg::number(j["beta1"], f("beta1"));
    if (j.contains("beta2")) o.beta2 = cfg::number(j["beta2"], f("beta2"));
    if (j.contains("epsilon")) o.epsilon = cfg::number(j["epsilon"], f("epsilon"));
    std::uint64_t seed = 0;
    if (const auto* mb = std::get_if<Minibatch>(&o.batch)) seed = mb->seed;
    if (j.contains("seed")) seed = cfg::unsigned_int(j["seed"], f("seed"));
    if (j.contains("batch")) {
        const Json& b = j["batch"];
        if (b.is_string()) {
            if (b.get<std::string>() != "population") cfg::fail(f("batch"), "must be \"population\" or a positive integer");
            o.batch = FullPopulation{};
        } else {
            o.batch = Minibatch{cfg::positive_int(b, f("batch")), seed};
        }
    }
    if (auto* mb = std::get_if<Minibatch>(&o.batch)) mb->seed = seed;
    if (j.contains("init")) {
        const std::string s = cfg::string(j["init"], f("init"));
        if (s == "reference") o.init = InitKind::Reference;
        else if (s == "zeros") o.init = InitKind::Zeros;
        else cfg::fail(f("init"), "must be \"reference\" or \"zeros\"");
    }
    try {
        o.validate();
    } catch (const DomainError& e) {
        throw ConfigError(field.empty() ? std::string(e.what()) : field + "." + e.what());
    }
    return o;
}

inline PenaltyTarget parse_penalty_target(const Json& j, const std::string& field) {
    const std::string s = cfg::string(j, field);
    if (s == "probs") return PenaltyTarget::Probabilities;
    if (s == "logits") return PenaltyTarget::Logits;
    cfg::fail(field, "must be \"probs\" or \"logits\"");
}

// Loss fragment: kind, lambda, divergence, psi, mu, reward (+ reward_table),
// penalty {alpha, target}.
inline LossSpec parse_loss(const Json& j, const std::string& field, const DiscreteWorld* world = nullptr) {
    cfg::check_keys(j, field,
                    {"kind", "lambda", "divergence", "psi", "mu", "reward", "reward_table", "penalty", "optimizer"});
    auto f = [&](const char* k) { return cfg::join(field, k); };
    if (!j.contains("kind")) cfg::fail(f("kind"), "required field is missing");
    const std::string kind = cfg::string(j["kind"], f("kind"));
    const double lam = j.contains("lambda") ? cfg::number(j["lambda"], f("lambda")) : 1.0;

    auto only_for = [&](const char* key, std::initializer_list<const char*> kinds) {
        if (!j.contains(key)) return;
        for (const char* k : kinds)
            if (kind == k) return;
        cfg::fail(f(key), "not used by loss kind '" + kind + "'");
    };
    only_for("divergence", {"fdpo"});
    only_for("psi", {"qpo"});
    only_for("mu", {"qpo"});
    only_for("reward", {"rlhf"});
    only_for("reward_table", {"rlhf"});

    LossSpec spec{DpoLoss{lam}, std::nullopt};
    if (kind == "dpo") {
        spec.kind = DpoLoss{lam};
    } else if (kind == "ipo") {
        spec.kind = IpoLoss{lam};
    } else if (kind == "fdpo") {
        const std::string d = j.contains("divergence") ? cfg::string(j["divergence"], f("divergence")) : "reverse_kl";
        if (d == "reverse_kl") spec.kind = FdpoLoss{Divergence::ReverseKL, lam};
        else if (d == "jensen_shannon") spec.kind = FdpoLoss{Divergence::JensenShannon, lam};
        else cfg::fail(f("divergence"), "must be \"reverse_kl\" or \"jensen_shannon\"");
    } else if (kind == "qpo") {
        QpoLoss q{shapes::logistic(), links::log(), lam};
        try {
            if (j.contains("psi")) q.psi = shapes::by_name(cfg::string(j["psi"], f("psi")));
        } catch (const DomainError& e) {
            cfg::fail(f("psi"), e.what());
        }
        try {
            if (j.contains("mu")) q.mu = links::by_name(cfg::string(j["mu"], f("mu")));
        } catch (const DomainError& e) {
            cfg::fail(f("mu"), e.what());
        }
        spec.kind = q;
    } else if (kind == "typo") {
        spec.kind = TypoLoss{lam};
    } else if (kind == "rlhf") {
        RlhfLoss r{RewardSource::BtOptimal, lam, {}};
        const std::string src = j.contains("reward") ? cfg::string(j["reward"], f("reward")) : "bt_optimal";
        if (src == "bt_optimal") {
            r.reward = RewardSource::BtOptimal;
        } else if (src == "ipo") {
            r.reward = RewardSource::IpoReward;
        } else if (src == "table") {
            r.reward = RewardSource::Table;
            if (!j.contains("reward_table")) cfg::fail(f("reward_table"), "required when reward is \"table\"");
            if (!world) cfg::fail(f("reward_table"), "needs a world to resolve prompt ids");
            r.table = cfg::prompt_table(j["reward_table"], f("reward_table"), *world);
        } else {
            cfg::fail(f("reward"), "must be \"bt_optimal\", \"ipo\" or \"table\"");
        }
        if (src != "table" && j.contains("reward_table")) cfg::fail(f("reward_table"), "only used with reward \"table\"");
        spec.kind = r;
    } else {
        cfg::fail(f("kind"), "unknown loss kind '" + kind + "' (expected dpo|ipo|fdpo|qpo|typo|rlhf)");
    }
    if (j.contains("penalty")) {
        const Json& p = j["penalty"];
        cfg::check_keys(p, f("penalty"), {"alpha", "target"});
        Penalty pen;
        if (p.contains("alpha")) pen.alpha = cfg::number(p["alpha"], f("penalty") + ".alpha");
        if (p.contains("target")) pen.target = parse_penalty_target(p["target"], f("penalty") + ".target");
        spec.penalty = pen;
    }
    try {
        spec.validate();
    } catch (const DomainError& e) {
        throw ConfigError(field + "." + e.what());
    }
    return spec;
}

inline ExperimentKind parse_experiment_kind(const Json& j, const std::string& field) {
    const std::string s = cfg::string(j, field);
    if (s == "interpolation") return ExperimentKind::Interpolation;
    if (s == "preservation") return ExperimentKind::Preservation;
    if (s == "constraint") return ExperimentKind::Constraint;
    if (s == "degenerate") return ExperimentKind::Degenerate;
    cfg::fail(field, "must be one of interpolation|preservation|constraint|degenerate");
}

// Whole experiment config. `base_dir` resolves a world given as a file path.
inline ExperimentConfig parse_experiment_config(const Json& j, const std::filesystem::path& base_dir = ".") {
    cfg::check_keys(j, "",
                    {"experiment", "seed", "world", "losses", "lambda_grid", "alpha_grid", "penalty_target",
                     "optimizer", "metrics", "references", "labels", "paper_batches", "sample_count", "batch_size",
                     "trajectories"});
    ExperimentConfig c;
    if (!j.contains("experiment")) cfg::fail("experiment", "required field is missing");
    c.kind = parse_experiment_kind(j["experiment"], "experiment");
    if (j.contains("seed")) c.seed = cfg::unsigned_int(j["seed"], "seed");

    if (!j.contains("world")) cfg::fail("world", "required field is missing");
    if (j["world"].is_string()) {
        const std::filesystem::path p = base_dir / j["world"].get<std::string>();
        try {
            c.world = load_world(p);
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("world (") + p.string() + "): " + e.what());
        }
    } else {
        c.world = parse_world(j["world"], "world");
    }

    if (j.contains("optimizer")) c.optimizer = parse_optimizer(j["optimizer"], "optimizer");

    if (!j.contains("losses") || !j["losses"].is_array() || j["losses"].empty())
        cfg::fail("losses", "non-empty list required");
    for (std::size_t i = 0; i < j["losses"].size(); ++i) {
        const std::string f = "losses[" + std::to_string(i) + "]";
        const Json& lj = j["losses"][i];
        const LossSpec spec = parse_loss(lj, f, &c.world);
        for (const auto& other : c.losses)
            if (other.name() == spec.name()) cfg::fail(f, "loss '" + spec.name() + "' is listed twice");
        c.losses.push_back(spec);
        if (lj.contains("optimizer")) c.presets[spec.name()] = parse_optimizer(lj["optimizer"], f + ".optimizer", c.optimizer);
    }

    if (!j.contains("lambda_grid")) cfg::fail("lambda_grid", "non-empty list required");
    if (j["lambda_grid"].is_string()) {
        if (j["lambda_grid"].get<std::string>() != "default")
            cfg::fail("lambda_grid", "must be a non-empty list or \"default\"");
        c.lambda_grid = default_lambda_grid();
    } else {
        c.lambda_grid = cfg::number_list(j["lambda_grid"], "lambda_grid");
    }
    if (j.contains("alpha_grid")) {
        if (j["alpha_grid"].is_string()) {
            if (j["alpha_grid"].get<std::string>() != "default")
                cfg::fail("alpha_grid", "must be a non-empty list or \"default\"");
            c.alpha_grid = default_alpha_grid();
        } else {
            c.alpha_grid = cfg::number_list(j["alpha_grid"], "alpha_grid");
        }
    } else if (c.kind == ExperimentKind::Constraint) {
        cfg::fail("alpha_grid", "non-empty list required");
    }
    if (j.contains("penalty_target")) c.penalty_target = parse_penalty_target(j["penalty_target"], "penalty_target");
    if (j.contains("metrics")) {
        const Json& m = j["metrics"];
        if (!m.is_array() || m.empty()) cfg::fail("metrics", "non-empty list required");
        c.metrics.clear();
        for (std::size_t i = 0; i < m.size(); ++i) {
            const std::string f = "metrics[" + std::to_string(i) + "]";
            try {
                c.metrics.push_back(parse_metric(cfg::string(m[i], f)));
            } catch (const DomainError& e) {
                cfg::fail(f, e.what());
            }
        }
    }
    if (j.contains("references")) {
        const Json& r = j["references"];
        if (!r.is_array()) cfg::fail("references", "must be a list of {prompt: [probabilities]} tables");
        for (std::size_t i = 0; i < r.size(); ++i)
            c.references.push_back(cfg::prompt_table(r[i], "references[" + std::to_string(i) + "]", c.world));
    }
    if (j.contains("labels")) {
        const Json& l = j["labels"];
        if (!l.is_array()) cfg::fail("labels", "must be a list of {prompt, winner, loser}");
        for (std::size_t i = 0; i < l.size(); ++i) {
            const std::string f = "labels[" + std::to_string(i) + "]";
            cfg::check_keys(l[i], f, {"prompt", "winner", "loser"});
            for (const char* k : {"prompt", "winner", "loser"})
                if (!l[i].contains(k)) cfg::fail(f + "." + k, "required field is missing");
            try {
                const std::size_t x = c.world.prompt_index(cfg::string(l[i]["prompt"], f + ".prompt"));
                c.labels.push_back({x, c.world.response_index(x, cfg::string(l[i]["winner"], f + ".winner")),
                                    c.world.response_index(x, cfg::string(l[i]["loser"], f + ".loser"))});
            } catch (const DomainError& e) {
                cfg::fail(f, e.what());
            }
        }
    }
    if (j.contains("paper_batches")) c.paper_batches = cfg::boolean(j["paper_batches"], "paper_batches");
    if (j.contains("sample_count")) c.sample_count = cfg::positive_int(j["sample_count"], "sample_count");
    if (j.contains("batch_size")) c.batch_size = cfg::positive_int(j["batch_size"], "batch_size");
    if (j.contains("trajectories")) c.trajectories = cfg::boolean(j["trajectories"], "trajectories");

    if (c.kind == ExperimentKind::Degenerate && c.labels.empty()) cfg::fail("labels", "non-empty list required");
    try {
        c.validate();
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    const Json j = cfg::read_file(path);
    return parse_experiment_config(j, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

// Policy snapshot: {prompt id: [logits]}. Shape problems are DomainErrors
// naming the prompt.
inline TabularPolicy parse_snapshot(const Json& j, const DiscreteWorld& world) {
    if (!j.is_object()) throw DomainError("snapshot: must be an object mapping prompt id to logits");
    for (const auto& [key, _] : j.items())
        if (std::find(world.prompt_names.begin(), world.prompt_names.end(), key) == world.prompt_names.end())
            throw DomainError("snapshot." + key + ": unknown prompt id");
    TabularPolicy p;
    for (std::size_t x = 0; x < world.num_prompts(); ++x) {
        const std::string& id = world.prompt_names[x];
        if (!j.contains(id)) throw DomainError("snapshot." + id + ": missing logits for prompt");
        const Json& row = j.at(id);
        if (!row.is_array()) throw DomainError("snapshot." + id + ": must be a list of logits");
        if (row.size() != world.num_responses(x))
            throw DomainError("snapshot." + id + ": expected " + std::to_string(world.num_responses(x)) +
                              " logits, got " + std::to_string(row.size()));
        std::vector<double> logits;
        for (const auto& v : row) {
            if (!v.is_number()) throw DomainError("snapshot." + id + ": logits must be numbers");
            logits.push_back(v.get<double>());
        }
        p.logits.push_back(std::move(logits));
    }
    check_policy_shape(p, world);
    return p;
}

inline Json snapshot_to_json(const TabularPolicy& p, const DiscreteWorld& world) {
    check_policy_shape(p, world);
    Json j = Json::object();
    for (std::size_t x = 0; x < world.num_prompts(); ++x) j[world.prompt_names[x]] = p.logits[x];
    return j;
}

}  // namespace prefopt
