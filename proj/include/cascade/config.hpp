#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "cascade/model.hpp"
#include "cascade/netsim.hpp"
#include "cascade/sharding.hpp"

namespace cascade {

// One JSON config drives every command. Comments (//, /* */) are allowed in
// config files; all defaults are filled at load and echoed back, so an
// emitted config reproduces the run exactly.
struct RunConfig {
    ModelConfig model;
    std::uint64_t model_seed = 1;

    // plan: generated from (N, c, alpha, m) or supplied explicitly
    int plan_N = 0;
    int plan_c = 1;
    int plan_alpha = 1;
    int plan_m = kAutoSplit;
    std::optional<nlohmann::json> explicit_plan;

    NetworkParams net;
    AttackBudget budget;
    int attack_layer = 1;
    std::optional<std::int64_t> v0_size;

    std::optional<TokenSeq> prompt_tokens;
    std::uint64_t prompt_seed = 2024;
    int prompt_length = 0;  // 0: commands pick a suitable full length
    int n_new = 8;
    int trials = 20;
};

inline ShardPlan make_plan(const RunConfig& cfg) {
    if (cfg.explicit_plan) return plan_from_json(*cfg.explicit_plan);
    return build_plan(cfg.plan_N, cfg.plan_c, cfg.plan_alpha, cfg.plan_m);
}

inline TokenSeq make_prompt(const RunConfig& cfg, int length, std::uint64_t trial = 0) {
    if (cfg.prompt_tokens) {
        if (static_cast<int>(cfg.prompt_tokens->size()) != length)
            throw std::invalid_argument("prompt: explicit prompt length " +
                                        std::to_string(cfg.prompt_tokens->size()) +
                                        " does not match required length " +
                                        std::to_string(length));
        return *cfg.prompt_tokens;
    }
    SplitMix64 rng(cfg.prompt_seed ^ (0x9e37ull * (trial + 1)));
    TokenSeq t(length);
    for (int& x : t) x = static_cast<int>(rng.next_below(cfg.model.V));
    return t;
}

inline nlohmann::json emit_config(const RunConfig& cfg) {
    nlohmann::json j;
    j["model"] = {{"num_layers", cfg.model.num_layers}, {"d_emb", cfg.model.d_emb},
                  {"H", cfg.model.H},                   {"H_KV", cfg.model.H_KV},
                  {"d", cfg.model.d},                   {"V", cfg.model.V},
                  {"mlp_hidden", cfg.model.mlp_hidden}, {"max_seq", cfg.model.max_seq},
                  {"norm_eps", cfg.model.norm_eps},     {"rope_theta", cfg.model.rope_theta},
                  {"seed", cfg.model_seed}};
    if (cfg.explicit_plan) {
        j["plan"] = {{"explicit", *cfg.explicit_plan}};
    } else {
        j["plan"] = {{"N", cfg.plan_N},
                     {"c", cfg.plan_c},
                     {"alpha", cfg.plan_alpha},
                     {"m", cfg.plan_m == kAutoSplit ? nlohmann::json("auto")
                                                    : nlohmann::json(cfg.plan_m)}};
    }
    j["network"] = {{"bandwidth_bytes_per_s", cfg.net.bandwidth},
                    {"latency_s", cfg.net.latency},
                    {"bytes_per_element", cfg.net.bytes_per_element}};
    j["attack"] = {{"rho", cfg.budget.rho()},
                   {"pass_cap", cfg.budget.pass_cap},
                   {"layer", cfg.attack_layer}};
    if (cfg.v0_size) j["attack"]["v0_size"] = *cfg.v0_size;
    j["run"] = {{"prompt_seed", cfg.prompt_seed},
                {"prompt_length", cfg.prompt_length},
                {"n_new", cfg.n_new},
                {"trials", cfg.trials}};
    if (cfg.prompt_tokens) j["run"]["prompt"] = *cfg.prompt_tokens;
    return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    if (!j.contains("model")) throw std::invalid_argument("config: missing model section");
    const auto& m = j.at("model");
    cfg.model.num_layers = m.value("num_layers", cfg.model.num_layers);
    cfg.model.d_emb = m.value("d_emb", cfg.model.d_emb);
    cfg.model.H = m.value("H", cfg.model.H);
    cfg.model.H_KV = m.value("H_KV", cfg.model.H);  // defaults to H: no grouping
    cfg.model.d = m.value("d", cfg.model.d);
    cfg.model.V = m.value("V", cfg.model.V);
    cfg.model.mlp_hidden = m.value("mlp_hidden", cfg.model.mlp_hidden);
    cfg.model.max_seq = m.value("max_seq", cfg.model.max_seq);
    cfg.model.norm_eps = m.value("norm_eps", cfg.model.norm_eps);
    cfg.model.rope_theta = m.value("rope_theta", cfg.model.rope_theta);
    cfg.model_seed = m.value("seed", cfg.model_seed);
    cfg.model.validate();

    if (!j.contains("plan")) throw std::invalid_argument("config: missing plan section");
    const auto& p = j.at("plan");
    if (p.contains("explicit")) {
        cfg.explicit_plan = p.at("explicit");
        ShardPlan plan = plan_from_json(*cfg.explicit_plan);  // validates
        if (plan.c > 0 && plan.delta != plan.c * plan.alpha)
            throw std::invalid_argument("config: explicit plan has delta != c*alpha");
        cfg.plan_N = plan.N;
        cfg.plan_c = plan.c;
        cfg.plan_alpha = plan.alpha;
        cfg.plan_m = plan.m;
    } else {
        cfg.plan_N = p.value("N", 0);
        cfg.plan_c = p.value("c", 1);
        cfg.plan_alpha = p.value("alpha", 1);
        if (p.contains("m") && p.at("m").is_string()) {
            if (p.at("m").get<std::string>() != "auto")
                throw std::invalid_argument("config: plan m must be an integer or \"auto\"");
            cfg.plan_m = kAutoSplit;
        } else {
            cfg.plan_m = p.value("m", kAutoSplit);
        }
        build_plan(cfg.plan_N, cfg.plan_c, cfg.plan_alpha, cfg.plan_m);  // validates
    }
    if (cfg.plan_N > cfg.model.max_seq)
        throw std::invalid_argument("config: plan N exceeds model max_seq");

    if (j.contains("network")) {
        const auto& n = j.at("network");
        cfg.net.bandwidth = n.value("bandwidth_bytes_per_s", cfg.net.bandwidth);
        cfg.net.latency = n.value("latency_s", cfg.net.latency);
        cfg.net.bytes_per_element = n.value("bytes_per_element", cfg.net.bytes_per_element);
    }
    cfg.net.validate();

    if (j.contains("attack")) {
        const auto& a = j.at("attack");
        cfg.budget = AttackBudget::from_rho(a.value("rho", 3),
                                            a.value("pass_cap", cfg.budget.pass_cap));
        cfg.attack_layer = a.value("layer", 1);
        if (a.contains("v0_size") && !a.at("v0_size").is_null())
            cfg.v0_size = a.at("v0_size").get<std::int64_t>();
    }
    if (cfg.attack_layer < 0 || cfg.attack_layer > cfg.model.num_layers)
        throw std::invalid_argument("config: attack layer out of range");

    if (j.contains("run")) {
        const auto& r = j.at("run");
        if (r.contains("prompt") && !r.at("prompt").is_null()) {
            cfg.prompt_tokens = r.at("prompt").get<TokenSeq>();
            for (int t : *cfg.prompt_tokens)
                if (t < 0 || t >= cfg.model.V)
                    throw std::invalid_argument("config: prompt token out of vocabulary range");
        }
        cfg.prompt_seed = r.value("prompt_seed", cfg.prompt_seed);
        cfg.prompt_length = r.value("prompt_length", cfg.prompt_length);
        cfg.n_new = r.value("n_new", cfg.n_new);
        cfg.trials = r.value("trials", cfg.trials);
    }
    if (cfg.n_new < 0) throw std::invalid_argument("config: n_new must be >= 0");
    if (cfg.trials < 1) throw std::invalid_argument("config: trials must be >= 1");
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/true,
                                  /*ignore_comments=*/true);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument("config: parse error in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

}  // namespace cascade
