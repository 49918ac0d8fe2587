#pragma once

#include <chrono>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cascade/attack.hpp"
#include "cascade/config.hpp"
#include "cascade/model.hpp"
#include "cascade/netsim.hpp"
#include "cascade/protocol.hpp"
#include "cascade/report.hpp"
#include "cascade/sharding.hpp"

namespace cascade {

constexpr double kVerifyTolerance = 1e-9;

namespace detail {

inline int prompt_length_for(const RunConfig& cfg, const ShardPlan& plan, int reserve = 0) {
    const int full = plan.N - reserve;
    if (cfg.prompt_length > 0) {
        if (cfg.prompt_length > full)
            throw std::invalid_argument("prompt_length too long for plan N" +
                                        std::string(reserve > 0 ? " minus n_new" : ""));
        return cfg.prompt_length;
    }
    if (cfg.prompt_tokens) return static_cast<int>(cfg.prompt_tokens->size());
    return full;
}

inline nlohmann::json gap_profile_json(const GapProfile& g) {
    return {{"gaps", g.gaps}, {"max_gap", g.max_gap}, {"cluster_sizes", g.cluster_sizes}};
}

inline nlohmann::json cost_json(const BigCost& c) {
    return {{"total", c.total.str()}, {"log10", c.log10_total}, {"max_gap", c.max_gap}};
}

}  // namespace detail

inline nlohmann::json run_verify(const RunConfig& cfg) {
    ShardPlan plan = make_plan(cfg);
    ModelWeights model = new_model(cfg.model, cfg.model_seed);
    const int len = detail::prompt_length_for(cfg, plan);
    double worst = 0.0;
    nlohmann::json per_trial = nlohmann::json::array();
    for (int t = 0; t < cfg.trials; ++t) {
        TokenSeq prompt = make_prompt(cfg, len, t);
        Router router;
        router.enabled = false;
        CascadeResult res = cascade_forward(model, plan, prompt, router);
        Mat vanilla = forward_full(model, prompt);
        const double err = rel_error(res.reassembled_logits, vanilla);
        worst = std::max(worst, err);
        per_trial.push_back(err);
    }
    nlohmann::json results;
    results["trials"] = cfg.trials;
    results["prompt_length"] = len;
    results["tolerance"] = kVerifyTolerance;
    results["max_rel_error"] = worst;
    results["per_trial_rel_error"] = per_trial;
    results["pass"] = worst < kVerifyTolerance;
    return results;
}

inline nlohmann::json run_bench(const RunConfig& cfg) {
    ShardPlan plan = make_plan(cfg);
    ModelWeights model = new_model(cfg.model, cfg.model_seed);
    // full-length prompt: the byte model counts every row of every shard
    TokenSeq prompt = make_prompt(cfg, plan.N, 0);
    Router router;
    cascade_forward(model, plan, prompt, router);
    CommReport rep = measure_run(router.trace, cfg.net, cfg.model, plan);
    nlohmann::json results = comm_report_to_json(rep);
    bool exact = rep.total_bytes == rep.predicted_total_bytes;
    for (long long b : rep.per_layer_bytes)
        if (b != rep.predicted_per_layer_bytes) exact = false;
    results["measured_equals_predicted"] = exact;
    results["total_gb"] = static_cast<double>(rep.total_bytes) / 1e9;  // GB = 10^9 bytes
    results["predicted_gb"] = static_cast<double>(rep.predicted_total_bytes) / 1e9;
    results["wire_format_note"] =
        "payload counted as elements x F; F defaults to 2 (fp16 wire format)";
    results["pass"] = exact;
    return results;
}

inline nlohmann::json run_attack(const RunConfig& cfg) {
    ShardPlan plan = make_plan(cfg);
    ModelWeights model = new_model(cfg.model, cfg.model_seed);
    TokenSeq prompt = make_prompt(cfg, plan.N, 0);
    Mat hidden = forward_prefix(model, prompt, cfg.attack_layer);

    nlohmann::json results;
    results["prompt"] = prompt;
    results["attack_layer"] = cfg.attack_layer;
    nlohmann::json vm = nlohmann::json::array();
    nlohmann::json meu = nlohmann::json::array();
    nlohmann::json costs = nlohmann::json::array();
    for (int i = 1; i <= plan.alpha; ++i) {
        const IndexSet& R = plan.R[i - 1];
        std::vector<int> rows0;  // 0-based rows of the node's indices
        for (int x : R) rows0.push_back(x - 1);
        ShardObservation obs{cfg.attack_layer, R, take_rows(hidden, rows0)};
        nlohmann::json entry;
        entry["node"] = NodeRef::comp(i).str();
        try {
            entry["result"] = attack_result_to_json(vocab_match(model, obs, cfg.budget, &prompt));
        } catch (const PassCapExhausted& e) {
            entry["result"] = attack_result_to_json(e.partial);
            entry["result"]["error"] = e.what();
        }
        vm.push_back(entry);

        CompNodeView view = build_compnode_view(model, plan, prompt, i);
        nlohmann::json m_entry;
        m_entry["node"] = NodeRef::comp(i).str();
        try {
            m_entry["result"] =
                attack_result_to_json(layer0_meu_attack(model, view, cfg.budget, &prompt));
        } catch (const PassCapExhausted& e) {
            m_entry["result"] = attack_result_to_json(e.partial);
            m_entry["result"]["error"] = e.what();
        }
        meu.push_back(m_entry);

        CostEstimate est = estimate_cost(R, cfg.model.V, cfg.budget, cfg.v0_size);
        nlohmann::json c_entry;
        c_entry["node"] = NodeRef::comp(i).str();
        c_entry["cost"] = detail::cost_json(est.cost);
        c_entry["feasible"] = est.feas.feasible;
        c_entry["limiting_gap"] = est.feas.limiting_gap;
        if (est.cost_restricted) c_entry["cost_restricted"] = detail::cost_json(*est.cost_restricted);
        costs.push_back(c_entry);
    }
    results["vocab_match"] = vm;
    results["layer0_meu"] = meu;
    results["costs"] = costs;
    return results;
}

inline nlohmann::json run_security_report(const RunConfig& cfg) {
    ShardPlan plan = make_plan(cfg);
    std::vector<NodeRef> nodes;
    for (int i = 1; i <= plan.alpha; ++i) nodes.push_back(NodeRef::comp(i));
    for (auto [j, k] : plan.attn_pairs) nodes.push_back(NodeRef::attn(j, k));

    nlohmann::json results;
    results["plan"] = plan_to_json(plan);
    results["rho"] = cfg.budget.rho();
    if (plan.irregular_tail)
        results["note"] = "N not divisible by c*alpha: trailing indices were dealt round-robin";
    nlohmann::json per_node = nlohmann::json::array();
    for (const auto& n : nodes) {
        IndexSet s = node_index_set(plan, n);
        GapProfile g = gap_profile(s);
        Feasibility f = feasibility(s, cfg.budget);
        BigCost cost = vocab_matching_cost(s, cfg.model.V);
        nlohmann::json entry;
        entry["node"] = n.str();
        entry["indices"] = s;
        entry["profile"] = detail::gap_profile_json(g);
        entry["cost"] = detail::cost_json(cost);
        if (cfg.v0_size) entry["cost_restricted"] = detail::cost_json(
            vocab_matching_cost(s, *cfg.v0_size));
        entry["feasible"] = f.feasible;
        entry["limiting_gap"] = f.limiting_gap;
        per_node.push_back(entry);
    }
    results["nodes"] = per_node;

    nlohmann::json collusion = nlohmann::json::array();
    for (size_t a = 0; a < nodes.size(); ++a) {
        for (size_t b = a + 1; b < nodes.size(); ++b) {
            CollusionView view = collusion_union(plan, {nodes[a], nodes[b]}, cfg.budget);
            nlohmann::json entry;
            entry["nodes"] = {nodes[a].str(), nodes[b].str()};
            entry["max_gap"] = view.profile.max_gap;
            entry["feasible"] = view.feas.feasible;
            collusion.push_back(entry);
        }
    }
    results["collusion_pairs"] = collusion;
    return results;
}

inline nlohmann::json run_generate(const RunConfig& cfg) {
    ShardPlan plan = make_plan(cfg);
    ModelWeights model = new_model(cfg.model, cfg.model_seed);
    const int len = detail::prompt_length_for(cfg, plan, cfg.n_new);
    TokenSeq prompt = make_prompt(cfg, len, 0);
    Router router;
    GenerateResult gen = cascade_generate(model, plan, prompt, cfg.n_new, router);
    TokenSeq vanilla = greedy_decode(model, prompt, cfg.n_new);
    const bool match = gen.tokens == vanilla;

    nlohmann::json results;
    results["prompt_length"] = len;
    results["n_new"] = cfg.n_new;
    results["tokens"] = gen.tokens;
    results["uncached_tokens"] = vanilla;
    results["cached_equals_uncached"] = match;
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : gen.steps)
        steps.push_back({{"index", s.index},
                         {"token", s.token},
                         {"active_comp_nodes", s.active_comp_nodes},
                         {"active_attn_nodes", s.active_attn_nodes}});
    results["steps"] = steps;
    results["pass"] = match;
    return results;
}

inline Report run_command(const RunConfig& cfg, const std::string& command) {
    const auto start = std::chrono::steady_clock::now();
    Report rep;
    rep.command = command;
    rep.config_echo = emit_config(cfg);
    if (command == "verify")
        rep.results = run_verify(cfg);
    else if (command == "bench")
        rep.results = run_bench(cfg);
    else if (command == "attack")
        rep.results = run_attack(cfg);
    else if (command == "security-report")
        rep.results = run_security_report(cfg);
    else if (command == "generate")
        rep.results = run_generate(cfg);
    else
        throw std::invalid_argument("unknown command: " + command);
    if (rep.results.contains("pass") && !rep.results.at("pass").get<bool>()) rep.exit_code = 2;
    rep.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                               start)
                         .count();
    return rep;
}

// Flat tables for plotting: one row per trial / layer / node / step.
inline std::string report_to_csv(const Report& rep) {
    std::ostringstream out;
    const auto& r = rep.results;
    if (rep.command == "verify") {
        out << "trial,rel_error\n";
        const auto& v = r.at("per_trial_rel_error");
        for (size_t i = 0; i < v.size(); ++i)
            out << i << "," << v[i].get<double>() << "\n";
    } else if (rep.command == "bench") {
        out << "layer,bytes,stage_a_bytes,stage_b_bytes,rounds,predicted_bytes\n";
        const auto& b = r.at("per_layer_bytes");
        for (size_t i = 0; i < b.size(); ++i)
            out << i << "," << b[i].get<long long>() << ","
                << r.at("per_layer_stage_a_bytes")[i].get<long long>() << ","
                << r.at("per_layer_stage_b_bytes")[i].get<long long>() << ","
                << r.at("rounds")[i].get<int>() << ","
                << r.at("predicted_per_layer_bytes").get<long long>() << "\n";
    } else if (rep.command == "attack") {
        out << "kind,node,status,recovered,passes\n";
        for (const char* kind : {"vocab_match", "layer0_meu"}) {
            for (const auto& e : r.at(kind)) {
                out << kind << "," << e.at("node").get<std::string>() << ","
                    << e.at("result").at("status").get<std::string>() << ","
                    << e.at("result").at("recovered").size() << ","
                    << e.at("result").at("forward_pass_count").get<long long>() << "\n";
            }
        }
    } else if (rep.command == "security-report") {
        out << "node,max_gap,log10_cost,feasible\n";
        for (const auto& e : r.at("nodes"))
            out << e.at("node").get<std::string>() << ","
                << e.at("profile").at("max_gap").get<int>() << ","
                << e.at("cost").at("log10").get<double>() << ","
                << (e.at("feasible").get<bool>() ? 1 : 0) << "\n";
    } else if (rep.command == "generate") {
        out << "step,index,token,active_comp_nodes,active_attn_nodes\n";
        const auto& steps = r.at("steps");
        for (size_t i = 0; i < steps.size(); ++i)
            out << i << "," << steps[i].at("index").get<int>() << ","
                << steps[i].at("token").get<int>() << ","
                << steps[i].at("active_comp_nodes").get<int>() << ","
                << steps[i].at("active_attn_nodes").get<int>() << "\n";
    }
    return out.str();
}

}  // namespace cascade
