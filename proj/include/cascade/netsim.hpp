#pragma once

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cascade/model.hpp"
#include "cascade/sharding.hpp"

namespace cascade {

// Round accounting: a round is one send operation in the trace. Stage-A sends
// are point-to-point (one per source CompNode, owned S-shard side, and
// retained pair containing that side). A stage-B round is one AttnNode
// emission; after symmetry reduction an emission carries both orientations
// and the router fans its row slices out to the owning CompNodes. This is the
// granularity under which split (c,delta) plans measure exactly
// m*alpha*beta + beta*(beta+1)/2 rounds per layer.
enum class Stage { qkv, partials, gen_qkv, gen_partials, gen_token };

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::qkv: return "qkv";
        case Stage::partials: return "partials";
        case Stage::gen_qkv: return "gen_qkv";
        case Stage::gen_partials: return "gen_partials";
        case Stage::gen_token: return "gen_token";
    }
    return "?";
}

struct MessageRecord {
    int layer = 0;
    Stage stage = Stage::qkv;
    std::string src;
    std::string dst;
    long long elements = 0;
};

struct Trace {
    std::vector<MessageRecord> records;
};

// Shared append-only router. Deterministic because the orchestrator emits in
// sorted node order; payload delivery happens in the protocol code, the trace
// only sees (layer, stage, src, dst, element count).
struct Router {
    Trace trace;
    bool enabled = true;

    void record(int layer, Stage stage, std::string src, std::string dst, long long elements) {
        if (!enabled) return;
        trace.records.push_back({layer, stage, std::move(src), std::move(dst), elements});
    }
};

struct NetworkParams {
    double bandwidth = 2.5e8;     // bytes per second
    double latency = 0.38e-3;     // seconds
    int bytes_per_element = 2;    // F

    void validate() const {
        if (!(bandwidth > 0)) throw std::invalid_argument("bandwidth must be > 0");
        if (!(latency > 0)) throw std::invalid_argument("latency must be > 0");
        if (bytes_per_element < 1) throw std::invalid_argument("bytes_per_element must be >= 1");
    }
};

struct BytePrediction {
    long long per_layer = 0;
    long long total = 0;
};

// Per-layer payload: beta * F * (2dH + 2dH_KV + 2H) * N. Only beta matters
// among the sharding parameters.
inline BytePrediction predicted_comm_bytes(const ModelConfig& cfg, const ShardPlan& plan,
                                           const NetworkParams& params, int N) {
    params.validate();
    if (N < 1) throw std::invalid_argument("predicted_comm_bytes: N must be >= 1");
    const long long per_elem =
        2LL * cfg.d * cfg.H + 2LL * cfg.d * cfg.H_KV + 2LL * cfg.H;
    BytePrediction p;
    p.per_layer = static_cast<long long>(plan.beta) * params.bytes_per_element * per_elem * N;
    p.total = p.per_layer * cfg.num_layers;
    return p;
}

// Per-layer parallel-transport time:
//   2*tau + beta*F*d*(H+2H_KV)*max|R_i|/B + F*(d+2)*H*max|S_j|/B
inline double predicted_comm_time(const ModelConfig& cfg, const ShardPlan& plan,
                                  const NetworkParams& params) {
    params.validate();
    const double F = params.bytes_per_element;
    const double stage_a =
        plan.beta * F * cfg.d * (cfg.H + 2.0 * cfg.H_KV) * plan.max_R_size() / params.bandwidth;
    const double stage_b = F * (cfg.d + 2.0) * cfg.H * plan.max_S_size() / params.bandwidth;
    return 2.0 * params.latency + stage_a + stage_b;
}

struct CommReport {
    int layers = 0;
    std::vector<long long> per_layer_bytes;
    std::vector<long long> per_layer_stage_a_bytes;
    std::vector<long long> per_layer_stage_b_bytes;
    std::vector<int> rounds_per_layer;
    long long total_bytes = 0;
    long long gen_bytes = 0;  // generation traffic, reported outside Eq (1)
    double measured_time_s = 0.0;
    long long predicted_per_layer_bytes = 0;
    long long predicted_total_bytes = 0;
    double predicted_time_per_layer_s = 0.0;
    double predicted_time_total_s = 0.0;
    double excess_ratio = 0.0;
    std::map<std::string, long long> per_node_sent_bytes;
};

// Sums the payload trace of one run, counts rounds, applies the per-stage
// parallel-transport clock (tau + slowest sender), and attaches the Eq-based
// predictions for reconciliation. Payload bytes are elements * F; framing and
// routing labels are deliberately not modeled.
inline CommReport measure_run(const Trace& trace, const NetworkParams& params,
                              const ModelConfig& cfg, const ShardPlan& plan) {
    params.validate();
    const int L = cfg.num_layers;
    CommReport rep;
    rep.layers = L;
    rep.per_layer_bytes.assign(L, 0);
    rep.per_layer_stage_a_bytes.assign(L, 0);
    rep.per_layer_stage_b_bytes.assign(L, 0);
    rep.rounds_per_layer.assign(L, 0);

    // per (layer, stage): sender -> bytes, for the transport clock
    std::map<std::pair<int, int>, std::map<std::string, long long>> sender_bytes;

    for (const auto& r : trace.records) {
        if (r.elements < 0) throw std::invalid_argument("malformed trace: negative element count");
        const long long bytes = r.elements * params.bytes_per_element;
        rep.per_node_sent_bytes[r.src] += bytes;
        if (r.stage == Stage::qkv || r.stage == Stage::partials) {
            if (r.layer < 0 || r.layer >= L)
                throw std::invalid_argument("malformed trace: layer out of range");
            rep.per_layer_bytes[r.layer] += bytes;
            if (r.stage == Stage::qkv)
                rep.per_layer_stage_a_bytes[r.layer] += bytes;
            else
                rep.per_layer_stage_b_bytes[r.layer] += bytes;
            rep.rounds_per_layer[r.layer] += 1;
            sender_bytes[{r.layer, r.stage == Stage::qkv ? 0 : 1}][r.src] += bytes;
        } else {
            rep.gen_bytes += bytes;
        }
    }
    for (long long b : rep.per_layer_bytes) rep.total_bytes += b;

    for (const auto& [key, senders] : sender_bytes) {
        long long worst = 0;
        for (const auto& [src, b] : senders) worst = std::max(worst, b);
        rep.measured_time_s += params.latency + static_cast<double>(worst) / params.bandwidth;
    }

    BytePrediction pred = predicted_comm_bytes(cfg, plan, params, plan.N);
    rep.predicted_per_layer_bytes = pred.per_layer;
    rep.predicted_total_bytes = pred.total;
    rep.predicted_time_per_layer_s = predicted_comm_time(cfg, plan, params);
    rep.predicted_time_total_s = rep.predicted_time_per_layer_s * L;
    rep.excess_ratio = pred.total > 0
                           ? static_cast<double>(rep.total_bytes) / static_cast<double>(pred.total)
                           : 0.0;
    return rep;
}

inline nlohmann::json comm_report_to_json(const CommReport& rep) {
    nlohmann::json j;
    j["per_layer_bytes"] = rep.per_layer_bytes;
    j["per_layer_stage_a_bytes"] = rep.per_layer_stage_a_bytes;
    j["per_layer_stage_b_bytes"] = rep.per_layer_stage_b_bytes;
    j["rounds"] = rep.rounds_per_layer;
    j["total_bytes"] = rep.total_bytes;
    j["gen_bytes"] = rep.gen_bytes;
    j["measured_time_s"] = rep.measured_time_s;
    j["predicted_bytes"] = rep.predicted_total_bytes;
    j["predicted_per_layer_bytes"] = rep.predicted_per_layer_bytes;
    j["predicted_time_s"] = rep.predicted_time_total_s;
    j["excess_ratio"] = rep.excess_ratio;
    j["per_node_sent_bytes"] = rep.per_node_sent_bytes;
    return j;
}

}  // namespace cascade
