#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cascade/model.hpp"
#include "cascade/protocol.hpp"
#include "cascade/sharding.hpp"

namespace cascade {

// A semi-honest party's view of some hidden rows: layer l states for a
// sorted subset of token indices.
struct ShardObservation {
    int layer = 1;
    IndexSet indices;  // 1-based, strictly increasing
    Mat rows;          // |indices| x d_emb
};

enum class AttackStatus { recovered, infeasible_budget, collision_suspected };

inline const char* attack_status_name(AttackStatus s) {
    switch (s) {
        case AttackStatus::recovered: return "recovered";
        case AttackStatus::infeasible_budget: return "infeasible_budget";
        case AttackStatus::collision_suspected: return "collision_suspected";
    }
    return "?";
}

struct GapReport {
    int target_index = 0;  // the observed index whose row anchored this gap
    int gap = 0;           // number of tokens enumerated together
    long long passes = 0;
    double best_distance = 0.0;
    double runner_up_distance = std::numeric_limits<double>::infinity();
    double truth_distance = std::numeric_limits<double>::quiet_NaN();
    bool skipped_infeasible = false;
};

struct AttackResult {
    AttackStatus status = AttackStatus::recovered;
    std::vector<std::pair<int, int>> recovered;  // (token index, token id)
    long long forward_pass_count = 0;
    std::vector<GapReport> gaps;
    int limiting_gap = 0;  // first gap size exceeding the budget, 0 if none
    std::string note;
};

struct PassCapExhausted : std::runtime_error {
    AttackResult partial;
    explicit PassCapExhausted(AttackResult p)
        : std::runtime_error("attack pass cap exhausted mid-gap"), partial(std::move(p)) {}
};

namespace detail {

// Odometer over token tuples, lexicographic with the leftmost digit most
// significant; the first strict minimizer wins, so results are reproducible.
inline bool advance_tuple(std::vector<int>& tuple, int V) {
    int pos = static_cast<int>(tuple.size()) - 1;
    while (pos >= 0) {
        if (++tuple[pos] < V) return true;
        tuple[pos] = 0;
        --pos;
    }
    return false;
}

}  // namespace detail

// Generalized vocabulary matching on sharded hidden states. Walks the gaps
// between observed indices; for each affordable gap enumerates every token
// tuple, forwards the candidate-extended prefix and keeps the tuple whose
// last hidden row is L1-closest to the observed one. When ground truth is
// supplied, a wrong winner that beats or ties the true tuple's distance is
// certified as a collision rather than reported as recovery.
inline AttackResult vocab_match(const ModelWeights& model, const ShardObservation& obs,
                                const AttackBudget& budget,
                                const TokenSeq* ground_truth = nullptr) {
    const ModelConfig& cfg = model.cfg;
    if (obs.layer < 0 || obs.layer > cfg.num_layers)
        throw std::invalid_argument("vocab_match: observation layer out of range");
    if (obs.indices.empty()) throw std::invalid_argument("vocab_match: empty observation");
    if (obs.rows.rows != static_cast<int>(obs.indices.size()) || obs.rows.cols != cfg.d_emb)
        throw std::invalid_argument("vocab_match: row shape mismatch");
    for (size_t i = 1; i < obs.indices.size(); ++i)
        if (obs.indices[i] <= obs.indices[i - 1])
            throw std::invalid_argument("vocab_match: indices not strictly increasing");

    AttackResult res;
    TokenSeq prefix;  // recovered so far, indices 1..|prefix|
    int prev_index = 0;
    for (size_t j = 0; j < obs.indices.size(); ++j) {
        const int target = obs.indices[j];
        const int gap = target - prev_index;
        if (gap > budget.t_max) {
            res.status = AttackStatus::infeasible_budget;
            res.limiting_gap = gap;
            GapReport rep;
            rep.target_index = target;
            rep.gap = gap;
            rep.skipped_infeasible = true;
            res.gaps.push_back(rep);
            res.note = "gap of " + std::to_string(gap) + " exceeds t_max=" +
                       std::to_string(budget.t_max);
            return res;
        }
        GapReport rep;
        rep.target_index = target;
        rep.gap = gap;
        std::vector<int> tuple(gap, 0);
        std::vector<int> best_tuple;
        TokenSeq candidate = prefix;
        candidate.resize(prefix.size() + gap);
        do {
            if (res.forward_pass_count >= budget.pass_cap) {
                res.note = "pass cap hit at index " + std::to_string(target);
                throw PassCapExhausted(res);
            }
            for (int t = 0; t < gap; ++t) candidate[prefix.size() + t] = tuple[t];
            Mat h = forward_prefix(model, candidate, obs.layer);
            ++res.forward_pass_count;
            ++rep.passes;
            const double dist =
                l1_distance(h.row(h.rows - 1), obs.rows.row(static_cast<int>(j)), cfg.d_emb);
            if (best_tuple.empty() || dist < rep.best_distance) {
                rep.runner_up_distance = best_tuple.empty() ? rep.runner_up_distance
                                                            : rep.best_distance;
                rep.best_distance = dist;
                best_tuple = tuple;
            } else if (dist < rep.runner_up_distance) {
                rep.runner_up_distance = dist;
            }
        } while (detail::advance_tuple(tuple, cfg.V));

        if (ground_truth != nullptr) {
            bool mismatch = false;
            for (int t = 0; t < gap; ++t)
                if ((*ground_truth)[prefix.size() + t] != best_tuple[t]) mismatch = true;
            if (mismatch) {
                TokenSeq truth_candidate = prefix;
                for (int t = 0; t < gap; ++t)
                    truth_candidate.push_back((*ground_truth)[prefix.size() + t]);
                Mat h = forward_prefix(model, truth_candidate, obs.layer);
                rep.truth_distance = l1_distance(h.row(h.rows - 1),
                                                 obs.rows.row(static_cast<int>(j)), cfg.d_emb);
                if (rep.best_distance <= rep.truth_distance)
                    res.status = AttackStatus::collision_suspected;
                else
                    res.note = "minimizer lost to truth; inconsistent observation";
            } else {
                rep.truth_distance = rep.best_distance;
            }
        }
        for (int t = 0; t < gap; ++t) {
            prefix.push_back(best_tuple[t]);
            res.recovered.push_back({prev_index + 1 + t, best_tuple[t]});
        }
        res.gaps.push_back(rep);
        prev_index = target;
    }
    return res;
}

// Everything CompNode i can see at layer 0: its own tokens plus the
// (m, e, u) triples it received for every key shard.
struct CompNodeView {
    int comp = 0;          // 1-based
    IndexSet R;            // the node's token indices
    TokenSeq known_tokens; // tokens at R, same order
    std::vector<AttnPartial> per_k;  // m/e/u^{R_i S_k}, k-1 indexed, rows = R
    std::vector<IndexSet> S;         // the plan's query/key shards
};

// Runs the sharded pipeline on the prompt and extracts what one CompNode saw
// in the first layer's post-pass.
inline CompNodeView build_compnode_view(const ModelWeights& model, const ShardPlan& plan,
                                        const TokenSeq& tokens, int comp) {
    if (comp < 1 || comp > plan.alpha) throw std::invalid_argument("unknown comp node");
    if (static_cast<int>(tokens.size()) != plan.N)
        throw std::invalid_argument("build_compnode_view: token count must equal plan N");
    Router router;
    router.enabled = false;
    CascadeOptions opts;
    opts.collect_layer0_meu = true;
    CascadeResult res = cascade_forward(model, plan, tokens, router, opts);
    CompNodeView view;
    view.comp = comp;
    view.R = plan.R[comp - 1];
    for (int x : view.R) view.known_tokens.push_back(tokens[x - 1]);
    view.per_k = res.layer0_meu[comp - 1].per_k;
    view.S = plan.S;
    return view;
}

// f(r, prefix) recovered from the received triples: u * e * exp(m) per head.
// Rows whose causal prefix in S_k is empty are the zero vector.
inline std::vector<Mat> layer0_f_values(const CompNodeView& view, const ModelConfig& cfg) {
    std::vector<Mat> out;
    for (const auto& p : view.per_k) {
        Mat f(static_cast<int>(p.rows.size()), cfg.H * cfg.d);
        for (size_t r = 0; r < p.rows.size(); ++r) {
            if (p.sentinel[r]) continue;
            for (int h = 0; h < cfg.H; ++h) {
                const double scale = p.e.at(static_cast<int>(r), h) *
                                     std::exp(p.m.at(static_cast<int>(r), h));
                const double* ub = p.u.row(static_cast<int>(r)) + h * cfg.d;
                double* fb = f.row(static_cast<int>(r)) + h * cfg.d;
                for (int t = 0; t < cfg.d; ++t) fb[t] = ub[t] * scale;
            }
        }
        out.push_back(std::move(f));
    }
    return out;
}

namespace detail {

// Layer-0 key/value rows for every vocabulary entry at one absolute position.
struct CandidateKv {
    Mat k;  // V x H_KV*d
    Mat v;
};

inline CandidateKv candidate_kv_at(const ModelWeights& model, int index_1based) {
    std::vector<int> positions(model.cfg.V, index_1based - 1);
    QkvRows qkv = qkv_for_rows(model, 0, model.embedding, positions);
    return {std::move(qkv.k), std::move(qkv.v)};
}

// q row at layer 0 for a known token at an absolute position.
inline Mat query_row_at(const ModelWeights& model, int token, int index_1based) {
    Mat h(1, model.cfg.d_emb);
    const double* e = model.embedding.row(token);
    for (int c = 0; c < model.cfg.d_emb; ++c) h.at(0, c) = e[c];
    QkvRows qkv = qkv_for_rows(model, 0, h, {index_1based - 1});
    return std::move(qkv.q);
}

// Single-position f contribution: per head h, exp(q_h . k_{g(h)}) * v_{g(h)}.
inline void add_f_contribution(const ModelConfig& cfg, const double* qrow, const double* krow,
                               const double* vrow, double* acc) {
    const int group = cfg.group_size();
    for (int h = 0; h < cfg.H; ++h) {
        const int hk = h / group;
        const double* qb = qrow + h * cfg.d;
        const double* kb = krow + hk * cfg.d;
        double s = 0.0;
        for (int t = 0; t < cfg.d; ++t) s += qb[t] * kb[t];
        const double w = std::exp(s);
        const double* vb = vrow + hk * cfg.d;
        double* ab = acc + h * cfg.d;
        for (int t = 0; t < cfg.d; ++t) ab[t] += w * vb[t];
    }
}

}  // namespace detail

// Constructive layer-0 attack on a CompNode's full view. At layer 0 the
// query/key/value rows are functions of (token, position) alone, so each
// received f value is an additive sum over the causal prefix of one key
// shard. Unknown tokens between consecutive known rows form a gap; when its
// size is under the threshold, enumerating all fillings and matching the
// residual f value recovers the gap exactly.
inline AttackResult layer0_meu_attack(const ModelWeights& model, const CompNodeView& view,
                                      const AttackBudget& budget,
                                      const TokenSeq* ground_truth = nullptr) {
    const ModelConfig& cfg = model.cfg;
    const int fdim = cfg.H * cfg.d;
    const double tol = 1e-6 * fdim;
    std::vector<Mat> f_per_k = layer0_f_values(view, cfg);

    std::map<int, int> known;  // index -> token
    for (size_t i = 0; i < view.R.size(); ++i) known[view.R[i]] = view.known_tokens[i];

    std::map<int, detail::CandidateKv> kv_cache;
    auto kv_at = [&](int pos) -> detail::CandidateKv& {
        auto it = kv_cache.find(pos);
        if (it == kv_cache.end())
            it = kv_cache.emplace(pos, detail::candidate_kv_at(model, pos)).first;
        return it->second;
    };
    std::vector<Mat> q_rows;  // per local row of R
    for (size_t i = 0; i < view.R.size(); ++i)
        q_rows.push_back(detail::query_row_at(model, view.known_tokens[i], view.R[i]));

    AttackResult res;
    bool any_unknown = false;
    bool any_collision = false;
    for (int k = 1; k <= static_cast<int>(view.S.size()); ++k) {
        const IndexSet& Sk = view.S[k - 1];
        bool blocked = false;
        for (size_t l = 0; l < view.R.size() && !blocked; ++l) {
            const int r = view.R[l];
            std::vector<int> prefix;  // s in S_k with s <= r
            for (int s : Sk)
                if (s <= r) prefix.push_back(s);
            std::vector<int> unknown;
            for (int s : prefix)
                if (!known.count(s)) unknown.push_back(s);
            if (unknown.empty()) continue;
            any_unknown = true;
            GapReport rep;
            rep.target_index = r;
            rep.gap = static_cast<int>(unknown.size());
            if (rep.gap >= budget.rho()) {
                rep.skipped_infeasible = true;
                if (res.limiting_gap == 0) res.limiting_gap = rep.gap;
                res.gaps.push_back(rep);
                blocked = true;  // later rows only widen this gap
                continue;
            }

            // residual target: f(r, prefix) minus known contributions
            std::vector<double> target(f_per_k[k - 1].row(static_cast<int>(l)),
                                       f_per_k[k - 1].row(static_cast<int>(l)) + fdim);
            const Mat& q = q_rows[l];
            for (int s : prefix) {
                auto it = known.find(s);
                if (it == known.end()) continue;
                const detail::CandidateKv& kv = kv_at(s);
                std::vector<double> tmp(fdim, 0.0);
                detail::add_f_contribution(cfg, q.row(0), kv.k.row(it->second),
                                           kv.v.row(it->second), tmp.data());
                for (int t = 0; t < fdim; ++t) target[t] -= tmp[t];
            }

            std::vector<int> tuple(unknown.size(), 0);
            std::vector<int> best_tuple;
            int within_tol = 0;
            std::vector<double> acc(fdim);
            do {
                if (res.forward_pass_count >= budget.pass_cap) {
                    res.note = "pass cap hit at index " + std::to_string(r);
                    throw PassCapExhausted(res);
                }
                std::fill(acc.begin(), acc.end(), 0.0);
                for (size_t t = 0; t < unknown.size(); ++t) {
                    const detail::CandidateKv& kv = kv_at(unknown[t]);
                    detail::add_f_contribution(cfg, q.row(0), kv.k.row(tuple[t]),
                                               kv.v.row(tuple[t]), acc.data());
                }
                ++res.forward_pass_count;
                ++rep.passes;
                const double dist = l1_distance(acc.data(), target.data(), fdim);
                if (best_tuple.empty() || dist < rep.best_distance) {
                    rep.runner_up_distance =
                        best_tuple.empty() ? rep.runner_up_distance : rep.best_distance;
                    rep.best_distance = dist;
                    best_tuple = tuple;
                } else if (dist < rep.runner_up_distance) {
                    rep.runner_up_distance = dist;
                }
                if (dist < tol) ++within_tol;
            } while (detail::advance_tuple(tuple, cfg.V));

            if (rep.best_distance >= tol) {
                any_collision = true;
                res.note = "no filling matched within tolerance at index " + std::to_string(r);
            } else if (within_tol > 1) {
                any_collision = true;
                res.note = "ambiguous filling at index " + std::to_string(r);
            }
            if (ground_truth != nullptr) {
                bool mismatch = false;
                for (size_t t = 0; t < unknown.size(); ++t)
                    if ((*ground_truth)[unknown[t] - 1] != best_tuple[t]) mismatch = true;
                if (mismatch) any_collision = true;
            }
            for (size_t t = 0; t < unknown.size(); ++t) {
                known[unknown[t]] = best_tuple[t];
                res.recovered.push_back({unknown[t], best_tuple[t]});
            }
            res.gaps.push_back(rep);
        }
    }
    if (any_collision)
        res.status = AttackStatus::collision_suspected;
    else if (any_unknown && res.recovered.empty())
        res.status = AttackStatus::infeasible_budget;
    else
        res.status = AttackStatus::recovered;
    std::sort(res.recovered.begin(), res.recovered.end());
    return res;
}

struct DecompositionCheck {
    bool pass = false;
    std::vector<std::pair<int, int>> witness;  // (token index in S_k, vocabulary id)
    double max_rel_error = 0.0;
};

// Verifies that every row of b^{R_i S_k} = [expsum(a), exp(a) v] is the sum
// of per-position candidate vectors selected by the true prompt tokens. The
// full candidate lists are materialized, so V must stay small.
inline DecompositionCheck subset_decomposition_check(const ModelWeights& model,
                                                     const ShardPlan& plan,
                                                     const TokenSeq& tokens, int comp, int k) {
    const ModelConfig& cfg = model.cfg;
    if (cfg.V > 64)
        throw std::invalid_argument("subset_decomposition_check: V too large to materialize");
    if (k < 1 || k > plan.beta) throw std::invalid_argument("unknown key shard");
    CompNodeView view = build_compnode_view(model, plan, tokens, comp);
    const AttnPartial& p = view.per_k[k - 1];
    const int bdim = cfg.H * (cfg.d + 1);

    std::map<int, detail::CandidateKv> kv_cache;
    DecompositionCheck out;
    out.pass = true;
    const IndexSet& Sk = plan.S[k - 1];
    for (int s : Sk)
        if (s <= view.R.back()) out.witness.push_back({s, tokens[s - 1]});

    for (size_t l = 0; l < view.R.size(); ++l) {
        const int r = view.R[l];
        // b row from the received triple: per head [e*exp(m), u*e*exp(m)]
        std::vector<double> brow(bdim, 0.0);
        if (!p.sentinel[l]) {
            for (int h = 0; h < cfg.H; ++h) {
                const double scale = p.e.at(static_cast<int>(l), h) *
                                     std::exp(p.m.at(static_cast<int>(l), h));
                brow[h * (cfg.d + 1)] = scale;
                const double* ub = p.u.row(static_cast<int>(l)) + h * cfg.d;
                for (int t = 0; t < cfg.d; ++t) brow[h * (cfg.d + 1) + 1 + t] = ub[t] * scale;
            }
        }
        Mat q = detail::query_row_at(model, view.known_tokens[l], r);
        std::vector<double> sum(bdim, 0.0);
        const int group = cfg.group_size();
        for (int s : Sk) {
            if (s > r) break;
            auto it = kv_cache.find(s);
            if (it == kv_cache.end())
                it = kv_cache.emplace(s, detail::candidate_kv_at(model, s)).first;
            // the full list B_{r,s} over the vocabulary: per head
            // [exp(q.k_v), exp(q.k_v) * v_v]
            std::vector<std::vector<double>> blist(cfg.V, std::vector<double>(bdim, 0.0));
            for (int v = 0; v < cfg.V; ++v) {
                for (int h = 0; h < cfg.H; ++h) {
                    const int hk = h / group;
                    const double* qb = q.row(0) + h * cfg.d;
                    const double* kb = it->second.k.row(v) + hk * cfg.d;
                    const double* vb = it->second.v.row(v) + hk * cfg.d;
                    double sc = 0.0;
                    for (int t = 0; t < cfg.d; ++t) sc += qb[t] * kb[t];
                    const double w = std::exp(sc);
                    blist[v][h * (cfg.d + 1)] = w;
                    for (int t = 0; t < cfg.d; ++t) blist[v][h * (cfg.d + 1) + 1 + t] = w * vb[t];
                }
            }
            const int chosen = tokens[s - 1];
            for (int t = 0; t < bdim; ++t) sum[t] += blist[chosen][t];
        }
        double scale = 1.0;
        for (double x : brow) scale = std::max(scale, std::fabs(x));
        double err = 0.0;
        for (int t = 0; t < bdim; ++t) err = std::max(err, std::fabs(sum[t] - brow[t]));
        out.max_rel_error = std::max(out.max_rel_error, err / scale);
        if (err / scale > 1e-9) out.pass = false;
    }
    return out;
}

struct CostEstimate {
    BigCost cost;
    Feasibility feas;
    std::optional<BigCost> cost_restricted;  // with a prior-restricted vocabulary
};

// Cost arithmetic for an observed index set, with the optional restricted
// vocabulary variant.
inline CostEstimate estimate_cost(const IndexSet& set, std::int64_t V, const AttackBudget& budget,
                                  std::optional<std::int64_t> v0_size = std::nullopt) {
    CostEstimate est;
    est.cost = vocab_matching_cost(set, V);
    est.feas = feasibility(set, budget);
    if (v0_size) est.cost_restricted = vocab_matching_cost(set, *v0_size);
    return est;
}

inline nlohmann::json attack_result_to_json(const AttackResult& res) {
    nlohmann::json j;
    j["status"] = attack_status_name(res.status);
    nlohmann::json rec = nlohmann::json::array();
    for (auto [idx, tok] : res.recovered) rec.push_back({{"index", idx}, {"token", tok}});
    j["recovered"] = rec;
    j["forward_pass_count"] = res.forward_pass_count;
    j["limiting_gap"] = res.limiting_gap;
    if (!res.note.empty()) j["note"] = res.note;
    nlohmann::json gaps = nlohmann::json::array();
    for (const auto& g : res.gaps) {
        nlohmann::json gj;
        gj["target_index"] = g.target_index;
        gj["gap"] = g.gap;
        gj["passes"] = g.passes;
        gj["skipped_infeasible"] = g.skipped_infeasible;
        gj["best_distance"] = g.best_distance;
        if (std::isfinite(g.runner_up_distance)) gj["runner_up_distance"] = g.runner_up_distance;
        if (!std::isnan(g.truth_distance)) gj["truth_distance"] = g.truth_distance;
        gaps.push_back(gj);
    }
    j["gaps"] = gaps;
    return j;
}

}  // namespace cascade
