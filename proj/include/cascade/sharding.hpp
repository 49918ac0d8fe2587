#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <json.hpp>

namespace cascade {

using BigInt = boost::multiprecision::cpp_int;

// Token index sets are 1-based throughout, matching the sharding notation;
// conversion to 0-based row storage happens only inside the protocol and
// attack code.
using IndexSet = std::vector<int>;

inline std::vector<std::string> index_set_violations(const IndexSet& s, int N) {
    std::vector<std::string> v;
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] < 1 || s[i] > N) {
            v.push_back("index " + std::to_string(s[i]) + " out of range [1," + std::to_string(N) + "]");
            break;
        }
    }
    for (size_t i = 1; i < s.size(); ++i) {
        if (s[i] <= s[i - 1]) {
            v.push_back("indices not strictly increasing");
            break;
        }
    }
    return v;
}

// Clustered-arithmetic index sequence: c consecutive indices repeating with
// period delta.
struct CDeltaSpec {
    int c = 1;
    int delta = 1;
    int start = 1;

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (c < 1) v.push_back("c must be >= 1");
        if (delta < c) v.push_back("delta must be >= c (clusters must not overlap)");
        if (start < 1) v.push_back("start must be >= 1");
        return v;
    }
};

inline IndexSet c_delta_sequence(const CDeltaSpec& spec, int N) {
    auto v = spec.violations();
    if (!v.empty()) throw std::invalid_argument("invalid (c,delta) spec: " + v[0]);
    if (spec.start > N) throw std::invalid_argument("(c,delta) start exceeds N");
    IndexSet out;
    for (int base = spec.start; base <= N; base += spec.delta)
        for (int i = base; i < base + spec.c && i <= N; ++i) out.push_back(i);
    return out;
}

struct GapProfile {
    std::vector<int> gaps;  // first entry is i_1, then successive differences
    int max_gap = 0;
    std::vector<int> cluster_sizes;  // run lengths of consecutive indices
};

inline GapProfile gap_profile(const IndexSet& set) {
    if (set.empty()) throw std::invalid_argument("gap_profile: empty index set");
    GapProfile g;
    int prev = 0;
    int run = 0;
    for (int x : set) {
        const int gap = x - prev;
        g.gaps.push_back(gap);
        g.max_gap = std::max(g.max_gap, gap);
        if (gap == 1 && run > 0) {
            ++run;
        } else {
            if (run > 0) g.cluster_sizes.push_back(run);
            run = 1;
        }
        prev = x;
    }
    g.cluster_sizes.push_back(run);
    return g;
}

// Exact attack cost plus a float summary; exponents routinely exceed what a
// double can hold exactly, hence the big integer.
struct BigCost {
    BigInt total = 0;
    double log10_total = 0.0;
    int max_gap = 0;
};

inline double log10_of(const BigInt& x) {
    if (x <= 0) return -std::numeric_limits<double>::infinity();
    const std::string s = x.str();
    const size_t lead = std::min<size_t>(s.size(), 17);
    const double frac = std::stod(s.substr(0, lead));
    return std::log10(frac) + static_cast<double>(s.size() - lead);
}

inline BigInt bigint_pow(std::int64_t base, int exp) {
    BigInt r = 1;
    BigInt b = base;
    for (int i = 0; i < exp; ++i) r *= b;
    return r;
}

// Sum of V^gap over the gap profile: the forward-pass bound for reversing
// everything the last observed hidden state depends on.
inline BigCost vocab_matching_cost(const IndexSet& set, std::int64_t V) {
    if (V < 2) throw std::invalid_argument("vocab_matching_cost: V must be >= 2");
    GapProfile g = gap_profile(set);
    BigCost cost;
    cost.max_gap = g.max_gap;
    for (int gap : g.gaps) cost.total += bigint_pow(V, gap);
    cost.log10_total = log10_of(cost.total);
    return cost;
}

// Adversary resources: V^t_max forward passes are affordable, one more
// exponent is not. pass_cap bounds what attack code will actually execute.
struct AttackBudget {
    int t_max = 2;
    long long pass_cap = 10'000'000;

    int rho() const { return t_max + 1; }
    static AttackBudget from_rho(int rho, long long cap = 10'000'000) {
        if (rho < 1) throw std::invalid_argument("rho must be >= 1");
        if (cap < 1) throw std::invalid_argument("pass_cap must be >= 1");
        return AttackBudget{rho - 1, cap};
    }
};

struct Feasibility {
    bool feasible = true;
    int limiting_gap = 0;       // first gap value exceeding t_max, 0 if none
    int limiting_position = -1; // position of that gap in the profile
};

inline Feasibility feasibility(const IndexSet& set, const AttackBudget& budget) {
    GapProfile g = gap_profile(set);
    Feasibility f;
    for (size_t i = 0; i < g.gaps.size(); ++i) {
        if (g.gaps[i] > budget.t_max) {
            f.feasible = false;
            f.limiting_gap = g.gaps[i];
            f.limiting_position = static_cast<int>(i);
            return f;
        }
    }
    return f;
}

// Token-dimension shard plan: R partitions [N] over alpha CompNodes, S is the
// m-split refinement over beta = m*alpha query/key shards, and attn_pairs
// keeps one unordered (j,k) per AttnNode after symmetry reduction.
struct ShardPlan {
    int N = 0;
    int alpha = 0;
    int beta = 0;
    int m = 1;
    int c = 0;      // 0 when the plan was loaded rather than generated
    int delta = 0;
    bool irregular_tail = false;  // round-robin tail was used (N % (c*alpha) != 0)
    std::vector<IndexSet> R;
    std::vector<IndexSet> S;
    std::vector<std::pair<int, int>> attn_pairs;  // 1-based shard ids, j <= k

    // index -> owning shard, 1-based; built lazily by finalize()
    std::vector<int> comp_of_index;  // size N+1
    std::vector<int> s_of_index;     // size N+1

    void finalize() {
        comp_of_index.assign(N + 1, 0);
        s_of_index.assign(N + 1, 0);
        for (size_t i = 0; i < R.size(); ++i)
            for (int x : R[i]) comp_of_index[x] = static_cast<int>(i) + 1;
        for (size_t j = 0; j < S.size(); ++j)
            for (int x : S[j]) s_of_index[x] = static_cast<int>(j) + 1;
    }

    int comp_of(int index) const { return comp_of_index[index]; }
    int s_shard_of(int index) const { return s_of_index[index]; }

    int max_R_size() const {
        size_t m2 = 0;
        for (const auto& r : R) m2 = std::max(m2, r.size());
        return static_cast<int>(m2);
    }
    int max_S_size() const {
        size_t m2 = 0;
        for (const auto& s : S) m2 = std::max(m2, s.size());
        return static_cast<int>(m2);
    }
};

constexpr int kAutoSplit = -1;  // m = c, the recommended split

// Builds the (c,delta)-plan with delta = c*alpha. Every index x in a full
// period belongs to the shard owning its cluster; when N is not divisible by
// c*alpha the trailing indices are dealt round-robin so shard sizes stay
// within one of each other. Each R_i is then split into m stride-m position
// classes R_{i,x}, and S_{m(i-1)+x} = R_{i,x}.
inline ShardPlan build_plan(int N, int c, int alpha, int m_request = kAutoSplit) {
    if (N < 1) throw std::invalid_argument("build_plan: N must be >= 1");
    if (c < 1) throw std::invalid_argument("build_plan: c must be >= 1");
    if (alpha < 1) throw std::invalid_argument("build_plan: alpha must be >= 1");
    const int m = (m_request == kAutoSplit) ? c : m_request;
    if (m < 1) throw std::invalid_argument("build_plan: m must be >= 1");

    ShardPlan plan;
    plan.N = N;
    plan.alpha = alpha;
    plan.m = m;
    plan.c = c;
    plan.delta = c * alpha;
    plan.R.assign(alpha, {});

    const int period = c * alpha;
    const int n_full = (N / period) * period;
    for (int x = 1; x <= n_full; ++x) {
        const int i = ((x - 1) % period) / c;  // cluster owner within the period
        plan.R[i].push_back(x);
    }
    plan.irregular_tail = (n_full != N);
    for (int t = 1; n_full + t <= N; ++t) plan.R[(t - 1) % alpha].push_back(n_full + t);

    for (const auto& r : plan.R) {
        if (static_cast<int>(r.size()) < m)
            throw std::invalid_argument("build_plan: m exceeds shard size |R_i|");
    }

    plan.beta = m * alpha;
    plan.S.assign(plan.beta, {});
    for (int i = 0; i < alpha; ++i) {
        for (int x = 1; x <= m; ++x) {
            IndexSet& piece = plan.S[m * i + (x - 1)];
            for (size_t p = static_cast<size_t>(x) - 1; p < plan.R[i].size(); p += m)
                piece.push_back(plan.R[i][p]);
        }
    }
    for (int j = 1; j <= plan.beta; ++j)
        for (int k = j; k <= plan.beta; ++k) plan.attn_pairs.emplace_back(j, k);
    plan.finalize();
    return plan;
}

inline std::vector<std::string> validate_plan(const ShardPlan& plan) {
    std::vector<std::string> out;
    auto check_partition = [&](const std::vector<IndexSet>& parts, const char* name) {
        std::vector<int> seen(plan.N + 1, 0);
        for (const auto& p : parts) {
            for (const auto& v : index_set_violations(p, plan.N))
                out.push_back(std::string(name) + " shard: " + v);
            for (int x : p) {
                if (x >= 1 && x <= plan.N) ++seen[x];
            }
        }
        for (int x = 1; x <= plan.N; ++x) {
            if (seen[x] == 0) {
                out.push_back(std::string(name) + " does not cover index " + std::to_string(x));
                return;
            }
            if (seen[x] > 1) {
                out.push_back(std::string(name) + " not disjoint at index " + std::to_string(x));
                return;
            }
        }
    };
    check_partition(plan.R, "R");
    check_partition(plan.S, "S");
    if (plan.beta != static_cast<int>(plan.S.size()))
        out.push_back("beta does not match S shard count");
    if (plan.beta != plan.m * plan.alpha) out.push_back("beta != m*alpha");

    // Pairwise coverage: (x,y) is handled by the retained pair over the
    // shards holding x and y (unordered, per symmetry reduction).
    std::vector<std::vector<char>> have(plan.beta + 1, std::vector<char>(plan.beta + 1, 0));
    for (auto [j, k] : plan.attn_pairs) {
        if (j < 1 || k < 1 || j > plan.beta || k > plan.beta || j > k) {
            out.push_back("attn pair (" + std::to_string(j) + "," + std::to_string(k) +
                          ") malformed");
            continue;
        }
        if (have[j][k]) out.push_back("attn pair listed twice");
        have[j][k] = 1;
    }
    if (out.empty()) {
        for (int x = 1; x <= plan.N && out.empty(); ++x) {
            for (int y = 1; y <= plan.N; ++y) {
                int j = plan.s_shard_of(x), k = plan.s_shard_of(y);
                if (j > k) std::swap(j, k);
                if (!have[j][k]) {
                    out.push_back("pair coverage: indices (" + std::to_string(x) + "," +
                                  std::to_string(y) + ") not covered");
                    break;
                }
            }
        }
    }
    return out;
}

// Node handle for leakage queries: a CompNode sees R_i, an AttnNode sees
// S_j union S_k.
struct NodeRef {
    enum class Kind { comp, attn } kind = Kind::comp;
    int i = 0;  // comp id
    int j = 0, k = 0;  // attn pair

    static NodeRef comp(int i) { return NodeRef{Kind::comp, i, 0, 0}; }
    static NodeRef attn(int j, int k) { return NodeRef{Kind::attn, 0, j, k}; }

    std::string str() const {
        if (kind == Kind::comp) return "comp:" + std::to_string(i);
        return "attn:" + std::to_string(j) + "," + std::to_string(k);
    }
};

inline IndexSet node_index_set(const ShardPlan& plan, const NodeRef& node) {
    if (node.kind == NodeRef::Kind::comp) {
        if (node.i < 1 || node.i > plan.alpha)
            throw std::invalid_argument("unknown node id " + node.str());
        return plan.R[node.i - 1];
    }
    if (node.j < 1 || node.j > plan.beta || node.k < 1 || node.k > plan.beta)
        throw std::invalid_argument("unknown node id " + node.str());
    IndexSet u = plan.S[node.j - 1];
    u.insert(u.end(), plan.S[node.k - 1].begin(), plan.S[node.k - 1].end());
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    return u;
}

struct CollusionView {
    IndexSet indices;
    GapProfile profile;
    Feasibility feas;
};

// Colluding nodes pool the union of their shards; the profile and budget
// check describe what that union exposes to vocab matching.
inline CollusionView collusion_union(const ShardPlan& plan, const std::vector<NodeRef>& nodes,
                                     const AttackBudget& budget) {
    if (nodes.empty()) throw std::invalid_argument("collusion_union: no nodes given");
    IndexSet u;
    for (const auto& n : nodes) {
        IndexSet s = node_index_set(plan, n);
        u.insert(u.end(), s.begin(), s.end());
    }
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    CollusionView view;
    view.indices = u;
    view.profile = gap_profile(u);
    view.feas = feasibility(u, budget);
    return view;
}

inline nlohmann::json plan_to_json(const ShardPlan& plan) {
    nlohmann::json j;
    j["N"] = plan.N;
    j["alpha"] = plan.alpha;
    j["beta"] = plan.beta;
    j["m"] = plan.m;
    j["c"] = plan.c;
    j["delta"] = plan.delta;
    j["irregular_tail"] = plan.irregular_tail;
    j["R"] = plan.R;
    j["S"] = plan.S;
    nlohmann::json pairs = nlohmann::json::array();
    for (auto [a, b] : plan.attn_pairs) pairs.push_back({a, b});
    j["attn_pairs"] = pairs;
    return j;
}

inline ShardPlan plan_from_json(const nlohmann::json& j) {
    ShardPlan plan;
    plan.N = j.at("N").get<int>();
    plan.alpha = j.at("alpha").get<int>();
    plan.beta = j.at("beta").get<int>();
    plan.m = j.value("m", 1);
    plan.c = j.value("c", 0);
    plan.delta = j.value("delta", 0);
    plan.irregular_tail = j.value("irregular_tail", false);
    plan.R = j.at("R").get<std::vector<IndexSet>>();
    plan.S = j.at("S").get<std::vector<IndexSet>>();
    for (const auto& p : j.at("attn_pairs")) plan.attn_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    if (static_cast<int>(plan.R.size()) != plan.alpha)
        throw std::invalid_argument("plan: alpha does not match R count");
    if (static_cast<int>(plan.S.size()) != plan.beta)
        throw std::invalid_argument("plan: beta does not match S count");
    plan.finalize();
    auto violations = validate_plan(plan);
    if (!violations.empty()) throw std::invalid_argument("plan: " + violations[0]);
    return plan;
}

}  // namespace cascade
