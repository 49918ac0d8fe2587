// Acceptance suite: every release criterion as one test case that prints a
// single PASS/FAIL line. Run via `ctest -R acceptance` or directly.

#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "cascade/cascade.hpp"
#include "oracles.hpp"

using namespace cascade;

namespace {

struct Stopwatch {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

void criterion(int number, const char* what, bool ok, double seconds) {
    std::printf("[%s] criterion %2d (%5.1fs): %s\n", ok ? "PASS" : "FAIL", number, seconds, what);
    std::fflush(stdout);
    REQUIRE(ok);
}

ModelConfig base_config(int H, int H_KV, int layers, std::uint64_t knob) {
    ModelConfig cfg;
    cfg.num_layers = layers;
    cfg.d_emb = 16 + static_cast<int>(knob % 3) * 8;
    cfg.H = H;
    cfg.H_KV = H_KV;
    cfg.d = 4 + static_cast<int>(knob % 2) * 4;
    cfg.V = 32;
    cfg.mlp_hidden = 24;
    cfg.max_seq = 80;
    return cfg;
}

ModelConfig bench_config(int layers, int heads) {
    ModelConfig cfg;
    cfg.num_layers = layers;
    cfg.H = heads;
    cfg.H_KV = heads;
    cfg.d = 64;
    cfg.d_emb = 64;
    cfg.V = 32;
    cfg.mlp_hidden = 64;
    cfg.max_seq = 128;
    return cfg;
}

}  // namespace

TEST_CASE("criterion 1: sharded forward equals vanilla over a randomized grid") {
    Stopwatch clock;
    SplitMix64 rng(20240001);
    int cases = 0;
    double worst = 0.0;
    bool ok = true;
    while (cases < 200) {
        for (int alpha = 1; alpha <= 4 && cases < 210; ++alpha) {
            for (int c : {1, 2}) {
                for (int m : {1, 2, kAutoSplit}) {
                    const int H = 4;
                    const int H_KV = (rng.next_u64() & 1) ? H : H / 2;
                    ModelConfig cfg = base_config(H, H_KV, 1 + (cases % 2), rng.next_u64());
                    const int N =
                        std::max(c * alpha, 8 + static_cast<int>(rng.next_below(57)));  // 8..64
                    ShardPlan plan;
                    try {
                        plan = build_plan(N, c, alpha, m);
                    } catch (const std::invalid_argument&) {
                        continue;  // m exceeded a shard size
                    }
                    ModelWeights w = new_model(cfg, rng.next_u64());
                    TokenSeq prompt = oracles::random_prompt(rng, N, cfg.V);
                    Router router;
                    router.enabled = false;
                    CascadeResult res = cascade_forward(w, plan, prompt, router);
                    const double err = rel_error(res.reassembled_logits, forward_full(w, prompt));
                    worst = std::max(worst, err);
                    ok = ok && err < 1e-9;
                    ++cases;
                }
            }
        }
    }
    ok = ok && cases >= 200 && clock.seconds() < 120.0;
    std::printf("    cases=%d max_rel_error=%.3e\n", cases, worst);
    criterion(1, "protocol correctness vs vanilla forward (max rel err < 1e-9)", ok,
              clock.seconds());
}

TEST_CASE("criterion 2: byte table reproduction with F=2") {
    Stopwatch clock;
    NetworkParams net{2.5e8, 0.38e-3, 2};
    struct Row {
        ModelConfig cfg;
        int beta;
        double printed_gb;
    };
    const Row rows[] = {
        {bench_config(12, 12), 1, 0.009}, {bench_config(12, 12), 4, 0.038},
        {bench_config(12, 12), 8, 0.076}, {bench_config(24, 16), 1, 0.025},
        {bench_config(24, 16), 4, 0.101}, {bench_config(24, 16), 8, 0.203},
    };
    bool ok = true;
    for (const Row& row : rows) {
        ShardPlan plan = build_plan(128, 1, row.beta, 1);
        ModelWeights w = new_model(row.cfg, 2024);
        SplitMix64 rng(row.beta);
        TokenSeq prompt = oracles::random_prompt(rng, 128, row.cfg.V);
        Router router;
        cascade_forward(w, plan, prompt, router);
        CommReport rep = measure_run(router.trace, net, row.cfg, plan);

        const double predicted_gb = static_cast<double>(rep.predicted_total_bytes) / 1e9;
        const double measured_gb = static_cast<double>(rep.total_bytes) / 1e9;
        const bool within = std::fabs(predicted_gb - row.printed_gb) / row.printed_gb < 0.06 &&
                            std::fabs(measured_gb - row.printed_gb) / row.printed_gb < 0.06;
        const bool exact = rep.total_bytes == rep.predicted_total_bytes;
        std::printf("    L=%-2d H=%-2d beta=%d predicted=%.6f GB measured=%.6f GB (table %.3f)\n",
                    row.cfg.num_layers, row.cfg.H, row.beta, predicted_gb, measured_gb,
                    row.printed_gb);
        ok = ok && within && exact;
    }
    ok = ok && clock.seconds() < 60.0;
    criterion(2, "predicted and measured bytes match the reference table (F=2)", ok,
              clock.seconds());
}

TEST_CASE("criterion 3: gap cost arithmetic at full vocabulary scale") {
    Stopwatch clock;
    CostEstimate est = estimate_cost({3, 5, 10}, 256000, AttackBudget::from_rho(3));
    BigInt v = 256000;
    BigInt expect = v * v * v + v * v;
    BigInt v5 = 1;
    for (int i = 0; i < 5; ++i) v5 *= v;
    expect += v5;
    const double dominant_log10 = 5.0 * std::log10(256000.0);
    bool ok = est.cost.total == expect;
    ok = ok && dominant_log10 >= 27.0 && dominant_log10 <= 27.1;
    ok = ok && est.cost.log10_total >= 27.0 && est.cost.log10_total <= 27.1;
    ok = ok && !est.feas.feasible;
    criterion(3, "exact big-integer cost for {3,5,10} at V=256000, log10 in [27.0, 27.1]", ok,
              clock.seconds());
}

TEST_CASE("criterion 4: vocab-matching soundness at toy scale") {
    Stopwatch clock;
    SplitMix64 rng(20240004);
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.d_emb = 20;
    cfg.H = 2;
    cfg.H_KV = 2;
    cfg.d = 6;
    cfg.V = 32;
    cfg.mlp_hidden = 24;
    cfg.max_seq = 32;

    bool ok = true;
    int recovered = 0, certified = 0;
    for (int trial = 0; trial < 100; ++trial) {
        ModelWeights w = new_model(cfg, 40'000 + trial);
        TokenSeq prompt = oracles::random_prompt(rng, 6, cfg.V);
        const int layer = 1 + (trial % 2);
        Mat hidden = forward_prefix(w, prompt, layer);
        ShardObservation obs{layer, {1, 2, 3, 4, 5, 6}, hidden};
        AttackResult res = vocab_match(w, obs, AttackBudget::from_rho(2), &prompt);
        if (res.status == AttackStatus::recovered) {
            ++recovered;
            for (int i = 0; i < 6; ++i) ok = ok && res.recovered[i].second == prompt[i];
        } else if (res.status == AttackStatus::collision_suspected) {
            ++certified;
        } else {
            ok = false;
        }
    }
    std::printf("    full observations: %d recovered, %d certified collisions\n", recovered,
                certified);

    ModelWeights w = new_model(cfg, 424242);
    TokenSeq prompt = oracles::random_prompt(rng, 6, cfg.V);
    Mat hidden = forward_prefix(w, prompt, 2);
    ShardObservation sparse{2, {2, 4, 6}, take_rows(hidden, {1, 3, 5})};
    AttackResult gen = vocab_match(w, sparse, AttackBudget::from_rho(3), &prompt);
    ok = ok && gen.status == AttackStatus::recovered && gen.recovered.size() == 6;
    for (int i = 0; i < 6 && ok; ++i) ok = gen.recovered[i].second == prompt[i];

    ShardObservation wide{1, {1, 5}, take_rows(forward_prefix(w, prompt, 1), {0, 4})};
    AttackResult blocked = vocab_match(w, wide, AttackBudget::from_rho(3), &prompt);
    ok = ok && blocked.status == AttackStatus::infeasible_budget;

    ok = ok && clock.seconds() < 180.0;
    criterion(4, "toy-scale vocab matching: full recovery, {2,4,6} recovery, {1,5} blocked", ok,
              clock.seconds());
}

TEST_CASE("criterion 5: layer-0 recombination attack walks the threshold boundary") {
    Stopwatch clock;
    SplitMix64 rng(20240005);
    ModelConfig cfg;
    cfg.num_layers = 1;
    cfg.d_emb = 16;
    cfg.H = 2;
    cfg.H_KV = 2;
    cfg.d = 4;
    cfg.V = 16;
    cfg.mlp_hidden = 16;
    cfg.max_seq = 48;

    const AttackBudget budget = AttackBudget::from_rho(3);
    bool ok = true;
    int attacked = 0, blocked = 0, views = 0;
    for (int trial = 0; views < 20; ++trial) {
        const int c = 1 + static_cast<int>(rng.next_below(3));      // 1..3
        const int alpha = 2 + static_cast<int>(rng.next_below(2));  // 2..3
        const int periods = 1 + static_cast<int>(rng.next_below(2));
        const int N = c * alpha * periods;
        ShardPlan plan = build_plan(N, c, alpha, 1);
        ModelWeights w = new_model(cfg, 50'000 + trial);
        TokenSeq prompt = oracles::random_prompt(rng, N, cfg.V);
        const int comp = 1 + static_cast<int>(rng.next_below(alpha));
        CompNodeView view = build_compnode_view(w, plan, prompt, comp);
        ++views;

        // expected walk: tokens in gaps smaller than rho, shard by shard
        std::set<int> expect;
        bool any_unknown = false;
        for (int k = 1; k <= plan.beta; ++k) {
            std::set<int> known(view.R.begin(), view.R.end());
            for (int r : view.R) {
                std::vector<int> unknown;
                for (int s : plan.S[k - 1])
                    if (s <= r && !known.count(s) && !expect.count(s)) unknown.push_back(s);
                if (unknown.empty()) continue;
                any_unknown = true;
                if (static_cast<int>(unknown.size()) < budget.rho())
                    expect.insert(unknown.begin(), unknown.end());
                else
                    break;
            }
        }

        AttackResult res = layer0_meu_attack(w, view, budget, &prompt);
        if (!any_unknown || !expect.empty()) {
            ok = ok && res.status == AttackStatus::recovered;
            ++attacked;
        } else {
            ok = ok && res.status == AttackStatus::infeasible_budget;
            ++blocked;
        }
        ok = ok && res.recovered.size() == expect.size();
        for (auto [idx, tok] : res.recovered)
            ok = ok && expect.count(idx) == 1 && tok == prompt[idx - 1];
    }
    std::printf("    %d views: %d with recoverable gaps, %d fully blocked\n", views, attacked,
                blocked);
    ok = ok && attacked > 0 && blocked > 0 && clock.seconds() < 180.0;
    criterion(5, "layer-0 attack recovers gaps < rho and is blocked at >= rho", ok,
              clock.seconds());
}

TEST_CASE("criterion 6: subset decomposition identity on the worked plan") {
    Stopwatch clock;
    SplitMix64 rng(20240006);
    ModelConfig cfg;
    cfg.num_layers = 1;
    cfg.d_emb = 16;
    cfg.H = 2;
    cfg.H_KV = 2;
    cfg.d = 4;
    cfg.V = 16;
    cfg.mlp_hidden = 16;
    cfg.max_seq = 32;
    ShardPlan plan = build_plan(18, 2, 3, 2);
    bool ok = true;
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        ModelWeights w = new_model(cfg, 60'000 + trial);
        TokenSeq prompt = oracles::random_prompt(rng, 18, cfg.V);
        for (int comp = 1; comp <= plan.alpha; ++comp)
            for (int k = 1; k <= plan.beta; ++k) {
                DecompositionCheck check = subset_decomposition_check(w, plan, prompt, comp, k);
                worst = std::max(worst, check.max_rel_error);
                ok = ok && check.pass;
            }
    }
    std::printf("    180 (prompt, node, shard) checks, worst rel error %.3e\n", worst);
    criterion(6, "b-rows decompose into vocabulary-selected sums (1e-9)", ok, clock.seconds());
}

TEST_CASE("criterion 7: partitioned softmax recombination identity") {
    Stopwatch clock;
    SplitMix64 rng(20240007);
    bool ok = true;
    int checked = 0, with_sentinel = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_below(24));
        std::vector<double> x(n);
        for (double& v : x) v = rng.next_signed() * 9.0;
        bool has_neg_inf = false;
        if (trial % 2 == 0) {
            for (double& v : x)
                if (rng.next_double() < 0.25) {
                    v = kNegInf;
                    has_neg_inf = true;
                }
        }
        bool any_finite = false;
        for (double v : x) any_finite |= std::isfinite(v);
        if (!any_finite) x[0] = 0.5;

        const int parts = 1 + static_cast<int>(rng.next_below(5));
        std::vector<std::vector<int>> blocks(parts);
        for (int i = 0; i < n; ++i) blocks[rng.next_below(parts)].push_back(i);

        double gmax = kNegInf;
        for (double v : x) gmax = std::max(gmax, v);
        double gsum = 0.0;
        for (double v : x) gsum += std::exp(v - gmax);

        double nmax = kNegInf;
        std::vector<double> bm(parts, kNegInf), be(parts, 0.0);
        for (int p = 0; p < parts; ++p) {
            for (int i : blocks[p]) bm[p] = std::max(bm[p], x[i]);
            if (bm[p] == kNegInf) continue;
            for (int i : blocks[p]) be[p] += std::exp(x[i] - bm[p]);
            nmax = std::max(nmax, bm[p]);
        }
        double wsum = 0.0;
        for (int p = 0; p < parts; ++p)
            if (bm[p] != kNegInf) wsum += std::exp(bm[p] - nmax) * be[p];

        for (int p = 0; p < parts; ++p) {
            if (bm[p] == kNegInf) {
                for (int i : blocks[p]) ok = ok && std::exp(x[i] - gmax) / gsum == 0.0;
                continue;
            }
            const double wk = std::exp(bm[p] - nmax) * be[p] / wsum;
            for (int i : blocks[p]) {
                const double lhs = std::exp(x[i] - gmax) / gsum;
                const double rhs = wk * std::exp(x[i] - bm[p]) / be[p];
                ok = ok && std::fabs(lhs - rhs) < 1e-12;
            }
        }
        ++checked;
        if (has_neg_inf) ++with_sentinel;
    }
    std::printf("    %d rows checked (%d exercising the sentinel path)\n", checked, with_sentinel);
    ok = ok && checked == 1000 && with_sentinel > 200;
    criterion(7, "softmax(x)[S_k] recombination equality within 1e-12", ok, clock.seconds());
}

TEST_CASE("criterion 8: measured round counts") {
    Stopwatch clock;
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.d_emb = 16;
    cfg.H = 2;
    cfg.H_KV = 2;
    cfg.d = 4;
    cfg.V = 16;
    cfg.mlp_hidden = 16;
    cfg.max_seq = 64;
    NetworkParams net{2.5e8, 0.38e-3, 2};
    bool ok = true;
    SplitMix64 rng(20240008);
    for (auto [N, c, alpha, m] : {std::tuple{18, 2, 3, 2}, {16, 2, 2, 1}, {24, 2, 3, -1},
                                  {16, 1, 4, 2}, {12, 1, 1, 1}, {40, 2, 4, 2}}) {
        ShardPlan plan = build_plan(N, c, alpha, m);
        ModelWeights w = new_model(cfg, N * 131);
        TokenSeq prompt = oracles::random_prompt(rng, N, cfg.V);
        Router router;
        cascade_forward(w, plan, prompt, router);
        CommReport rep = measure_run(router.trace, net, cfg, plan);
        const int expect = plan.m * plan.alpha * plan.beta + plan.beta * (plan.beta + 1) / 2;
        for (int r : rep.rounds_per_layer) {
            ok = ok && r <= 2 * plan.alpha * plan.beta * plan.beta;
            ok = ok && r == expect;
        }
        std::printf("    N=%-3d c=%d alpha=%d m=%d beta=%d rounds/layer=%d (= %d, cap %d)\n", N,
                    c, alpha, plan.m, plan.beta, rep.rounds_per_layer[0], expect,
                    2 * plan.alpha * plan.beta * plan.beta);
    }
    criterion(8, "rounds <= 2*alpha*beta^2 and split plans hit m*alpha*beta + beta(beta+1)/2",
              ok, clock.seconds());
}

TEST_CASE("criterion 9: cached generation equals greedy decoding") {
    Stopwatch clock;
    SplitMix64 rng(20240009);
    bool ok = true;
    for (int trial = 0; trial < 20; ++trial) {
        ModelConfig cfg;
        cfg.num_layers = 1 + (trial % 2);
        cfg.d_emb = 16 + (trial % 3) * 4;
        cfg.H = 2;
        cfg.H_KV = (trial % 2) ? 1 : 2;
        cfg.d = 4;
        cfg.V = 24;
        cfg.mlp_hidden = 16;
        cfg.max_seq = 64;
        const int n_new = 16;
        const int c = 1 + static_cast<int>(rng.next_below(2));
        const int alpha = 1 + static_cast<int>(rng.next_below(3));
        const int prompt_len = 4 + static_cast<int>(rng.next_below(8));
        int N = prompt_len + n_new;
        if (N % (c * alpha)) N += c * alpha - (N % (c * alpha));
        ShardPlan plan = build_plan(N, c, alpha, (trial % 2) ? kAutoSplit : 1);
        ModelWeights w = new_model(cfg, 70'000 + trial);
        TokenSeq prompt = oracles::random_prompt(rng, prompt_len, cfg.V);
        Router router;
        GenerateResult gen = cascade_generate(w, plan, prompt, n_new, router);
        ok = ok && gen.tokens == greedy_decode(w, prompt, n_new);
        for (const auto& s : gen.steps)
            ok = ok && s.active_comp_nodes == 1 && s.active_attn_nodes == plan.beta;
    }
    ok = ok && clock.seconds() < 120.0;
    criterion(9, "16-token generation matches vanilla greedy; 1 CompNode + beta AttnNodes/step",
              ok, clock.seconds());
}

TEST_CASE("criterion 10: worked-example shard sets") {
    Stopwatch clock;
    ShardPlan plan = build_plan(18, 2, 3, 2);
    bool ok = true;

    ok = ok && plan.R[0] == IndexSet{1, 2, 7, 8, 13, 14};
    ok = ok && plan.R[1] == IndexSet{3, 4, 9, 10, 15, 16};
    ok = ok && plan.R[2] == IndexSet{5, 6, 11, 12, 17, 18};

    // the six split pieces R_{i,x} in S order
    ok = ok && plan.S[0] == IndexSet{1, 7, 13};
    ok = ok && plan.S[1] == IndexSet{2, 8, 14};
    ok = ok && plan.S[2] == IndexSet{3, 9, 15};
    ok = ok && plan.S[3] == IndexSet{4, 10, 16};
    ok = ok && plan.S[4] == IndexSet{5, 11, 17};
    ok = ok && plan.S[5] == IndexSet{6, 12, 18};

    // all 21 pairwise unions, keyed by (piece, piece)
    const std::map<std::pair<int, int>, IndexSet> unions = {
        {{1, 1}, {1, 7, 13}},
        {{1, 3}, {1, 3, 7, 9, 13, 15}},
        {{1, 5}, {1, 5, 7, 11, 13, 17}},
        {{1, 2}, {1, 2, 7, 8, 13, 14}},
        {{1, 4}, {1, 4, 7, 10, 13, 16}},
        {{1, 6}, {1, 6, 7, 12, 13, 18}},
        {{3, 3}, {3, 9, 15}},
        {{3, 5}, {3, 5, 9, 11, 15, 17}},
        {{2, 3}, {2, 3, 8, 9, 14, 15}},
        {{3, 4}, {3, 4, 9, 10, 15, 16}},
        {{3, 6}, {3, 6, 9, 12, 15, 18}},
        {{5, 5}, {5, 11, 17}},
        {{2, 5}, {2, 5, 8, 11, 14, 17}},
        {{4, 5}, {4, 5, 10, 11, 16, 17}},
        {{5, 6}, {5, 6, 11, 12, 17, 18}},
        {{2, 2}, {2, 8, 14}},
        {{2, 4}, {2, 4, 8, 10, 14, 16}},
        {{2, 6}, {2, 6, 8, 12, 14, 18}},
        {{4, 4}, {4, 10, 16}},
        {{4, 6}, {4, 6, 10, 12, 16, 18}},
        {{6, 6}, {6, 12, 18}},
    };
    ok = ok && plan.attn_pairs.size() == unions.size();
    for (auto [jk, want] : unions)
        ok = ok && node_index_set(plan, NodeRef::attn(jk.first, jk.second)) == want;

    criterion(10, "build_plan(18,2,3,2) reproduces every worked R, S, and pair union", ok,
              clock.seconds());
}
