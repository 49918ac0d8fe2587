#include <catch2/catch_amalgamated.hpp>

#include "cascade/model.hpp"
#include "oracles.hpp"

using namespace cascade;

namespace {

ModelConfig toy_config() {
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.d_emb = 24;
    cfg.H = 4;
    cfg.H_KV = 2;
    cfg.d = 6;
    cfg.V = 48;
    cfg.mlp_hidden = 40;
    cfg.max_seq = 64;
    return cfg;
}

}  // namespace

TEST_CASE("weights regenerate byte-identically from (config, seed)") {
    ModelConfig cfg = toy_config();
    ModelWeights a = new_model(cfg, 7);
    ModelWeights b = new_model(cfg, 7);
    REQUIRE(a.embedding.a == b.embedding.a);
    for (int l = 0; l < cfg.num_layers; ++l) {
        REQUIRE(a.layers[l].wq.a == b.layers[l].wq.a);
        REQUIRE(a.layers[l].w_down.a == b.layers[l].w_down.a);
        REQUIRE(a.layers[l].attn_norm == b.layers[l].attn_norm);
    }
    REQUIRE(a.final_norm == b.final_norm);

    ModelWeights c = new_model(cfg, 8);
    REQUIRE(a.embedding.a != c.embedding.a);
}

TEST_CASE("invalid configs are reported by invariant") {
    ModelConfig cfg = toy_config();
    cfg.H = 4;
    cfg.H_KV = 3;
    REQUIRE_THROWS_WITH(new_model(cfg, 1), Catch::Matchers::ContainsSubstring(
                                               "H not divisible by H_KV"));
    cfg = toy_config();
    cfg.V = 1;
    REQUIRE_THROWS_WITH(new_model(cfg, 1), Catch::Matchers::ContainsSubstring("V"));
    cfg = toy_config();
    cfg.norm_eps = 0.0;
    REQUIRE_THROWS(new_model(cfg, 1));
}

TEST_CASE("layer 0 is exactly the embedding lookup") {
    ModelWeights w = new_model(toy_config(), 3);
    SplitMix64 rng(11);
    TokenSeq t = oracles::random_prompt(rng, 9, w.cfg.V);
    Mat h = forward_prefix(w, t, 0);
    REQUIRE(h.rows == 9);
    REQUIRE(h.cols == w.cfg.d_emb);
    for (int r = 0; r < h.rows; ++r)
        for (int c = 0; c < h.cols; ++c) REQUIRE(h.at(r, c) == w.embedding.at(t[r], c));
}

TEST_CASE("causal mask: prefixes reproduce the leading rows") {
    ModelWeights w = new_model(toy_config(), 5);
    SplitMix64 rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        TokenSeq t = oracles::random_prompt(rng, 12, w.cfg.V);
        const int p = 1 + static_cast<int>(rng.next_below(11));
        for (int L = 0; L <= w.cfg.num_layers; ++L) {
            Mat full = forward_prefix(w, t, L);
            TokenSeq head(t.begin(), t.begin() + p);
            Mat part = forward_prefix(w, head, L);
            Mat lead = take_rows(full, [&] {
                std::vector<int> idx(p);
                for (int i = 0; i < p; ++i) idx[i] = i;
                return idx;
            }());
            REQUIRE(rel_error(part, lead) < 1e-12);
        }
    }
}

TEST_CASE("single-token prefix has shape 1 x d_emb") {
    ModelWeights w = new_model(toy_config(), 5);
    Mat h = forward_prefix(w, {3}, w.cfg.num_layers);
    REQUIRE(h.rows == 1);
    REQUIRE(h.cols == w.cfg.d_emb);
}

TEST_CASE("forward_prefix rejects bad layer counts and empty input") {
    ModelWeights w = new_model(toy_config(), 5);
    REQUIRE_THROWS(forward_prefix(w, {1, 2}, w.cfg.num_layers + 1));
    REQUIRE_THROWS(forward_prefix(w, {}, 1));
    REQUIRE_THROWS(forward_prefix(w, {w.cfg.V}, 1));
}

TEST_CASE("full forward = final norm + LM head over the last prefix") {
    ModelWeights w = new_model(toy_config(), 9);
    SplitMix64 rng(13);
    TokenSeq t = oracles::random_prompt(rng, 10, w.cfg.V);
    Mat logits = forward_full(w, t);
    Mat via_prefix = final_logits(w, forward_prefix(w, t, w.cfg.num_layers));
    REQUIRE(logits.a == via_prefix.a);

    // appending a token never changes earlier logits rows
    TokenSeq longer = t;
    longer.push_back(5);
    Mat logits2 = forward_full(w, longer);
    for (int r = 0; r < logits.rows; ++r)
        for (int c = 0; c < logits.cols; ++c)
            REQUIRE(logits2.at(r, c) == Catch::Approx(logits.at(r, c)).epsilon(1e-12));
}

TEST_CASE("attention_reference: uniform logits average the value rows") {
    const int H = 2, H_KV = 2, d = 4, n = 5;
    Mat q(n, H * d);  // all zero -> all scores equal
    SplitMix64 rng(21);
    Mat k = oracles::random_mat(rng, n, H_KV * d);
    Mat v = oracles::random_mat(rng, n, H_KV * d);
    Mat mask(n, n);  // no masking
    Mat out = attention_reference(q, k, v, mask, H, H_KV);
    for (int h = 0; h < H; ++h)
        for (int t = 0; t < d; ++t) {
            double mean = 0.0;
            for (int c = 0; c < n; ++c) mean += v.at(c, h * d + t);
            mean /= n;
            for (int r = 0; r < n; ++r)
                REQUIRE(out.at(r, h * d + t) == Catch::Approx(mean).margin(1e-12));
        }
}

TEST_CASE("attention_reference: masked tail columns contribute exactly zero") {
    const int H = 2, H_KV = 1, d = 4, n = 6, keep = 3;
    SplitMix64 rng(22);
    Mat q = oracles::random_mat(rng, n, H * d);
    Mat k = oracles::random_mat(rng, n, H_KV * d);
    Mat v = oracles::random_mat(rng, n, H_KV * d);
    Mat mask(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = keep; c < n; ++c) mask.at(r, c) = kNegInf;
    Mat out = attention_reference(q, k, v, mask, H, H_KV);

    std::vector<int> lead = {0, 1, 2};
    Mat k3 = take_rows(k, lead), v3 = take_rows(v, lead);
    Mat mask3(n, keep);
    Mat out3 = attention_reference(q, k3, v3, mask3, H, H_KV);
    REQUIRE(rel_error(out, out3) < 1e-15);
}

TEST_CASE("attention_reference matches the extended-precision two-loop oracle") {
    SplitMix64 rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const int H = 2, H_KV = (trial % 2) ? 1 : 2, d = 4, n = 8;
        Mat q = oracles::random_mat(rng, n, H * d);
        Mat k = oracles::random_mat(rng, n, H_KV * d);
        Mat v = oracles::random_mat(rng, n, H_KV * d);
        Mat mask(n, n);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c)
                if (rng.next_double() < 0.2 && c != r) mask.at(r, c) = kNegInf;
        Mat got = attention_reference(q, k, v, mask, H, H_KV);
        Mat want = oracles::naive_attention(q, k, v, mask, H, H_KV);
        REQUIRE(rel_error(got, want) < 1e-12);
    }
}

TEST_CASE("attention_reference rejects shape mismatches") {
    Mat q(2, 8), k(3, 8), v(2, 8), mask(2, 3);
    REQUIRE_THROWS(attention_reference(q, k, v, mask, 2, 2));
}

TEST_CASE("grouped KV heads equal explicit broadcast") {
    ModelConfig grouped = toy_config();
    grouped.H = 2;
    grouped.H_KV = 1;
    grouped.num_layers = 1;
    ModelWeights a = new_model(grouped, 31);

    // same model with the single kv head physically duplicated
    ModelWeights b = a;
    b.cfg.H_KV = 2;
    for (auto& lw : b.layers) {
        Mat wk(grouped.d_emb, 2 * grouped.d), wv(grouped.d_emb, 2 * grouped.d);
        for (int r = 0; r < grouped.d_emb; ++r)
            for (int c = 0; c < grouped.d; ++c) {
                wk.at(r, c) = wk.at(r, c + grouped.d) = lw.wk.at(r, c);
                wv.at(r, c) = wv.at(r, c + grouped.d) = lw.wv.at(r, c);
            }
        lw.wk = wk;
        lw.wv = wv;
    }
    SplitMix64 rng(32);
    TokenSeq t = oracles::random_prompt(rng, 10, grouped.V);
    REQUIRE(rel_error(forward_full(a, t), forward_full(b, t)) < 1e-12);
}

TEST_CASE("greedy decoding matches the unrolled forward/argmax oracle") {
    ModelWeights w = new_model(toy_config(), 41);
    SplitMix64 rng(42);
    TokenSeq prompt = oracles::random_prompt(rng, 6, w.cfg.V);

    REQUIRE(greedy_decode(w, prompt, 0) == prompt);

    const int n_new = 5;
    TokenSeq got = greedy_decode(w, prompt, n_new);
    TokenSeq want = prompt;
    for (int i = 0; i < n_new; ++i) {
        Mat logits = forward_full(w, want);
        const double* row = logits.row(logits.rows - 1);
        int best = 0;
        for (int v = 1; v < w.cfg.V; ++v)
            if (row[v] > row[best]) best = v;
        want.push_back(best);
    }
    REQUIRE(got == want);
    REQUIRE(greedy_decode(w, prompt, n_new) == got);  // deterministic

    TokenSeq too_long(w.cfg.max_seq, 1);
    REQUIRE_THROWS(greedy_decode(w, too_long, 1));
}
