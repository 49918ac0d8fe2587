#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "cascade/mat.hpp"
#include "cascade/rng.hpp"

namespace cascade {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Decoder-only toy transformer: RMS norm, rotary positions, grouped-query
// attention, gated MLP, LM head tied to the embedding table. float64
// throughout so the sharded pipeline can be tested against it at tight
// tolerances.
struct ModelConfig {
    int num_layers = 2;
    int d_emb = 32;    // residual stream width
    int H = 4;         // attention heads
    int H_KV = 4;      // key/value heads
    int d = 8;         // per-head dimension
    int V = 64;        // vocabulary size
    int mlp_hidden = 64;
    int max_seq = 128;
    double norm_eps = 1e-6;
    double rope_theta = 10000.0;

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (num_layers < 1) v.push_back("num_layers must be >= 1");
        if (d_emb < 1) v.push_back("d_emb must be >= 1");
        if (H < 1) v.push_back("H must be >= 1");
        if (H_KV < 1) v.push_back("H_KV must be >= 1");
        if (H >= 1 && H_KV >= 1 && H % H_KV != 0) v.push_back("H not divisible by H_KV");
        if (d < 1) v.push_back("d must be >= 1");
        if (V < 2) v.push_back("V must be >= 2");
        if (mlp_hidden < 1) v.push_back("mlp_hidden must be >= 1");
        if (max_seq < 1) v.push_back("max_seq must be >= 1");
        if (!(norm_eps > 0)) v.push_back("norm_eps must be > 0");
        if (!(rope_theta > 0)) v.push_back("rope_theta must be > 0");
        return v;
    }

    void validate() const {
        auto v = violations();
        if (!v.empty()) {
            std::string msg = "invalid model config: " + v[0];
            for (size_t i = 1; i < v.size(); ++i) msg += "; " + v[i];
            throw std::invalid_argument(msg);
        }
    }

    int q_width() const { return H * d; }
    int kv_width() const { return H_KV * d; }
    int group_size() const { return H / H_KV; }
};

struct LayerWeights {
    std::vector<double> attn_norm;  // d_emb
    Mat wq;                         // d_emb x H*d
    Mat wk;                         // d_emb x H_KV*d
    Mat wv;                         // d_emb x H_KV*d
    Mat wo;                         // H*d x d_emb
    std::vector<double> mlp_norm;   // d_emb
    Mat w_gate;                     // d_emb x mlp_hidden
    Mat w_up;                       // d_emb x mlp_hidden
    Mat w_down;                     // mlp_hidden x d_emb
};

struct ModelWeights {
    ModelConfig cfg;
    Mat embedding;  // V x d_emb, also the LM head (tied)
    std::vector<LayerWeights> layers;
    std::vector<double> final_norm;  // d_emb
};

using TokenSeq = std::vector<int>;

namespace detail {

inline void fill_scaled(Mat& m, SplitMix64& rng, int fan_in) {
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& x : m.a) x = rng.next_signed() * s;
}

inline std::vector<double> norm_weights(SplitMix64& rng, int n) {
    std::vector<double> w(n);
    for (double& x : w) x = 1.0 + 0.05 * rng.next_signed();
    return w;
}

}  // namespace detail

// Weights come from a single SplitMix64 stream in a fixed order, so the same
// (config, seed) regenerates them byte-identically; they are never stored.
inline ModelWeights new_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SplitMix64 rng(seed);
    ModelWeights w;
    w.cfg = cfg;
    w.embedding = Mat(cfg.V, cfg.d_emb);
    detail::fill_scaled(w.embedding, rng, cfg.d_emb);
    w.layers.resize(cfg.num_layers);
    for (auto& lw : w.layers) {
        lw.attn_norm = detail::norm_weights(rng, cfg.d_emb);
        lw.wq = Mat(cfg.d_emb, cfg.q_width());
        detail::fill_scaled(lw.wq, rng, cfg.d_emb);
        lw.wk = Mat(cfg.d_emb, cfg.kv_width());
        detail::fill_scaled(lw.wk, rng, cfg.d_emb);
        lw.wv = Mat(cfg.d_emb, cfg.kv_width());
        detail::fill_scaled(lw.wv, rng, cfg.d_emb);
        lw.wo = Mat(cfg.q_width(), cfg.d_emb);
        detail::fill_scaled(lw.wo, rng, cfg.q_width());
        lw.mlp_norm = detail::norm_weights(rng, cfg.d_emb);
        lw.w_gate = Mat(cfg.d_emb, cfg.mlp_hidden);
        detail::fill_scaled(lw.w_gate, rng, cfg.d_emb);
        lw.w_up = Mat(cfg.d_emb, cfg.mlp_hidden);
        detail::fill_scaled(lw.w_up, rng, cfg.d_emb);
        lw.w_down = Mat(cfg.mlp_hidden, cfg.d_emb);
        detail::fill_scaled(lw.w_down, rng, cfg.mlp_hidden);
    }
    w.final_norm = detail::norm_weights(rng, cfg.d_emb);
    return w;
}

inline void validate_tokens(const ModelConfig& cfg, const TokenSeq& tokens) {
    if (tokens.empty()) throw std::invalid_argument("token sequence is empty");
    if (static_cast<int>(tokens.size()) > cfg.max_seq)
        throw std::invalid_argument("token sequence longer than max_seq");
    for (int t : tokens)
        if (t < 0 || t >= cfg.V) throw std::invalid_argument("token id out of vocabulary range");
}

inline Mat rmsnorm_rows(const Mat& x, const std::vector<double>& w, double eps) {
    Mat out(x.rows, x.cols);
    for (int r = 0; r < x.rows; ++r) {
        const double* src = x.row(r);
        double ms = 0.0;
        for (int c = 0; c < x.cols; ++c) ms += src[c] * src[c];
        const double inv = 1.0 / std::sqrt(ms / x.cols + eps);
        double* dst = out.row(r);
        for (int c = 0; c < x.cols; ++c) dst[c] = src[c] * inv * w[c];
    }
    return out;
}

// Rotates each head block in place; positions are absolute 0-based token
// indices, which is what lets a shard holding token r position itself without
// seeing any other token. Pairs (t, t + d/2); an odd trailing dim is left
// unrotated.
inline void rope_rows(Mat& x, const std::vector<int>& positions, int d, double theta) {
    const int heads = x.cols / d;
    const int half = d / 2;
    for (int r = 0; r < x.rows; ++r) {
        const double pos = static_cast<double>(positions[r]);
        double* row = x.row(r);
        for (int h = 0; h < heads; ++h) {
            double* blk = row + h * d;
            for (int t = 0; t < half; ++t) {
                const double freq = std::pow(theta, -2.0 * t / d);
                const double ang = pos * freq;
                const double c = std::cos(ang), s = std::sin(ang);
                const double x0 = blk[t], x1 = blk[t + half];
                blk[t] = x0 * c - x1 * s;
                blk[t + half] = x0 * s + x1 * c;
            }
        }
    }
}

struct QkvRows {
    Mat q;  // rows x H*d, already scaled by 1/sqrt(d)
    Mat k;  // rows x H_KV*d
    Mat v;  // rows x H_KV*d
};

// Shared pre-attention math: norm, Q/K/V projection, rotary embedding. Used
// verbatim by the vanilla pass, the per-shard pre-pass, and attack candidate
// evaluation, so all three agree bit for bit.
inline QkvRows qkv_for_rows(const ModelWeights& w, int layer, const Mat& hidden,
                            const std::vector<int>& positions) {
    const ModelConfig& cfg = w.cfg;
    require_shape(hidden, hidden.rows, cfg.d_emb, "qkv_for_rows hidden");
    if (static_cast<int>(positions.size()) != hidden.rows)
        throw std::invalid_argument("qkv_for_rows: positions/rows mismatch");
    const LayerWeights& lw = w.layers[layer];
    Mat normed = rmsnorm_rows(hidden, lw.attn_norm, cfg.norm_eps);
    QkvRows out;
    out.q = matmul(normed, lw.wq);
    out.k = matmul(normed, lw.wk);
    out.v = matmul(normed, lw.wv);
    rope_rows(out.q, positions, cfg.d, cfg.rope_theta);
    rope_rows(out.k, positions, cfg.d, cfg.rope_theta);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    for (double& x : out.q.a) x *= scale;
    return out;
}

// Reference attention: per-head row-wise subtract-max softmax of (q kᵀ + mask)
// times v, with the H_KV -> H broadcast. Queries arrive pre-scaled. This is
// the golden oracle the sharded recombination is checked against.
inline Mat attention_reference(const Mat& q, const Mat& k, const Mat& v, const Mat& mask, int H,
                               int H_KV) {
    if (H % H_KV != 0) throw std::invalid_argument("attention_reference: H not divisible by H_KV");
    if (q.cols % H != 0) throw std::invalid_argument("attention_reference: q width not divisible by H");
    const int d = q.cols / H;
    require_shape(k, k.rows, H_KV * d, "attention_reference k");
    require_shape(v, k.rows, H_KV * d, "attention_reference v");
    require_shape(mask, q.rows, k.rows, "attention_reference mask");
    const int group = H / H_KV;
    Mat out(q.rows, H * d);
    std::vector<double> scores(k.rows);
    for (int h = 0; h < H; ++h) {
        const int hk = h / group;
        for (int r = 0; r < q.rows; ++r) {
            const double* qb = q.row(r) + h * d;
            double mx = kNegInf;
            for (int c = 0; c < k.rows; ++c) {
                const double* kb = k.row(c) + hk * d;
                double s = 0.0;
                for (int t = 0; t < d; ++t) s += qb[t] * kb[t];
                s += mask.at(r, c);
                scores[c] = s;
                mx = std::max(mx, s);
            }
            if (mx == kNegInf)
                throw std::invalid_argument("attention_reference: fully masked row");
            double denom = 0.0;
            for (int c = 0; c < k.rows; ++c) {
                scores[c] = std::exp(scores[c] - mx);
                denom += scores[c];
            }
            double* ob = out.row(r) + h * d;
            for (int c = 0; c < k.rows; ++c) {
                const double wgt = scores[c] / denom;
                const double* vb = v.row(c) + hk * d;
                for (int t = 0; t < d; ++t) ob[t] += wgt * vb[t];
            }
        }
    }
    return out;
}

inline Mat causal_mask(int n) {
    Mat m(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) m.at(r, c) = (c <= r) ? 0.0 : kNegInf;
    return m;
}

// Residual + gated MLP step shared by the vanilla layer and the post-pass:
// x + down(silu(gate(norm(x))) * up(norm(x))).
inline Mat mlp_step(const ModelWeights& w, int layer, const Mat& x) {
    const LayerWeights& lw = w.layers[layer];
    Mat normed = rmsnorm_rows(x, lw.mlp_norm, w.cfg.norm_eps);
    Mat g = matmul(normed, lw.w_gate);
    Mat u = matmul(normed, lw.w_up);
    for (size_t i = 0; i < g.a.size(); ++i) {
        const double z = g.a[i];
        g.a[i] = z / (1.0 + std::exp(-z)) * u.a[i];
    }
    Mat out = matmul(g, lw.w_down);
    add_inplace(out, x);
    return out;
}

inline Mat embed_tokens(const ModelWeights& w, const TokenSeq& tokens) {
    Mat h(static_cast<int>(tokens.size()), w.cfg.d_emb);
    for (size_t r = 0; r < tokens.size(); ++r) {
        const double* src = w.embedding.row(tokens[r]);
        double* dst = h.row(static_cast<int>(r));
        for (int c = 0; c < w.cfg.d_emb; ++c) dst[c] = src[c];
    }
    return h;
}

// One vanilla decoder layer over all rows.
inline Mat vanilla_layer(const ModelWeights& w, int layer, const Mat& hidden,
                         const std::vector<int>& positions) {
    QkvRows qkv = qkv_for_rows(w, layer, hidden, positions);
    Mat attn = attention_reference(qkv.q, qkv.k, qkv.v, causal_mask(hidden.rows), w.cfg.H,
                                   w.cfg.H_KV);
    Mat o = matmul(attn, w.layers[layer].wo);
    add_inplace(o, hidden);
    return mlp_step(w, layer, o);
}

// Hidden states after the first L layers; L = 0 is exactly the embedding
// lookup.
inline Mat forward_prefix(const ModelWeights& w, const TokenSeq& tokens, int L) {
    validate_tokens(w.cfg, tokens);
    if (L < 0 || L > w.cfg.num_layers)
        throw std::invalid_argument("forward_prefix: layer count out of range");
    Mat h = embed_tokens(w, tokens);
    std::vector<int> positions(tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i) positions[i] = static_cast<int>(i);
    for (int l = 0; l < L; ++l) h = vanilla_layer(w, l, h, positions);
    return h;
}

inline Mat final_logits(const ModelWeights& w, const Mat& hidden) {
    Mat normed = rmsnorm_rows(hidden, w.final_norm, w.cfg.norm_eps);
    // LM head is the tied embedding: logits[r][v] = normed[r] . embedding[v]
    Mat logits(normed.rows, w.cfg.V);
    for (int r = 0; r < normed.rows; ++r) {
        const double* hrow = normed.row(r);
        double* lrow = logits.row(r);
        for (int v = 0; v < w.cfg.V; ++v) {
            const double* erow = w.embedding.row(v);
            double s = 0.0;
            for (int c = 0; c < w.cfg.d_emb; ++c) s += hrow[c] * erow[c];
            lrow[v] = s;
        }
    }
    return logits;
}

inline Mat forward_full(const ModelWeights& w, const TokenSeq& tokens) {
    return final_logits(w, forward_prefix(w, tokens, w.cfg.num_layers));
}

// Smallest-id tie break, so decoding is a pure function of the logits.
inline int argmax_token(const double* logits, int V) {
    int best = 0;
    for (int v = 1; v < V; ++v)
        if (logits[v] > logits[best]) best = v;
    return best;
}

inline TokenSeq greedy_decode(const ModelWeights& w, const TokenSeq& prompt, int n_new) {
    validate_tokens(w.cfg, prompt);
    if (n_new < 0) throw std::invalid_argument("greedy_decode: n_new must be >= 0");
    if (static_cast<int>(prompt.size()) + n_new > w.cfg.max_seq)
        throw std::invalid_argument("greedy_decode: prompt + n_new exceeds max_seq");
    TokenSeq out = prompt;
    for (int i = 0; i < n_new; ++i) {
        Mat logits = forward_full(w, out);
        out.push_back(argmax_token(logits.row(logits.rows - 1), w.cfg.V));
    }
    return out;
}

}  // namespace cascade
