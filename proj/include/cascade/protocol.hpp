#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cascade/mat.hpp"
#include "cascade/model.hpp"
#include "cascade/netsim.hpp"
#include "cascade/sharding.hpp"

namespace cascade {

// Terminology:
//  'CompNode i'    holds hidden rows for token indices R_i; runs norm,
//                  projections, rotary positions, recombination, residual+MLP.
//  'AttnNode {j,k}' is the merged pair node; it assembles q/k/v for shards
//                  S_j and S_k and computes both score orientations
//                  (S_j queries vs S_k keys, and the reverse).
//  'side'          which of the pair's two shards a message belongs to.
//  'sentinel row'  a fully causally-masked attention row: it travels as
//                  (m = -inf, e = 0, u = 0) and contributes zero weight when
//                  CompNodes recombine.
// One layer runs pre-pass -> route q/k/v -> attention-pass -> route partials
// -> post-pass, with a barrier between phases; the harness executes nodes
// sequentially in id order so runs are bit-reproducible.

struct AttnPartial {
    IndexSet rows;               // absolute 1-based query indices, sorted
    Mat m;                       // rows x H, row maxima
    Mat e;                       // rows x H, subtract-max expsums
    Mat u;                       // rows x H*d, partial attention output
    std::vector<char> sentinel;  // per row; a masked row is masked for all heads

    long long element_count(int H, int d) const {
        return static_cast<long long>(rows.size()) * H * (d + 2);
    }
};

inline std::string comp_name(int i) { return "comp" + std::to_string(i); }
inline std::string attn_name(std::pair<int, int> jk) {
    return "attn" + std::to_string(jk.first) + "_" + std::to_string(jk.second);
}

// Sharded pre-pass: norm, Q/K/V projection, rotary embedding at the absolute
// positions of the node's own indices. Queries leave pre-scaled by 1/sqrt(d).
inline QkvRows pre_pass(const ModelWeights& model, int layer, const Mat& hidden,
                        const IndexSet& indices) {
    if (hidden.rows != static_cast<int>(indices.size()))
        throw std::invalid_argument("pre_pass: hidden rows do not match index count");
    std::vector<int> positions(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) positions[i] = indices[i] - 1;
    return qkv_for_rows(model, layer, hidden, positions);
}

// Attention of labeled query rows against labeled key/value rows with the
// causal mask derived from the absolute indices. Produces the (m, e, u)
// sufficient statistics for exact softmax recombination.
inline AttnPartial partial_attention(const ModelConfig& cfg, const Mat& q, const IndexSet& q_idx,
                                     const Mat& k, const Mat& v, const IndexSet& kv_idx) {
    const int H = cfg.H, d = cfg.d, group = cfg.group_size();
    if (q.rows != static_cast<int>(q_idx.size()))
        throw std::invalid_argument("partial_attention: q rows mismatch");
    if (k.rows != static_cast<int>(kv_idx.size()) || !k.same_shape(v))
        throw std::invalid_argument("partial_attention: k/v rows mismatch");
    AttnPartial out;
    out.rows = q_idx;
    out.m = Mat(q.rows, H);
    out.e = Mat(q.rows, H);
    out.u = Mat(q.rows, H * d);
    out.sentinel.assign(q.rows, 0);
    std::vector<double> scores(k.rows);
    for (int r = 0; r < q.rows; ++r) {
        // columns are sorted by index, so the causally visible ones are a prefix
        int visible = 0;
        while (visible < k.rows && kv_idx[visible] <= q_idx[r]) ++visible;
        if (visible == 0) {
            out.sentinel[r] = 1;
            for (int h = 0; h < H; ++h) out.m.at(r, h) = kNegInf;
            continue;
        }
        for (int h = 0; h < H; ++h) {
            const int hk = h / group;
            const double* qb = q.row(r) + h * d;
            double mx = kNegInf;
            for (int c = 0; c < visible; ++c) {
                const double* kb = k.row(c) + hk * d;
                double s = 0.0;
                for (int t = 0; t < d; ++t) s += qb[t] * kb[t];
                scores[c] = s;
                mx = std::max(mx, s);
            }
            double expsum = 0.0;
            for (int c = 0; c < visible; ++c) {
                scores[c] = std::exp(scores[c] - mx);
                expsum += scores[c];
            }
            out.m.at(r, h) = mx;
            out.e.at(r, h) = expsum;
            double* ub = out.u.row(r) + h * d;
            for (int c = 0; c < visible; ++c) {
                const double wgt = scores[c] / expsum;
                const double* vb = v.row(c) + hk * d;
                for (int t = 0; t < d; ++t) ub[t] += wgt * vb[t];
            }
        }
    }
    return out;
}

// Subtract-max recombination across key shards (pre O-proj). Sentinel slices
// contribute zero weight; a row with no live slice is an internal error, as a
// causal mask always lets a token see itself.
inline Mat recombine_partials(const ModelConfig& cfg, const std::vector<AttnPartial>& per_k) {
    if (per_k.empty()) throw std::invalid_argument("recombine_partials: no slices");
    const int H = cfg.H, d = cfg.d;
    const int rows = static_cast<int>(per_k[0].rows.size());
    for (const auto& p : per_k)
        if (static_cast<int>(p.rows.size()) != rows)
            throw std::invalid_argument("recombine_partials: slice row counts differ");
    Mat out(rows, H * d);
    for (int r = 0; r < rows; ++r) {
        for (int h = 0; h < H; ++h) {
            double n = kNegInf;
            for (const auto& p : per_k)
                if (!p.sentinel[r]) n = std::max(n, p.m.at(r, h));
            if (n == kNegInf)
                throw std::runtime_error("recombine_partials: all-masked token row " +
                                         std::to_string(per_k[0].rows[r]));
            double w = 0.0;
            double* ob = out.row(r) + h * d;
            for (const auto& p : per_k) {
                if (p.sentinel[r]) continue;
                const double wk = std::exp(p.m.at(r, h) - n) * p.e.at(r, h);
                w += wk;
                const double* ub = p.u.row(r) + h * d;
                for (int t = 0; t < d; ++t) ob[t] += wk * ub[t];
            }
            for (int t = 0; t < d; ++t) ob[t] /= w;
        }
    }
    return out;
}

// Post-pass: recombine all key-shard slices for this node's rows, then
// O-project.
inline Mat post_pass(const ModelWeights& model, int layer, const std::vector<AttnPartial>& per_k) {
    return matmul(recombine_partials(model.cfg, per_k), model.layers[layer].wo);
}

struct CascadeOptions {
    bool snapshots = false;          // keep reassembled hidden rows per layer
    bool collect_layer0_meu = false; // capture each CompNode's first-layer m/e/u view
    bool keep_kv = false;            // retain per-layer KV shards (generation)
};

struct CompNodeOutput {
    int comp = 0;       // 1-based id
    IndexSet indices;   // logits row labels
    Mat logits;
};

// What CompNode i received in the first layer's post-pass, keyed by key
// shard: the leakage surface the layer-0 attack consumes.
struct MeuView {
    int comp = 0;
    std::vector<AttnPartial> per_k;  // index k-1, rows = R_i
};

struct CascadeResult {
    std::vector<CompNodeOutput> outputs;
    std::vector<MeuView> layer0_meu;    // when collected
    std::vector<Mat> layer_hidden;      // when snapshots: reassembled N x d_emb per layer
    Mat reassembled_logits;             // N x V
};

namespace detail {

struct RowsBlock {
    IndexSet idx;
    Mat rows;
};

// Concatenates received row blocks in sorted-index order.
inline RowsBlock merge_blocks(std::vector<RowsBlock>& blocks, int cols) {
    std::vector<std::pair<int, std::pair<int, int>>> order;  // (index, (block, local row))
    for (size_t b = 0; b < blocks.size(); ++b)
        for (size_t r = 0; r < blocks[b].idx.size(); ++r)
            order.push_back({blocks[b].idx[r], {static_cast<int>(b), static_cast<int>(r)}});
    std::sort(order.begin(), order.end());
    RowsBlock out;
    out.rows = Mat(static_cast<int>(order.size()), cols);
    out.idx.reserve(order.size());
    for (size_t i = 0; i < order.size(); ++i) {
        out.idx.push_back(order[i].first);
        const Mat& src = blocks[order[i].second.first].rows;
        const double* s = src.row(order[i].second.second);
        double* dst = out.rows.row(static_cast<int>(i));
        for (int c = 0; c < cols; ++c) dst[c] = s[c];
    }
    return out;
}

inline AttnPartial merge_partial_slices(std::vector<AttnPartial>& slices, int H, int d) {
    std::vector<std::pair<int, std::pair<int, int>>> order;
    for (size_t b = 0; b < slices.size(); ++b)
        for (size_t r = 0; r < slices[b].rows.size(); ++r)
            order.push_back({slices[b].rows[r], {static_cast<int>(b), static_cast<int>(r)}});
    std::sort(order.begin(), order.end());
    AttnPartial out;
    const int n = static_cast<int>(order.size());
    out.m = Mat(n, H);
    out.e = Mat(n, H);
    out.u = Mat(n, H * d);
    out.sentinel.assign(n, 0);
    for (int i = 0; i < n; ++i) {
        const auto& [b, r] = order[i].second;
        out.rows.push_back(order[i].first);
        const AttnPartial& src = slices[b];
        for (int h = 0; h < H; ++h) {
            out.m.at(i, h) = src.m.at(r, h);
            out.e.at(i, h) = src.e.at(r, h);
        }
        for (int c = 0; c < H * d; ++c) out.u.at(i, c) = src.u.at(r, c);
        out.sentinel[i] = src.sentinel[r];
    }
    return out;
}

inline AttnPartial slice_partial(const AttnPartial& p, const std::vector<int>& local_rows, int H,
                                 int d) {
    AttnPartial out;
    const int n = static_cast<int>(local_rows.size());
    out.m = Mat(n, H);
    out.e = Mat(n, H);
    out.u = Mat(n, H * d);
    out.sentinel.assign(n, 0);
    for (int i = 0; i < n; ++i) {
        const int r = local_rows[i];
        out.rows.push_back(p.rows[r]);
        for (int h = 0; h < H; ++h) {
            out.m.at(i, h) = p.m.at(r, h);
            out.e.at(i, h) = p.e.at(r, h);
        }
        for (int c = 0; c < H * d; ++c) out.u.at(i, c) = p.u.at(r, c);
        out.sentinel[i] = p.sentinel[r];
    }
    return out;
}

}  // namespace detail

struct GenStep {
    int index = 0;  // absolute 1-based index of the produced row
    int token = 0;  // token placed at that index
    int next_token = 0;
    int active_comp_nodes = 0;
    int active_attn_nodes = 0;
    std::vector<std::vector<double>> per_layer_hidden;  // post-layer rows, for coherence checks
};

struct GenerateResult {
    TokenSeq tokens;
    std::vector<GenStep> steps;
};

class CascadeRun {
  public:
    CascadeRun(const ModelWeights& model, const ShardPlan& plan, Router& router,
               CascadeOptions opts = {})
        : model_(model), plan_(plan), router_(router), opts_(opts) {
        auto violations = validate_plan(plan_);
        if (!violations.empty())
            throw std::invalid_argument("cascade: invalid plan: " + violations[0]);
        pair_index_.assign(plan_.beta + 1, std::vector<int>(plan_.beta + 1, -1));
        for (size_t p = 0; p < plan_.attn_pairs.size(); ++p) {
            auto [j, k] = plan_.attn_pairs[p];
            pair_index_[j][k] = static_cast<int>(p);
            pair_index_[k][j] = static_cast<int>(p);
        }
        comp_hidden_.resize(plan_.alpha);
        comp_indices_.resize(plan_.alpha);
        if (opts_.keep_kv) {
            kv_cache_.assign(plan_.attn_pairs.size(),
                             std::vector<PairCache>(model_.cfg.num_layers));
        }
    }

    // Full pipeline over the prompt; logits stay sharded on their CompNodes.
    void prefill(const TokenSeq& tokens) {
        validate_tokens(model_.cfg, tokens);
        if (static_cast<int>(tokens.size()) > plan_.N)
            throw std::invalid_argument("cascade: token count exceeds plan N");
        len_ = static_cast<int>(tokens.size());
        prefill_len_ = len_;
        for (int i = 0; i < plan_.alpha; ++i) {
            IndexSet present;
            for (int x : plan_.R[i])
                if (x <= len_) present.push_back(x);
            comp_indices_[i] = present;
            TokenSeq shard_tokens;
            for (int x : present) shard_tokens.push_back(tokens[x - 1]);
            comp_hidden_[i] =
                shard_tokens.empty() ? Mat(0, model_.cfg.d_emb) : embed_tokens(model_, shard_tokens);
        }
        if (opts_.snapshots) layer_hidden_.clear();
        if (opts_.collect_layer0_meu) layer0_meu_.clear();
        for (int l = 0; l < model_.cfg.num_layers; ++l) run_layer(l);
        logits_.clear();
        for (int i = 0; i < plan_.alpha; ++i) {
            CompNodeOutput out;
            out.comp = i + 1;
            out.indices = comp_indices_[i];
            out.logits = comp_hidden_[i].rows > 0 ? final_logits(model_, comp_hidden_[i])
                                                  : Mat(0, model_.cfg.V);
            logits_.push_back(std::move(out));
        }
    }

    // One incremental token: only the owning CompNode and the beta AttnNodes
    // whose pair contains the new index's query shard do any work.
    GenStep generate_step(int new_token) {
        if (!opts_.keep_kv) throw std::logic_error("generate_step requires keep_kv");
        const int n = len_ + 1;
        if (n > plan_.N) throw std::invalid_argument("cascade: generated index exceeds plan N");
        const ModelConfig& cfg = model_.cfg;
        const int comp = plan_.comp_of(n);
        const int side = plan_.s_shard_of(n);
        GenStep step;
        step.index = n;
        step.token = new_token;
        step.active_comp_nodes = 1;
        step.active_attn_nodes = 0;

        Mat h(1, cfg.d_emb);
        const double* erow = model_.embedding.row(new_token);
        for (int c = 0; c < cfg.d_emb; ++c) h.at(0, c) = erow[c];

        const IndexSet one_idx{n};
        for (int l = 0; l < cfg.num_layers; ++l) {
            QkvRows qkv = pre_pass(model_, l, h, one_idx);
            std::vector<AttnPartial> per_k(plan_.beta);
            // The beta pairs containing the new index's query shard are
            // exactly the nodes that need its kv row later and its q row now.
            for (int k = 1; k <= plan_.beta; ++k) {
                const int p = pair_index_[side][k];
                PairCache& cache = kv_cache_[p][l];
                router_.record(l, Stage::gen_qkv, comp_name(comp), attn_name(plan_.attn_pairs[p]),
                               static_cast<long long>(cfg.d) * (cfg.H + 2 * cfg.H_KV));
                append_kv(cache.for_shard(side, plan_.attn_pairs[p]), n, qkv.k, qkv.v);
                const SideCache& against = cache.for_shard(k, plan_.attn_pairs[p]);
                per_k[k - 1] =
                    partial_attention(cfg, qkv.q, one_idx, against.k, against.v, against.idx);
                router_.record(l, Stage::gen_partials, attn_name(plan_.attn_pairs[p]),
                               comp_name(comp), per_k[k - 1].element_count(cfg.H, cfg.d));
                if (l == 0) step.active_attn_nodes += 1;
            }
            Mat o = post_pass(model_, l, per_k);
            add_inplace(o, h);
            h = mlp_step(model_, l, o);
            if (opts_.snapshots) {
                std::vector<double> row(h.row(0), h.row(0) + cfg.d_emb);
                step.per_layer_hidden.push_back(std::move(row));
            }
        }

        // register the row with its CompNode
        append_row(comp - 1, n, h);
        len_ = n;
        Mat logits = final_logits(model_, h);
        step.next_token = argmax_token(logits.row(0), cfg.V);
        return step;
    }

    int last_index_owner() const { return plan_.comp_of(len_); }
    int length() const { return len_; }

    // Greedy next token from the node holding the last index.
    int next_token_from_prefill() const {
        const int owner = plan_.comp_of(len_) - 1;
        const auto& out = logits_[owner];
        for (size_t r = 0; r < out.indices.size(); ++r)
            if (out.indices[r] == len_) return argmax_token(out.logits.row(static_cast<int>(r)),
                                                            model_.cfg.V);
        throw std::logic_error("cascade: last index row missing");
    }

    // Prefill-time outputs; generated rows are reported per step instead.
    CascadeResult result() const {
        CascadeResult res;
        res.outputs = logits_;
        res.layer0_meu = layer0_meu_;
        res.layer_hidden = layer_hidden_;
        res.reassembled_logits = Mat(prefill_len_, model_.cfg.V);
        for (const auto& out : logits_)
            for (size_t r = 0; r < out.indices.size(); ++r) {
                const double* src = out.logits.row(static_cast<int>(r));
                double* dst = res.reassembled_logits.row(out.indices[r] - 1);
                for (int c = 0; c < model_.cfg.V; ++c) dst[c] = src[c];
            }
        return res;
    }

  private:
    struct SideCache {
        IndexSet idx;
        Mat k, v;
    };
    struct PairCache {
        SideCache a;  // shard j (first of pair)
        SideCache b;  // shard k (second of pair)
        SideCache& for_shard(int shard, std::pair<int, int> jk) {
            if (shard == jk.first) return a;
            if (shard == jk.second) return b;
            throw std::logic_error("cascade: shard not on this pair");
        }
    };

    void append_kv(SideCache& cache, int index, const Mat& krow, const Mat& vrow) {
        const int w = model_.cfg.kv_width();
        Mat nk(cache.k.rows + 1, w), nv(cache.v.rows + 1, w);
        for (int r = 0; r < cache.k.rows; ++r)
            for (int c = 0; c < w; ++c) {
                nk.at(r, c) = cache.k.at(r, c);
                nv.at(r, c) = cache.v.at(r, c);
            }
        for (int c = 0; c < w; ++c) {
            nk.at(cache.k.rows, c) = krow.at(0, c);
            nv.at(cache.v.rows, c) = vrow.at(0, c);
        }
        cache.idx.push_back(index);
        cache.k = std::move(nk);
        cache.v = std::move(nv);
    }

    void append_row(int comp, int index, const Mat& row) {
        Mat& h = comp_hidden_[comp];
        Mat nh(h.rows + 1, h.cols == 0 ? model_.cfg.d_emb : h.cols);
        for (int r = 0; r < h.rows; ++r)
            for (int c = 0; c < nh.cols; ++c) nh.at(r, c) = h.at(r, c);
        for (int c = 0; c < nh.cols; ++c) nh.at(h.rows, c) = row.at(0, c);
        comp_indices_[comp].push_back(index);
        comp_hidden_[comp] = std::move(nh);
    }

    void run_layer(int l) {
        const ModelConfig& cfg = model_.cfg;
        const int n_pairs = static_cast<int>(plan_.attn_pairs.size());
        // per pair, per side slot (0 = first shard of pair, 1 = second): inbox
        std::vector<std::array<std::vector<detail::RowsBlock>, 2>> inbox_q(n_pairs),
            inbox_k(n_pairs), inbox_v(n_pairs);

        // --- pre-pass + stage A routing ---
        for (int i = 0; i < plan_.alpha; ++i) {
            if (comp_indices_[i].empty()) continue;
            QkvRows qkv = pre_pass(model_, l, comp_hidden_[i], comp_indices_[i]);
            // group the node's rows by their S shard
            std::map<int, std::vector<int>> by_side;  // shard -> local rows
            for (size_t r = 0; r < comp_indices_[i].size(); ++r)
                by_side[plan_.s_shard_of(comp_indices_[i][r])].push_back(static_cast<int>(r));
            for (const auto& [shard, local_rows] : by_side) {
                IndexSet idx;
                for (int r : local_rows) idx.push_back(comp_indices_[i][r]);
                Mat q = take_rows(qkv.q, local_rows);
                Mat k = take_rows(qkv.k, local_rows);
                Mat v = take_rows(qkv.v, local_rows);
                const long long elements =
                    static_cast<long long>(idx.size()) * cfg.d * (cfg.H + 2 * cfg.H_KV);
                for (int kk = 1; kk <= plan_.beta; ++kk) {
                    const int p = pair_index_[shard][kk];
                    const int slot = (plan_.attn_pairs[p].first == shard) ? 0 : 1;
                    router_.record(l, Stage::qkv, comp_name(i + 1), attn_name(plan_.attn_pairs[p]),
                                   elements);
                    inbox_q[p][slot].push_back({idx, q});
                    inbox_k[p][slot].push_back({idx, k});
                    inbox_v[p][slot].push_back({idx, v});
                }
            }
        }

        // --- attention-pass + stage B routing ---
        // comp i, key shard k -> received slices
        std::vector<std::vector<std::vector<AttnPartial>>> comp_slices(
            plan_.alpha, std::vector<std::vector<AttnPartial>>(plan_.beta));
        for (int p = 0; p < n_pairs; ++p) {
            auto [j, k] = plan_.attn_pairs[p];
            detail::RowsBlock qj = detail::merge_blocks(inbox_q[p][0], cfg.q_width());
            detail::RowsBlock kj = detail::merge_blocks(inbox_k[p][0], cfg.kv_width());
            detail::RowsBlock vj = detail::merge_blocks(inbox_v[p][0], cfg.kv_width());
            detail::RowsBlock qk = qj, kk_ = kj, vk = vj;
            if (j != k) {
                qk = detail::merge_blocks(inbox_q[p][1], cfg.q_width());
                kk_ = detail::merge_blocks(inbox_k[p][1], cfg.kv_width());
                vk = detail::merge_blocks(inbox_v[p][1], cfg.kv_width());
            }
            if (opts_.keep_kv) {
                kv_cache_[p][l].a = {kj.idx, kj.rows, vj.rows};
                kv_cache_[p][l].b = {kk_.idx, kk_.rows, vk.rows};
            }
            long long elements = 0;
            AttnPartial fwd, rev;
            bool has_fwd = false, has_rev = false;
            if (!qj.idx.empty()) {
                fwd = partial_attention(cfg, qj.rows, qj.idx, kk_.rows, vk.rows, kk_.idx);
                elements += fwd.element_count(cfg.H, cfg.d);
                has_fwd = true;
            }
            if (j != k && !qk.idx.empty()) {
                rev = partial_attention(cfg, qk.rows, qk.idx, kj.rows, vj.rows, kj.idx);
                elements += rev.element_count(cfg.H, cfg.d);
                has_rev = true;
            }
            if (!has_fwd && !has_rev) continue;
            router_.record(l, Stage::partials, attn_name(plan_.attn_pairs[p]), "comp*", elements);
            auto deliver = [&](const AttnPartial& part, int key_shard) {
                std::map<int, std::vector<int>> by_comp;
                for (size_t r = 0; r < part.rows.size(); ++r)
                    by_comp[plan_.comp_of(part.rows[r])].push_back(static_cast<int>(r));
                for (const auto& [ci, local_rows] : by_comp)
                    comp_slices[ci - 1][key_shard - 1].push_back(
                        detail::slice_partial(part, local_rows, cfg.H, cfg.d));
            };
            if (has_fwd) deliver(fwd, k);
            if (has_rev) deliver(rev, j);
        }

        // --- post-pass + residual + MLP ---
        for (int i = 0; i < plan_.alpha; ++i) {
            if (comp_indices_[i].empty()) continue;
            std::vector<AttnPartial> per_k(plan_.beta);
            for (int k = 0; k < plan_.beta; ++k) {
                per_k[k] = detail::merge_partial_slices(comp_slices[i][k], cfg.H, cfg.d);
                if (per_k[k].rows != comp_indices_[i])
                    throw std::runtime_error("cascade: missing partial slice for key shard " +
                                             std::to_string(k + 1) + " at comp node " +
                                             std::to_string(i + 1));
            }
            if (opts_.collect_layer0_meu && l == 0) {
                MeuView view;
                view.comp = i + 1;
                view.per_k = per_k;
                layer0_meu_.push_back(std::move(view));
            }
            Mat o = post_pass(model_, l, per_k);
            add_inplace(o, comp_hidden_[i]);
            comp_hidden_[i] = mlp_step(model_, l, o);
        }

        if (opts_.snapshots) {
            Mat snap(len_, cfg.d_emb);
            for (int i = 0; i < plan_.alpha; ++i)
                for (size_t r = 0; r < comp_indices_[i].size(); ++r) {
                    const double* src = comp_hidden_[i].row(static_cast<int>(r));
                    double* dst = snap.row(comp_indices_[i][r] - 1);
                    for (int c = 0; c < cfg.d_emb; ++c) dst[c] = src[c];
                }
            layer_hidden_.push_back(std::move(snap));
        }
    }

    const ModelWeights& model_;
    const ShardPlan& plan_;
    Router& router_;
    CascadeOptions opts_;
    int len_ = 0;
    int prefill_len_ = 0;
    std::vector<std::vector<int>> pair_index_;
    std::vector<Mat> comp_hidden_;
    std::vector<IndexSet> comp_indices_;
    std::vector<CompNodeOutput> logits_;
    std::vector<MeuView> layer0_meu_;
    std::vector<Mat> layer_hidden_;
    std::vector<std::vector<PairCache>> kv_cache_;  // [pair][layer]
};

// Sharded forward pass: distributes token embeddings per plan, runs all
// layers, applies final norm + LM head per CompNode.
inline CascadeResult cascade_forward(const ModelWeights& model, const ShardPlan& plan,
                                     const TokenSeq& tokens, Router& router,
                                     CascadeOptions opts = {}) {
    CascadeRun run(model, plan, router, opts);
    run.prefill(tokens);
    return run.result();
}

// Prefill plus KV-cached incremental generation; token-for-token equal to
// vanilla greedy decoding.
inline GenerateResult cascade_generate(const ModelWeights& model, const ShardPlan& plan,
                                       const TokenSeq& prompt, int n_new, Router& router,
                                       CascadeOptions opts = {}) {
    if (n_new < 0) throw std::invalid_argument("cascade_generate: n_new must be >= 0");
    if (static_cast<int>(prompt.size()) + n_new > plan.N)
        throw std::invalid_argument("cascade_generate: prompt + n_new exceeds plan N");
    opts.keep_kv = true;
    CascadeRun run(model, plan, router, opts);
    run.prefill(prompt);
    GenerateResult res;
    res.tokens = prompt;
    if (n_new == 0) return res;
    int next = run.next_token_from_prefill();
    res.tokens.push_back(next);
    for (int t = 1; t < n_new; ++t) {
        // hand the fresh embedding to the CompNode owning the next index
        router.record(0, Stage::gen_token, comp_name(plan.comp_of(run.length())),
                      comp_name(plan.comp_of(run.length() + 1)), model.cfg.d_emb);
        GenStep step = run.generate_step(next);
        next = step.next_token;
        res.tokens.push_back(next);
        res.steps.push_back(std::move(step));
    }
    return res;
}

}  // namespace cascade
