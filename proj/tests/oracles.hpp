#pragma once

// Test-only oracles, kept independent of the implementation paths they check.

#include <cmath>
#include <vector>

#include "cascade/mat.hpp"
#include "cascade/model.hpp"
#include "cascade/rng.hpp"

namespace oracles {

// Two-loop per-row softmax attention in extended precision, no subtract-max,
// explicit H_KV -> H broadcast. Queries are expected pre-scaled, matching the
// convention of the code under test.
inline cascade::Mat naive_attention(const cascade::Mat& q, const cascade::Mat& k,
                                    const cascade::Mat& v, const cascade::Mat& mask, int H,
                                    int H_KV) {
    const int d = q.cols / H;
    const int group = H / H_KV;
    cascade::Mat out(q.rows, H * d);
    for (int h = 0; h < H; ++h) {
        const int hk = h / group;
        for (int r = 0; r < q.rows; ++r) {
            std::vector<long double> w(k.rows, 0.0L);
            long double denom = 0.0L;
            for (int c = 0; c < k.rows; ++c) {
                if (mask.at(r, c) == -std::numeric_limits<double>::infinity()) continue;
                long double s = 0.0L;
                for (int t = 0; t < d; ++t)
                    s += static_cast<long double>(q.at(r, h * d + t)) * k.at(c, hk * d + t);
                w[c] = expl(s + static_cast<long double>(mask.at(r, c)));
                denom += w[c];
            }
            for (int c = 0; c < k.rows; ++c) {
                const long double wgt = w[c] / denom;
                for (int t = 0; t < d; ++t)
                    out.at(r, h * d + t) += static_cast<double>(wgt * v.at(c, hk * d + t));
            }
        }
    }
    return out;
}

inline cascade::TokenSeq random_prompt(cascade::SplitMix64& rng, int len, int V) {
    cascade::TokenSeq t(len);
    for (int& x : t) x = static_cast<int>(rng.next_below(V));
    return t;
}

inline cascade::Mat random_mat(cascade::SplitMix64& rng, int rows, int cols, double scale = 1.0) {
    cascade::Mat m(rows, cols);
    for (double& x : m.a) x = rng.next_signed() * scale;
    return m;
}

}  // namespace oracles
