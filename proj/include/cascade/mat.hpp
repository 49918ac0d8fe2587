#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cascade {

// Dense row-major double matrix. Everything in this project is desk-scale,
// so plain loops beat any dependency.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {
        assert(r >= 0 && c >= 0);
    }

    double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

    double* row(int r) { return a.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return a.data() + static_cast<size_t>(r) * cols; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

inline void require_shape(const Mat& m, int rows, int cols, const char* what) {
    if (m.rows != rows || m.cols != cols) {
        throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(rows) +
                                    "x" + std::to_string(cols) + ", got " + std::to_string(m.rows) +
                                    "x" + std::to_string(m.cols));
    }
}

// C = A * B
inline Mat matmul(const Mat& A, const Mat& B) {
    if (A.cols != B.rows) throw std::invalid_argument("matmul: inner dimensions differ");
    Mat C(A.rows, B.cols);
    for (int i = 0; i < A.rows; ++i) {
        const double* arow = A.row(i);
        double* crow = C.row(i);
        for (int k = 0; k < A.cols; ++k) {
            const double aik = arow[k];
            const double* brow = B.row(k);
            for (int j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return C;
}

inline Mat add(const Mat& A, const Mat& B) {
    if (!A.same_shape(B)) throw std::invalid_argument("add: shape mismatch");
    Mat C = A;
    for (size_t i = 0; i < C.a.size(); ++i) C.a[i] += B.a[i];
    return C;
}

inline void add_inplace(Mat& A, const Mat& B) {
    if (!A.same_shape(B)) throw std::invalid_argument("add_inplace: shape mismatch");
    for (size_t i = 0; i < A.a.size(); ++i) A.a[i] += B.a[i];
}

// Gathers the listed rows into a new matrix.
inline Mat take_rows(const Mat& A, const std::vector<int>& idx) {
    Mat C(static_cast<int>(idx.size()), A.cols);
    for (size_t i = 0; i < idx.size(); ++i) {
        assert(idx[i] >= 0 && idx[i] < A.rows);
        const double* src = A.row(idx[i]);
        double* dst = C.row(static_cast<int>(i));
        for (int j = 0; j < A.cols; ++j) dst[j] = src[j];
    }
    return C;
}

inline double max_abs(const Mat& A) {
    double m = 0.0;
    for (double v : A.a) m = std::max(m, std::fabs(v));
    return m;
}

// Normwise relative error: ||A-B||_max / max(||B||_max, floor). Entries near
// zero are judged against the scale of B, not against themselves.
inline double rel_error(const Mat& A, const Mat& B) {
    if (!A.same_shape(B)) throw std::invalid_argument("rel_error: shape mismatch");
    double diff = 0.0;
    for (size_t i = 0; i < A.a.size(); ++i) diff = std::max(diff, std::fabs(A.a[i] - B.a[i]));
    return diff / std::max(max_abs(B), 1e-300);
}

inline double l1_distance(const double* x, const double* y, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::fabs(x[i] - y[i]);
    return s;
}

}  // namespace cascade
