#pragma once

// Dense kernels. Two variants of each: kern:: (OpenMP) and kern::ref::
// (serial, no pragmas), used by tests and the benchmark tool.
//
// Every kernel accumulates each output element in a fixed order (k- or
// i-ascending), never through a shared reduction, so the parallel variant is
// bit-identical to the serial one for any thread count. Keep it that way:
// training determinism and the ref-equality tests depend on it.

#include <cmath>
#include <cstddef>
#include <vector>

#include "breen/array.hpp"
#include "breen/errors.hpp"

namespace breen::kern {

namespace ref {

// C[m,n] = A[m,k] * B[k,n]  (+= when accumulate)
template <class T>
void matmul_nn(T* c, const T* a, const T* b, int m, int k, int n, bool accumulate = false) {
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<std::size_t>(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) crow[j] = T(0);
        const T* arow = a + static_cast<std::size_t>(i) * k;
        for (int l = 0; l < k; ++l) {
            const T av = arow[l];
            const T* brow = b + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] = A[m,k] * B[n,k]^T
template <class T>
void matmul_nt(T* c, const T* a, const T* b, int m, int k, int n, bool accumulate = false) {
    std::vector<T> bt(static_cast<std::size_t>(k) * n);
    for (int j = 0; j < n; ++j)
        for (int l = 0; l < k; ++l) bt[static_cast<std::size_t>(l) * n + j] = b[static_cast<std::size_t>(j) * k + l];
    matmul_nn(c, a, bt.data(), m, k, n, accumulate);
}

// C[k,n] = A[m,k]^T * B[m,n]
template <class T>
void matmul_tn(T* c, const T* a, const T* b, int m, int k, int n, bool accumulate = false) {
    for (int l = 0; l < k; ++l) {
        T* crow = c + static_cast<std::size_t>(l) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) crow[j] = T(0);
        for (int i = 0; i < m; ++i) {
            const T av = a[static_cast<std::size_t>(i) * k + l];
            const T* brow = b + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// Non-overlapping s x s window average over a G x G x D grid, row-major
// flatten of the pooled (G/s) x (G/s) map.
template <class T>
void avg_pool_grid(T* out, const T* grid, int g, int d, int s) {
    const int gp = g / s;
    const T inv = T(1) / static_cast<T>(s * s);
    for (int t = 0; t < gp * gp; ++t) {
        const int pr = t / gp, pc = t % gp;
        T* orow = out + static_cast<std::size_t>(t) * d;
        for (int j = 0; j < d; ++j) orow[j] = T(0);
        for (int wr = 0; wr < s; ++wr) {
            const int r = pr * s + wr;
            for (int wc = 0; wc < s; ++wc) {
                const int col = pc * s + wc;
                const T* cell = grid + (static_cast<std::size_t>(r) * g + col) * d;
                for (int j = 0; j < d; ++j) orow[j] += cell[j];
            }
        }
        for (int j = 0; j < d; ++j) orow[j] *= inv;
    }
}

// Nearest-neighbor block expansion of a g x g map by factor f.
template <class T>
void block_expand(T* out, const T* grid, int g, int f) {
    const int n = g * f;
    for (int r = 0; r < n; ++r) {
        const T* grow = grid + static_cast<std::size_t>(r / f) * g;
        T* orow = out + static_cast<std::size_t>(r) * n;
        for (int c = 0; c < n; ++c) orow[c] = grow[c / f];
    }
}

// Shift-invariant per-row softmax.
template <class T>
void softmax_rows(T* out, const T* x, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        const T* xr = x + static_cast<std::size_t>(i) * cols;
        T* yr = out + static_cast<std::size_t>(i) * cols;
        T mx = xr[0];
        for (int j = 1; j < cols; ++j)
            if (xr[j] > mx) mx = xr[j];
        T sum = T(0);
        for (int j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const T inv = T(1) / sum;
        for (int j = 0; j < cols; ++j) yr[j] *= inv;
    }
}

// y_row = x_row * gain / sqrt(mean(x_row^2) + eps)
template <class T>
void rmsnorm_rows(T* out, const T* x, const T* gain, int rows, int cols, T eps) {
    for (int i = 0; i < rows; ++i) {
        const T* xr = x + static_cast<std::size_t>(i) * cols;
        T* yr = out + static_cast<std::size_t>(i) * cols;
        T ms = T(0);
        for (int j = 0; j < cols; ++j) ms += xr[j] * xr[j];
        ms = ms / static_cast<T>(cols) + eps;
        const T inv = T(1) / std::sqrt(ms);
        for (int j = 0; j < cols; ++j) yr[j] = xr[j] * inv * gain[j];
    }
}

template <class T>
void silu(T* out, const T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const T s = T(1) / (T(1) + std::exp(-x[i]));
        out[i] = x[i] * s;
    }
}

}  // namespace ref

// ---- OpenMP variants ----

template <class T>
void matmul_nn(T* c, const T* a, const T* b, int m, int k, int n, bool accumulate = false) {
#pragma omp parallel for schedule(static) if (m > 1)
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<std::size_t>(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) crow[j] = T(0);
        const T* arow = a + static_cast<std::size_t>(i) * k;
        int l = 0;
        for (; l + 4 <= k; l += 4) {
            const T a0 = arow[l], a1 = arow[l + 1], a2 = arow[l + 2], a3 = arow[l + 3];
            const T* b0 = b + static_cast<std::size_t>(l) * n;
            const T* b1 = b0 + n;
            const T* b2 = b1 + n;
            const T* b3 = b2 + n;
            for (int j = 0; j < n; ++j) {
                T cv = crow[j];
                cv += a0 * b0[j];
                cv += a1 * b1[j];
                cv += a2 * b2[j];
                cv += a3 * b3[j];
                crow[j] = cv;
            }
        }
        for (; l < k; ++l) {
            const T av = arow[l];
            const T* brow = b + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
void matmul_nt(T* c, const T* a, const T* b, int m, int k, int n, bool accumulate = false) {
    std::vector<T> bt(static_cast<std::size_t>(k) * n);
#pragma omp parallel for schedule(static) if (n > 1)
    for (int j = 0; j < n; ++j)
        for (int l = 0; l < k; ++l) bt[static_cast<std::size_t>(l) * n + j] = b[static_cast<std::size_t>(j) * k + l];
    matmul_nn(c, a, bt.data(), m, k, n, accumulate);
}

template <class T>
void matmul_tn(T* c, const T* a, const T* b, int m, int k, int n, bool accumulate = false) {
#pragma omp parallel for schedule(static) if (k > 1)
    for (int l = 0; l < k; ++l) {
        T* crow = c + static_cast<std::size_t>(l) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) crow[j] = T(0);
        for (int i = 0; i < m; ++i) {
            const T av = a[static_cast<std::size_t>(i) * k + l];
            const T* brow = b + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
void avg_pool_grid(T* out, const T* grid, int g, int d, int s) {
    const int gp = g / s;
    const T inv = T(1) / static_cast<T>(s * s);
#pragma omp parallel for schedule(static) if (gp * gp > 1)
    for (int t = 0; t < gp * gp; ++t) {
        const int pr = t / gp, pc = t % gp;
        T* orow = out + static_cast<std::size_t>(t) * d;
        for (int j = 0; j < d; ++j) orow[j] = T(0);
        for (int wr = 0; wr < s; ++wr) {
            const int r = pr * s + wr;
            for (int wc = 0; wc < s; ++wc) {
                const int col = pc * s + wc;
                const T* cell = grid + (static_cast<std::size_t>(r) * g + col) * d;
                for (int j = 0; j < d; ++j) orow[j] += cell[j];
            }
        }
        for (int j = 0; j < d; ++j) orow[j] *= inv;
    }
}

template <class T>
void block_expand(T* out, const T* grid, int g, int f) {
    const int n = g * f;
#pragma omp parallel for schedule(static) if (n > 1)
    for (int r = 0; r < n; ++r) {
        const T* grow = grid + static_cast<std::size_t>(r / f) * g;
        T* orow = out + static_cast<std::size_t>(r) * n;
        for (int c = 0; c < n; ++c) orow[c] = grow[c / f];
    }
}

template <class T>
void softmax_rows(T* out, const T* x, int rows, int cols) {
#pragma omp parallel for schedule(static) if (rows > 1)
    for (int i = 0; i < rows; ++i) ref::softmax_rows(out + static_cast<std::size_t>(i) * cols, x + static_cast<std::size_t>(i) * cols, 1, cols);
}

template <class T>
void rmsnorm_rows(T* out, const T* x, const T* gain, int rows, int cols, T eps) {
#pragma omp parallel for schedule(static) if (rows > 1)
    for (int i = 0; i < rows; ++i)
        ref::rmsnorm_rows(out + static_cast<std::size_t>(i) * cols, x + static_cast<std::size_t>(i) * cols, gain, 1, cols, eps);
}

template <class T>
void silu(T* out, const T* x, std::size_t n) {
#pragma omp parallel for schedule(static) if (n > 4096)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        const T s = T(1) / (T(1) + std::exp(-x[i]));
        out[i] = x[i] * s;
    }
}

}  // namespace breen::kern
