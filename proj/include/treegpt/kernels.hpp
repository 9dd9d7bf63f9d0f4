#pragma once

// Dense kernels behind the tensor ops. Every kernel exists twice: a plain
// serial reference implementation and an OpenMP variant. The OpenMP loops
// always parallelize over independent output elements and keep every
// per-element reduction in the same fixed order as the serial code, so the
// two backends produce bit-identical results for any thread count. Tests
// rely on that exact agreement; tools/bench_kernels compares their speed.

#include <cmath>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace treegpt::kernels {

enum class Backend { Serial, OpenMP };

Backend backend() noexcept;
void set_backend(Backend b) noexcept;
bool openmp_available() noexcept;
int thread_count() noexcept;

// Work thresholds below which the OpenMP variants run the serial loop anyway.
inline constexpr long kGemmParallelFlops = 1L << 15;
inline constexpr long kMapParallelElems = 1L << 15;

namespace serial {

// c[m x n] = a[m x k] * b[k x n]; per element the reduction runs p = 0..k-1.
template <class S>
void gemm_nn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const S* ai = a + static_cast<long>(i) * k;
        S* ci = c + static_cast<long>(i) * n;
        if (!accumulate) {
            for (int j = 0; j < n; ++j) ci[j] = S(0);
        }
        for (int p = 0; p < k; ++p) {
            const S aip = ai[p];
            const S* bp = b + static_cast<long>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

// c[m x n] = a[m x k] * b[n x k]^T
template <class S>
void gemm_nt(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const S* ai = a + static_cast<long>(i) * k;
        S* ci = c + static_cast<long>(i) * n;
        for (int j = 0; j < n; ++j) {
            const S* bj = b + static_cast<long>(j) * k;
            S acc = S(0);
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = accumulate ? ci[j] + acc : acc;
        }
    }
}

// c[m x n] = a[k x m]^T * b[k x n]
template <class S>
void gemm_tn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        S* ci = c + static_cast<long>(i) * n;
        if (!accumulate) {
            for (int j = 0; j < n; ++j) ci[j] = S(0);
        }
        for (int p = 0; p < k; ++p) {
            const S api = a[static_cast<long>(p) * m + i];
            const S* bp = b + static_cast<long>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
        }
    }
}

template <class S, class F>
void map(const S* x, S* y, long n, F f) {
    for (long i = 0; i < n; ++i) y[i] = f(x[i]);
}

template <class S, class F>
void zip(const S* a, const S* b, S* y, long n, F f) {
    for (long i = 0; i < n; ++i) y[i] = f(a[i], b[i]);
}

// y[r][c] = x[r][c] + bias[c]
template <class S>
void bias_add(const S* x, const S* bias, S* y, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const S* xr = x + static_cast<long>(r) * cols;
        S* yr = y + static_cast<long>(r) * cols;
        for (int c = 0; c < cols; ++c) yr[c] = xr[c] + bias[c];
    }
}

// gbias[c] += sum_r gy[r][c], row index ascending per column.
template <class S>
void bias_grad(const S* gy, S* gbias, int rows, int cols) {
    for (int c = 0; c < cols; ++c) {
        S acc = S(0);
        for (int r = 0; r < rows; ++r) acc += gy[static_cast<long>(r) * cols + c];
        gbias[c] += acc;
    }
}

template <class S>
bool all_finite(const S* x, long n) {
    bool ok = true;
    for (long i = 0; i < n; ++i) ok = ok && std::isfinite(static_cast<double>(x[i]));
    return ok;
}

}  // namespace serial

namespace omp {

template <class S>
void gemm_nn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
    const long flops = static_cast<long>(m) * k * n;
    if (flops < kGemmParallelFlops) {
        serial::gemm_nn(a, b, c, m, k, n, accumulate);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const S* ai = a + static_cast<long>(i) * k;
        S* ci = c + static_cast<long>(i) * n;
        if (!accumulate) {
            for (int j = 0; j < n; ++j) ci[j] = S(0);
        }
        for (int p = 0; p < k; ++p) {
            const S aip = ai[p];
            const S* bp = b + static_cast<long>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

template <class S>
void gemm_nt(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
    const long flops = static_cast<long>(m) * k * n;
    if (flops < kGemmParallelFlops) {
        serial::gemm_nt(a, b, c, m, k, n, accumulate);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const S* ai = a + static_cast<long>(i) * k;
        S* ci = c + static_cast<long>(i) * n;
        for (int j = 0; j < n; ++j) {
            const S* bj = b + static_cast<long>(j) * k;
            S acc = S(0);
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = accumulate ? ci[j] + acc : acc;
        }
    }
}

template <class S>
void gemm_tn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
    const long flops = static_cast<long>(m) * k * n;
    if (flops < kGemmParallelFlops) {
        serial::gemm_tn(a, b, c, m, k, n, accumulate);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        S* ci = c + static_cast<long>(i) * n;
        if (!accumulate) {
            for (int j = 0; j < n; ++j) ci[j] = S(0);
        }
        for (int p = 0; p < k; ++p) {
            const S api = a[static_cast<long>(p) * m + i];
            const S* bp = b + static_cast<long>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
        }
    }
}

template <class S, class F>
void map(const S* x, S* y, long n, F f) {
    if (n < kMapParallelElems) {
        serial::map(x, y, n, f);
        return;
    }
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) y[i] = f(x[i]);
}

template <class S, class F>
void zip(const S* a, const S* b, S* y, long n, F f) {
    if (n < kMapParallelElems) {
        serial::zip(a, b, y, n, f);
        return;
    }
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) y[i] = f(a[i], b[i]);
}

template <class S>
void bias_add(const S* x, const S* bias, S* y, int rows, int cols) {
    if (static_cast<long>(rows) * cols < kMapParallelElems) {
        serial::bias_add(x, bias, y, rows, cols);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const S* xr = x + static_cast<long>(r) * cols;
        S* yr = y + static_cast<long>(r) * cols;
        for (int c = 0; c < cols; ++c) yr[c] = xr[c] + bias[c];
    }
}

template <class S>
void bias_grad(const S* gy, S* gbias, int rows, int cols) {
    if (static_cast<long>(rows) * cols < kMapParallelElems) {
        serial::bias_grad(gy, gbias, rows, cols);
        return;
    }
    // Parallel over columns; each column keeps the serial row order.
#pragma omp parallel for schedule(static)
    for (int c = 0; c < cols; ++c) {
        S acc = S(0);
        for (int r = 0; r < rows; ++r) acc += gy[static_cast<long>(r) * cols + c];
        gbias[c] += acc;
    }
}

template <class S>
bool all_finite(const S* x, long n) {
    if (n < kMapParallelElems) return serial::all_finite(x, n);
    bool ok = true;
#pragma omp parallel for schedule(static) reduction(&& : ok)
    for (long i = 0; i < n; ++i) ok = ok && std::isfinite(static_cast<double>(x[i]));
    return ok;
}

}  // namespace omp

// Dispatching entry points used by the ops layer.

template <class S>
void gemm_nn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate = false) {
    if (backend() == Backend::Serial) {
        serial::gemm_nn(a, b, c, m, k, n, accumulate);
    } else {
        omp::gemm_nn(a, b, c, m, k, n, accumulate);
    }
}

template <class S>
void gemm_nt(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate = false) {
    if (backend() == Backend::Serial) {
        serial::gemm_nt(a, b, c, m, k, n, accumulate);
    } else {
        omp::gemm_nt(a, b, c, m, k, n, accumulate);
    }
}

template <class S>
void gemm_tn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate = false) {
    if (backend() == Backend::Serial) {
        serial::gemm_tn(a, b, c, m, k, n, accumulate);
    } else {
        omp::gemm_tn(a, b, c, m, k, n, accumulate);
    }
}

template <class S, class F>
void map(const S* x, S* y, long n, F f) {
    if (backend() == Backend::Serial) {
        serial::map(x, y, n, f);
    } else {
        omp::map(x, y, n, f);
    }
}

template <class S, class F>
void zip(const S* a, const S* b, S* y, long n, F f) {
    if (backend() == Backend::Serial) {
        serial::zip(a, b, y, n, f);
    } else {
        omp::zip(a, b, y, n, f);
    }
}

template <class S>
void bias_add(const S* x, const S* bias, S* y, int rows, int cols) {
    if (backend() == Backend::Serial) {
        serial::bias_add(x, bias, y, rows, cols);
    } else {
        omp::bias_add(x, bias, y, rows, cols);
    }
}

template <class S>
void bias_grad(const S* gy, S* gbias, int rows, int cols) {
    if (backend() == Backend::Serial) {
        serial::bias_grad(gy, gbias, rows, cols);
    } else {
        omp::bias_grad(gy, gbias, rows, cols);
    }
}

template <class S>
bool all_finite(const S* x, long n) {
    return backend() == Backend::Serial ? serial::all_finite(x, n) : omp::all_finite(x, n);
}

}  // namespace treegpt::kernels
