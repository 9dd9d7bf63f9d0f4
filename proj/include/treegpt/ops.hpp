#pragma once

// Differentiable operations over TensorT. Forward results are checked for
// non-finite values and fail fast naming the op. Broadcasting is limited to
// bias addition over the leading axis ([rows x c] + [c]); everything else
// requires exact shape agreement.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "treegpt/errors.hpp"
#include "treegpt/kernels.hpp"
#include "treegpt/tensor.hpp"

namespace treegpt::ops {

template <class S>
void check_finite(const TensorPtr<S>& t, const char* op) {
    if (!kernels::all_finite(t->data.data(), t->numel())) {
        throw NumericError(std::string(op) + ": non-finite value in forward output");
    }
}

template <class S>
bool want_grad(const Graph<S>& g, std::initializer_list<const TensorPtr<S>*> inputs) {
    if (!g.recording()) return false;
    for (const auto* in : inputs) {
        if ((*in)->requires_grad) return true;
    }
    return false;
}

// ---------------------------------------------------------------------------
// matmul

template <class S>
TensorPtr<S> matmul(Graph<S>& g, const TensorPtr<S>& a, const TensorPtr<S>& b) {
    if (a->rank() != 2 || b->rank() != 2 || a->shape()[1] != b->shape()[0]) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a->shape()) + " and " +
                             shape_str(b->shape()));
    }
    const int m = a->shape()[0], k = a->shape()[1], n = b->shape()[1];
    auto out = TensorT<S>::zeros({m, n});
    kernels::gemm_nn(a->data.data(), b->data.data(), out->data.data(), m, k, n, false);
    check_finite(out, "matmul");
    out->requires_grad = want_grad(g, {&a, &b});
    if (out->requires_grad) {
        g.record([a, b, out, m, k, n] {
            if (out->grad.empty()) return;
            if (a->requires_grad) {
                a->ensure_grad();
                // grad_a += grad_out * b^T
                kernels::gemm_nt(out->grad.data(), b->data.data(), a->grad.data(), m, n, k, true);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                // grad_b += a^T * grad_out
                kernels::gemm_tn(a->data.data(), out->grad.data(), b->grad.data(), k, m, n, true);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise add / sub / mul, bias broadcast

template <class S>
TensorPtr<S> add(Graph<S>& g, const TensorPtr<S>& a, const TensorPtr<S>& b) {
    // [rows x c] + [c] bias broadcast
    if (a->rank() == 2 && b->rank() == 1 && a->shape()[1] == b->shape()[0]) {
        const int rows = a->shape()[0], cols = a->shape()[1];
        auto out = TensorT<S>::zeros(a->shape());
        kernels::bias_add(a->data.data(), b->data.data(), out->data.data(), rows, cols);
        check_finite(out, "add");
        out->requires_grad = want_grad(g, {&a, &b});
        if (out->requires_grad) {
            g.record([a, b, out, rows, cols] {
                if (out->grad.empty()) return;
                if (a->requires_grad) {
                    a->ensure_grad();
                    kernels::zip(a->grad.data(), out->grad.data(), a->grad.data(), a->numel(),
                                 [](S x, S y) { return x + y; });
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    kernels::bias_grad(out->grad.data(), b->grad.data(), rows, cols);
                }
            });
        }
        return out;
    }
    if (!a->same_shape(*b)) {
        throw DimensionError("add: incompatible shapes " + shape_str(a->shape()) + " and " +
                             shape_str(b->shape()));
    }
    auto out = TensorT<S>::zeros(a->shape());
    kernels::zip(a->data.data(), b->data.data(), out->data.data(), a->numel(),
                 [](S x, S y) { return x + y; });
    check_finite(out, "add");
    out->requires_grad = want_grad(g, {&a, &b});
    if (out->requires_grad) {
        g.record([a, b, out] {
            if (out->grad.empty()) return;
            for (const auto& t : {a, b}) {
                if (t->requires_grad) {
                    t->ensure_grad();
                    kernels::zip(t->grad.data(), out->grad.data(), t->grad.data(), t->numel(),
                                 [](S x, S y) { return x + y; });
                }
            }
        });
    }
    return out;
}

template <class S>
TensorPtr<S> sub(Graph<S>& g, const TensorPtr<S>& a, const TensorPtr<S>& b) {
    if (!a->same_shape(*b)) {
        throw DimensionError("sub: incompatible shapes " + shape_str(a->shape()) + " and " +
                             shape_str(b->shape()));
    }
    auto out = TensorT<S>::zeros(a->shape());
    kernels::zip(a->data.data(), b->data.data(), out->data.data(), a->numel(),
                 [](S x, S y) { return x - y; });
    check_finite(out, "sub");
    out->requires_grad = want_grad(g, {&a, &b});
    if (out->requires_grad) {
        g.record([a, b, out] {
            if (out->grad.empty()) return;
            if (a->requires_grad) {
                a->ensure_grad();
                kernels::zip(a->grad.data(), out->grad.data(), a->grad.data(), a->numel(),
                             [](S x, S y) { return x + y; });
            }
            if (b->requires_grad) {
                b->ensure_grad();
                kernels::zip(b->grad.data(), out->grad.data(), b->grad.data(), b->numel(),
                             [](S x, S y) { return x - y; });
            }
        });
    }
    return out;
}

template <class S>
TensorPtr<S> mul(Graph<S>& g, const TensorPtr<S>& a, const TensorPtr<S>& b) {
    if (!a->same_shape(*b)) {
        throw DimensionError("mul: incompatible shapes " + shape_str(a->shape()) + " and " +
                             shape_str(b->shape()));
    }
    auto out = TensorT<S>::zeros(a->shape());
    kernels::zip(a->data.data(), b->data.data(), out->data.data(), a->numel(),
                 [](S x, S y) { return x * y; });
    check_finite(out, "mul");
    out->requires_grad = want_grad(g, {&a, &b});
    if (out->requires_grad) {
        g.record([a, b, out] {
            if (out->grad.empty()) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (long i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i] * b->data[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (long i = 0; i < out->numel(); ++i) b->grad[i] += out->grad[i] * a->data[i];
            }
        });
    }
    return out;
}

template <class S>
TensorPtr<S> scale(Graph<S>& g, const TensorPtr<S>& a, S factor) {
    auto out = TensorT<S>::zeros(a->shape());
    kernels::map(a->data.data(), out->data.data(), a->numel(),
                 [factor](S x) { return factor * x; });
    check_finite(out, "scale");
    out->requires_grad = want_grad(g, {&a});
    if (out->requires_grad) {
        g.record([a, out, factor] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            for (long i = 0; i < out->numel(); ++i) a->grad[i] += factor * out->grad[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// activations

template <class S>
TensorPtr<S> sigmoid(Graph<S>& g, const TensorPtr<S>& x) {
    auto out = TensorT<S>::zeros(x->shape());
    kernels::map(x->data.data(), out->data.data(), x->numel(),
                 [](S v) { return S(1) / (S(1) + std::exp(-v)); });
    check_finite(out, "sigmoid");
    out->requires_grad = want_grad(g, {&x});
    if (out->requires_grad) {
        g.record([x, out] {
            if (out->grad.empty()) return;
            x->ensure_grad();
            for (long i = 0; i < out->numel(); ++i) {
                const S y = out->data[i];
                x->grad[i] += out->grad[i] * y * (S(1) - y);
            }
        });
    }
    return out;
}

template <class S>
TensorPtr<S> relu(Graph<S>& g, const TensorPtr<S>& x) {
    auto out = TensorT<S>::zeros(x->shape());
    kernels::map(x->data.data(), out->data.data(), x->numel(),
                 [](S v) { return v > S(0) ? v : S(0); });
    check_finite(out, "relu");
    out->requires_grad = want_grad(g, {&x});
    if (out->requires_grad) {
        g.record([x, out] {
            if (out->grad.empty()) return;
            x->ensure_grad();
            for (long i = 0; i < out->numel(); ++i) {
                if (x->data[i] > S(0)) x->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

template <class S>
TensorPtr<S> tanh(Graph<S>& g, const TensorPtr<S>& x) {
    auto out = TensorT<S>::zeros(x->shape());
    kernels::map(x->data.data(), out->data.data(), x->numel(), [](S v) { return std::tanh(v); });
    check_finite(out, "tanh");
    out->requires_grad = want_grad(g, {&x});
    if (out->requires_grad) {
        g.record([x, out] {
            if (out->grad.empty()) return;
            x->ensure_grad();
            for (long i = 0; i < out->numel(); ++i) {
                const S y = out->data[i];
                x->grad[i] += out->grad[i] * (S(1) - y * y);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// concat

template <class S>
TensorPtr<S> concat(Graph<S>& g, const std::vector<TensorPtr<S>>& parts, int axis) {
    if (parts.empty()) throw ValueError("concat: no inputs");
    if (axis != 0 && axis != 1) throw ValueError("concat: axis must be 0 or 1");
    for (const auto& p : parts) {
        if (p->rank() != 2) {
            throw DimensionError("concat: rank-2 tensors required, got " + shape_str(p->shape()));
        }
    }
    const int fixed_axis = 1 - axis;
    const int fixed = parts[0]->shape()[fixed_axis];
    long total = 0;
    for (const auto& p : parts) {
        if (p->shape()[fixed_axis] != fixed) {
            throw DimensionError("concat: mismatched shapes " + shape_str(parts[0]->shape()) +
                                 " and " + shape_str(p->shape()) + " along axis " +
                                 std::to_string(axis));
        }
        total += p->shape()[axis];
    }
    std::vector<int> out_shape(2);
    out_shape[axis] = static_cast<int>(total);
    out_shape[fixed_axis] = fixed;
    auto out = TensorT<S>::zeros(out_shape);

    if (axis == 0) {
        long row = 0;
        for (const auto& p : parts) {
            std::copy(p->data.begin(), p->data.end(), out->data.begin() + row * fixed);
            row += p->shape()[0];
        }
    } else {
        const int rows = fixed;
        const int out_cols = out_shape[1];
        int col = 0;
        for (const auto& p : parts) {
            const int c = p->shape()[1];
            for (int r = 0; r < rows; ++r) {
                std::copy(p->data.begin() + static_cast<long>(r) * c,
                          p->data.begin() + static_cast<long>(r + 1) * c,
                          out->data.begin() + static_cast<long>(r) * out_cols + col);
            }
            col += c;
        }
    }
    check_finite(out, "concat");
    bool rg = false;
    if (g.recording()) {
        for (const auto& p : parts) rg = rg || p->requires_grad;
    }
    out->requires_grad = rg;
    if (rg) {
        g.record([parts, out, axis, fixed] {
            if (out->grad.empty()) return;
            if (axis == 0) {
                long row = 0;
                for (const auto& p : parts) {
                    if (p->requires_grad) {
                        p->ensure_grad();
                        const long base = row * fixed;
                        for (long i = 0; i < p->numel(); ++i) p->grad[i] += out->grad[base + i];
                    }
                    row += p->shape()[0];
                }
            } else {
                const int rows = fixed;
                const int out_cols = out->shape()[1];
                int col = 0;
                for (const auto& p : parts) {
                    const int c = p->shape()[1];
                    if (p->requires_grad) {
                        p->ensure_grad();
                        for (int r = 0; r < rows; ++r) {
                            for (int j = 0; j < c; ++j) {
                                p->grad[static_cast<long>(r) * c + j] +=
                                    out->grad[static_cast<long>(r) * out_cols + col + j];
                            }
                        }
                    }
                    col += c;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// row gather / scatter / broadcast (embedding lookups and message routing)

template <class S>
TensorPtr<S> gather_rows(Graph<S>& g, const TensorPtr<S>& table, std::vector<int> indices) {
    if (table->rank() != 2) {
        throw DimensionError("gather_rows: rank-2 table required, got " +
                             shape_str(table->shape()));
    }
    if (indices.empty()) throw ValueError("gather_rows: empty index list");
    const int rows = table->shape()[0], cols = table->shape()[1];
    for (int idx : indices) {
        if (idx < 0 || idx >= rows) {
            throw ValueError("gather_rows: index " + std::to_string(idx) + " out of range [0, " +
                             std::to_string(rows) + ")");
        }
    }
    auto out = TensorT<S>::zeros({static_cast<int>(indices.size()), cols});
    for (size_t r = 0; r < indices.size(); ++r) {
        std::copy(table->data.begin() + static_cast<long>(indices[r]) * cols,
                  table->data.begin() + static_cast<long>(indices[r] + 1) * cols,
                  out->data.begin() + static_cast<long>(r) * cols);
    }
    check_finite(out, "gather_rows");
    out->requires_grad = want_grad(g, {&table});
    if (out->requires_grad) {
        g.record([table, out, indices = std::move(indices), cols] {
            if (out->grad.empty()) return;
            table->ensure_grad();
            for (size_t r = 0; r < indices.size(); ++r) {
                const long src = static_cast<long>(r) * cols;
                const long dst = static_cast<long>(indices[r]) * cols;
                for (int c = 0; c < cols; ++c) table->grad[dst + c] += out->grad[src + c];
            }
        });
    }
    return out;
}

// out[num_rows x cols], out[indices[e]] += values[e]. Kept serial: targets may
// repeat in general, and the accumulation order must stay deterministic.
template <class S>
TensorPtr<S> scatter_rows(Graph<S>& g, int num_rows, std::vector<int> indices,
                          const TensorPtr<S>& values) {
    if (values->rank() != 2) {
        throw DimensionError("scatter_rows: rank-2 values required, got " +
                             shape_str(values->shape()));
    }
    if (static_cast<size_t>(values->shape()[0]) != indices.size()) {
        throw DimensionError("scatter_rows: " + std::to_string(indices.size()) +
                             " indices for values " + shape_str(values->shape()));
    }
    const int cols = values->shape()[1];
    for (int idx : indices) {
        if (idx < 0 || idx >= num_rows) {
            throw ValueError("scatter_rows: index " + std::to_string(idx) +
                             " out of range [0, " + std::to_string(num_rows) + ")");
        }
    }
    auto out = TensorT<S>::zeros({num_rows, cols});
    for (size_t e = 0; e < indices.size(); ++e) {
        const long src = static_cast<long>(e) * cols;
        const long dst = static_cast<long>(indices[e]) * cols;
        for (int c = 0; c < cols; ++c) out->data[dst + c] += values->data[src + c];
    }
    check_finite(out, "scatter_rows");
    out->requires_grad = want_grad(g, {&values});
    if (out->requires_grad) {
        g.record([values, out, indices = std::move(indices), cols] {
            if (out->grad.empty()) return;
            values->ensure_grad();
            for (size_t e = 0; e < indices.size(); ++e) {
                const long dst = static_cast<long>(e) * cols;
                const long src = static_cast<long>(indices[e]) * cols;
                for (int c = 0; c < cols; ++c) values->grad[dst + c] += out->grad[src + c];
            }
        });
    }
    return out;
}

// Tile a rank-1 vector into [count x dim]; backward sums the rows.
template <class S>
TensorPtr<S> broadcast_row(Graph<S>& g, const TensorPtr<S>& v, int count) {
    if (v->rank() != 1) {
        throw DimensionError("broadcast_row: rank-1 vector required, got " +
                             shape_str(v->shape()));
    }
    if (count < 1) throw ValueError("broadcast_row: count must be >= 1");
    const int dim = v->shape()[0];
    auto out = TensorT<S>::zeros({count, dim});
    for (int r = 0; r < count; ++r) {
        std::copy(v->data.begin(), v->data.end(), out->data.begin() + static_cast<long>(r) * dim);
    }
    check_finite(out, "broadcast_row");
    out->requires_grad = want_grad(g, {&v});
    if (out->requires_grad) {
        g.record([v, out, count, dim] {
            if (out->grad.empty()) return;
            v->ensure_grad();
            kernels::bias_grad(out->grad.data(), v->grad.data(), count, dim);
        });
    }
    return out;
}

// Copy reshape between rank-1 and rank-2 views of the same element count.
template <class S>
TensorPtr<S> reshape(Graph<S>& g, const TensorPtr<S>& x, std::vector<int> shape) {
    auto out = TensorT<S>::zeros(std::move(shape));
    if (out->numel() != x->numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x->shape()) + " as " +
                             shape_str(out->shape()));
    }
    out->data = x->data;
    out->requires_grad = want_grad(g, {&x});
    if (out->requires_grad) {
        g.record([x, out] {
            if (out->grad.empty()) return;
            x->ensure_grad();
            for (long i = 0; i < x->numel(); ++i) x->grad[i] += out->grad[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions and loss

template <class S>
TensorPtr<S> sum(Graph<S>& g, const TensorPtr<S>& x) {
    S acc = S(0);
    for (long i = 0; i < x->numel(); ++i) acc += x->data[i];
    auto out = TensorT<S>::from_data({1}, {acc});
    check_finite(out, "sum");
    out->requires_grad = want_grad(g, {&x});
    if (out->requires_grad) {
        g.record([x, out] {
            if (out->grad.empty()) return;
            x->ensure_grad();
            const S go = out->grad[0];
            for (long i = 0; i < x->numel(); ++i) x->grad[i] += go;
        });
    }
    return out;
}

// Mean over masked rows of -log softmax(logits)[target], stabilized by
// max-subtraction. Rows with mask false contribute nothing, forward or
// backward.
template <class S>
TensorPtr<S> cross_entropy(Graph<S>& g, const TensorPtr<S>& logits,
                           const std::vector<int>& targets, const std::vector<uint8_t>& mask) {
    if (logits->rank() != 2) {
        throw DimensionError("cross_entropy: rank-2 logits required, got " +
                             shape_str(logits->shape()));
    }
    const int n = logits->shape()[0], v = logits->shape()[1];
    if (static_cast<int>(targets.size()) != n || static_cast<int>(mask.size()) != n) {
        throw DimensionError("cross_entropy: logits " + shape_str(logits->shape()) + " with " +
                             std::to_string(targets.size()) + " targets and " +
                             std::to_string(mask.size()) + " mask entries");
    }
    long masked = 0;
    for (int i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        ++masked;
        if (targets[i] < 0 || targets[i] >= v) {
            throw ValueError("cross_entropy: target " + std::to_string(targets[i]) + " at row " +
                             std::to_string(i) + " out of range [0, " + std::to_string(v) + ")");
        }
    }
    if (masked == 0) throw ValueError("cross_entropy: mask selects no positions");

    S acc = S(0);
    for (int i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        const S* row = logits->data.data() + static_cast<long>(i) * v;
        S mx = row[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        S z = S(0);
        for (int j = 0; j < v; ++j) z += std::exp(row[j] - mx);
        acc += std::log(z) - (row[targets[i]] - mx);
    }
    const S inv = S(1) / static_cast<S>(masked);
    auto out = TensorT<S>::from_data({1}, {acc * inv});
    check_finite(out, "cross_entropy");
    out->requires_grad = want_grad(g, {&logits});
    if (out->requires_grad) {
        g.record([logits, out, targets, mask, n, v, inv] {
            if (out->grad.empty()) return;
            logits->ensure_grad();
            const S go = out->grad[0] * inv;
            for (int i = 0; i < n; ++i) {
                if (!mask[i]) continue;
                const S* row = logits->data.data() + static_cast<long>(i) * v;
                S* grow = logits->grad.data() + static_cast<long>(i) * v;
                S mx = row[0];
                for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
                S z = S(0);
                for (int j = 0; j < v; ++j) z += std::exp(row[j] - mx);
                for (int j = 0; j < v; ++j) {
                    S p = std::exp(row[j] - mx) / z;
                    grow[j] += go * (p - (j == targets[i] ? S(1) : S(0)));
                }
            }
        });
    }
    return out;
}

}  // namespace treegpt::ops
