#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dntsc/core/errors.hpp"
#include "dntsc/core/tensor.hpp"

namespace dntsc {
namespace ad {

// Define-by-run reverse-mode autodiff over dense double tensors. Values are
// computed eagerly; each op optionally records a closure that scatters the
// node's gradient into its parents.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on demand during backward
    bool requires_grad = false;
    bool is_leaf = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    bool grad_defined() const { return grad.numel() == value.numel(); }
    void ensure_grad() {
        if (!grad_defined()) grad = Tensor::zeros(value.shape());
    }
};

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev_; }

private:
    bool prev_;
};

inline Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return n;
}

inline Var scalar(double v) { return constant(Tensor::scalar(v)); }

// Trainable leaf; gradients accumulate across backward() calls until cleared.
inline Var leaf(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = true;
    n->is_leaf = true;
    return n;
}

inline bool any_requires_grad(const std::vector<Var>& parents) {
    for (const auto& p : parents)
        if (p->requires_grad) return true;
    return false;
}

inline Var make_node(Tensor value, std::vector<Var> parents,
                     std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (grad_mode() && any_requires_grad(parents)) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return n;
}

// Topological order (parents before children), deterministic given the graph
// construction order.
inline void topo_collect(const Var& root, std::vector<Node*>& order) {
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

// Runs reverse-mode accumulation from a scalar (or seeded) root. Leaf
// gradients accumulate; interior gradients are freshly zeroed per call.
inline void backward(const Var& root, const Tensor* seed = nullptr) {
    if (!root->requires_grad) return;
    std::vector<Node*> order;
    topo_collect(root, order);
    for (Node* n : order) {
        if (n->is_leaf) {
            n->ensure_grad();
        } else {
            n->grad = Tensor::zeros(n->value.shape());
        }
    }
    if (seed) {
        if (!seed->same_shape(root->value)) throw ShapeError("backward seed shape mismatch");
        for (std::int64_t i = 0; i < seed->numel(); ++i) root->grad[i] += (*seed)[i];
    } else {
        if (root->value.numel() != 1) throw ShapeError("backward() on non-scalar needs a seed");
        root->grad[0] += 1.0;
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// Broadcasting support: equal shapes, scalar (numel 1), row vector (1,D)
// against (T,D), or column vector (T,1) against (T,D).

enum class Bcast { Same, Scalar, Row, Col };

inline Bcast bcast_kind(const Tensor& a, const Tensor& b) {
    if (a.same_shape(b)) return Bcast::Same;
    if (b.numel() == 1) return Bcast::Scalar;
    if (a.ndim() == 2 && b.ndim() == 2 && b.dim(0) == 1 && b.dim(1) == a.dim(1)) return Bcast::Row;
    if (a.ndim() == 2 && b.ndim() == 2 && b.dim(1) == 1 && b.dim(0) == a.dim(0)) return Bcast::Col;
    throw ShapeError("cannot broadcast " + shape_str(b.shape()) + " against " + shape_str(a.shape()));
}

inline std::int64_t bcast_index(Bcast k, std::int64_t i, std::int64_t cols) {
    switch (k) {
        case Bcast::Same: return i;
        case Bcast::Scalar: return 0;
        case Bcast::Row: return i % cols;
        case Bcast::Col: return i / cols;
    }
    return 0;
}

template <typename FwdOp, typename BwdA, typename BwdB>
Var binary_op(const Var& a, const Var& b, FwdOp fwd, BwdA bwd_a, BwdB bwd_b) {
    const Bcast k = bcast_kind(a->value, b->value);
    const std::int64_t cols = a->value.ndim() == 2 ? a->value.dim(1) : 1;
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = fwd(a->value[i], b->value[bcast_index(k, i, cols)]);
    Node* pa = a.get();
    Node* pb = b.get();
    return make_node(std::move(out), {a, b}, [pa, pb, k, cols, bwd_a, bwd_b](Node& n) {
        const std::int64_t numel = n.value.numel();
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::int64_t i = 0; i < numel; ++i) {
                const std::int64_t j = bcast_index(k, i, cols);
                pa->grad[i] += n.grad[i] * bwd_a(pa->value[i], pb->value[j], n.value[i]);
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::int64_t i = 0; i < numel; ++i) {
                const std::int64_t j = bcast_index(k, i, cols);
                pb->grad[j] += n.grad[i] * bwd_b(pa->value[i], pb->value[j], n.value[i]);
            }
        }
    });
}

inline Var add(const Var& a, const Var& b) {
    return binary_op(
        a, b, [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
    return binary_op(
        a, b, [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
    return binary_op(
        a, b, [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

inline Var div(const Var& a, const Var& b) {
    return binary_op(
        a, b, [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double x, double y, double) { return -x / (y * y); });
}

template <typename FwdOp, typename BwdOp>
Var unary_op(const Var& a, FwdOp fwd, BwdOp bwd) {
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = fwd(a->value[i]);
    Node* pa = a.get();
    return make_node(std::move(out), {a}, [pa, bwd](Node& n) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::int64_t i = 0; i < n.value.numel(); ++i)
            pa->grad[i] += n.grad[i] * bwd(pa->value[i], n.value[i]);
    });
}

inline Var neg(const Var& a) {
    return unary_op(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}
inline Var scale(const Var& a, double c) {
    return unary_op(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}
inline Var add_const(const Var& a, double c) {
    return unary_op(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}
inline Var relu(const Var& a) {
    return unary_op(a, [](double x) { return x > 0 ? x : 0.0; },
                    [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}
inline Var gelu(const Var& a) {
    // exact erf formulation
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return unary_op(
        a, [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [=](double x, double) {
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            return cdf + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
        });
}
inline double softplus_val(double x) {
    return x > 30.0 ? x : std::log1p(std::exp(x));
}
inline Var softplus(const Var& a) {
    return unary_op(a, [](double x) { return softplus_val(x); },
                    [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}
inline Var tanh_(const Var& a) {
    return unary_op(a, [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}
inline Var exp_(const Var& a) {
    return unary_op(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Var log_(const Var& a) {
    return unary_op(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
inline Var sqrt_(const Var& a) {
    return unary_op(a, [](double x) { return std::sqrt(x); },
                    [](double, double y) { return 0.5 / y; });
}
inline Var square(const Var& a) {
    return unary_op(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
inline Var clamp_min(const Var& a, double lo) {
    return unary_op(a, [lo](double x) { return x < lo ? lo : x; },
                    [lo](double x, double) { return x < lo ? 0.0 : 1.0; });
}
inline Var clamp(const Var& a, double lo, double hi) {
    return unary_op(a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
                    [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

inline Var matmul(const Var& a, const Var& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (A.ndim() != 2 || B.ndim() != 2 || A.dim(1) != B.dim(0))
        throw ShapeError("matmul " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
    const std::int64_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    Tensor out(Shape{m, n});
    {
        const double* pa = A.data();
        const double* pb = B.data();
        double* po = out.data();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t p = 0; p < k; ++p) {
                const double av = pa[i * k + p];
                if (av == 0.0) continue;
                const double* brow = pb + p * n;
                double* orow = po + i * n;
                for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
    }
    Node* pa = a.get();
    Node* pb = b.get();
    return make_node(std::move(out), {a, b}, [pa, pb, m, k, n](Node& node) {
        const double* g = node.grad.data();
        if (pa->requires_grad) {  // dA = G B^T
            pa->ensure_grad();
            double* da = pa->grad.data();
            const double* bv = pb->value.data();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j) {
                    const double gv = g[i * n + j];
                    if (gv == 0.0) continue;
                    const double* brow = bv + j;
                    double* darow = da + i * k;
                    for (std::int64_t p = 0; p < k; ++p) darow[p] += gv * brow[p * n];
                }
        }
        if (pb->requires_grad) {  // dB = A^T G
            pb->ensure_grad();
            double* db = pb->grad.data();
            const double* av = pa->value.data();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t p = 0; p < k; ++p) {
                    const double a_ip = av[i * k + p];
                    if (a_ip == 0.0) continue;
                    const double* grow = g + i * n;
                    double* dbrow = db + p * n;
                    for (std::int64_t j = 0; j < n; ++j) dbrow[j] += a_ip * grow[j];
                }
        }
    });
}

inline Var transpose2d(const Var& a) {
    const Tensor& A = a->value;
    if (A.ndim() != 2) throw ShapeError("transpose2d expects 2-D");
    const std::int64_t m = A.dim(0), n = A.dim(1);
    Tensor out(Shape{n, m});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
    Node* pa = a.get();
    return make_node(std::move(out), {a}, [pa, m, n](Node& node) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) pa->grad[i * n + j] += node.grad[j * m + i];
    });
}

inline Var reshape(const Var& a, Shape s) {
    Tensor out = a->value.reshaped(std::move(s));
    Node* pa = a.get();
    return make_node(std::move(out), {a}, [pa](Node& node) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::int64_t i = 0; i < node.value.numel(); ++i) pa->grad[i] += node.grad[i];
    });
}

inline Var sum_all(const Var& a) {
    Tensor out = Tensor::scalar(a->value.sum());
    Node* pa = a.get();
    return make_node(std::move(out), {a}, [pa](Node& node) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        const double g = node.grad[0];
        for (std::int64_t i = 0; i < pa->value.numel(); ++i) pa->grad[i] += g;
    });
}

inline Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a->value.numel())); }

// (T,D) -> (T,1)
inline Var sum_lastdim(const Var& a) {
    const Tensor& A = a->value;
    if (A.ndim() != 2) throw ShapeError("sum_lastdim expects 2-D");
    const std::int64_t t = A.dim(0), d = A.dim(1);
    Tensor out(Shape{t, 1});
    for (std::int64_t i = 0; i < t; ++i) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < d; ++j) acc += A[i * d + j];
        out[i] = acc;
    }
    Node* pa = a.get();
    return make_node(std::move(out), {a}, [pa, t, d](Node& node) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::int64_t i = 0; i < t; ++i)
            for (std::int64_t j = 0; j < d; ++j) pa->grad[i * d + j] += node.grad[i];
    });
}

// (T,D) -> (1,D)
inline Var mean_rows(const Var& a) {
    const Tensor& A = a->value;
    if (A.ndim() != 2) throw ShapeError("mean_rows expects 2-D");
    const std::int64_t t = A.dim(0), d = A.dim(1);
    Tensor out(Shape{1, d});
    for (std::int64_t i = 0; i < t; ++i)
        for (std::int64_t j = 0; j < d; ++j) out[j] += A[i * d + j] / static_cast<double>(t);
    Node* pa = a.get();
    return make_node(std::move(out), {a}, [pa, t, d](Node& node) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::int64_t i = 0; i < t; ++i)
            for (std::int64_t j = 0; j < d; ++j)
                pa->grad[i * d + j] += node.grad[j] / static_cast<double>(t);
    });
}

inline Var slice_rows(const Var& a, std::int64_t r0, std::int64_t rows) {
    const Tensor& A = a->value;
    if (A.ndim() != 2 || r0 < 0 || r0 + rows > A.dim(0)) throw ShapeError("slice_rows out of range");
    const std::int64_t d = A.dim(1);
    Tensor out(Shape{rows, d});
    for (std::int64_t i = 0; i < rows * d; ++i) out[i] = A[r0 * d + i];
    Node* pa = a.get();
    return make_node(std::move(out), {a}, [pa, r0, rows, d](Node& node) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::int64_t i = 0; i < rows * d; ++i) pa->grad[r0 * d + i] += node.grad[i];
    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows of nothing");
    const std::int64_t d = parts[0]->value.dim(1);
    std::int64_t rows = 0;
    for (const auto& p : parts) {
        if (p->value.ndim() != 2 || p->value.dim(1) != d) throw ShapeError("concat_rows width mismatch");
        rows += p->value.dim(0);
    }
    Tensor out(Shape{rows, d});
    std::int64_t off = 0;
    for (const auto& p : parts) {
        for (std::int64_t i = 0; i < p->value.numel(); ++i) out[off + i] = p->value[i];
        off += p->value.numel();
    }
    std::vector<Node*> raw;
    for (const auto& p : parts) raw.push_back(p.get());
    return make_node(std::move(out), parts, [raw](Node& node) {
        std::int64_t off = 0;
        for (Node* p : raw) {
            const std::int64_t n = p->value.numel();
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::int64_t i = 0; i < n; ++i) p->grad[i] += node.grad[off + i];
            }
            off += n;
        }
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols of nothing");
    const std::int64_t t = parts[0]->value.dim(0);
    std::int64_t d = 0;
    for (const auto& p : parts) {
        if (p->value.ndim() != 2 || p->value.dim(0) != t) throw ShapeError("concat_cols height mismatch");
        d += p->value.dim(1);
    }
    Tensor out(Shape{t, d});
    std::int64_t coff = 0;
    for (const auto& p : parts) {
        const std::int64_t pd = p->value.dim(1);
        for (std::int64_t i = 0; i < t; ++i)
            for (std::int64_t j = 0; j < pd; ++j) out[i * d + coff + j] = p->value[i * pd + j];
        coff += pd;
    }
    std::vector<Node*> raw;
    for (const auto& p : parts) raw.push_back(p.get());
    return make_node(std::move(out), parts, [raw, t, d](Node& node) {
        std::int64_t coff = 0;
        for (Node* p : raw) {
            const std::int64_t pd = p->value.dim(1);
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::int64_t i = 0; i < t; ++i)
                    for (std::int64_t j = 0; j < pd; ++j)
                        p->grad[i * pd + j] += node.grad[i * d + coff + j];
            }
            coff += pd;
        }
    });
}

inline Var slice_cols(const Var& a, std::int64_t c0, std::int64_t cols) {
    const Tensor& A = a->value;
    if (A.ndim() != 2 || c0 < 0 || c0 + cols > A.dim(1)) throw ShapeError("slice_cols out of range");
    const std::int64_t t = A.dim(0), d = A.dim(1);
    Tensor out(Shape{t, cols});
    for (std::int64_t i = 0; i < t; ++i)
        for (std::int64_t j = 0; j < cols; ++j) out[i * cols + j] = A[i * d + c0 + j];
    Node* pa = a.get();
    return make_node(std::move(out), {a}, [pa, c0, cols, t, d](Node& node) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::int64_t i = 0; i < t; ++i)
            for (std::int64_t j = 0; j < cols; ++j)
                pa->grad[i * d + c0 + j] += node.grad[i * cols + j];
    });
}

// Generic layout permutation: out[i] = x[idx[i]], idx entries of -1 read as 0.
// Covers window partition/merge, cyclic shifts and real/complex packing.
inline Var permute_gather(const Var& a, std::shared_ptr<const std::vector<std::int64_t>> idx,
                          Shape out_shape) {
    if (static_cast<std::int64_t>(idx->size()) != shape_numel(out_shape))
        throw ShapeError("permute_gather index/shape mismatch");
    Tensor out(std::move(out_shape));
    const Tensor& A = a->value;
    for (std::size_t i = 0; i < idx->size(); ++i) {
        const std::int64_t src = (*idx)[i];
        out[static_cast<std::int64_t>(i)] = src >= 0 ? A[src] : 0.0;
    }
    Node* pa = a.get();
    return make_node(std::move(out), {a}, [pa, idx](Node& node) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < idx->size(); ++i) {
            const std::int64_t src = (*idx)[i];
            if (src >= 0) pa->grad[src] += node.grad[static_cast<std::int64_t>(i)];
        }
    });
}

// (N,D) rows gathered by integer indices -> (P,D).
inline Var gather_rows(const Var& a, std::shared_ptr<const std::vector<std::int64_t>> rows) {
    const Tensor& A = a->value;
    if (A.ndim() != 2) throw ShapeError("gather_rows expects 2-D");
    const std::int64_t d = A.dim(1);
    Tensor out(Shape{static_cast<std::int64_t>(rows->size()), d});
    for (std::size_t i = 0; i < rows->size(); ++i)
        for (std::int64_t j = 0; j < d; ++j)
            out[static_cast<std::int64_t>(i) * d + j] = A[(*rows)[i] * d + j];
    Node* pa = a.get();
    return make_node(std::move(out), {a}, [pa, rows, d](Node& node) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < rows->size(); ++i)
            for (std::int64_t j = 0; j < d; ++j)
                pa->grad[(*rows)[i] * d + j] += node.grad[static_cast<std::int64_t>(i) * d + j];
    });
}

// Row-wise softmax with an optional additive mask applied beforehand by the
// caller. Fused for numerical stability.
inline Var softmax_rows(const Var& a) {
    const Tensor& A = a->value;
    if (A.ndim() != 2) throw ShapeError("softmax_rows expects 2-D");
    const std::int64_t t = A.dim(0), d = A.dim(1);
    Tensor out(A.shape());
    for (std::int64_t i = 0; i < t; ++i) {
        double mx = A[i * d];
        for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, A[i * d + j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            out[i * d + j] = std::exp(A[i * d + j] - mx);
            sum += out[i * d + j];
        }
        for (std::int64_t j = 0; j < d; ++j) out[i * d + j] /= sum;
    }
    Node* pa = a.get();
    return make_node(std::move(out), {a}, [pa, t, d](Node& node) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::int64_t i = 0; i < t; ++i) {
            double dot = 0.0;
            for (std::int64_t j = 0; j < d; ++j) dot += node.grad[i * d + j] * node.value[i * d + j];
            for (std::int64_t j = 0; j < d; ++j)
                pa->grad[i * d + j] += node.value[i * d + j] * (node.grad[i * d + j] - dot);
        }
    });
}

// LayerNorm over the last dimension of a (T,D) tensor.
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6) {
    const Tensor& X = x->value;
    if (X.ndim() != 2) throw ShapeError("layer_norm expects 2-D");
    const std::int64_t t = X.dim(0), d = X.dim(1);
    if (gamma->value.numel() != d || beta->value.numel() != d)
        throw ShapeError("layer_norm affine size mismatch");
    Tensor out(X.shape());
    auto mean_buf = std::make_shared<std::vector<double>>(t);
    auto rstd_buf = std::make_shared<std::vector<double>>(t);
    for (std::int64_t i = 0; i < t; ++i) {
        double m = 0.0;
        for (std::int64_t j = 0; j < d; ++j) m += X[i * d + j];
        m /= static_cast<double>(d);
        double v = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double c = X[i * d + j] - m;
            v += c * c;
        }
        v /= static_cast<double>(d);
        const double rstd = 1.0 / std::sqrt(v + eps);
        (*mean_buf)[i] = m;
        (*rstd_buf)[i] = rstd;
        for (std::int64_t j = 0; j < d; ++j)
            out[i * d + j] = (X[i * d + j] - m) * rstd * gamma->value[j] + beta->value[j];
    }
    Node* px = x.get();
    Node* pg = gamma.get();
    Node* pb = beta.get();
    return make_node(std::move(out), {x, gamma, beta},
                     [px, pg, pb, t, d, mean_buf, rstd_buf](Node& node) {
        for (std::int64_t i = 0; i < t; ++i) {
            const double m = (*mean_buf)[i];
            const double rstd = (*rstd_buf)[i];
            double sum_dy_xhat = 0.0, sum_dy = 0.0;
            for (std::int64_t j = 0; j < d; ++j) {
                const double xhat = (px->value[i * d + j] - m) * rstd;
                const double dy = node.grad[i * d + j] * pg->value[j];
                sum_dy_xhat += dy * xhat;
                sum_dy += dy;
            }
            if (px->requires_grad) {
                px->ensure_grad();
                for (std::int64_t j = 0; j < d; ++j) {
                    const double xhat = (px->value[i * d + j] - m) * rstd;
                    const double dy = node.grad[i * d + j] * pg->value[j];
                    px->grad[i * d + j] +=
                        rstd * (dy - (sum_dy + xhat * sum_dy_xhat) / static_cast<double>(d));
                }
            }
            if (pg->requires_grad) {
                pg->ensure_grad();
                for (std::int64_t j = 0; j < d; ++j) {
                    const double xhat = (px->value[i * d + j] - m) * rstd;
                    pg->grad[j] += node.grad[i * d + j] * xhat;
                }
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::int64_t j = 0; j < d; ++j) pb->grad[j] += node.grad[i * d + j];
            }
        }
    });
}

inline Var stop_gradient(const Var& a) { return constant(a->value); }

}  // namespace ad
}  // namespace dntsc
