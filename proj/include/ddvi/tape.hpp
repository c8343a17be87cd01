#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "ddvi/tensor.hpp"

namespace ddvi::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid until the tape is cleared.
struct Var {
    Tape* tape = nullptr;
    std::uint32_t id = 0;
};

namespace detail {

inline unsigned env_thread_cap() {
    const char* s = std::getenv("DDVI_THREADS");
    if (!s) return 0;
    const long v = std::strtol(s, nullptr, 10);
    return v > 0 ? static_cast<unsigned>(v) : 0;
}

// Row-partitioned parallel loop. Each row is written by exactly one thread,
// so results are identical to the sequential order.
template <typename Fn>
void for_rows(std::size_t n, const Fn& fn) {
    static const unsigned cap = env_thread_cap();
    const unsigned workers = (cap > 1 && n >= 64) ? std::min<unsigned>(cap, 8) : 1;
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace detail

// Append-only computation graph for reverse-mode differentiation. Nodes carry
// their forward value; backward() walks the node list once in reverse
// insertion order, which is a topological order by construction.
class Tape {
public:
    struct Node {
        Tensor value;
        std::vector<double> adjoint;  // lazily sized, empty means all-zero
        bool requires_grad = false;
        std::function<void(Tape&)> backprop;  // null for leaves and constants
    };

    Tape() { nodes_.reserve(256); }

    Var leaf(const Tensor& t) {
        Node n;
        n.value = t;
        n.requires_grad = t.requires_grad;
        return push(std::move(n));
    }

    Var constant(Tensor t) {
        Node n;
        n.value = std::move(t);
        return push(std::move(n));
    }

    Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

    const Tensor& value(Var v) const { return nodes_[v.id].value; }

    // Adjoint of a node as a tensor (zeros if the node was never reached).
    Tensor grad(Var v) const {
        const Node& n = nodes_[v.id];
        Tensor g(n.value.shape);
        if (!n.adjoint.empty()) g.data = n.adjoint;
        return g;
    }

    std::size_t size() const { return nodes_.size(); }

    void clear() {
        nodes_.clear();
    }

    // Reverse pass from a scalar output. Visits every node at most once, in
    // reverse insertion order.
    void backward(Var out) {
        ddvi::detail::check(out.tape == this, "backward: node belongs to another tape");
        Node& root = nodes_[out.id];
        ddvi::detail::check(root.value.numel() == 1, "backward: output must be scalar");
        adjoint_of(out.id).assign(1, 1.0);
        for (std::uint32_t i = out.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.adjoint.empty() || !n.backprop) continue;
            n.backprop(*this);
        }
    }

    std::vector<double>& adjoint_of(std::uint32_t id) {
        Node& n = nodes_[id];
        if (n.adjoint.empty()) n.adjoint.assign(n.value.numel(), 0.0);
        return n.adjoint;
    }

    Node& node(std::uint32_t id) { return nodes_[id]; }
    const Node& node(std::uint32_t id) const { return nodes_[id]; }

    Var push(Node&& n) {
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

private:
    std::vector<Node> nodes_;
};

namespace detail {

inline Tape& tape_of(Var a) {
    ddvi::detail::check(a.tape != nullptr, "op on an unbound Var");
    return *a.tape;
}

inline void same_tape(Var a, Var b) {
    ddvi::detail::check(a.tape == b.tape, "op on Vars from different tapes");
}

inline const Tensor& val(Var a) { return tape_of(a).value(a); }

// Adds src into the parent's adjoint unless the parent does not need it.
inline void accumulate(Tape& t, std::uint32_t parent, const std::vector<double>& src) {
    if (!t.node(parent).requires_grad) return;
    auto& dst = t.adjoint_of(parent);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

template <typename Fn, typename Dfn>
Var unary(Var a, const char* name, const Fn& fn_fwd, const Dfn& dfn) {
    Tape& t = tape_of(a);
    Tape::Node n;
    n.value = Tensor(val(a).shape);
    for (std::size_t i = 0; i < n.value.numel(); ++i) n.value.data[i] = fn_fwd(val(a).data[i]);
    ddvi::detail::check(n.value.all_finite(), std::string(name) + ": non-finite result");
    n.requires_grad = t.node(a.id).requires_grad;
    Var out = t.push(std::move(n));
    if (t.node(out.id).requires_grad) {
        const std::uint32_t oid = out.id;
        t.node(oid).backprop = [a, oid, dfn](Tape& tp) {
            const auto& g = tp.node(oid).adjoint;
            const auto& x = tp.node(a.id).value.data;
            const auto& y = tp.node(oid).value.data;
            auto& dst = tp.adjoint_of(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += dfn(x[i], y[i], g[i]);
        };
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
    detail::same_tape(a, b);
    Tape& t = detail::tape_of(a);
    ddvi::detail::check(detail::val(a).same_shape(detail::val(b)), "add: shape mismatch");
    Tape::Node n;
    n.value = Tensor(detail::val(a).shape);
    for (std::size_t i = 0; i < n.value.numel(); ++i)
        n.value.data[i] = detail::val(a).data[i] + detail::val(b).data[i];
    n.requires_grad = t.node(a.id).requires_grad || t.node(b.id).requires_grad;
    Var out = t.push(std::move(n));
    if (t.node(out.id).requires_grad) {
        const std::uint32_t oid = out.id;
        t.node(oid).backprop = [a, b, oid](Tape& tp) {
            const auto& g = tp.node(oid).adjoint;
            detail::accumulate(tp, a.id, g);
            detail::accumulate(tp, b.id, g);
        };
    }
    return out;
}

inline Var sub(Var a, Var b) {
    detail::same_tape(a, b);
    Tape& t = detail::tape_of(a);
    ddvi::detail::check(detail::val(a).same_shape(detail::val(b)), "sub: shape mismatch");
    Tape::Node n;
    n.value = Tensor(detail::val(a).shape);
    for (std::size_t i = 0; i < n.value.numel(); ++i)
        n.value.data[i] = detail::val(a).data[i] - detail::val(b).data[i];
    n.requires_grad = t.node(a.id).requires_grad || t.node(b.id).requires_grad;
    Var out = t.push(std::move(n));
    if (t.node(out.id).requires_grad) {
        const std::uint32_t oid = out.id;
        t.node(oid).backprop = [a, b, oid](Tape& tp) {
            const auto& g = tp.node(oid).adjoint;
            detail::accumulate(tp, a.id, g);
            if (tp.node(b.id).requires_grad) {
                auto& dst = tp.adjoint_of(b.id);
                for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
            }
        };
    }
    return out;
}

inline Var mul(Var a, Var b) {
    detail::same_tape(a, b);
    Tape& t = detail::tape_of(a);
    ddvi::detail::check(detail::val(a).same_shape(detail::val(b)), "mul: shape mismatch");
    Tape::Node n;
    n.value = Tensor(detail::val(a).shape);
    for (std::size_t i = 0; i < n.value.numel(); ++i)
        n.value.data[i] = detail::val(a).data[i] * detail::val(b).data[i];
    n.requires_grad = t.node(a.id).requires_grad || t.node(b.id).requires_grad;
    Var out = t.push(std::move(n));
    if (t.node(out.id).requires_grad) {
        const std::uint32_t oid = out.id;
        t.node(oid).backprop = [a, b, oid](Tape& tp) {
            const auto& g = tp.node(oid).adjoint;
            if (tp.node(a.id).requires_grad) {
                auto& dst = tp.adjoint_of(a.id);
                const auto& bx = tp.node(b.id).value.data;
                for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * bx[i];
            }
            if (tp.node(b.id).requires_grad) {
                auto& dst = tp.adjoint_of(b.id);
                const auto& ax = tp.node(a.id).value.data;
                for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * ax[i];
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scalar-argument ops
// ---------------------------------------------------------------------------

inline Var scale(Var a, double c) {
    Tape& t = detail::tape_of(a);
    Tape::Node n;
    n.value = Tensor(detail::val(a).shape);
    for (std::size_t i = 0; i < n.value.numel(); ++i) n.value.data[i] = c * detail::val(a).data[i];
    n.requires_grad = t.node(a.id).requires_grad;
    Var out = t.push(std::move(n));
    if (t.node(out.id).requires_grad) {
        const std::uint32_t oid = out.id;
        t.node(oid).backprop = [a, c, oid](Tape& tp) {
            const auto& g = tp.node(oid).adjoint;
            auto& dst = tp.adjoint_of(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += c * g[i];
        };
    }
    return out;
}

inline Var add_scalar(Var a, double c) {
    Tape& t = detail::tape_of(a);
    Tape::Node n;
    n.value = Tensor(detail::val(a).shape);
    for (std::size_t i = 0; i < n.value.numel(); ++i) n.value.data[i] = detail::val(a).data[i] + c;
    n.requires_grad = t.node(a.id).requires_grad;
    Var out = t.push(std::move(n));
    if (t.node(out.id).requires_grad) {
        const std::uint32_t oid = out.id;
        t.node(oid).backprop = [a, oid](Tape& tp) { detail::accumulate(tp, a.id, tp.node(oid).adjoint); };
    }
    return out;
}

inline Var neg(Var a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

inline Var relu(Var a) {
    return detail::unary(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double, double g) { return x > 0.0 ? g : 0.0; });
}

inline Var tanh(Var a) {
    return detail::unary(
        a, "tanh", [](double x) { return std::tanh(x); },
        [](double, double y, double g) { return g * (1.0 - y * y); });
}

inline Var sigmoid(Var a) {
    return detail::unary(
        a, "sigmoid",
        [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double, double y, double g) { return g * y * (1.0 - y); });
}

inline double softplus_value(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

inline Var softplus(Var a) {
    return detail::unary(
        a, "softplus", [](double x) { return softplus_value(x); },
        [](double x, double, double g) {
            const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            return g * s;
        });
}

inline Var exp(Var a) {
    return detail::unary(
        a, "exp", [](double x) { return std::exp(x); },
        [](double, double y, double g) { return g * y; });
}

inline Var log(Var a) {
    return detail::unary(
        a, "log", [](double x) { return std::log(x); },
        [](double x, double, double g) { return g / x; });
}

inline Var square(Var a) {
    return detail::unary(
        a, "square", [](double x) { return x * x; },
        [](double x, double, double g) { return 2.0 * x * g; });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
    detail::same_tape(a, b);
    Tape& t = detail::tape_of(a);
    const Tensor& A = detail::val(a);
    const Tensor& B = detail::val(b);
    ddvi::detail::check(A.is_matrix() && B.is_matrix(), "matmul: operands must be 2-D");
    ddvi::detail::check(A.cols() == B.rows(), "matmul: inner dimensions " + shape_str(A.shape) +
                                                  " vs " + shape_str(B.shape));
    const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
    Tape::Node node;
    node.value = Tensor({n, m});
    {
        const double* pa = A.data.data();
        const double* pb = B.data.data();
        double* pc = node.value.data.data();
        detail::for_rows(n, [&](std::size_t i) {
            double* ci = pc + i * m;
            const double* ai = pa + i * k;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double av = ai[kk];
                const double* bk = pb + kk * m;
                for (std::size_t j = 0; j < m; ++j) ci[j] += av * bk[j];
            }
        });
    }
    node.requires_grad = t.node(a.id).requires_grad || t.node(b.id).requires_grad;
    Var out = t.push(std::move(node));
    if (t.node(out.id).requires_grad) {
        const std::uint32_t oid = out.id;
        t.node(oid).backprop = [a, b, oid, n, k, m](Tape& tp) {
            const auto& g = tp.node(oid).adjoint;
            if (tp.node(a.id).requires_grad) {
                auto& da = tp.adjoint_of(a.id);
                const auto& B2 = tp.node(b.id).value.data;
                detail::for_rows(n, [&](std::size_t i) {
                    for (std::size_t j = 0; j < m; ++j) {
                        const double gv = g[i * m + j];
                        if (gv == 0.0) continue;
                        const double* bj = B2.data() + j;
                        double* dai = da.data() + i * k;
                        for (std::size_t kk = 0; kk < k; ++kk) dai[kk] += gv * bj[kk * m];
                    }
                });
            }
            if (tp.node(b.id).requires_grad) {
                auto& db = tp.adjoint_of(b.id);
                const auto& A2 = tp.node(a.id).value.data;
                for (std::size_t i = 0; i < n; ++i) {
                    const double* ai = A2.data() + i * k;
                    const double* gi = g.data() + i * m;
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        const double av = ai[kk];
                        if (av == 0.0) continue;
                        double* dbk = db.data() + kk * m;
                        for (std::size_t j = 0; j < m; ++j) dbk[j] += av * gi[j];
                    }
                }
            }
        };
    }
    return out;
}

// (n,m) + (1,m): broadcast a row vector down the rows.
inline Var add_row(Var a, Var r) {
    detail::same_tape(a, r);
    Tape& t = detail::tape_of(a);
    const Tensor& A = detail::val(a);
    const Tensor& R = detail::val(r);
    ddvi::detail::check(A.is_matrix() && R.is_matrix() && R.rows() == 1 && R.cols() == A.cols(),
                        "add_row: need (n,m) and (1,m)");
    const std::size_t n = A.rows(), m = A.cols();
    Tape::Node node;
    node.value = Tensor({n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) node.value(i, j) = A(i, j) + R.data[j];
    node.requires_grad = t.node(a.id).requires_grad || t.node(r.id).requires_grad;
    Var out = t.push(std::move(node));
    if (t.node(out.id).requires_grad) {
        const std::uint32_t oid = out.id;
        t.node(oid).backprop = [a, r, oid, n, m](Tape& tp) {
            const auto& g = tp.node(oid).adjoint;
            detail::accumulate(tp, a.id, g);
            if (tp.node(r.id).requires_grad) {
                auto& dr = tp.adjoint_of(r.id);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) dr[j] += g[i * m + j];
            }
        };
    }
    return out;
}

// (n,m) + (n,1): broadcast a column vector across the columns.
inline Var add_col(Var a, Var c) {
    detail::same_tape(a, c);
    Tape& t = detail::tape_of(a);
    const Tensor& A = detail::val(a);
    const Tensor& C = detail::val(c);
    ddvi::detail::check(A.is_matrix() && C.is_matrix() && C.cols() == 1 && C.rows() == A.rows(),
                        "add_col: need (n,m) and (n,1)");
    const std::size_t n = A.rows(), m = A.cols();
    Tape::Node node;
    node.value = Tensor({n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) node.value(i, j) = A(i, j) + C.data[i];
    node.requires_grad = t.node(a.id).requires_grad || t.node(c.id).requires_grad;
    Var out = t.push(std::move(node));
    if (t.node(out.id).requires_grad) {
        const std::uint32_t oid = out.id;
        t.node(oid).backprop = [a, c, oid, n, m](Tape& tp) {
            const auto& g = tp.node(oid).adjoint;
            detail::accumulate(tp, a.id, g);
            if (tp.node(c.id).requires_grad) {
                auto& dc = tp.adjoint_of(c.id);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) dc[i] += g[i * m + j];
            }
        };
    }
    return out;
}

inline Var concat_cols(Var a, Var b) {
    detail::same_tape(a, b);
    Tape& t = detail::tape_of(a);
    const Tensor& A = detail::val(a);
    const Tensor& B = detail::val(b);
    ddvi::detail::check(A.is_matrix() && B.is_matrix() && A.rows() == B.rows(),
                        "concat_cols: row counts differ");
    const std::size_t n = A.rows(), ma = A.cols(), mb = B.cols();
    Tape::Node node;
    node.value = Tensor({n, ma + mb});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < ma; ++j) node.value(i, j) = A(i, j);
        for (std::size_t j = 0; j < mb; ++j) node.value(i, ma + j) = B(i, j);
    }
    node.requires_grad = t.node(a.id).requires_grad || t.node(b.id).requires_grad;
    Var out = t.push(std::move(node));
    if (t.node(out.id).requires_grad) {
        const std::uint32_t oid = out.id;
        t.node(oid).backprop = [a, b, oid, n, ma, mb](Tape& tp) {
            const auto& g = tp.node(oid).adjoint;
            if (tp.node(a.id).requires_grad) {
                auto& da = tp.adjoint_of(a.id);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < ma; ++j) da[i * ma + j] += g[i * (ma + mb) + j];
            }
            if (tp.node(b.id).requires_grad) {
                auto& db = tp.adjoint_of(b.id);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < mb; ++j) db[i * mb + j] += g[i * (ma + mb) + ma + j];
            }
        };
    }
    return out;
}

// Select rows of a table by index; duplicate indices accumulate in backward.
inline Var gather_rows(Var table, std::vector<std::size_t> idx) {
    Tape& t = detail::tape_of(table);
    const Tensor& T = detail::val(table);
    ddvi::detail::check(T.is_matrix(), "gather_rows: table must be 2-D");
    for (auto i : idx) ddvi::detail::check(i < T.rows(), "gather_rows: index out of range");
    const std::size_t m = T.cols();
    Tape::Node node;
    node.value = Tensor({idx.size(), m});
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < m; ++j) node.value(i, j) = T(idx[i], j);
    node.requires_grad = t.node(table.id).requires_grad;
    Var out = t.push(std::move(node));
    if (t.node(out.id).requires_grad) {
        const std::uint32_t oid = out.id;
        t.node(oid).backprop = [table, oid, m, idx = std::move(idx)](Tape& tp) {
            const auto& g = tp.node(oid).adjoint;
            auto& dt = tp.adjoint_of(table.id);
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < m; ++j) dt[idx[i] * m + j] += g[i * m + j];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Var sum(Var a) {
    Tape& t = detail::tape_of(a);
    double s = 0.0;
    for (double v : detail::val(a).data) s += v;
    Tape::Node node;
    node.value = Tensor::scalar(s);
    node.requires_grad = t.node(a.id).requires_grad;
    Var out = t.push(std::move(node));
    if (t.node(out.id).requires_grad) {
        const std::uint32_t oid = out.id;
        t.node(oid).backprop = [a, oid](Tape& tp) {
            const double g = tp.node(oid).adjoint[0];
            auto& dst = tp.adjoint_of(a.id);
            for (double& v : dst) v += g;
        };
    }
    return out;
}

inline Var mean(Var a) {
    const std::size_t n = detail::val(a).numel();
    ddvi::detail::check(n > 0, "mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

// (n,m) -> (n,1): sum along each row.
inline Var row_sum(Var a) {
    Tape& t = detail::tape_of(a);
    const Tensor& A = detail::val(a);
    ddvi::detail::check(A.is_matrix(), "row_sum: need 2-D");
    const std::size_t n = A.rows(), m = A.cols();
    Tape::Node node;
    node.value = Tensor({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += A(i, j);
        node.value.data[i] = s;
    }
    node.requires_grad = t.node(a.id).requires_grad;
    Var out = t.push(std::move(node));
    if (t.node(out.id).requires_grad) {
        const std::uint32_t oid = out.id;
        t.node(oid).backprop = [a, oid, n, m](Tape& tp) {
            const auto& g = tp.node(oid).adjoint;
            auto& dst = tp.adjoint_of(a.id);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) dst[i * m + j] += g[i];
        };
    }
    return out;
}

// (n,m) -> (n,1): numerically stable log(sum_j exp(a_ij)).
inline Var logsumexp_rows(Var a) {
    Tape& t = detail::tape_of(a);
    const Tensor& A = detail::val(a);
    ddvi::detail::check(A.is_matrix() && A.cols() > 0, "logsumexp_rows: need non-empty 2-D");
    const std::size_t n = A.rows(), m = A.cols();
    Tape::Node node;
    node.value = Tensor({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        double mx = A(i, 0);
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, A(i, j));
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += std::exp(A(i, j) - mx);
        node.value.data[i] = mx + std::log(s);
    }
    node.requires_grad = t.node(a.id).requires_grad;
    Var out = t.push(std::move(node));
    if (t.node(out.id).requires_grad) {
        const std::uint32_t oid = out.id;
        t.node(oid).backprop = [a, oid, n, m](Tape& tp) {
            const auto& g = tp.node(oid).adjoint;
            const auto& y = tp.node(oid).value.data;
            const auto& x = tp.node(a.id).value.data;
            auto& dst = tp.adjoint_of(a.id);
            for (std::size_t i = 0; i < n; ++i) {
                if (g[i] == 0.0) continue;
                for (std::size_t j = 0; j < m; ++j)
                    dst[i * m + j] += g[i] * std::exp(x[i * m + j] - y[i]);
            }
        };
    }
    return out;
}

// mu + exp(0.5*logvar) * noise, differentiable in mu and logvar.
inline Var reparam_sample(Var mu, Var logvar, Var noise) {
    detail::same_tape(mu, logvar);
    detail::same_tape(mu, noise);
    ddvi::detail::check(detail::val(mu).same_shape(detail::val(logvar)) &&
                            detail::val(mu).same_shape(detail::val(noise)),
                        "reparam_sample: shape mismatch");
    return add(mu, mul(exp(scale(logvar, 0.5)), noise));
}

}  // namespace ddvi::ad
