#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "drtl/tensor.hpp"


namespace drtl {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

using IndexMap = std::shared_ptr<const std::vector<int32_t>>;

// Define-by-run reverse-mode tape. Forward values are computed eagerly; each
// op registers a VJP closure that, during backward(), emits its input
// gradients as new tape ops. Because gradients are themselves tape nodes,
// calling backward() on a value built from first-order gradients yields
// second-order gradients (the MAML outer step relies on this).
//
// Non-smooth points follow the usual subgradient conventions: relu'(0) = 0,
// d|x|/dx at 0 = 0, and argmax ties in pooling take the first index. Masks
// and indices captured in VJPs are treated as locally constant.
template <class S>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Reference is invalidated by the next op emission (the node vector may
    // reallocate); copy the Tensor (cheap, shared buffer) to hold onto it.
    const Tensor<S>& val(Var v) const { return nodes_[check(v)].value; }
    bool live(Var v) const { return nodes_[check(v)].live; }
    size_t size() const { return nodes_.size(); }

    Var leaf(Tensor<S> value, bool requires_grad = false) {
        return push(std::move(value), requires_grad, nullptr);
    }

    Var constant(Tensor<S> value) { return leaf(std::move(value), false); }
    Var constant_scalar(S v) { return leaf(Tensor<S>::scalar(v), false); }

    // ---- elementwise ----

    Var add(Var a, Var b) {
        const auto& ta = val(a);
        const auto& tb = val(b);
        require(ta.shape == tb.shape, "add: shape mismatch");
        Tensor<S> out = Tensor<S>::zeros(ta.shape);
        const S* pa = ta.data();
        const S* pb = tb.data();
        S* po = out.data();
        const int64_t n = out.numel();
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
        return push(std::move(out), live(a) || live(b), [this, a, b](Var g) {
            if (live(a)) accum(a, g);
            if (live(b)) accum(b, g);
        });
    }

    Var sub(Var a, Var b) {
        const auto& ta = val(a);
        const auto& tb = val(b);
        require(ta.shape == tb.shape, "sub: shape mismatch");
        Tensor<S> out = Tensor<S>::zeros(ta.shape);
        const S* pa = ta.data();
        const S* pb = tb.data();
        S* po = out.data();
        const int64_t n = out.numel();
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
        return push(std::move(out), live(a) || live(b), [this, a, b](Var g) {
            if (live(a)) accum(a, g);
            if (live(b)) accum(b, scale(g, S(-1)));
        });
    }

    Var mul(Var a, Var b) {
        const auto& ta = val(a);
        const auto& tb = val(b);
        require(ta.shape == tb.shape, "mul: shape mismatch");
        Tensor<S> out = Tensor<S>::zeros(ta.shape);
        const S* pa = ta.data();
        const S* pb = tb.data();
        S* po = out.data();
        const int64_t n = out.numel();
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
        return push(std::move(out), live(a) || live(b), [this, a, b](Var g) {
            if (live(a)) accum(a, mul(g, b));
            if (live(b)) accum(b, mul(g, a));
        });
    }

    Var scale(Var a, S c) {
        const auto& ta = val(a);
        Tensor<S> out = Tensor<S>::zeros(ta.shape);
        const S* pa = ta.data();
        S* po = out.data();
        const int64_t n = out.numel();
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
        return push(std::move(out), live(a), [this, a, c](Var g) {
            if (live(a)) accum(a, scale(g, c));
        });
    }

    Var neg(Var a) { return scale(a, S(-1)); }

    Var relu(Var a) {
        const auto& ta = val(a);
        Tensor<S> out = Tensor<S>::zeros(ta.shape);
        const S* pa = ta.data();
        S* po = out.data();
        const int64_t n = out.numel();
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] > S(0) ? pa[i] : S(0);
        return push(std::move(out), live(a), [this, a](Var g) {
            if (live(a)) accum(a, where_positive(g, a));
        });
    }

    // out = g where ref > 0 else 0; the mask is a constant of the
    // differentiation, so this op is its own VJP and double-backward works
    Var where_positive(Var g, Var ref) {
        const auto& tg = val(g);
        const auto& tr = val(ref);
        require(tg.shape == tr.shape, "where_positive: shape mismatch");
        Tensor<S> out = Tensor<S>::zeros(tg.shape);
        const S* pg = tg.data();
        const S* pr = tr.data();
        S* po = out.data();
        const int64_t n = out.numel();
        for (int64_t i = 0; i < n; ++i) po[i] = pr[i] > S(0) ? pg[i] : S(0);
        return push(std::move(out), live(g), [this, g, ref](Var gout) {
            if (live(g)) accum(g, where_positive(gout, ref));
        });
    }

    // out = g * sign(ref) with sign(0) = 0; constant w.r.t. differentiation
    Var sign_of_times(Var g, Var ref) {
        const auto& tg = val(g);
        const auto& tr = val(ref);
        require(tg.shape == tr.shape, "sign_of_times: shape mismatch");
        Tensor<S> out = Tensor<S>::zeros(tg.shape);
        const S* pg = tg.data();
        const S* pr = tr.data();
        S* po = out.data();
        const int64_t n = out.numel();
        for (int64_t i = 0; i < n; ++i)
            po[i] = pr[i] > S(0) ? pg[i] : (pr[i] < S(0) ? -pg[i] : S(0));
        return push(std::move(out), live(g), [this, g, ref](Var gout) {
            if (live(g)) accum(g, sign_of_times(gout, ref));
        });
    }

    Var rsqrt(Var a) {  // elementwise x^(-1/2); inputs must be > 0
        const auto& ta = val(a);
        Tensor<S> out = Tensor<S>::zeros(ta.shape);
        for (int64_t i = 0; i < ta.numel(); ++i) {
            require(ta[i] > S(0), "rsqrt: input must be positive");
            out[i] = S(1) / std::sqrt(ta[i]);
        }
        Var self = push(std::move(out), live(a), nullptr);
        if (live(a)) {
            nodes_[static_cast<size_t>(self.id)].vjp = [this, a, self](Var g) {
                accum(a, scale(mul(g, mul(mul(self, self), self)), S(-0.5)));
            };
        }
        return self;
    }

    Var abs_val(Var a) {
        const auto& ta = val(a);
        Tensor<S> out = Tensor<S>::zeros(ta.shape);
        const S* pa = ta.data();
        S* po = out.data();
        const int64_t n = out.numel();
        for (int64_t i = 0; i < n; ++i) po[i] = std::abs(pa[i]);
        return push(std::move(out), live(a), [this, a](Var g) {
            if (live(a)) accum(a, sign_of_times(g, a));
        });
    }

    // ---- data movement ----

    Var reshape(Var a, Shape s) {
        Tensor<S> out = val(a).reshaped(std::move(s));
        Shape orig = val(a).shape;
        return push(std::move(out), live(a), [this, a, orig](Var g) {
            if (live(a)) accum(a, reshape(g, orig));
        });
    }

    // out[i] = map[i] >= 0 ? x[map[i]] : 0
    Var gather(Var x, IndexMap map, Shape out_shape) {
        require(static_cast<int64_t>(map->size()) == shape_numel(out_shape),
                "gather: map size mismatch");
        const auto& tx = val(x);
        Tensor<S> out = Tensor<S>::zeros(out_shape);
        const S* px = tx.data();
        S* po = out.data();
        const int32_t* m = map->data();
        const int64_t n = out.numel();
        for (int64_t i = 0; i < n; ++i) po[i] = m[i] >= 0 ? px[m[i]] : S(0);
        Shape in_shape = tx.shape;
        return push(std::move(out), live(x), [this, x, map, in_shape](Var g) {
            if (live(x)) accum(x, scatter_add(g, map, in_shape));
        });
    }

    // out[map[i]] += x[i]  (map[i] < 0 drops)
    Var scatter_add(Var x, IndexMap map, Shape out_shape) {
        const auto& tx = val(x);
        require(static_cast<int64_t>(map->size()) == tx.numel(), "scatter_add: map size mismatch");
        Tensor<S> out = Tensor<S>::zeros(out_shape);
        const S* px = tx.data();
        S* po = out.data();
        const int32_t* m = map->data();
        const int64_t n = tx.numel();
        for (int64_t i = 0; i < n; ++i)
            if (m[i] >= 0) po[m[i]] += px[i];
        Shape in_shape = tx.shape;
        return push(std::move(out), live(x), [this, x, map, in_shape](Var g) {
            if (live(x)) accum(x, gather(g, map, in_shape));
        });
    }

    // ---- linear algebra ----

    Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
        const auto& A = val(a);
        const auto& B = val(b);
        require(A.ndim() == 2 && B.ndim() == 2, "matmul: inputs must be 2-d");
        const int64_t m = ta ? A.cols() : A.rows();
        const int64_t k = ta ? A.rows() : A.cols();
        const int64_t kb = tb ? B.cols() : B.rows();
        const int64_t n = tb ? B.rows() : B.cols();
        require(k == kb, "matmul: inner dimension mismatch");
        Tensor<S> out = Tensor<S>::zeros({m, n});
        gemm<S>(ta, tb, m, n, k, S(1), A.data(), B.data(), S(0), out.data());
        return push(std::move(out), live(a) || live(b), [this, a, b, ta, tb](Var g) {
            if (live(a)) {
                if (!ta)
                    accum(a, matmul(g, b, false, !tb));
                else
                    accum(a, tb ? matmul(b, g, true, true) : matmul(b, g, false, true));
            }
            if (live(b)) {
                if (!tb)
                    accum(b, matmul(a, g, !ta, false));
                else
                    accum(b, ta ? matmul(g, a, true, true) : matmul(g, a, true, false));
            }
        });
    }

    Var transpose2d(Var a) {
        const auto& A = val(a);
        require(A.ndim() == 2, "transpose2d: input must be 2-d");
        const int64_t m = A.rows(), n = A.cols();
        Tensor<S> out = Tensor<S>::zeros({n, m});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
        return push(std::move(out), live(a), [this, a](Var g) {
            if (live(a)) accum(a, transpose2d(g));
        });
    }

    // ---- reductions / broadcasts ----

    Var sum_all(Var a) {
        const auto& ta = val(a);
        S acc = S(0);
        for (int64_t i = 0; i < ta.numel(); ++i) acc += ta[i];
        Shape in_shape = ta.shape;
        return push(Tensor<S>::scalar(acc), live(a), [this, a, in_shape](Var g) {
            if (live(a)) accum(a, broadcast_scalar(g, in_shape));
        });
    }

    Var mean_all(Var a) {
        const int64_t n = val(a).numel();
        require(n > 0, "mean_all: empty tensor");
        return scale(sum_all(a), S(1) / static_cast<S>(n));
    }

    Var broadcast_scalar(Var s, Shape out_shape) {
        const auto& ts = val(s);
        require(ts.numel() == 1, "broadcast_scalar: input must be scalar");
        Tensor<S> out = Tensor<S>::zeros(out_shape);
        const S v = ts[0];
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = v;
        Shape s_shape = ts.shape;
        return push(std::move(out), live(s), [this, s, s_shape](Var g) {
            if (live(s)) accum(s, reshape(sum_all(g), s_shape));
        });
    }

    // X [m,n] + v [n] per row
    Var add_rowvec(Var x, Var v) {
        const auto& X = val(x);
        const auto& V = val(v);
        require(X.ndim() == 2 && V.ndim() == 1 && X.cols() == V.dim(0),
                "add_rowvec: shape mismatch");
        Tensor<S> out = Tensor<S>::zeros(X.shape);
        const int64_t m = X.rows(), n = X.cols();
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) out[i * n + j] = X[i * n + j] + V[j];
        return push(std::move(out), live(x) || live(v), [this, x, v](Var g) {
            if (live(x)) accum(x, g);
            if (live(v)) accum(v, colsum(g));
        });
    }

    Var colsum(Var x) {  // [m,n] -> [n]
        const auto& X = val(x);
        require(X.ndim() == 2, "colsum: input must be 2-d");
        const int64_t m = X.rows(), n = X.cols();
        Tensor<S> out = Tensor<S>::zeros({n});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) out[j] += X[i * n + j];
        return push(std::move(out), live(x), [this, x, m](Var g) {
            if (live(x)) accum(x, broadcast_rows(g, m));
        });
    }

    Var rowsum(Var x) {  // [m,n] -> [m]
        const auto& X = val(x);
        require(X.ndim() == 2, "rowsum: input must be 2-d");
        const int64_t m = X.rows(), n = X.cols();
        Tensor<S> out = Tensor<S>::zeros({m});
        for (int64_t i = 0; i < m; ++i) {
            S acc = S(0);
            for (int64_t j = 0; j < n; ++j) acc += X[i * n + j];
            out[i] = acc;
        }
        return push(std::move(out), live(x), [this, x, n](Var g) {
            if (live(x)) accum(x, broadcast_cols(g, n));
        });
    }

    Var broadcast_rows(Var v, int64_t m) {  // [n] -> [m,n], copies of v as rows
        const auto& V = val(v);
        require(V.ndim() == 1, "broadcast_rows: input must be 1-d");
        const int64_t n = V.dim(0);
        Tensor<S> out = Tensor<S>::zeros({m, n});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) out[i * n + j] = V[j];
        return push(std::move(out), live(v), [this, v](Var g) {
            if (live(v)) accum(v, colsum(g));
        });
    }

    Var broadcast_cols(Var v, int64_t n) {  // [m] -> [m,n], v[i] across row i
        const auto& V = val(v);
        require(V.ndim() == 1, "broadcast_cols: input must be 1-d");
        const int64_t m = V.dim(0);
        Tensor<S> out = Tensor<S>::zeros({m, n});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) out[i * n + j] = V[i];
        return push(std::move(out), live(v), [this, v](Var g) {
            if (live(v)) accum(v, rowsum(g));
        });
    }

    // ---- scalar-variable arithmetic ----

    Var scale_by(Var x, Var s) {  // x * s, s rank-0
        const auto& X = val(x);
        const auto& Sv = val(s);
        require(Sv.numel() == 1, "scale_by: scale must be scalar");
        Tensor<S> out = Tensor<S>::zeros(X.shape);
        const S c = Sv[0];
        for (int64_t i = 0; i < X.numel(); ++i) out[i] = X[i] * c;
        Shape s_shape = Sv.shape;
        return push(std::move(out), live(x) || live(s), [this, x, s, s_shape](Var g) {
            if (live(x)) accum(x, scale_by(g, s));
            if (live(s)) accum(s, reshape(sum_all(mul(g, x)), s_shape));
        });
    }

    Var add_scalar_var(Var x, Var s) {  // x + s elementwise, s rank-0
        const auto& X = val(x);
        const auto& Sv = val(s);
        require(Sv.numel() == 1, "add_scalar_var: addend must be scalar");
        Tensor<S> out = Tensor<S>::zeros(X.shape);
        const S c = Sv[0];
        for (int64_t i = 0; i < X.numel(); ++i) out[i] = X[i] + c;
        Shape s_shape = Sv.shape;
        return push(std::move(out), live(x) || live(s), [this, x, s, s_shape](Var g) {
            if (live(x)) accum(x, g);
            if (live(s)) accum(s, reshape(sum_all(g), s_shape));
        });
    }

    // ---- rows assembly ----

    Var slice_rows(Var x, int64_t r0, int64_t r1) {
        const auto& X = val(x);
        require(X.ndim() == 2 && 0 <= r0 && r0 < r1 && r1 <= X.rows(), "slice_rows: bad range");
        const int64_t n = X.cols();
        Tensor<S> out = Tensor<S>::zeros({r1 - r0, n});
        std::copy(X.data() + r0 * n, X.data() + r1 * n, out.data());
        const int64_t total = X.rows();
        return push(std::move(out), live(x), [this, x, r0, total](Var g) {
            if (live(x)) accum(x, pad_rows(g, total, r0));
        });
    }

    Var pad_rows(Var x, int64_t total_rows, int64_t r0) {
        const auto& X = val(x);
        require(X.ndim() == 2 && r0 + X.rows() <= total_rows, "pad_rows: bad placement");
        const int64_t n = X.cols();
        Tensor<S> out = Tensor<S>::zeros({total_rows, n});
        std::copy(X.data(), X.data() + X.numel(), out.data() + r0 * n);
        const int64_t r1 = r0 + X.rows();
        return push(std::move(out), live(x), [this, x, r0, r1](Var g) {
            if (live(x)) accum(x, slice_rows(g, r0, r1));
        });
    }

    Var concat_rows(Var a, Var b) {
        const auto& A = val(a);
        const auto& B = val(b);
        require(A.ndim() == 2 && B.ndim() == 2 && A.cols() == B.cols(),
                "concat_rows: column mismatch");
        const int64_t n = A.cols();
        Tensor<S> out = Tensor<S>::zeros({A.rows() + B.rows(), n});
        std::copy(A.data(), A.data() + A.numel(), out.data());
        std::copy(B.data(), B.data() + B.numel(), out.data() + A.numel());
        const int64_t ma = A.rows(), mt = A.rows() + B.rows();
        return push(std::move(out), live(a) || live(b), [this, a, b, ma, mt](Var g) {
            if (live(a)) accum(a, slice_rows(g, 0, ma));
            if (live(b)) accum(b, slice_rows(g, ma, mt));
        });
    }

    // ---- softmax / losses ----

    Var softmax_rows(Var x) {
        const auto& X = val(x);
        require(X.ndim() == 2, "softmax_rows: input must be 2-d");
        const int64_t m = X.rows(), n = X.cols();
        Tensor<S> out = Tensor<S>::zeros(X.shape);
        for (int64_t i = 0; i < m; ++i) {
            S mx = X[i * n];
            for (int64_t j = 1; j < n; ++j) mx = std::max(mx, X[i * n + j]);
            S z = S(0);
            for (int64_t j = 0; j < n; ++j) {
                out[i * n + j] = std::exp(X[i * n + j] - mx);
                z += out[i * n + j];
            }
            for (int64_t j = 0; j < n; ++j) out[i * n + j] /= z;
        }
        Var self = push(std::move(out), live(x), nullptr);
        if (live(x)) {
            nodes_[static_cast<size_t>(self.id)].vjp = [this, x, self, n](Var g) {
                // gx = s * (g - rowsum(g*s) broadcast)
                Var gs = mul(g, self);
                Var r = rowsum(gs);
                accum(x, mul(self, sub(g, broadcast_cols(r, n))));
            };
        }
        return self;
    }

    // mean over rows of [logsumexp(row) - row[label]]
    Var cross_entropy_mean(Var logits, std::shared_ptr<const std::vector<int>> labels) {
        const auto& X = val(logits);
        require(X.ndim() == 2, "cross_entropy_mean: logits must be 2-d");
        const int64_t m = X.rows(), n = X.cols();
        require(static_cast<int64_t>(labels->size()) == m, "cross_entropy_mean: label count");
        S total = S(0);
        for (int64_t i = 0; i < m; ++i) {
            const int lab = (*labels)[static_cast<size_t>(i)];
            require(0 <= lab && lab < n, "cross_entropy_mean: label out of range");
            S mx = X[i * n];
            for (int64_t j = 1; j < n; ++j) mx = std::max(mx, X[i * n + j]);
            S z = S(0);
            for (int64_t j = 0; j < n; ++j) z += std::exp(X[i * n + j] - mx);
            total += (std::log(z) + mx) - X[i * n + lab];
        }
        total /= static_cast<S>(m);
        return push(Tensor<S>::scalar(total), live(logits), [this, logits, labels, m, n](Var g) {
            if (!live(logits)) return;
            Tensor<S> onehot = Tensor<S>::zeros({m, n});
            for (int64_t i = 0; i < m; ++i) onehot[i * n + (*labels)[static_cast<size_t>(i)]] = S(1);
            Var p = softmax_rows(logits);
            Var d = sub(p, constant(std::move(onehot)));
            accum(logits, scale(scale_by(d, g), S(1) / static_cast<S>(m)));
        });
    }

    // ---- backward ----

    // Reverse pass from a scalar root. Gradients are emitted as tape nodes,
    // so they can be differentiated again by a later backward() call.
    std::vector<Var> backward(Var root, const std::vector<Var>& wrt) {
        require(val(root).numel() == 1, "backward: root must be scalar");
        grad_.assign(nodes_.size(), -1);
        Var seed = constant(Tensor<S>::scalar(S(1)));
        set_grad(root.id, seed);
        for (int i = root.id; i >= 0; --i) {
            const int gi = i < static_cast<int>(grad_.size()) ? grad_[static_cast<size_t>(i)] : -1;
            if (gi < 0) continue;
            // copy, not reference: nodes_ may reallocate during emission
            auto vjp = nodes_[static_cast<size_t>(i)].vjp;
            if (vjp) vjp(Var{gi});
        }
        std::vector<Var> out;
        out.reserve(wrt.size());
        for (Var w : wrt) {
            const int gi =
                w.id < static_cast<int>(grad_.size()) ? grad_[static_cast<size_t>(w.id)] : -1;
            out.push_back(gi >= 0 ? Var{gi} : constant(Tensor<S>::zeros(val(w).shape)));
        }
        return out;
    }

private:
    struct Node {
        Tensor<S> value;
        bool live = false;
        std::function<void(Var)> vjp;
    };

    std::vector<Node> nodes_;
    std::vector<int> grad_;

    int check(Var v) const {
        if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
            throw std::logic_error("tape: invalid var");
        return v.id;
    }

    static void require(bool cond, const char* msg) {
        if (!cond) throw std::invalid_argument(std::string("tape: ") + msg);
    }

    Var push(Tensor<S> value, bool is_live, std::function<void(Var)> vjp) {
        nodes_.push_back(Node{std::move(value), is_live, std::move(vjp)});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    void set_grad(int id, Var g) {
        if (id >= static_cast<int>(grad_.size())) grad_.resize(static_cast<size_t>(id) + 1, -1);
        grad_[static_cast<size_t>(id)] = g.id;
    }

    void accum(Var target, Var g) {
        const int id = target.id;
        const int cur = id < static_cast<int>(grad_.size()) ? grad_[static_cast<size_t>(id)] : -1;
        set_grad(id, cur < 0 ? g : add(Var{cur}, g));
    }
};

}  // namespace drtl
