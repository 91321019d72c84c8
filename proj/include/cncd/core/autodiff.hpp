#pragma once

// Reverse-mode differentiation over a tape of matrix-valued nodes. Values are
// computed eagerly when a node is recorded; backward() walks the tape in
// reverse creation order, which is a valid topological order.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cncd/core/errors.hpp"
#include "cncd/core/matrix.hpp"

namespace cncd::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }
    const Matrix& value() const;
    double scalar() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    static constexpr std::size_t kMaxNodes = 1'000'000;

    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var param(Matrix value) { return leaf(std::move(value), true); }
    Var constant(Matrix value) { return leaf(std::move(value), false); }
    Var scalar_param(double v) { return param(Matrix(1, 1, v)); }
    Var scalar_constant(double v) { return constant(Matrix(1, 1, v)); }

    std::size_t size() const noexcept { return nodes_.size(); }
    const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
    bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }

    /// Gradient of the last backward() loss w.r.t. `v`; zeros if unreachable.
    Matrix grad(Var v) const {
        const Node& n = nodes_.at(v.id());
        if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
        return n.grad;
    }

    void backward(Var loss) {
        if (loss.tape() != this) throw UsageError("backward: loss belongs to another tape");
        const Matrix& lv = nodes_.at(loss.id()).value;
        if (lv.rows() != 1 || lv.cols() != 1)
            throw UsageError("backward: loss must be scalar, got " + shape_str(lv));
        for (Node& n : nodes_) n.grad = Matrix();
        nodes_[loss.id()].grad = Matrix(1, 1, 1.0);
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.needs_grad || n.grad.empty() || !n.back) continue;
            n.back(*this, i);
        }
    }

    /// Records a derived node. `inputs` decide whether it needs a gradient.
    Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn back) {
        bool ng = false;
        for (const Var& in : inputs) {
            if (in.tape() != this) throw UsageError("autodiff: mixing nodes from different tapes");
            ng = ng || nodes_[in.id()].needs_grad;
        }
        return push(Node{std::move(value), Matrix(), ng, ng ? std::move(back) : BackwardFn{}});
    }

    /// Accumulation target for the gradient of node `id` (allocated on demand).
    Matrix& grad_ref(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
        return n.grad;
    }
    const Matrix& grad_of(std::size_t id) const { return nodes_[id].grad; }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        BackwardFn back;
    };

    Var leaf(Matrix value, bool requires_grad) {
        return push(Node{std::move(value), Matrix(), requires_grad, {}});
    }

    Var push(Node n) {
        if (nodes_.size() >= kMaxNodes) throw UsageError("autodiff: tape exceeds node limit");
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const {
    if (!tape_) throw UsageError("autodiff: null Var");
    return tape_->value(id_);
}

inline double Var::scalar() const {
    const Matrix& m = value();
    if (m.rows() != 1 || m.cols() != 1) throw UsageError("Var::scalar: not 1x1");
    return m(0, 0);
}

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw UsageError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                         shape_str(b.value()));
}

inline void accumulate(Tape& t, const Var& target, const Matrix& g, double scale = 1.0) {
    if (!t.needs_grad(target.id())) return;
    Matrix& acc = t.grad_ref(target.id());
    for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += scale * g.data()[i];
}

template <typename F>
Var unary_elementwise(const Var& a, F&& f, std::function<double(double x, double y)> dfdx) {
    Tape& t = *a.tape();
    Matrix out = a.value();
    for (double& v : out.data()) v = f(v);
    return t.record(std::move(out), {a}, [a, dfdx = std::move(dfdx)](Tape& tp, std::size_t self) {
        if (!tp.needs_grad(a.id())) return;
        const Matrix& g = tp.grad_of(self);
        const Matrix& x = tp.value(a.id());
        const Matrix& y = tp.value(self);
        Matrix& acc = tp.grad_ref(a.id());
        for (std::size_t i = 0; i < acc.size(); ++i)
            acc.data()[i] += g.data()[i] * dfdx(x.data()[i], y.data()[i]);
    });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
    detail::require_same_shape(a, b, "add");
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.value().data()[i];
    return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        detail::accumulate(t, a, t.grad_of(self));
        detail::accumulate(t, b, t.grad_of(self));
    });
}

inline Var sub(const Var& a, const Var& b) {
    detail::require_same_shape(a, b, "sub");
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.value().data()[i];
    return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        detail::accumulate(t, a, t.grad_of(self));
        detail::accumulate(t, b, t.grad_of(self), -1.0);
    });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
    detail::require_same_shape(a, b, "mul");
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.value().data()[i];
    return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        if (t.needs_grad(a.id())) {
            Matrix& acc = t.grad_ref(a.id());
            const Matrix& bv = t.value(b.id());
            for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += g.data()[i] * bv.data()[i];
        }
        if (t.needs_grad(b.id())) {
            Matrix& acc = t.grad_ref(b.id());
            const Matrix& av = t.value(a.id());
            for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += g.data()[i] * av.data()[i];
        }
    });
}

inline Var scale(const Var& a, double s) {
    Matrix out = a.value();
    for (double& v : out.data()) v *= s;
    return a.tape()->record(std::move(out), {a}, [a, s](Tape& t, std::size_t self) {
        detail::accumulate(t, a, t.grad_of(self), s);
    });
}

/// `a` (r×c) plus a 1×c row broadcast to every row.
inline Var add_row(const Var& a, const Var& bias) {
    if (bias.rows() != 1 || bias.cols() != a.cols())
        throw UsageError("add_row: bias " + shape_str(bias.value()) + " for " + shape_str(a.value()));
    Matrix out = a.value();
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bias.value()(0, c);
    return a.tape()->record(std::move(out), {a, bias}, [a, bias](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        detail::accumulate(t, a, g);
        if (t.needs_grad(bias.id())) {
            Matrix& acc = t.grad_ref(bias.id());
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) acc(0, c) += g(r, c);
        }
    });
}

/// A 1×1 node broadcast to rows×cols.
inline Var broadcast(const Var& s, std::size_t rows, std::size_t cols) {
    const double v = s.scalar();
    return s.tape()->record(Matrix(rows, cols, v), {s}, [s](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        double total = 0.0;
        for (double x : g.data()) total += x;
        if (t.needs_grad(s.id())) t.grad_ref(s.id())(0, 0) += total;
    });
}

inline Var matmul(const Var& a, const Var& b) {
    Matrix out = cncd::matmul(a.value(), b.value());
    return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        const Matrix& av = t.value(a.id());
        const Matrix& bv = t.value(b.id());
        if (t.needs_grad(a.id())) {
            // dA = G Bᵀ
            Matrix& acc = t.grad_ref(a.id());
            for (std::size_t i = 0; i < av.rows(); ++i)
                for (std::size_t k = 0; k < av.cols(); ++k) {
                    double s = 0.0;
                    const double* gr = g.row(i).data();
                    const double* br = bv.row(k).data();
                    for (std::size_t j = 0; j < bv.cols(); ++j) s += gr[j] * br[j];
                    acc(i, k) += s;
                }
        }
        if (t.needs_grad(b.id())) {
            // dB = Aᵀ G
            Matrix& acc = t.grad_ref(b.id());
            for (std::size_t i = 0; i < av.rows(); ++i) {
                const double* gr = g.row(i).data();
                for (std::size_t k = 0; k < av.cols(); ++k) {
                    const double aik = av(i, k);
                    if (aik == 0.0) continue;
                    double* ar = acc.row(k).data();
                    for (std::size_t j = 0; j < bv.cols(); ++j) ar[j] += aik * gr[j];
                }
            }
        }
    });
}

inline Var transpose(const Var& a) {
    return a.tape()->record(cncd::transpose(a.value()), {a}, [a](Tape& t, std::size_t self) {
        detail::accumulate(t, a, cncd::transpose(t.grad_of(self)));
    });
}

inline Var leaky_relu(const Var& a, double slope) {
    return detail::unary_elementwise(
        a, [slope](double x) { return cncd::leaky_relu(x, slope); },
        [slope](double x, double) { return x >= 0.0 ? 1.0 : slope; });
}

inline Var sigmoid(const Var& a) {
    return detail::unary_elementwise(
        a,
        [](double x) {
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        },
        [](double, double y) { return y * (1.0 - y); });
}

inline Var square(const Var& a) {
    return detail::unary_elementwise(
        a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return a.tape()->record(Matrix(1, 1, s), {a}, [a](Tape& t, std::size_t self) {
        const double g = t.grad_of(self)(0, 0);
        if (!t.needs_grad(a.id())) return;
        for (double& v : t.grad_ref(a.id()).data()) v += g;
    });
}

inline Var mean(const Var& a) {
    if (a.value().empty()) throw UsageError("mean: empty input");
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Row-wise softmax of a/temperature.
inline Var softmax_rows(const Var& a, double temperature = 1.0) {
    if (!(temperature > 0.0)) throw ParameterError("softmax_rows: temperature must be > 0");
    const Matrix& x = a.value();
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        Vector s = cncd::softmax(x.row(r), temperature);
        std::copy(s.begin(), s.end(), out.row(r).begin());
    }
    return a.tape()->record(std::move(out), {a}, [a, temperature](Tape& t, std::size_t self) {
        if (!t.needs_grad(a.id())) return;
        const Matrix& g = t.grad_of(self);
        const Matrix& y = t.value(self);
        Matrix& acc = t.grad_ref(a.id());
        for (std::size_t r = 0; r < y.rows(); ++r) {
            double gy = 0.0;
            for (std::size_t c = 0; c < y.cols(); ++c) gy += g(r, c) * y(r, c);
            for (std::size_t c = 0; c < y.cols(); ++c)
                acc(r, c) += y(r, c) * (g(r, c) - gy) / temperature;
        }
    });
}

/// Column-wise softmax of a/temperature.
inline Var softmax_cols(const Var& a, double temperature = 1.0) {
    return transpose(softmax_rows(transpose(a), temperature));
}

/// Cosine similarity of every row of `a` (P×d) with every row of `b` (M×d): P×M.
inline Var cosine_rows(const Var& a, const Var& b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.cols() != bv.cols()) throw UsageError("cosine_rows: dimension mismatch");
    Vector na(av.rows()), nb(bv.rows());
    for (std::size_t i = 0; i < av.rows(); ++i) {
        na[i] = norm(av.row(i));
        if (!(na[i] > 0.0)) throw DegenerateInputError("cosine_rows: zero-norm row " + std::to_string(i));
    }
    for (std::size_t j = 0; j < bv.rows(); ++j) {
        nb[j] = norm(bv.row(j));
        if (!(nb[j] > 0.0)) throw DegenerateInputError("cosine_rows: zero-norm prototype " + std::to_string(j));
    }
    Matrix out(av.rows(), bv.rows());
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < bv.rows(); ++j)
            out(i, j) = dot(av.row(i), bv.row(j)) / (na[i] * nb[j]);
    return a.tape()->record(std::move(out), {a, b}, [a, b, na, nb](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        const Matrix& s = t.value(self);
        const Matrix& av = t.value(a.id());
        const Matrix& bv = t.value(b.id());
        const std::size_t d = av.cols();
        const bool ga = t.needs_grad(a.id());
        const bool gb = t.needs_grad(b.id());
        Matrix* acc_a = ga ? &t.grad_ref(a.id()) : nullptr;
        Matrix* acc_b = gb ? &t.grad_ref(b.id()) : nullptr;
        for (std::size_t i = 0; i < av.rows(); ++i)
            for (std::size_t j = 0; j < bv.rows(); ++j) {
                const double gij = g(i, j);
                if (gij == 0.0) continue;
                const double inv = 1.0 / (na[i] * nb[j]);
                const double sij = s(i, j);
                for (std::size_t k = 0; k < d; ++k) {
                    if (ga) (*acc_a)(i, k) += gij * (bv(j, k) * inv - sij * av(i, k) / (na[i] * na[i]));
                    if (gb) (*acc_b)(j, k) += gij * (av(i, k) * inv - sij * bv(j, k) / (nb[j] * nb[j]));
                }
            }
    });
}

/// Mean over rows of -log softmax(logits)[label].
inline Var cross_entropy(const Var& logits, std::span<const int> labels) {
    const Matrix& x = logits.value();
    if (labels.size() != x.rows()) throw UsageError("cross_entropy: label count != rows");
    if (x.rows() == 0) throw UsageError("cross_entropy: empty batch");
    Matrix probs(x.rows(), x.cols());
    double total = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= x.cols())
            throw DataError("cross_entropy: label " + std::to_string(y) + " out of range [0, " +
                            std::to_string(x.cols()) + ")");
        auto row = x.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double v : row) z += std::exp(v - mx);
        const double lse = mx + std::log(z);
        total += lse - row[static_cast<std::size_t>(y)];
        for (std::size_t c = 0; c < x.cols(); ++c) probs(r, c) = std::exp(row[c] - lse);
    }
    const double n = static_cast<double>(x.rows());
    std::vector<int> lab(labels.begin(), labels.end());
    return logits.tape()->record(
        Matrix(1, 1, total / n), {logits},
        [logits, probs = std::move(probs), lab = std::move(lab), n](Tape& t, std::size_t self) {
            if (!t.needs_grad(logits.id())) return;
            const double g = t.grad_of(self)(0, 0);
            Matrix& acc = t.grad_ref(logits.id());
            for (std::size_t r = 0; r < probs.rows(); ++r)
                for (std::size_t c = 0; c < probs.cols(); ++c) {
                    const double target = static_cast<std::size_t>(lab[r]) == c ? 1.0 : 0.0;
                    acc(r, c) += g * (probs(r, c) - target) / n;
                }
        });
}

/// -mean log(p·u + (1-p)(1-u)) with p clamped to [clamp, 1-clamp].
inline Var binary_cross_entropy(const Var& pred, std::span<const int> targets, double clamp = 1e-7) {
    const Matrix& p = pred.value();
    if (p.size() != targets.size()) throw UsageError("binary_cross_entropy: target count mismatch");
    if (p.empty()) throw UsageError("binary_cross_entropy: empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pc = std::clamp(p.data()[i], clamp, 1.0 - clamp);
        const double u = targets[i] ? 1.0 : 0.0;
        total -= std::log(pc * u + (1.0 - pc) * (1.0 - u));
    }
    const double n = static_cast<double>(p.size());
    std::vector<int> tg(targets.begin(), targets.end());
    return pred.tape()->record(
        Matrix(1, 1, total / n), {pred}, [pred, tg = std::move(tg), n, clamp](Tape& t, std::size_t self) {
            if (!t.needs_grad(pred.id())) return;
            const double g = t.grad_of(self)(0, 0);
            const Matrix& p = t.value(pred.id());
            Matrix& acc = t.grad_ref(pred.id());
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double raw = p.data()[i];
                if (raw < clamp || raw > 1.0 - clamp) continue;
                const double u = tg[i] ? 1.0 : 0.0;
                const double q = raw * u + (1.0 - raw) * (1.0 - u);
                acc.data()[i] += -g * (2.0 * u - 1.0) / (q * n);
            }
        });
}

/// Hard indicator 1(w < theta) in the forward pass; the backward pass uses the
/// derivative of sigmoid((theta - w)/eps). `theta` is 1×1.
inline Var indicator_below(const Var& w, const Var& theta, double eps) {
    if (!(eps > 0.0)) throw ParameterError("indicator_below: eps must be > 0");
    const double th = theta.scalar();
    Matrix out = w.value();
    for (double& v : out.data()) v = v < th ? 1.0 : 0.0;
    return w.tape()->record(std::move(out), {w, theta}, [w, theta, eps](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        const Matrix& wv = t.value(w.id());
        const double th = t.value(theta.id())(0, 0);
        double dtheta = 0.0;
        const bool gw = t.needs_grad(w.id());
        Matrix* acc = gw ? &t.grad_ref(w.id()) : nullptr;
        for (std::size_t i = 0; i < wv.size(); ++i) {
            const double z = (th - wv.data()[i]) / eps;
            const double s = 1.0 / (1.0 + std::exp(-z));
            const double ds = s * (1.0 - s) / eps;
            dtheta += g.data()[i] * ds;
            if (gw) acc->data()[i] -= g.data()[i] * ds;
        }
        if (t.needs_grad(theta.id())) t.grad_ref(theta.id())(0, 0) += dtheta;
    });
}

}  // namespace cncd::ad
