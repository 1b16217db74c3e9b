#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Tape owns every intermediate value of one forward pass. Operations append
// nodes in creation order, which is already a topological order, so backward()
// walks the node list once in reverse. Nodes that do not depend on any
// grad-tracked leaf carry no adjoint closure and are skipped.
//
// Broadcasting aligns shapes from the trailing dimension; each aligned pair
// must be equal or one of them 1 (missing leading dimensions count as 1).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "activegan/error.hpp"
#include "activegan/tensor.hpp"

namespace activegan {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives and
// has not been cleared.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    // Called with the adjoint of the node's output; accumulates into parents.
    using BackwardFn = std::function<void(Tape&, const Tensor&)>;

    struct Node {
        Tensor value;
        std::optional<Tensor> grad;
        std::string op;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = true, std::string name = "leaf") {
        if (!value.all_finite()) throw NumericError("leaf '" + name + "' holds non-finite values");
        nodes_.push_back(Node{std::move(value), std::nullopt, std::move(name), requires_grad, {}});
        return Var(this, nodes_.size() - 1);
    }

    Var constant(Tensor value) { return leaf(std::move(value), false, "constant"); }

    // Appends an op result. The adjoint closure is dropped when no parent is
    // grad-tracked.
    Var record(Tensor value, std::string op, std::initializer_list<Var> parents, BackwardFn fn) {
        bool tracked = false;
        for (const Var& p : parents) {
            check_owner(p);
            tracked = tracked || nodes_[p.id()].requires_grad;
        }
        if (!value.all_finite()) {
            throw NumericError("op '" + op + "' (node " + std::to_string(nodes_.size()) +
                               ") produced non-finite values");
        }
        nodes_.push_back(Node{std::move(value), std::nullopt, std::move(op), tracked,
                              tracked ? std::move(fn) : BackwardFn{}});
        return Var(this, nodes_.size() - 1);
    }

    // Computes d(loss)/d(node) for every node the loss depends on. Gradients
    // from a previous backward() call are discarded first.
    void backward(Var loss) {
        check_owner(loss);
        const Tensor& lv = nodes_[loss.id()].value;
        if (lv.size() != 1) {
            throw ContractError("backward() needs a scalar loss, got shape " + shape_string(lv.shape()));
        }
        if (!std::isfinite(lv[0])) throw NumericError("loss is not finite");
        for (Node& n : nodes_) n.grad.reset();
        nodes_[loss.id()].grad = Tensor(lv.shape(), 1.0);
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.grad || !n.requires_grad || !n.backward) continue;
            if (!n.grad->all_finite()) {
                throw NumericError("non-finite adjoint at node " + std::to_string(i) + " ('" + n.op + "')");
            }
            // Closures only touch parent accumulators, never this node's grad.
            n.backward(*this, *n.grad);
        }
    }

    // Gradient of the last backward() loss with respect to v; zeros when v
    // did not influence it.
    Tensor grad(Var v) const {
        check_owner(v);
        const Node& n = nodes_[v.id()];
        return n.grad ? *n.grad : Tensor(n.value.shape(), 0.0);
    }

    const Tensor& value(Var v) const {
        check_owner(v);
        return nodes_[v.id()].value;
    }

    const Node& node(std::size_t id) const { return nodes_.at(id); }
    std::size_t size() const noexcept { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Adjoint accumulator of a parent; allocated on first use. Returns null
    // when the parent does not need a gradient.
    Tensor* accumulator(Var v) {
        Node& n = nodes_[v.id()];
        if (!n.requires_grad) return nullptr;
        if (!n.grad) n.grad = Tensor(n.value.shape(), 0.0);
        return &*n.grad;
    }

private:
    void check_owner(const Var& v) const {
        if (v.tape() != this || v.id() >= nodes_.size()) throw ContractError("variable does not belong to this tape");
    }

    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const {
    if (!tape_) throw ContractError("value() on an unbound variable");
    return tape_->value(*this);
}

namespace detail {

inline Tape& tape_of(Var a) {
    if (!a.valid()) throw ContractError("operation on an unbound variable");
    return *a.tape();
}

inline Tape& tape_of(Var a, Var b) {
    Tape& t = tape_of(a);
    if (b.tape() != &t) throw ContractError("operands live on different tapes");
    return t;
}

// Index maps from each output element to the operand elements it reads.
struct Broadcast {
    Shape out;
    bool same = false;
    std::vector<std::size_t> ia;
    std::vector<std::size_t> ib;
};

inline Broadcast broadcast(const Shape& a, const Shape& b) {
    Broadcast bc;
    if (a == b) {
        bc.out = a;
        bc.same = true;
        return bc;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("cannot broadcast " + shape_string(a) + " with " + shape_string(b));
        }
        out[i] = std::max(da, db);
    }
    auto strides_for = [&](const Shape& s) {
        std::vector<std::size_t> st(rank, 0);
        std::size_t acc = 1;
        for (std::size_t i = s.size(); i-- > 0;) {
            const std::size_t oi = i + (rank - s.size());
            st[oi] = s[i] == 1 ? 0 : acc;
            acc *= s[i];
        }
        return st;
    };
    const auto sa = strides_for(a);
    const auto sb = strides_for(b);
    const std::size_t n = shape_size(out);
    bc.ia.resize(n);
    bc.ib.resize(n);
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t flat = 0; flat < n; ++flat) {
        std::size_t oa = 0, ob = 0;
        for (std::size_t d = 0; d < rank; ++d) {
            oa += idx[d] * sa[d];
            ob += idx[d] * sb[d];
        }
        bc.ia[flat] = oa;
        bc.ib[flat] = ob;
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < out[d]) break;
            idx[d] = 0;
        }
    }
    bc.out = std::move(out);
    return bc;
}

// y = f(x) elementwise; dfdx(x, y) is the local derivative.
template <typename F, typename D>
Var unary(Var a, const char* op, F f, D dfdx) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    // The closure needs the output id to read y; it is known only after record().
    auto out_id = std::make_shared<std::size_t>(0);
    Var out = t.record(std::move(y), op, {a}, [a, out_id, dfdx](Tape& tape, const Tensor& g) {
        Tensor* ga = tape.accumulator(a);
        if (!ga) return;
        const Tensor& xv = tape.node(a.id()).value;
        const Tensor& yv = tape.node(*out_id).value;
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * dfdx(xv[i], yv[i]);
    });
    *out_id = out.id();
    return out;
}

// z = f(x, y) with broadcasting; partials return (dz/dx, dz/dy).
template <typename F, typename P>
Var binary(Var a, Var b, const char* op, F f, P partials) {
    Tape& t = tape_of(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    auto bc = std::make_shared<Broadcast>(broadcast(x.shape(), y.shape()));
    Tensor z(bc->out);
    if (bc->same) {
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = f(x[i], y[i]);
    } else {
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = f(x[bc->ia[i]], y[bc->ib[i]]);
    }
    return t.record(std::move(z), op, {a, b}, [a, b, bc, partials](Tape& tape, const Tensor& g) {
        Tensor* ga = tape.accumulator(a);
        Tensor* gb = tape.accumulator(b);
        const Tensor& xv = tape.node(a.id()).value;
        const Tensor& yv = tape.node(b.id()).value;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t ia = bc->same ? i : bc->ia[i];
            const std::size_t ib = bc->same ? i : bc->ib[i];
            const auto [dx, dy] = partials(xv[ia], yv[ib]);
            if (ga) (*ga)[ia] += g[i] * dx;
            if (gb) (*gb)[ib] += g[i] * dy;
        }
    });
}

inline void add_into(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---- arithmetic ---------------------------------------------------------

inline Var add(Var a, Var b) {
    return detail::binary(a, b, "add", [](double x, double y) { return x + y; },
                          [](double, double) { return std::pair{1.0, 1.0}; });
}

inline Var sub(Var a, Var b) {
    return detail::binary(a, b, "sub", [](double x, double y) { return x - y; },
                          [](double, double) { return std::pair{1.0, -1.0}; });
}

inline Var mul(Var a, Var b) {
    return detail::binary(a, b, "mul", [](double x, double y) { return x * y; },
                          [](double x, double y) { return std::pair{y, x}; });
}

inline Var div(Var a, Var b) {
    return detail::binary(a, b, "div", [](double x, double y) { return x / y; },
                          [](double x, double y) { return std::pair{1.0 / y, -x / (y * y)}; });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

inline Var add_scalar(Var a, double c) {
    return detail::unary(a, "add_scalar", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var scale(Var a, double c) {
    return detail::unary(a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var neg(Var a) { return scale(a, -1.0); }

inline Var square(Var a) {
    return detail::unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var exp(Var a) {
    return detail::unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
    for (double v : a.value().values()) {
        if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
    }
    return detail::unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// log(max(x, floor)); the gradient is zero where the floor is active.
inline Var clamp_log(Var a, double floor = 1e-12) {
    return detail::unary(
        a, "clamp_log", [floor](double x) { return std::log(std::max(x, floor)); },
        [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

inline Var clamp(Var a, double lo, double hi) {
    return detail::unary(
        a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---- activations --------------------------------------------------------

inline Var tanh(Var a) {
    return detail::unary(a, "tanh", [](double x) { return std::tanh(x); },
                         [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(Var a) {
    return detail::unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                         [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(Var a, double slope) {
    return detail::unary(
        a, "leaky_relu", [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

inline double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
    return detail::unary(a, "sigmoid", sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

// Softmax along the last dimension (each row of a matrix, or a whole vector).
inline Var softmax(Var a) {
    Tape& t = detail::tape_of(a);
    const Tensor& x = a.value();
    if (x.rank() == 0 || x.rank() > 2) throw ShapeError("softmax needs rank 1 or 2, got " + shape_string(x.shape()));
    const std::size_t rows = x.rows();
    const std::size_t cols = x.cols();
    Tensor y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const auto in = x.row(r);
        auto out = y.row(r);
        const double mx = *std::max_element(in.begin(), in.end());
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) total += out[c] = std::exp(in[c] - mx);
        for (std::size_t c = 0; c < cols; ++c) out[c] /= total;
    }
    auto out_id = std::make_shared<std::size_t>(0);
    Var out = t.record(std::move(y), "softmax", {a}, [a, out_id](Tape& tape, const Tensor& g) {
        Tensor* ga = tape.accumulator(a);
        if (!ga) return;
        const Tensor& yv = tape.node(*out_id).value;
        const std::size_t cols = yv.cols();
        for (std::size_t r = 0; r < yv.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * yv[r * cols + c];
            for (std::size_t c = 0; c < cols; ++c) {
                (*ga)[r * cols + c] += yv[r * cols + c] * (g[r * cols + c] - dot);
            }
        }
    });
    *out_id = out.id();
    return out;
}

enum class ElementwiseOp { exp, log, neg, square, tanh, relu, sigmoid, softmax, add, sub, mul, div };

// Tag-dispatched entry point; unary tags ignore b, binary tags require it.
inline Var elementwise(ElementwiseOp op, Var a, std::optional<Var> b = std::nullopt) {
    auto need_b = [&]() -> Var {
        if (!b) throw ContractError("binary elementwise op without second operand");
        return *b;
    };
    switch (op) {
        case ElementwiseOp::exp: return exp(a);
        case ElementwiseOp::log: return log(a);
        case ElementwiseOp::neg: return neg(a);
        case ElementwiseOp::square: return square(a);
        case ElementwiseOp::tanh: return tanh(a);
        case ElementwiseOp::relu: return relu(a);
        case ElementwiseOp::sigmoid: return sigmoid(a);
        case ElementwiseOp::softmax: return softmax(a);
        case ElementwiseOp::add: return add(a, need_b());
        case ElementwiseOp::sub: return sub(a, need_b());
        case ElementwiseOp::mul: return mul(a, need_b());
        case ElementwiseOp::div: return div(a, need_b());
    }
    throw ContractError("unknown elementwise op");
}

// ---- linear algebra and reductions --------------------------------------

inline Var matmul(Var a, Var b) {
    Tape& t = detail::tape_of(a, b);
    Tensor out = matmul_values(a.value(), b.value());
    return t.record(std::move(out), "matmul", {a, b}, [a, b](Tape& tape, const Tensor& g) {
        if (Tensor* ga = tape.accumulator(a)) {
            detail::add_into(*ga, matmul_values(g, tape.node(b.id()).value, false, true));
        }
        if (Tensor* gb = tape.accumulator(b)) {
            detail::add_into(*gb, matmul_values(tape.node(a.id()).value, g, true, false));
        }
    });
}

inline Var sum(Var a) {
    Tape& t = detail::tape_of(a);
    double total = 0.0;
    for (double v : a.value().values()) total += v;
    return t.record(Tensor::scalar(total), "sum", {a}, [a](Tape& tape, const Tensor& g) {
        if (Tensor* ga = tape.accumulator(a)) {
            for (double& v : ga->values()) v += g[0];
        }
    });
}

inline Var mean(Var a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw ContractError("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

// [m x n] -> [m], summing each row.
inline Var row_sum(Var a) {
    Tape& t = detail::tape_of(a);
    const Tensor& x = a.value();
    if (x.rank() != 2) throw ShapeError("row_sum needs rank 2, got " + shape_string(x.shape()));
    Tensor out(Shape{x.rows()});
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double s = 0.0;
        for (double v : x.row(r)) s += v;
        out[r] = s;
    }
    return t.record(std::move(out), "row_sum", {a}, [a](Tape& tape, const Tensor& g) {
        Tensor* ga = tape.accumulator(a);
        if (!ga) return;
        const std::size_t cols = ga->cols();
        for (std::size_t r = 0; r < ga->rows(); ++r) {
            for (std::size_t c = 0; c < cols; ++c) (*ga)[r * cols + c] += g[r];
        }
    });
}

inline Var concat_cols(Var a, Var b) {
    Tape& t = detail::tape_of(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.rank() != 2 || y.rank() != 2 || x.rows() != y.rows()) {
        throw ShapeError("concat_cols needs matrices with equal row counts, got " + shape_string(x.shape()) +
                         " and " + shape_string(y.shape()));
    }
    const std::size_t ca = x.cols(), cb = y.cols();
    Tensor out(Shape{x.rows(), ca + cb});
    for (std::size_t r = 0; r < x.rows(); ++r) {
        std::copy(x.row(r).begin(), x.row(r).end(), out.row(r).begin());
        std::copy(y.row(r).begin(), y.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(ca));
    }
    return t.record(std::move(out), "concat_cols", {a, b}, [a, b, ca, cb](Tape& tape, const Tensor& g) {
        Tensor* ga = tape.accumulator(a);
        Tensor* gb = tape.accumulator(b);
        const std::size_t rows = g.rows();
        for (std::size_t r = 0; r < rows; ++r) {
            if (ga) for (std::size_t c = 0; c < ca; ++c) (*ga)[r * ca + c] += g[r * (ca + cb) + c];
            if (gb) for (std::size_t c = 0; c < cb; ++c) (*gb)[r * cb + c] += g[r * (ca + cb) + ca + c];
        }
    });
}

// Picks x[r, index[r]] from each row: [m x n] -> [m].
inline Var gather_cols(Var a, std::vector<std::size_t> index) {
    Tape& t = detail::tape_of(a);
    const Tensor& x = a.value();
    if (x.rank() != 2 || index.size() != x.rows()) {
        throw ShapeError("gather_cols: " + std::to_string(index.size()) + " indices for " + shape_string(x.shape()));
    }
    Tensor out(Shape{x.rows()});
    for (std::size_t r = 0; r < x.rows(); ++r) {
        if (index[r] >= x.cols()) throw ContractError("gather_cols index out of range");
        out[r] = x.at(r, index[r]);
    }
    return t.record(std::move(out), "gather_cols", {a},
                    [a, idx = std::move(index)](Tape& tape, const Tensor& g) {
                        Tensor* ga = tape.accumulator(a);
                        if (!ga) return;
                        for (std::size_t r = 0; r < idx.size(); ++r) ga->at(r, idx[r]) += g[r];
                    });
}

// Value copy without gradient connection.
inline Var detach(Var a) { return detail::tape_of(a).constant(a.value()); }

}  // namespace activegan
