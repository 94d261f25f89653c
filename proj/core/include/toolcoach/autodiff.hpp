#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "toolcoach/errors.hpp"

namespace toolcoach::diff {

class Tape;

/// Handle to one node of a tape. Cheap to copy; valid only while the tape
/// that created it is alive.
struct Var {
    Tape* tape = nullptr;
    int32_t idx = -1;
};

/// Arena-based reverse-mode autodiff over scalars.
///
/// Nodes are appended in evaluation order, so inputs always precede their
/// consumers and backward() is a single reverse sweep. Supports the handful
/// of primitives the training objectives need: arithmetic, log, exp,
/// min, clamp and softplus.
class Tape {
public:
    /// A differentiable input (gradient is tracked).
    Var leaf(double value) { return push(Op::leaf, value, -1, -1); }

    /// A constant (participates in values, receives no meaningful gradient).
    Var constant(double value) { return push(Op::leaf, value, -1, -1); }

    double value(Var v) const { return nodes_[static_cast<size_t>(v.idx)].value; }
    double grad(Var v) const { return nodes_[static_cast<size_t>(v.idx)].grad; }
    size_t size() const { return nodes_.size(); }

    /// Accumulate d(root)/d(node) into every node's grad slot.
    void backward(Var root) {
        for (Node& n : nodes_) n.grad = 0.0;
        nodes_[static_cast<size_t>(root.idx)].grad = 1.0;
        for (int32_t i = root.idx; i >= 0; --i) {
            const Node& n = nodes_[static_cast<size_t>(i)];
            if (n.grad == 0.0) continue;
            propagate(n);
        }
    }

    enum class Op : uint8_t { leaf, add, sub, mul, div, neg, log, exp, min2, clamp, softplus };

    Var push(Op op, double value, int32_t a, int32_t b, double aux0 = 0.0, double aux1 = 0.0) {
        nodes_.push_back(Node{op, a, b, aux0, aux1, value, 0.0});
        return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
    }

private:
    struct Node {
        Op op;
        int32_t a;
        int32_t b;
        double aux0;
        double aux1;
        double value;
        double grad;
    };

    void propagate(const Node& n) {
        const double g = n.grad;
        auto& N = nodes_;
        auto A = [&]() -> Node& { return N[static_cast<size_t>(n.a)]; };
        auto B = [&]() -> Node& { return N[static_cast<size_t>(n.b)]; };
        switch (n.op) {
            case Op::leaf:
                break;
            case Op::add:
                A().grad += g;
                B().grad += g;
                break;
            case Op::sub:
                A().grad += g;
                B().grad -= g;
                break;
            case Op::mul:
                A().grad += g * B().value;
                B().grad += g * A().value;
                break;
            case Op::div:
                A().grad += g / B().value;
                B().grad -= g * A().value / (B().value * B().value);
                break;
            case Op::neg:
                A().grad -= g;
                break;
            case Op::log:
                A().grad += g / A().value;
                break;
            case Op::exp:
                A().grad += g * n.value;
                break;
            case Op::min2:
                // Gradient follows the selected branch; ties go to the first.
                if (A().value <= B().value) {
                    A().grad += g;
                } else {
                    B().grad += g;
                }
                break;
            case Op::clamp:
                if (A().value > n.aux0 && A().value < n.aux1) A().grad += g;
                break;
            case Op::softplus: {
                const double x = A().value;
                const double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                            : std::exp(x) / (1.0 + std::exp(x));
                A().grad += g * sig;
                break;
            }
        }
    }

    std::vector<Node> nodes_;
};

inline Var operator+(Var a, Var b) {
    return a.tape->push(Tape::Op::add, a.tape->value(a) + b.tape->value(b), a.idx, b.idx);
}
inline Var operator-(Var a, Var b) {
    return a.tape->push(Tape::Op::sub, a.tape->value(a) - b.tape->value(b), a.idx, b.idx);
}
inline Var operator*(Var a, Var b) {
    return a.tape->push(Tape::Op::mul, a.tape->value(a) * b.tape->value(b), a.idx, b.idx);
}
inline Var operator/(Var a, Var b) {
    return a.tape->push(Tape::Op::div, a.tape->value(a) / b.tape->value(b), a.idx, b.idx);
}
inline Var operator-(Var a) {
    return a.tape->push(Tape::Op::neg, -a.tape->value(a), a.idx, -1);
}
inline Var operator+(Var a, double c) { return a + a.tape->constant(c); }
inline Var operator+(double c, Var a) { return a.tape->constant(c) + a; }
inline Var operator-(Var a, double c) { return a - a.tape->constant(c); }
inline Var operator-(double c, Var a) { return a.tape->constant(c) - a; }
inline Var operator*(Var a, double c) { return a * a.tape->constant(c); }
inline Var operator*(double c, Var a) { return a.tape->constant(c) * a; }
inline Var operator/(Var a, double c) { return a / a.tape->constant(c); }

inline Var log(Var a) {
    return a.tape->push(Tape::Op::log, std::log(a.tape->value(a)), a.idx, -1);
}
inline Var exp(Var a) {
    return a.tape->push(Tape::Op::exp, std::exp(a.tape->value(a)), a.idx, -1);
}
inline Var min(Var a, Var b) {
    return a.tape->push(Tape::Op::min2, std::min(a.tape->value(a), b.tape->value(b)), a.idx, b.idx);
}
inline Var clamp(Var a, double lo, double hi) {
    const double v = std::clamp(a.tape->value(a), lo, hi);
    return a.tape->push(Tape::Op::clamp, v, a.idx, -1, lo, hi);
}

/// log(1 + e^x), evaluated without overflow.
inline Var softplus(Var a) {
    const double x = a.tape->value(a);
    const double v = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    return a.tape->push(Tape::Op::softplus, v, a.idx, -1);
}

/// Numerically stable log(sum_i exp(x_i)). The max is peeled off as a
/// constant, which leaves the gradient exact (softmax of the inputs).
inline Var logsumexp(std::span<const Var> xs) {
    if (xs.empty()) throw InvalidArgument("logsumexp over empty span");
    Tape& tape = *xs.front().tape;
    double m = tape.value(xs.front());
    for (Var x : xs) m = std::max(m, tape.value(x));
    Var sum = tape.constant(0.0);
    for (Var x : xs) sum = sum + exp(x - m);
    return log(sum) + m;
}

}  // namespace toolcoach::diff
