#pragma once

// Reverse-mode autodiff over scalar primitives with one fused affine-layer
// primitive. The tape is append-only and single-writer; one tape per worker.
// Leaves can be marked stop-gradient: their forward value is recorded as
// usual but the backward sweep does not propagate through them.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "lsvcal/common.hpp"

namespace lsvcal {

class Tape {
public:
    using Id = std::int32_t;

    Id leaf(double v) { return push(Op::Leaf, v); }
    Id constant(double v) { return push(Op::Leaf, v); }

    Id add(Id a, Id b) { return binary(Op::Bin, val(a) + val(b), a, b, 1.0, 1.0); }
    Id sub(Id a, Id b) { return binary(Op::Bin, val(a) - val(b), a, b, 1.0, -1.0); }
    Id mul(Id a, Id b) { return binary(Op::Bin, val(a) * val(b), a, b, val(b), val(a)); }
    Id div(Id a, Id b) {
        const double r = val(a) / val(b);
        return binary(Op::Bin, r, a, b, 1.0 / val(b), -r / val(b));
    }
    Id neg(Id a) { return unary(-val(a), a, -1.0); }
    Id scale(Id a, double c) { return unary(c * val(a), a, c); }
    Id add_const(Id a, double c) { return unary(val(a) + c, a, 1.0); }

    Id tanh_(Id a) {
        const double y = std::tanh(val(a));
        return unary(y, a, 1.0 - y * y);
    }
    Id exp_(Id a) {
        const double y = std::exp(val(a));
        return unary(y, a, y);
    }
    Id log_(Id a) { return unary(std::log(val(a)), a, 1.0 / val(a)); }
    Id square(Id a) { return unary(val(a) * val(a), a, 2.0 * val(a)); }

    /// Subgradient at the kink is the positive branch.
    Id leaky_relu(Id a, double slope) {
        const double x = val(a);
        return unary(x >= 0.0 ? x : slope * x, a, x >= 0.0 ? 1.0 : slope);
    }
    Id pos_part(Id a) {
        const double x = val(a);
        return unary(x >= 0.0 ? x : 0.0, a, x >= 0.0 ? 1.0 : 0.0);
    }

    /// Forward passthrough whose backward contribution is dropped.
    Id stop_gradient(Id a) { return push(Op::Stop, val(a), a); }

    /// Fused y = A x + b for one layer; A row-major (n_out x n_in).
    /// Produces exactly the gradients of the equivalent scalar-op graph.
    std::vector<Id> affine(std::span<const Id> a_ids, std::span<const Id> b_ids,
                           std::span<const Id> x_ids);

    double val(Id i) const { return vals_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return vals_.size(); }

    /// Adjoints of every node with respect to the scalar `out`.
    std::vector<double> backward(Id out) const;

    double grad(const std::vector<double>& adj, Id i) const {
        return adj[static_cast<std::size_t>(i)];
    }

private:
    enum class Op : std::uint8_t { Leaf, Un, Bin, Stop, Affine };

    Id push(Op op, double v, Id pa = -1, Id pb = -1, double w0 = 0.0, double w1 = 0.0) {
        vals_.push_back(v);
        ops_.push_back(op);
        pa_.push_back(pa);
        pb_.push_back(pb);
        w0_.push_back(w0);
        w1_.push_back(w1);
        return static_cast<Id>(vals_.size() - 1);
    }
    Id unary(double v, Id a, double w) { return push(Op::Un, v, a, -1, w); }
    Id binary(Op op, double v, Id a, Id b, double wa, double wb) {
        return push(op, v, a, b, wa, wb);
    }

    std::vector<double> vals_;
    std::vector<Op> ops_;
    std::vector<Id> pa_, pb_;  // parents; for Affine pa_ is an aux_ offset
    std::vector<double> w0_, w1_;
    std::vector<Id> aux_;  // Affine layout: n_in, b, x[n_in], a[n_in]
};

}  // namespace lsvcal
