#ifndef D2G_TESTS_TEST_UTIL_HPP
#define D2G_TESTS_TEST_UTIL_HPP

#include <functional>

#include "d2g/core/graph.hpp"
#include "d2g/core/rng.hpp"

namespace d2g::test {

// central-difference gradient of a scalar-valued graph builder w.r.t. x,
// compared against the tape gradient; returns norm-relative error
inline double grad_rel_error(const std::function<Var(const Var&)>& f, const Tensor& x,
                             double eps = 1e-5) {
    Var xv = leaf(x);
    Var y = f(xv);
    if (y->val.size() != 1) throw std::invalid_argument("grad_rel_error: f must be scalar");
    backward(y);
    Tensor analytic = xv->grad;

    Tensor numeric(x.n(), x.c(), x.h(), x.w());
    Tensor probe = x;
    for (size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        double up = f(constant(probe))->val[0];
        probe[i] = orig - eps;
        double dn = f(constant(probe))->val[0];
        probe[i] = orig;
        numeric[i] = (up - dn) / (2 * eps);
    }
    double diff = 0, ref = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        double d = numeric[i] - analytic[i];
        diff += d * d;
        ref += analytic[i] * analytic[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
}

// random projection making any tensor-valued op scalar while exercising every
// output element
inline std::function<Var(const Var&)> scalarized(
    const std::function<Var(const Var&)>& op, const Tensor& probe_shape, uint64_t seed = 99) {
    auto out_shape = op(constant(probe_shape))->val;
    Rng rng(seed);
    Tensor proj(out_shape.n(), out_shape.c(), out_shape.h(), out_shape.w());
    rng.fill_gaussian(proj);
    return [op, proj](const Var& x) { return sum_all(mul(op(x), constant(proj))); };
}

}  // namespace d2g::test

#endif
