#pragma once

#include <cmath>
#include <cstddef>

#include "nubd/image.hpp"

namespace nubd {

struct CgResult {
    int iterations = 0;
    double relative_residual = 0.0;
    bool converged = false;
};

/**
 * Preconditioned conjugate gradients for A x = b with A symmetric positive definite,
 * warm-started from x. Each iterate decreases the energy 0.5 x'Ax - b'x, so a truncated
 * run never ends above the starting point. On non-convergence the last iterate is kept.
 *
 * apply_a(v) -> A v; apply_m(v) -> M^{-1} v.
 */
template <class ApplyA, class ApplyM>
CgResult conjugate_gradient(ApplyA&& apply_a, ApplyM&& apply_m, const Plane& b, Plane& x, double tol, int max_iter) {
    require_same_shape(b, x, "conjugate_gradient");
    CgResult res;
    const double b_norm = std::sqrt(squared_norm(b));
    if (b_norm == 0.0) {
        // The minimizer is zero; leave a zero start untouched.
        Plane ax = apply_a(x);
        if (squared_norm(ax) == 0.0) {
            res.converged = true;
            return res;
        }
    }
    const double scale = b_norm > 0.0 ? b_norm : 1.0;

    Plane r = b - apply_a(x);
    double r_norm = std::sqrt(squared_norm(r));
    res.relative_residual = r_norm / scale;
    if (res.relative_residual <= tol) {
        res.converged = true;
        return res;
    }
    Plane z = apply_m(r);
    Plane p = z;
    double rz = dot(r, z);
    for (int it = 1; it <= max_iter; ++it) {
        const Plane ap = apply_a(p);
        const double pap = dot(p, ap);
        if (!(pap > 0.0)) break;
        const double alpha = rz / pap;
        axpy(alpha, p, x);
        axpy(-alpha, ap, r);
        res.iterations = it;
        r_norm = std::sqrt(squared_norm(r));
        res.relative_residual = r_norm / scale;
        if (res.relative_residual <= tol) {
            res.converged = true;
            break;
        }
        z = apply_m(r);
        const double rz_next = dot(r, z);
        const double beta = rz_next / rz;
        rz = rz_next;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = z[i] + beta * p[i];
    }
    return res;
}

}  // namespace nubd
