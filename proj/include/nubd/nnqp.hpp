#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace nubd {

struct NnqpResult {
    Eigen::VectorXd w;
    double objective = 0.0;
    int iterations = 0;
    int rejected_steps = 0;
    int newton_steps = 0;
    bool converged = false;
};

/**
 * min_{w >= 0} w'Qw - 2 b'w for symmetric positive semidefinite Q.
 *
 * Each iteration takes a projected-gradient step (Barzilai-Borwein length, halved until the
 * objective does not increase), then tries a projected Newton step on the free set
 * {i : w_i > 0 or gradient_i < 0}, kept only if it lowers the objective. The returned objective
 * therefore never exceeds the one at the projected start. Stops when the projected gradient
 * falls below tol * ||2b||_inf.
 */
inline NnqpResult solve_nnqp(const Eigen::MatrixXd& q, const Eigen::VectorXd& b, Eigen::VectorXd w0, double tol,
                             int max_iter = 20000) {
    auto objective = [&](const Eigen::VectorXd& w) { return w.dot(q * w) - 2.0 * b.dot(w); };
    NnqpResult res;
    res.w = w0.cwiseMax(0.0);
    res.objective = objective(res.w);
    const Eigen::Index n = res.w.size();
    if (n == 0) {
        res.converged = true;
        return res;
    }

    Eigen::VectorXd grad = 2.0 * (q * res.w - b);
    const double pg_scale = std::max(2.0 * b.cwiseAbs().maxCoeff(), 1e-300);
    auto projected_gradient_norm = [&](const Eigen::VectorXd& w, const Eigen::VectorXd& g) {
        double m = 0.0;
        for (Eigen::Index i = 0; i < w.size(); ++i) m = std::max(m, std::abs(w[i] > 0.0 ? g[i] : std::min(g[i], 0.0)));
        return m;
    };
    if (projected_gradient_norm(res.w, grad) <= tol * pg_scale) {
        res.converged = true;
        return res;
    }
    const double diag_max = q.diagonal().maxCoeff();
    double step = diag_max > 0.0 ? 0.5 / diag_max : 1.0;
    // Newton attempts stop once one fails to help; a free-set change re-enables them.
    bool newton_enabled = true;
    std::vector<Eigen::Index> last_free;

    for (int it = 1; it <= max_iter; ++it) {
        res.iterations = it;
        Eigen::VectorXd trial;
        double trial_obj = 0.0;
        bool accepted = false;
        for (int halving = 0; halving < 60; ++halving) {
            trial = (res.w - step * grad).cwiseMax(0.0);
            trial_obj = objective(trial);
            if (trial_obj <= res.objective) {
                accepted = true;
                break;
            }
            ++res.rejected_steps;
            step *= 0.5;
        }
        if (!accepted) {
            res.converged = true;  // no descent direction is resolvable at working precision
            break;
        }
        const Eigen::VectorXd s = trial - res.w;
        Eigen::VectorXd grad_next = 2.0 * (q * trial - b);
        const Eigen::VectorXd yv = grad_next - grad;
        res.w = std::move(trial);
        res.objective = trial_obj;
        grad = std::move(grad_next);
        const double sy = s.dot(yv);
        step = sy > 0.0 ? s.squaredNorm() / sy : 2.0 * step;

        std::vector<Eigen::Index> free;
        for (Eigen::Index i = 0; i < n; ++i)
            if (res.w[i] > 0.0 || grad[i] < 0.0) free.push_back(i);
        if (free != last_free) newton_enabled = true;
        if (newton_enabled && !free.empty()) {
            const auto m = static_cast<Eigen::Index>(free.size());
            Eigen::MatrixXd qf(m, m);
            Eigen::VectorXd gf(m);
            for (Eigen::Index a = 0; a < m; ++a) {
                gf[a] = 0.5 * grad[free[static_cast<std::size_t>(a)]];
                for (Eigen::Index c = 0; c < m; ++c) qf(a, c) = q(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(c)]);
            }
            // Minimum-norm solve: Q is singular when several poses land on the same displacement.
            Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(qf.rows(), qf.cols());
            cod.setThreshold(1e-12);
            cod.compute(qf);
            bool improved = false;
            if (cod.info() == Eigen::Success) {
                const Eigen::VectorXd d = cod.solve(-gf);
                if (d.allFinite()) {
                    for (double alpha = 1.0; alpha > 1e-3; alpha *= 0.25) {
                        Eigen::VectorXd cand = res.w;
                        for (Eigen::Index a = 0; a < m; ++a) {
                            const auto i = free[static_cast<std::size_t>(a)];
                            cand[i] = std::max(0.0, res.w[i] + alpha * d[a]);
                        }
                        const double cand_obj = objective(cand);
                        if (cand_obj < res.objective) {
                            res.w = std::move(cand);
                            res.objective = cand_obj;
                            grad = 2.0 * (q * res.w - b);
                            ++res.newton_steps;
                            improved = true;
                            break;
                        }
                    }
                }
            }
            newton_enabled = improved;
        }
        last_free = std::move(free);

        if (projected_gradient_norm(res.w, grad) <= tol * pg_scale) {
            res.converged = true;
            break;
        }
    }
    return res;
}

}  // namespace nubd
