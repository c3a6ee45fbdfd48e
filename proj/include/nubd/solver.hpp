#pragma once

// Majorization-minimization over the bound
//   L(x, w, gamma, lambda) = ||y - Hx||^2 / lambda + sum_i [x_i^2 / gamma_i + ln(lambda + gamma_i ||w_i||^2)] + d / lambda
// cycling image, latent, blur and noise updates, with a coarse-to-fine driver on top.
// The d / lambda term is the noise floor regularizer whose exact minimizer is the noise update.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nubd/cg.hpp"
#include "nubd/eff.hpp"
#include "nubd/image.hpp"
#include "nubd/nnqp.hpp"
#include "nubd/penalty.hpp"
#include "nubd/pipeline.hpp"
#include "nubd/pose.hpp"

namespace nubd {

struct SolverConfig {
    double cg_tol = 1e-5;
    int cg_max_iter = 50;
    int outer_iters_per_level = 30;
    double w_solver_tol = 1e-8;
    int w_solver_max_iter = 20000;
    /// d = n * d_coefficient; lambda never drops below d / n.
    double d_coefficient = 1e-4;
    double gamma_floor = 1e-10;
    double gamma_init_offset = 1e-2;
    double pyramid_scale = 0.70710678118654752;
    double min_kernel_px = 3.0;
    /// 0 picks the level count from the kernel extent.
    int levels = 0;
    /// Level stops once ||dw||_1 / ||w||_1 drops below this.
    double w_change_tol = 1e-3;
    /// Active-set pruning/resampling every this many iterations; 0 disables it.
    int active_set_interval = 0;
    double prune_fraction = 0.02;
    /// Resampling std in lattice steps.
    double resample_sigma = 1.0;
    std::uint64_t seed = 0;
    /// Record the bound after every block update, not only per outer iteration.
    bool trace_substeps = false;
    /// Progress lines `level iter bound lambda w_change` go here when set.
    std::ostream* log = nullptr;
};

struct SolverState {
    GradientImage x;
    std::array<Plane, 2> gamma;
    std::array<Plane, 2> z;
    std::vector<double> w;
    double lambda = 1.0;
    /// Cached ||w_i||^2 for the current w.
    Plane norms;
    /// Noise floor constant d = n * d_coefficient.
    double d = 0.0;

    std::size_t pixel_count() const noexcept { return x.size(); }
};

struct TraceEntry {
    int level = 0;
    int iter = 0;
    double bound = 0.0;
    double lambda = 0.0;
    double w_change = 0.0;
    /// Bound at the start of the iteration and after each block update (when trace_substeps is set).
    std::array<double, 5> substeps{};
    double min_gamma = 0.0;
};

/// z_i = 1 / (||w_i||^2 / lambda + 1 / gamma_i) at the current state.
inline std::array<Plane, 2> current_z(const SolverState& s) {
    std::array<Plane, 2> z{Plane(s.x.width(), s.x.height()), Plane(s.x.width(), s.x.height())};
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < z[c].size(); ++i) z[c][i] = 1.0 / (s.norms[i] / s.lambda + 1.0 / s.gamma[c][i]);
    return z;
}

/// ||y - Hx||^2 summed over channels.
inline double data_fit(const SolverState& s, const GradientImage& y, const EffDecomposition& eff) {
    const GradientImage hx = apply_blur(s.x, s.w, eff);
    return squared_norm(y[0] - hx[0]) + squared_norm(y[1] - hx[1]);
}

/// The MM bound, including the d / lambda noise-floor term.
inline double eval_bound(const SolverState& s, const GradientImage& y, const EffDecomposition& eff) {
    long double acc = (data_fit(s, y, eff) + s.d) / s.lambda;
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t i = 0; i < s.x[c].size(); ++i) {
            const double xi = s.x[c][i];
            const double g = s.gamma[c][i];
            if (xi != 0.0) acc += xi * xi / g;
            acc += std::log(s.lambda + g * s.norms[i]);
        }
    }
    return static_cast<double>(acc);
}

/**
 * Solves (H^T H / lambda + Gamma^{-1}) x = H^T y / lambda per channel by Jacobi-preconditioned
 * CG warm-started at the current x. Pixels whose gamma sits at the floor are held at zero.
 */
inline std::array<CgResult, 2> update_image(SolverState& s, const GradientImage& y, const EffDecomposition& eff,
                                            const SolverConfig& cfg) {
    std::array<CgResult, 2> out;
    parallel_for(2, [&](std::size_t c) {
        const Plane& gam = s.gamma[c];
        std::vector<char> free(gam.size());
        for (std::size_t i = 0; i < gam.size(); ++i) free[i] = gam[i] > cfg.gamma_floor;
        auto mask = [&](Plane& v) {
            for (std::size_t i = 0; i < v.size(); ++i)
                if (!free[i]) v[i] = 0.0;
        };
        auto apply_a = [&](const Plane& v) {
            Plane out_v = apply_blur_adjoint(apply_blur(v, s.w, eff), s.w, eff);
            for (std::size_t i = 0; i < v.size(); ++i) out_v[i] = free[i] ? out_v[i] + s.lambda * v[i] / gam[i] : 0.0;
            return out_v;
        };
        auto apply_m = [&](const Plane& r) {
            Plane m(r.width(), r.height());
            for (std::size_t i = 0; i < r.size(); ++i) {
                const double d = s.norms[i] + s.lambda / gam[i];
                m[i] = free[i] && d > 0.0 ? r[i] / d : 0.0;
            }
            return m;
        };
        Plane rhs = apply_blur_adjoint(y[c], s.w, eff);
        mask(rhs);
        Plane xc = s.x[c];
        mask(xc);
        out[c] = conjugate_gradient(apply_a, apply_m, rhs, xc, cfg.cg_tol, cfg.cg_max_iter);
        s.x[c] = std::move(xc);
    });
    return out;
}

/// z from the pre-update gamma, then gamma <- max(floor, x^2 + z).
inline void update_latent(SolverState& s, const SolverConfig& cfg) {
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t i = 0; i < s.x[c].size(); ++i) {
            const double zi = 1.0 / (s.norms[i] / s.lambda + 1.0 / s.gamma[c][i]);
            s.z[c][i] = zi;
            const double xi = s.x[c][i];
            s.gamma[c][i] = std::max(cfg.gamma_floor, xi * xi + zi);
        }
    }
}

struct BlurUpdateResult {
    std::vector<double> w;
    double w_change = 0.0;
    NnqpResult qp;
};

/// sum_r c_r A_r^T A_r with c_r = sum over the patch support of window_r(i) * z_i (both channels).
inline Eigen::MatrixXd blur_regularizer(const std::array<Plane, 2>& z, const EffDecomposition& eff) {
    const auto nj = static_cast<Eigen::Index>(eff.num_poses);
    Eigen::MatrixXd reg = Eigen::MatrixXd::Zero(nj, nj);
    for (std::size_t r = 0; r < eff.patches.size(); ++r) {
        const auto& p = eff.patches[r];
        double cr = 0.0;
        for (int yy = p.y0; yy < p.y1; ++yy)
            for (int xx = p.x0; xx < p.x1; ++xx) cr += p.window_at(xx, yy) * (z[0](xx, yy) + z[1](xx, yy));
        const Eigen::MatrixXd a = basis_matrix(eff, r);
        reg.noalias() += cr * (a.transpose() * a);
    }
    return reg;
}

/**
 * w <- argmin_{w >= 0} ||y - Dw||^2 + w^T (sum_i z_i B_i^T B_i) w, with z evaluated at the
 * current gamma, w and lambda so the quadratic majorizes the bound at the current point.
 * Refreshes the norm cache.
 */
inline BlurUpdateResult update_blur(SolverState& s, const GradientImage& y, const EffDecomposition& eff,
                                    const SolverConfig& cfg) {
    const auto z = current_z(s);
    const auto ne = pose_normal_equations(s.x, y, eff);
    const Eigen::MatrixXd q = ne.gram + blur_regularizer(z, eff);
    Eigen::VectorXd w0 = Eigen::Map<const Eigen::VectorXd>(s.w.data(), static_cast<Eigen::Index>(s.w.size()));
    BlurUpdateResult res;
    res.qp = solve_nnqp(q, ne.rhs, w0, cfg.w_solver_tol, cfg.w_solver_max_iter);
    res.w.assign(res.qp.w.data(), res.qp.w.data() + res.qp.w.size());
    double diff = 0.0, base = 0.0;
    for (std::size_t j = 0; j < res.w.size(); ++j) {
        diff += std::abs(res.w[j] - s.w[j]);
        base += std::abs(s.w[j]);
    }
    res.w_change = base > 0.0 ? diff / base : (diff > 0.0 ? INFINITY : 0.0);
    s.w = res.w;
    s.norms = local_kernel_norms(s.w, eff);
    return res;
}

/// lambda <- (||y - Hx||^2 + beta + d) / n with beta = sum_i z_i ||w_i||^2 at the current state.
inline double update_noise(SolverState& s, const GradientImage& y, const EffDecomposition& eff) {
    const auto z = current_z(s);
    long double beta = 0.0L;
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < z[c].size(); ++i) beta += static_cast<long double>(z[c][i]) * s.norms[i];
    const double n = static_cast<double>(y.size());
    s.lambda = (data_fit(s, y, eff) + static_cast<double>(beta) + s.d) / n;
    return s.lambda;
}

/// Initial weights: half on the identity pose, half spread over the 3x3 nearest translations.
inline std::vector<double> initial_weights(const PoseGrid& grid) {
    std::vector<double> w(grid.size(), 0.0);
    if (grid.size() == 0) return w;
    const auto [id, id_dist] = grid.nearest(Pose{});
    (void)id_dist;
    w[id] += 0.5;
    std::vector<std::size_t> ring;
    const double step = grid.shift_step;
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
            const auto [j, dist] = grid.nearest(Pose{0.0, dx * step, dy * step});
            if (dist < 0.5 && std::find(ring.begin(), ring.end(), j) == ring.end()) ring.push_back(j);
        }
    if (ring.empty()) ring.push_back(id);
    for (auto j : ring) w[j] += 0.5 / static_cast<double>(ring.size());
    return w;
}

/// x = y, gamma = y^2 + offset, norms from w; d = n * d_coefficient and lambda floored at d / n.
inline SolverState init_state(const GradientImage& y, std::vector<double> w, double lambda, const EffDecomposition& eff,
                              const SolverConfig& cfg) {
    SolverState s;
    s.x = y;
    for (std::size_t c = 0; c < 2; ++c) {
        s.gamma[c] = Plane(y.width(), y.height());
        for (std::size_t i = 0; i < y[c].size(); ++i)
            s.gamma[c][i] = std::max(cfg.gamma_floor, y[c][i] * y[c][i] + cfg.gamma_init_offset);
        s.z[c] = Plane(y.width(), y.height());
    }
    s.w = std::move(w);
    s.d = static_cast<double>(y.size()) * cfg.d_coefficient;
    s.lambda = std::max(lambda, s.d / static_cast<double>(y.size()));
    s.norms = local_kernel_norms(s.w, eff);
    return s;
}

inline double mean_square(const GradientImage& y) { return squared_norm(y) / static_cast<double>(y.size()); }

/// One pyramid level: observations plus the level-scaled pose grid and its decomposition.
struct LevelProblem {
    GradientImage y;
    PoseGrid canonical;  ///< poses at full resolution; indices match the weight vector
    double scale_x = 1.0;
    double scale_y = 1.0;
    EffSpec spec;
    EffDecomposition eff;

    PoseGrid level_grid() const {
        PoseGrid g = canonical;
        for (auto& p : g.poses) p = scale_pose(p, scale_x, scale_y);
        g.shift_step *= std::min(scale_x, scale_y);
        g.max_shift *= std::max(scale_x, scale_y);
        return g;
    }

    void rebuild() { eff = build_eff(level_grid(), y.width(), y.height(), spec); }
};

struct LevelResult {
    std::vector<TraceEntry> trace;
    std::vector<std::string> warnings;
    int iterations = 0;
};

/**
 * Cycles image, latent, blur and noise updates until the relative weight change drops below
 * w_change_tol or the iteration budget is spent. Optional active-set steps rebuild the problem's
 * canonical grid and decomposition.
 */
inline LevelResult run_level(LevelProblem& prob, SolverState& s, const SolverConfig& cfg, int level = 0) {
    LevelResult out;
    const auto& y = prob.y;
    for (int it = 1; it <= cfg.outer_iters_per_level; ++it) {
        TraceEntry e;
        e.level = level;
        e.iter = it;
        if (cfg.trace_substeps) e.substeps[0] = eval_bound(s, y, prob.eff);
        const auto cg = update_image(s, y, prob.eff, cfg);
        for (const auto& r : cg)
            if (!r.converged)
                out.warnings.push_back("level " + std::to_string(level) + " iter " + std::to_string(it) +
                                       ": image update CG stopped at relative residual " +
                                       std::to_string(r.relative_residual));
        if (cfg.trace_substeps) e.substeps[1] = eval_bound(s, y, prob.eff);
        update_latent(s, cfg);
        if (cfg.trace_substeps) e.substeps[2] = eval_bound(s, y, prob.eff);
        const auto blur = update_blur(s, y, prob.eff, cfg);
        if (!blur.qp.converged)
            out.warnings.push_back("level " + std::to_string(level) + " iter " + std::to_string(it) +
                                   ": blur update reached its iteration limit");
        if (cfg.trace_substeps) e.substeps[3] = eval_bound(s, y, prob.eff);
        update_noise(s, y, prob.eff);
        e.bound = eval_bound(s, y, prob.eff);
        if (cfg.trace_substeps) e.substeps[4] = e.bound;
        e.lambda = s.lambda;
        e.w_change = blur.w_change;
        e.min_gamma = std::min(*std::min_element(s.gamma[0].values().begin(), s.gamma[0].values().end()),
                               *std::min_element(s.gamma[1].values().begin(), s.gamma[1].values().end()));
        out.trace.push_back(e);
        out.iterations = it;
        if (cfg.log) {
            char line[128];
            std::snprintf(line, sizeof line, "%5d %5d %+.10e %.6e %.6e\n", level, it, e.bound, e.lambda, e.w_change);
            *cfg.log << line;
        }
        if (cfg.active_set_interval > 0 && it % cfg.active_set_interval == 0 && it < cfg.outer_iters_per_level) {
            const auto as = active_set_update(s.w, prob.canonical, cfg.prune_fraction, cfg.resample_sigma,
                                              cfg.seed ^ (static_cast<std::uint64_t>(level) << 32 | static_cast<std::uint64_t>(it)));
            if (as.removed > 0) {
                prob.canonical = as.grid;
                s.w = as.weights;
                prob.rebuild();
                s.norms = local_kernel_norms(s.w, prob.eff);
            }
        }
        if (blur.w_change < cfg.w_change_tol) break;
    }
    return out;
}

/// Rescales w to unit mass; x and gamma are rescaled so Hx and the bound are unchanged.
inline void normalize_weights(SolverState& s, const EffDecomposition& eff) {
    const double mass = std::accumulate(s.w.begin(), s.w.end(), 0.0);
    if (!(mass > 0.0)) return;
    for (auto& v : s.w) v /= mass;
    for (std::size_t c = 0; c < 2; ++c) {
        for (auto& v : s.x[c].values()) v *= mass;
        for (auto& v : s.gamma[c].values()) v *= mass * mass;
        for (auto& v : s.z[c].values()) v *= mass * mass;
    }
    s.norms = local_kernel_norms(s.w, eff);
}

struct MultiscaleResult {
    std::vector<double> w;
    PoseGrid grid;
    double lambda = 0.0;
    Plane rho;
    GradientImage x;
    EffDecomposition eff;
    std::vector<TraceEntry> trace;
    std::vector<double> level_lambdas;
    std::vector<std::string> warnings;
    int levels = 0;
};

/// Level count so the blur extent at the coarsest level is about min_kernel_px.
inline int auto_level_count(const PoseGrid& grid, int width, int height, const SolverConfig& cfg) {
    const double extent = 2.0 * max_displacement(grid, width, height) + 1.0;
    if (extent <= cfg.min_kernel_px) return 1;
    return 1 + static_cast<int>(std::lround(std::log(extent / cfg.min_kernel_px) / std::log(1.0 / cfg.pyramid_scale)));
}

/**
 * Coarse-to-fine estimation on a grayscale image. Weights keep their canonical pose indices
 * across levels (rotations unchanged, translations scaled with the level), lambda is carried
 * forward, and w is renormalized to unit mass at the end of every level.
 */
inline MultiscaleResult run_multiscale(const Plane& blurry, const PoseGrid& grid, const EffSpec& eff_spec,
                                       const SolverConfig& cfg) {
    if (blurry.empty()) throw domain_error("run_multiscale: empty image");
    const int full_k = eff_spec.kernel_size > 0 ? eff_spec.kernel_size : kernel_size_for(grid, blurry.width(), blurry.height());
    if (blurry.width() < full_k || blurry.height() < full_k)
        throw domain_error("run_multiscale: image smaller than the blur kernel (" + std::to_string(full_k) + " px)");
    if (!(cfg.pyramid_scale > 0.0 && cfg.pyramid_scale < 1.0))
        throw domain_error("run_multiscale: pyramid_scale must lie in (0, 1)");

    MultiscaleResult res;
    const int requested = cfg.levels > 0 ? cfg.levels : auto_level_count(grid, blurry.width(), blurry.height(), cfg);
    auto pyr = build_pyramid(blurry, cfg.pyramid_scale, requested);
    res.warnings = pyr.warnings;
    const int nlev = static_cast<int>(pyr.levels.size());
    res.levels = nlev;

    PoseGrid canonical = grid;
    std::vector<double> w = initial_weights(canonical);
    double lambda = -1.0;
    SolverState state;
    for (int l = nlev - 1; l >= 0; --l) {
        LevelProblem prob;
        const Plane& img = pyr.levels[static_cast<std::size_t>(l)];
        prob.y = to_gradient_domain(img);
        prob.canonical = canonical;
        prob.scale_x = static_cast<double>(img.width()) / blurry.width();
        prob.scale_y = static_cast<double>(img.height()) / blurry.height();
        prob.spec = eff_spec;
        if (l > 0) {
            const double f = std::min(prob.scale_x, prob.scale_y);
            prob.spec.patch_size = std::max(8, static_cast<int>(std::lround(eff_spec.patch_size * f)));
            prob.spec.overlap = std::min(prob.spec.patch_size - 1, static_cast<int>(std::lround(eff_spec.overlap * f)));
            prob.spec.kernel_size = 0;
        }
        prob.rebuild();
        if (lambda < 0.0) lambda = mean_square(prob.y);
        state = init_state(prob.y, w, lambda, prob.eff, cfg);
        auto lr = run_level(prob, state, cfg, l);
        normalize_weights(state, prob.eff);
        res.trace.insert(res.trace.end(), lr.trace.begin(), lr.trace.end());
        res.warnings.insert(res.warnings.end(), lr.warnings.begin(), lr.warnings.end());
        res.level_lambdas.push_back(state.lambda);
        canonical = prob.canonical;
        w = state.w;
        lambda = state.lambda;
        if (l == 0) {
            res.eff = prob.eff;
            res.rho = rho_map(state.norms, state.lambda);
            res.x = state.x;
        }
    }
    res.w = w;
    res.grid = canonical;
    res.lambda = lambda;
    return res;
}

// ---------------------------------------------------------------------------------------------
// Blur-side objective with x fixed: ||y - Dw||^2 + sum_i nu(w; mu_i, B_i), mu_i = |x_i| / sqrt(lambda).

struct PenalizedBlurProblem {
    PoseNormalEquations ne;
    std::vector<Eigen::MatrixXd> patch_gram;  ///< A_r^T A_r
};

inline PenalizedBlurProblem make_penalized_blur_problem(const GradientImage& x, const GradientImage& y,
                                                        const EffDecomposition& eff) {
    PenalizedBlurProblem p;
    p.ne = pose_normal_equations(x, y, eff);
    for (std::size_t r = 0; r < eff.patches.size(); ++r) {
        const Eigen::MatrixXd a = basis_matrix(eff, r);
        p.patch_gram.push_back(a.transpose() * a);
    }
    return p;
}

namespace detail {

// Per-pixel s_i(w) = sum_r window_r(i) w'G_r w for every pixel, then the nu sum and its gradient.
struct NuEvaluation {
    double value = 0.0;
    Eigen::VectorXd grad;
};

inline NuEvaluation evaluate_nu_sum(const GradientImage& x, double lambda, const EffDecomposition& eff,
                                    const std::vector<Eigen::MatrixXd>& patch_gram, const Eigen::VectorXd& w,
                                    bool with_gradient) {
    std::vector<double> pn(eff.patches.size());
    std::vector<Eigen::VectorXd> gw(eff.patches.size());
    for (std::size_t r = 0; r < eff.patches.size(); ++r) {
        gw[r] = patch_gram[r] * w;
        pn[r] = w.dot(gw[r]);
    }
    Plane s(eff.width, eff.height);
    for (std::size_t r = 0; r < eff.patches.size(); ++r) {
        const auto& p = eff.patches[r];
        for (int yy = p.y0; yy < p.y1; ++yy)
            for (int xx = p.x0; xx < p.x1; ++xx) s(xx, yy) += p.window_at(xx, yy) * pn[r];
    }
    NuEvaluation ev;
    // dnu/ds_i = h'(mu sqrt(s)) * mu / (2 sqrt(s)), accumulated per pixel then pushed to patches.
    Plane coeff(eff.width, eff.height);
    const double inv_sqrt_lambda = 1.0 / std::sqrt(lambda);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < s.size(); ++i) {
            const double mu = std::abs(x[c][i]) * inv_sqrt_lambda;
            const double root = std::sqrt(std::max(s[i], 0.0));
            ev.value += penalty::eval_nu(mu, root);
            if (with_gradient && root > 0.0) coeff[i] += penalty::h_gradient(mu * root, 1.0) * mu / (2.0 * root);
        }
    if (with_gradient) {
        ev.grad = Eigen::VectorXd::Zero(w.size());
        for (std::size_t r = 0; r < eff.patches.size(); ++r) {
            const auto& p = eff.patches[r];
            double cr = 0.0;
            for (int yy = p.y0; yy < p.y1; ++yy)
                for (int xx = p.x0; xx < p.x1; ++xx) cr += p.window_at(xx, yy) * coeff(xx, yy);
            ev.grad += 2.0 * cr * gw[r];
        }
    }
    return ev;
}

}  // namespace detail

struct PenalizedBlurResult {
    std::vector<double> w;
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Value of ||y - Dw||^2 + sum_i nu(w; |x_i| / sqrt(lambda), B_i) over both channels.
inline double penalized_blur_objective(const GradientImage& x, const GradientImage& y, double lambda,
                                       const EffDecomposition& eff, const std::vector<double>& w) {
    const auto prob = make_penalized_blur_problem(x, y, eff);
    const Eigen::Map<const Eigen::VectorXd> wv(w.data(), static_cast<Eigen::Index>(w.size()));
    const double fit = wv.dot(prob.ne.gram * wv) - 2.0 * prob.ne.rhs.dot(wv) + prob.ne.y_sq;
    return fit + detail::evaluate_nu_sum(x, lambda, eff, prob.patch_gram, wv, false).value;
}

/**
 * Minimizes the blur-side objective over w >= 0 by projected gradient with Barzilai-Borwein
 * steps and backtracking. Local minimizer from the given start; intended for small pose sets.
 */
inline PenalizedBlurResult minimize_penalized_blur(const GradientImage& x, const GradientImage& y, double lambda,
                                                   const EffDecomposition& eff, const std::vector<double>& w0,
                                                   double tol = 1e-10, int max_iter = 20000) {
    const auto prob = make_penalized_blur_problem(x, y, eff);
    auto eval = [&](const Eigen::VectorXd& w, bool grad) {
        auto ev = detail::evaluate_nu_sum(x, lambda, eff, prob.patch_gram, w, grad);
        ev.value += w.dot(prob.ne.gram * w) - 2.0 * prob.ne.rhs.dot(w) + prob.ne.y_sq;
        if (grad) ev.grad += 2.0 * (prob.ne.gram * w - prob.ne.rhs);
        return ev;
    };
    Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(w0.data(), static_cast<Eigen::Index>(w0.size())).cwiseMax(0.0);
    auto cur = eval(w, true);
    double step = 1.0 / std::max(1e-300, 2.0 * prob.ne.gram.diagonal().maxCoeff());
    PenalizedBlurResult res;
    for (int it = 1; it <= max_iter; ++it) {
        res.iterations = it;
        Eigen::VectorXd trial;
        detail::NuEvaluation next;
        bool accepted = false;
        for (int h = 0; h < 60; ++h) {
            trial = (w - step * cur.grad).cwiseMax(0.0);
            next = eval(trial, true);
            if (next.value <= cur.value) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            res.converged = true;
            break;
        }
        const Eigen::VectorXd sv = trial - w;
        const Eigen::VectorXd yv = next.grad - cur.grad;
        const double change = sv.cwiseAbs().maxCoeff();
        w = trial;
        cur = std::move(next);
        if (change <= tol * std::max(1e-300, w.cwiseAbs().maxCoeff())) {
            res.converged = true;
            break;
        }
        const double sy = sv.dot(yv);
        step = sy > 0.0 ? sv.squaredNorm() / sy : 2.0 * step;
    }
    res.w.assign(w.data(), w.data() + w.size());
    res.objective = cur.value;
    return res;
}

}  // namespace nubd
