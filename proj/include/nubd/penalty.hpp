#pragma once

// Scalar forms of the coupled image/blur/noise penalty and its variational
// representation. Every function here is pure and thread-safe.

#include <cmath>
#include <string>

#include "nubd/image.hpp"

namespace nubd::penalty {

/**
 * One pixel's arguments to the coupled penalty.
 *
 * x_abs          gradient magnitude |x_i|
 * kernel_norm_sq squared norm of the local blur kernel at pixel i, in (0, 1] for simplex weights
 * noise_level    lambda
 */
struct PenaltyPoint {
    double x_abs = 0.0;
    double kernel_norm_sq = 1.0;
    double noise_level = 1.0;

    void validate() const {
        if (!(noise_level > 0.0)) throw domain_error("penalty: noise_level must be > 0");
        if (!(kernel_norm_sq > 0.0)) throw domain_error("penalty: kernel_norm_sq must be > 0");
        if (!(x_abs >= 0.0)) throw domain_error("penalty: x_abs must be >= 0");
    }
};

/// rho = lambda / ||w_i||^2 controls the image-side shape; mu = |x_i| / sqrt(lambda) the blur-side shape.
struct ShapeParams {
    double rho = 1.0;
    double mu = 0.0;
};

inline ShapeParams shape_params(const PenaltyPoint& p) {
    p.validate();
    return {p.noise_level / p.kernel_norm_sq, p.x_abs / std::sqrt(p.noise_level)};
}

namespace detail {

// 2u / (u + sqrt(4c + u^2)) + ln(2c + u^2 + u sqrt(4c + u^2)), shared by g, h and nu.
inline double coupled_form(double u, double c) {
    const double root = std::hypot(2.0 * std::sqrt(c), u);
    return 2.0 * u / (u + root) + std::log(2.0 * c + u * u + u * root);
}

}  // namespace detail

/// g(x_i, w_i, lambda) evaluated verbatim.
inline double eval_g(const PenaltyPoint& p) {
    p.validate();
    return detail::coupled_form(p.x_abs * std::sqrt(p.kernel_norm_sq), p.noise_level);
}

/// h(z; rho): the penalty shape over |x| for a given noise-to-kernel-norm ratio.
inline double eval_h(double z, double rho) {
    if (!(rho > 0.0)) throw domain_error("eval_h: rho must be > 0");
    if (!(z >= 0.0)) throw domain_error("eval_h: z must be >= 0");
    return detail::coupled_form(z, rho);
}

/// nu(w; mu, B) as a function of mu and the weighted norm ||w||_B; depends only on their product.
inline double eval_nu(double mu, double w_norm_B) {
    if (!(mu >= 0.0) || !(w_norm_B >= 0.0)) throw domain_error("eval_nu: arguments must be >= 0");
    return detail::coupled_form(mu * w_norm_B, 1.0);
}

/**
 * argmin_{gamma >= 0} x^2 / gamma + ln(lambda + gamma * s).
 *
 * Stationarity gives s gamma^2 - x^2 s gamma - x^2 lambda = 0, whose positive root is
 * (x^2 + |x| sqrt(x^2 + 4 lambda / s)) / 2. Returns 0 at x = 0, where the infimum sits on the boundary.
 */
inline double gamma_star(const PenaltyPoint& p) {
    p.validate();
    const double x = p.x_abs;
    if (x == 0.0) return 0.0;
    const double root = std::hypot(x, 2.0 * std::sqrt(p.noise_level / p.kernel_norm_sq));
    return 0.5 * (x * x + x * root);
}

/// The variational objective minimized by gamma_star.
inline double variational_objective(double gamma, const PenaltyPoint& p) {
    return p.x_abs * p.x_abs / gamma + std::log(p.noise_level + gamma * p.kernel_norm_sq);
}

/**
 * dh/dz = (z / rho) (sqrt(1 + 4 rho / z^2) - 1), evaluated in the cancellation-free form
 * 4 / (z + sqrt(z^2 + 4 rho)). At z = 0 this yields the one-sided limit 2 / sqrt(rho).
 */
inline double h_gradient(double z, double rho) {
    if (!(rho > 0.0)) throw domain_error("h_gradient: rho must be > 0");
    if (!(z >= 0.0)) throw domain_error("h_gradient: z must be >= 0");
    return 4.0 / (z + std::hypot(z, 2.0 * std::sqrt(rho)));
}

}  // namespace nubd::penalty
