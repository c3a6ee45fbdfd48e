#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nubd/cg.hpp"
#include "nubd/eff.hpp"
#include "nubd/image.hpp"
#include "nubd/parallel.hpp"

namespace nubd {

/// Forward differences with replicated boundary: ch0 = I(x+1,y) - I(x,y), ch1 = I(x,y+1) - I(x,y).
inline GradientImage to_gradient_domain(const Plane& img) {
    const int w = img.width(), h = img.height();
    GradientImage g(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            g[0](x, y) = img.clamped(x + 1, y) - img(x, y);
            g[1](x, y) = img.clamped(x, y + 1) - img(x, y);
        }
    return g;
}

inline GradientImage to_gradient_domain(const IntensityImage& img) { return to_gradient_domain(to_luma(img)); }

/// Adjoint of to_gradient_domain.
inline Plane gradient_adjoint(const GradientImage& g) {
    const int w = g.width(), h = g.height();
    Plane out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = 0.0;
            if (x + 1 < w) v -= g[0](x, y);
            if (x > 0) v += g[0](x - 1, y);
            if (y + 1 < h) v -= g[1](x, y);
            if (y > 0) v += g[1](x, y - 1);
            out(x, y) = v;
        }
    return out;
}

inline int pyramid_extent(int size, double factor, int level) {
    return static_cast<int>(std::floor(size * std::pow(factor, level) + 0.5));
}

namespace detail {

// Area-averaging resample of one axis to `out` samples; preserves the mean exactly.
inline std::vector<std::vector<std::pair<int, double>>> area_weights(int in, int out) {
    const double f = static_cast<double>(in) / out;
    std::vector<std::vector<std::pair<int, double>>> taps(static_cast<std::size_t>(out));
    for (int i = 0; i < out; ++i) {
        const double a = i * f, b = (i + 1) * f;
        for (int k = static_cast<int>(std::floor(a)); k < static_cast<int>(std::ceil(b)) && k < in; ++k) {
            const double ov = std::min(b, k + 1.0) - std::max(a, static_cast<double>(k));
            if (ov > 0.0) taps[static_cast<std::size_t>(i)].push_back({k, ov / f});
        }
    }
    return taps;
}

}  // namespace detail

inline Plane resample_area(const Plane& src, int out_w, int out_h) {
    if (out_w <= 0 || out_h <= 0) throw domain_error("resample_area: empty target");
    const auto tx = detail::area_weights(src.width(), out_w);
    const auto ty = detail::area_weights(src.height(), out_h);
    Plane tmp(out_w, src.height());
    for (int y = 0; y < src.height(); ++y)
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (auto [k, wt] : tx[static_cast<std::size_t>(x)]) acc += wt * src(k, y);
            tmp(x, y) = acc;
        }
    Plane out(out_w, out_h);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (auto [k, wt] : ty[static_cast<std::size_t>(y)]) acc += wt * tmp(x, k);
            out(x, y) = acc;
        }
    return out;
}

struct Pyramid {
    std::vector<Plane> levels;  ///< levels[0] is the input resolution
    std::vector<std::string> warnings;
};

inline constexpr int kMinPyramidExtent = 16;

/// Level l has extent floor(size * factor^l + 0.5); levels below 16 px are dropped with a warning.
inline Pyramid build_pyramid(const Plane& img, double scale_factor, int num_levels) {
    if (num_levels < 1) throw domain_error("build_pyramid: num_levels must be >= 1");
    if (!(scale_factor > 0.0 && scale_factor < 1.0) && num_levels > 1)
        throw domain_error("build_pyramid: scale_factor must lie in (0, 1)");
    Pyramid pyr;
    pyr.levels.push_back(img);
    for (int l = 1; l < num_levels; ++l) {
        const int w = pyramid_extent(img.width(), scale_factor, l);
        const int h = pyramid_extent(img.height(), scale_factor, l);
        if (w < kMinPyramidExtent || h < kMinPyramidExtent) {
            pyr.warnings.push_back("build_pyramid: reduced to " + std::to_string(l) + " levels (level " +
                                   std::to_string(l) + " would be " + std::to_string(w) + "x" + std::to_string(h) + ")");
            break;
        }
        pyr.levels.push_back(resample_area(img, w, h));
    }
    return pyr;
}

inline std::vector<IntensityImage> build_pyramid(const IntensityImage& img, double scale_factor, int num_levels,
                                                 std::vector<std::string>* warnings = nullptr) {
    std::vector<IntensityImage> out;
    for (const auto& plane : img.planes) {
        auto pyr = build_pyramid(plane, scale_factor, num_levels);
        if (out.empty()) out.resize(pyr.levels.size());
        for (std::size_t l = 0; l < out.size(); ++l) out[l].planes.push_back(std::move(pyr.levels[l]));
        if (warnings && warnings->empty()) *warnings = pyr.warnings;
    }
    return out;
}

struct NonblindOptions {
    double reg_weight = 50.0;
    double cg_tol = 1e-6;
    int cg_max_iter = 200;
};

struct NonblindResult {
    IntensityImage image;
    std::vector<CgResult> cg;
    bool converged() const {
        for (const auto& c : cg)
            if (!c.converged) return false;
        return true;
    }
};

/**
 * Per plane, min_x ||y - Hx||^2 + lambda * reg_weight * ||grad x||^2 by preconditioned CG
 * started from y. The preconditioner is the window-interpolated diag(H^T H) plus the
 * regularizer diagonal.
 */
inline NonblindResult nonblind_deconvolve(const IntensityImage& y, const std::vector<double>& w,
                                          const EffDecomposition& eff, double lambda, const NonblindOptions& opt) {
    if (y.empty()) throw domain_error("nonblind_deconvolve: empty image");
    if (!(lambda > 0.0)) throw domain_error("nonblind_deconvolve: lambda must be > 0");
    const double mu = lambda * opt.reg_weight;
    const Plane diag_hth = local_kernel_norms(w, eff);

    NonblindResult res;
    res.image.planes.resize(y.planes.size());
    res.cg.resize(y.planes.size());
    parallel_for(y.planes.size(), [&](std::size_t c) {
        const Plane& yc = y.planes[c];
        const Plane rhs = apply_blur_adjoint(yc, w, eff);
        auto apply_a = [&](const Plane& v) {
            Plane out = apply_blur_adjoint(apply_blur(v, w, eff), w, eff);
            if (mu > 0.0) axpy(mu, gradient_adjoint(to_gradient_domain(v)), out);
            return out;
        };
        auto apply_m = [&](const Plane& r) {
            Plane out(r.width(), r.height());
            for (int yy = 0; yy < r.height(); ++yy)
                for (int xx = 0; xx < r.width(); ++xx) {
                    const int nb = (xx > 0) + (xx + 1 < r.width()) + (yy > 0) + (yy + 1 < r.height());
                    const double d = diag_hth(xx, yy) + mu * nb;
                    out(xx, yy) = d > 0.0 ? r(xx, yy) / d : r(xx, yy);
                }
            return out;
        };
        Plane x = yc;
        res.cg[c] = conjugate_gradient(apply_a, apply_m, rhs, x, opt.cg_tol, opt.cg_max_iter);
        res.image.planes[c] = std::move(x);
    });
    return res;
}

}  // namespace nubd
