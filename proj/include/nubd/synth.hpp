#pragma once

// Ground-truth synthesis from camera-motion weights, and evaluation metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nubd/eff.hpp"
#include "nubd/image.hpp"
#include "nubd/pose.hpp"
#include "nubd/rng.hpp"

namespace nubd {

struct MotionSpec {
    std::vector<std::pair<Pose, double>> entries;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;

    /// Throws unless weights are non-negative and sum to 1 within tol.
    void validate(double tol = 1e-6) const {
        if (entries.empty()) throw domain_error("motion spec: no poses");
        double total = 0.0;
        for (const auto& [p, wt] : entries) {
            if (!(wt >= 0.0) || !std::isfinite(p.theta) || !std::isfinite(p.tx) || !std::isfinite(p.ty))
                throw domain_error("motion spec: weights must be non-negative and poses finite");
            total += wt;
        }
        if (std::abs(total - 1.0) > tol)
            throw domain_error("motion spec: weights sum to " + std::to_string(total) + ", expected 1");
        if (!(noise_sigma >= 0.0)) throw domain_error("motion spec: noise_sigma must be >= 0");
    }
};

/// Weights of a motion spec mapped onto grid indices; a pose farther than half a lattice step from the grid is an error.
inline std::vector<double> weights_on_grid(const MotionSpec& spec, const PoseGrid& grid) {
    std::vector<double> w(grid.size(), 0.0);
    for (const auto& [p, wt] : spec.entries) {
        const auto [j, dist] = grid.nearest(p);
        if (grid.size() == 0 || dist > 0.5 + 1e-9)
            throw domain_error("motion spec: pose (" + std::to_string(p.theta) + ", " + std::to_string(p.tx) + ", " +
                               std::to_string(p.ty) + ") is off the pose grid by " + std::to_string(dist) + " steps");
        w[j] += wt;
    }
    return w;
}

struct SynthResult {
    IntensityImage blurry;
    /// Spec weights on the grid.
    std::vector<double> weights;
    /// Per-patch ground-truth kernels A_r w (K*K each, row-major).
    std::vector<std::vector<double>> kernels;
};

/**
 * blurry = sum_j w_j P_j sharp + N(0, sigma^2), per plane, using the dense warp with poses snapped
 * to the grid. Noise comes from the "synth_noise" stream of the spec seed.
 */
inline SynthResult synthesize(const IntensityImage& sharp, const MotionSpec& spec, const PoseGrid& grid,
                              const EffDecomposition& eff) {
    if (sharp.empty()) throw domain_error("synthesize: empty image");
    spec.validate();
    SynthResult res;
    res.weights = weights_on_grid(spec, grid);
    res.blurry.planes.reserve(sharp.planes.size());
    for (const auto& plane : sharp.planes) res.blurry.planes.push_back(blur_dense(plane, grid, res.weights));
    if (spec.noise_sigma > 0.0) {
        Rng rng = make_rng(spec.seed, "synth_noise");
        std::normal_distribution<double> noise(0.0, spec.noise_sigma);
        for (auto& plane : res.blurry.planes)
            for (auto& v : plane.values()) v += noise(rng);
    }
    if (eff.num_poses == grid.size())
        for (std::size_t r = 0; r < eff.patches.size(); ++r) res.kernels.push_back(patch_kernel(eff, r, res.weights));
    return res;
}

inline double ssd(const Plane& a, const Plane& b, int border = 0, int dx = 0, int dy = 0) {
    require_same_shape(a, b, "ssd");
    long double acc = 0.0L;
    for (int y = border; y < a.height() - border; ++y)
        for (int x = border; x < a.width() - border; ++x) {
            const double d = a.clamped(x + dx, y + dy) - b(x, y);
            acc += static_cast<long double>(d) * d;
        }
    return static_cast<double>(acc);
}

inline double ssd(const IntensityImage& a, const IntensityImage& b, int border = 0, int dx = 0, int dy = 0) {
    if (a.planes.size() != b.planes.size()) throw domain_error("ssd: plane count mismatch");
    double s = 0.0;
    for (std::size_t c = 0; c < a.planes.size(); ++c) s += ssd(a.planes[c], b.planes[c], border, dx, dy);
    return s;
}

/// Smallest SSD against the reference over integer shifts within +-max_shift.
inline double aligned_ssd(const IntensityImage& est, const IntensityImage& ref, int border, int max_shift) {
    double best = std::numeric_limits<double>::infinity();
    for (int dy = -max_shift; dy <= max_shift; ++dy)
        for (int dx = -max_shift; dx <= max_shift; ++dx) best = std::min(best, ssd(est, ref, border, dx, dy));
    return best;
}

/**
 * SSD(deblur_est, sharp) / SSD(deblur_gt, sharp). Both SSDs are minimized over integer shifts
 * within +-max_shift and skip a border of `border` pixels.
 */
inline double ssd_error_ratio(const IntensityImage& deblur_est, const IntensityImage& deblur_gt,
                              const IntensityImage& sharp, int border = 0, int max_shift = 2) {
    if (deblur_est.width() != sharp.width() || deblur_est.height() != sharp.height() ||
        deblur_gt.width() != sharp.width() || deblur_gt.height() != sharp.height())
        throw domain_error("ssd_error_ratio: dimension mismatch");
    if (2 * (border + max_shift) >= std::min(sharp.width(), sharp.height()))
        throw domain_error("ssd_error_ratio: border crop leaves no pixels");
    const double den = aligned_ssd(deblur_gt, sharp, border, max_shift);
    if (!(den > 0.0)) throw domain_error("ssd_error_ratio: ground-truth reconstruction is exact (zero denominator)");
    return aligned_ssd(deblur_est, sharp, border, max_shift) / den;
}

/// <a, b> / (|a| |b|) over a common pose indexing.
inline double kernel_correlation(const std::vector<double>& w_est, const std::vector<double>& w_gt) {
    if (w_est.size() != w_gt.size()) throw domain_error("kernel_correlation: weight vectors differ in length");
    long double ab = 0.0L, aa = 0.0L, bb = 0.0L;
    for (std::size_t j = 0; j < w_est.size(); ++j) {
        ab += static_cast<long double>(w_est[j]) * w_gt[j];
        aa += static_cast<long double>(w_est[j]) * w_est[j];
        bb += static_cast<long double>(w_gt[j]) * w_gt[j];
    }
    if (aa == 0.0L || bb == 0.0L) throw domain_error("kernel_correlation: zero weight vector");
    return static_cast<double>(ab / std::sqrt(aa * bb));
}

/// Moves each weight of (from, w) to the nearest pose of `to`.
inline std::vector<double> project_weights(const std::vector<double>& w, const PoseGrid& from, const PoseGrid& to) {
    if (w.size() != from.size()) throw domain_error("project_weights: weight/pose count mismatch");
    std::vector<double> out(to.size(), 0.0);
    for (std::size_t j = 0; j < w.size(); ++j)
        if (w[j] != 0.0) out[to.nearest(from.poses[j]).first] += w[j];
    return out;
}

/// Fraction of ratios <= each edge.
inline std::vector<double> cumulative_histogram(const std::vector<double>& ratios, const std::vector<double>& edges) {
    if (ratios.empty()) throw domain_error("cumulative_histogram: no ratios");
    std::vector<double> sorted = ratios;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> out;
    out.reserve(edges.size());
    for (double e : edges) {
        const auto n = std::upper_bound(sorted.begin(), sorted.end(), e) - sorted.begin();
        out.push_back(static_cast<double>(n) / static_cast<double>(sorted.size()));
    }
    return out;
}

/// 10 log10(peak^2 / MSE) over all planes, skipping a border.
inline double psnr(const IntensityImage& a, const IntensityImage& b, int border = 0, double peak = 1.0) {
    if (a.width() != b.width() || a.height() != b.height()) throw domain_error("psnr: dimension mismatch");
    const double count = static_cast<double>(a.planes.size()) * (a.width() - 2 * border) * (a.height() - 2 * border);
    if (!(count > 0.0)) throw domain_error("psnr: border crop leaves no pixels");
    const double mse = ssd(a, b, border) / count;
    return mse > 0.0 ? 10.0 * std::log10(peak * peak / mse) : std::numeric_limits<double>::infinity();
}

}  // namespace nubd
