#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nubd/image.hpp"
#include "nubd/rng.hpp"

namespace nubd {

/**
 * In-plane camera pose: rotation by theta (radians) about the image center followed by a
 * translation (tx, ty) in pixels. Image coordinates: x to the right, y down.
 */
struct Pose {
    double theta = 0.0;
    double tx = 0.0;
    double ty = 0.0;

    friend bool operator==(const Pose&, const Pose&) = default;
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

/// Rigid map T(q) = R(theta) (q - c) + c + t for an image of the given size.
class PoseTransform {
public:
    PoseTransform(const Pose& pose, int width, int height)
        : cos_(std::cos(pose.theta)), sin_(std::sin(pose.theta)),
          cx_(0.5 * (width - 1)), cy_(0.5 * (height - 1)), tx_(pose.tx), ty_(pose.ty) {}

    Point2 forward(double x, double y) const {
        const double dx = x - cx_, dy = y - cy_;
        return {cos_ * dx - sin_ * dy + cx_ + tx_, sin_ * dx + cos_ * dy + cy_ + ty_};
    }

    Point2 inverse(double x, double y) const {
        const double dx = x - cx_ - tx_, dy = y - cy_ - ty_;
        return {cos_ * dx + sin_ * dy + cx_, -sin_ * dx + cos_ * dy + cy_};
    }

private:
    double cos_, sin_, cx_, cy_, tx_, ty_;
};

enum class Interpolation { bilinear };

/// Ordered pose set; the order is the canonical index used by blur weight vectors.
struct PoseGrid {
    std::vector<Pose> poses;
    Interpolation interp = Interpolation::bilinear;
    /// Lattice spacing and extent; used for snapping and resampling.
    double rotation_step = 0.0;
    double shift_step = 1.0;
    double max_rotation = 0.0;
    double max_shift = 0.0;

    std::size_t size() const noexcept { return poses.size(); }

    /// Index of the pose nearest to p in lattice units, and that distance (max over coordinates).
    /// Ties go to the smaller Euclidean lattice distance, then the lower index.
    std::pair<std::size_t, double> nearest(const Pose& p) const {
        std::size_t best = 0;
        double best_d = INFINITY, best_e = INFINITY;
        for (std::size_t j = 0; j < poses.size(); ++j) {
            const double d = lattice_distance(poses[j], p);
            if (d > best_d) continue;
            const double e = lattice_distance_sq(poses[j], p);
            if (d < best_d || e < best_e) {
                best_d = d;
                best_e = e;
                best = j;
            }
        }
        return {best, best_d};
    }

    double lattice_distance(const Pose& a, const Pose& b) const {
        const double rs = rotation_step > 0.0 ? rotation_step : 1.0;
        const double ss = shift_step > 0.0 ? shift_step : 1.0;
        return std::max({std::abs(a.theta - b.theta) / rs, std::abs(a.tx - b.tx) / ss, std::abs(a.ty - b.ty) / ss});
    }

    double lattice_distance_sq(const Pose& a, const Pose& b) const {
        const double rs = rotation_step > 0.0 ? rotation_step : 1.0;
        const double ss = shift_step > 0.0 ? shift_step : 1.0;
        const double dt = (a.theta - b.theta) / rs, dx = (a.tx - b.tx) / ss, dy = (a.ty - b.ty) / ss;
        return dt * dt + dx * dx + dy * dy;
    }
};

struct PoseGridSpec {
    double max_rotation = 5.0 * M_PI / 180.0;
    /// <= 0 selects the step whose arc at the farthest pixel from the center is one pixel.
    double rotation_step = 0.0;
    double max_shift = 4.0;
    double shift_step = 1.0;
    std::size_t max_poses = 2500;
};

inline double corner_radius(int width, int height) {
    return std::hypot(0.5 * (width - 1), 0.5 * (height - 1));
}

inline double auto_rotation_step(int width, int height) {
    const double r = corner_radius(width, height);
    return r > 0.0 ? 1.0 / r : 1.0;
}

namespace detail {
inline std::vector<double> symmetric_axis(double max_value, double step) {
    if (max_value <= 0.0) return {0.0};
    const int n = static_cast<int>(std::floor(max_value / step + 1e-9));
    std::vector<double> values;
    for (int k = -n; k <= n; ++k) values.push_back(k * step);
    return values;
}
}  // namespace detail

/// Full Cartesian grid over (theta, ty, tx), theta outermost.
inline PoseGrid build_pose_grid(const PoseGridSpec& spec, int width, int height) {
    if (spec.max_rotation < 0.0 || spec.max_shift < 0.0) throw domain_error("build_pose_grid: ranges must be >= 0");
    if (!(spec.shift_step > 0.0)) throw domain_error("build_pose_grid: shift_step must be > 0");
    PoseGrid grid;
    grid.rotation_step = spec.rotation_step > 0.0 ? spec.rotation_step : auto_rotation_step(width, height);
    grid.shift_step = spec.shift_step;
    grid.max_rotation = spec.max_rotation;
    grid.max_shift = spec.max_shift;
    const auto thetas = detail::symmetric_axis(spec.max_rotation, grid.rotation_step);
    const auto shifts = detail::symmetric_axis(spec.max_shift, spec.shift_step);
    const std::size_t total = thetas.size() * shifts.size() * shifts.size();
    if (total > spec.max_poses) {
        throw domain_error("build_pose_grid: " + std::to_string(total) + " poses exceeds the cap max_poses=" +
                           std::to_string(spec.max_poses));
    }
    grid.poses.reserve(total);
    for (double th : thetas)
        for (double ty : shifts)
            for (double tx : shifts) grid.poses.push_back({th, tx, ty});
    return grid;
}

/// Pose expressed at a resolution `factor` times the current one; rotation is scale-free.
inline Pose scale_pose(const Pose& p, double factor_x, double factor_y) {
    return {p.theta, p.tx * factor_x, p.ty * factor_y};
}
inline Pose scale_pose(const Pose& p, double factor) { return scale_pose(p, factor, factor); }

/// Largest displacement |T(q) - q| over the image corners, over all poses.
inline double max_displacement(const PoseGrid& grid, int width, int height) {
    double m = 0.0;
    const double xs[2] = {0.0, static_cast<double>(width - 1)};
    const double ys[2] = {0.0, static_cast<double>(height - 1)};
    for (const auto& p : grid.poses) {
        PoseTransform t(p, width, height);
        for (double x : xs)
            for (double y : ys) {
                const Point2 q = t.forward(x, y);
                m = std::max(m, std::hypot(q.x - x, q.y - y));
            }
    }
    return m;
}

/**
 * Dense projective warp P x: every source pixel q is splatted bilinearly onto T(q).
 * Sources outside the image take the value of the nearest border pixel, so pure integer
 * translations reduce to x(clamp(p - t)).
 */
inline Plane warp(const Plane& src, const Pose& pose) {
    const int w = src.width(), h = src.height();
    PoseTransform t(pose, w, h);
    Plane out(w, h);
    for (int py = 0; py < h; ++py) {
        for (int px = 0; px < w; ++px) {
            const Point2 q0 = t.inverse(px, py);
            const int bx = static_cast<int>(std::floor(q0.x));
            const int by = static_cast<int>(std::floor(q0.y));
            double acc = 0.0;
            for (int qy = by - 1; qy <= by + 2; ++qy) {
                for (int qx = bx - 1; qx <= bx + 2; ++qx) {
                    const Point2 d = t.forward(qx, qy);
                    const double wx = 1.0 - std::abs(d.x - px);
                    const double wy = 1.0 - std::abs(d.y - py);
                    if (wx > 0.0 && wy > 0.0) acc += wx * wy * src.clamped(qx, qy);
                }
            }
            out(px, py) = acc;
        }
    }
    return out;
}

/// Sum_j w_j P_j x with dense warps; the reference forward model.
inline Plane blur_dense(const Plane& src, const PoseGrid& grid, const std::vector<double>& w) {
    if (w.size() != grid.size()) throw domain_error("blur_dense: weight/pose count mismatch");
    Plane out(src.width(), src.height());
    for (std::size_t j = 0; j < w.size(); ++j) {
        if (w[j] == 0.0) continue;
        axpy(w[j], warp(src, grid.poses[j]), out);
    }
    return out;
}

struct ActiveSetResult {
    std::vector<double> weights;
    PoseGrid grid;
    std::size_t removed = 0;
    std::size_t added = 0;
};

/**
 * Prunes poses whose weight is below prune_fraction * max(w), then proposes as many new poses
 * by Gaussian perturbation (std = resample_sigma lattice steps per coordinate) of surviving
 * poses, drawn in proportion to their weight. Proposals are snapped to the grid lattice,
 * clamped to its range, and rejected if already present. New poses start at weight 0.
 */
inline ActiveSetResult active_set_update(const std::vector<double>& w, const PoseGrid& grid, double prune_fraction,
                                         double resample_sigma, std::uint64_t seed) {
    if (w.size() != grid.size()) throw domain_error("active_set_update: weight/pose count mismatch");
    if (!(prune_fraction >= 0.0 && prune_fraction < 1.0))
        throw domain_error("active_set_update: prune_fraction must lie in [0, 1)");
    const double wmax = w.empty() ? 0.0 : *std::max_element(w.begin(), w.end());
    if (!(wmax > 0.0)) throw domain_error("active_set_update: all weights are zero");

    ActiveSetResult res;
    res.grid = grid;
    res.grid.poses.clear();
    const double threshold = prune_fraction * wmax;
    for (std::size_t j = 0; j < w.size(); ++j) {
        if (w[j] >= threshold) {
            res.grid.poses.push_back(grid.poses[j]);
            res.weights.push_back(w[j]);
        }
    }
    res.removed = w.size() - res.weights.size();
    if (res.removed == 0) return res;

    const std::vector<double> survivor_w = res.weights;
    const std::vector<Pose> survivors = res.grid.poses;
    Rng rng = make_rng(seed, "active_set");
    std::discrete_distribution<std::size_t> pick(survivor_w.begin(), survivor_w.end());
    std::normal_distribution<double> noise(0.0, resample_sigma);

    const double rs = grid.rotation_step;
    const double ss = grid.shift_step;
    auto snap = [](double v, double step, double limit) {
        if (!(step > 0.0) || limit <= 0.0) return 0.0;
        const double n = std::floor(limit / step + 1e-9);
        return std::clamp(std::round(v / step), -n, n) * step;
    };
    constexpr int kAttemptsPerSlot = 16;
    for (std::size_t k = 0; k < res.removed; ++k) {
        for (int attempt = 0; attempt < kAttemptsPerSlot; ++attempt) {
            const Pose& base = survivors[pick(rng)];
            Pose cand{snap(base.theta + noise(rng) * rs, rs, grid.max_rotation),
                      snap(base.tx + noise(rng) * ss, ss, grid.max_shift),
                      snap(base.ty + noise(rng) * ss, ss, grid.max_shift)};
            const bool duplicate = std::any_of(res.grid.poses.begin(), res.grid.poses.end(),
                                               [&](const Pose& p) { return grid.lattice_distance(p, cand) < 1e-6; });
            if (!duplicate) {
                res.grid.poses.push_back(cand);
                res.weights.push_back(0.0);
                ++res.added;
                break;
            }
        }
    }
    return res;
}

}  // namespace nubd
