#pragma once

// Patchwise ("efficient filter flow") realization of the projective-motion blur operator
// H = sum_j w_j P_j, its adjoint, the pose-space operator D = [P_1 x, P_2 x, ...] and the
// per-pixel local kernel norms.
//
// Within patch r the operator is a convolution with the patch's local kernel A_r w, where
// column j of A_r is the bilinear splat of pose j applied to a delta at the patch center.
// Patches are blended by windows forming a partition of unity. Reads outside the image
// replicate the border, so for translation-only grids H is exactly the dense convolution
// with edge replication.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nubd/image.hpp"
#include "nubd/parallel.hpp"
#include "nubd/pose.hpp"

namespace nubd {

struct KernelTap {
    int dx = 0;
    int dy = 0;
    double weight = 0.0;
};

/// Bilinear splat of a unit mass displaced by (ox, oy); zero-weight taps are dropped.
inline std::vector<KernelTap> splat_offset(double ox, double oy) {
    auto snap = [](double v) {
        const double r = std::round(v);
        return std::abs(v - r) < 1e-9 ? r : v;
    };
    ox = snap(ox);
    oy = snap(oy);
    const double fx = std::floor(ox), fy = std::floor(oy);
    const double ax = ox - fx, ay = oy - fy;
    const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
    std::vector<KernelTap> taps;
    const double wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
    const int dxs[4] = {ix, ix + 1, ix, ix + 1};
    const int dys[4] = {iy, iy, iy + 1, iy + 1};
    for (int k = 0; k < 4; ++k)
        if (wts[k] > 0.0) taps.push_back({dxs[k], dys[k], wts[k]});
    return taps;
}

struct EffSpec {
    int patch_size = 64;
    int overlap = 32;
    /// Odd kernel extent K; <= 0 derives it from the largest pose displacement.
    int kernel_size = 0;
};

struct EffPatch {
    /// Window support [x0, x1) x [y0, y1).
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    /// Patch center, where the basis kernels are sampled.
    double cx = 0.0, cy = 0.0;
    /// Partition-of-unity weights over the support, row-major.
    std::vector<double> window;
    /// Sparse columns of A_r, one per pose.
    std::vector<std::vector<KernelTap>> basis;

    int support_width() const noexcept { return x1 - x0; }
    int support_height() const noexcept { return y1 - y0; }
    double window_at(int x, int y) const noexcept {
        return window[static_cast<std::size_t>(y - y0) * support_width() + (x - x0)];
    }
    bool contains(int x, int y) const noexcept { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

struct EffDecomposition {
    int width = 0;
    int height = 0;
    int kernel_size = 1;
    int radius = 0;
    int patch_cols = 1;
    int patch_rows = 1;
    std::size_t num_poses = 0;
    std::vector<EffPatch> patches;

    std::size_t kernel_index(int dx, int dy) const noexcept {
        return static_cast<std::size_t>(dy + radius) * kernel_size + (dx + radius);
    }
};

inline int kernel_size_for(const PoseGrid& grid, int width, int height) {
    const int r = static_cast<int>(std::ceil(max_displacement(grid, width, height) - 1e-9)) + 1;
    return 2 * r + 1;
}

namespace detail {

// Evenly spread tile starts covering [0, extent) with tiles of `size` overlapping by >= `overlap`.
inline std::vector<int> tile_starts(int extent, int size, int overlap) {
    if (size >= extent) return {0};
    const int stride = size - overlap;
    const int n = 1 + static_cast<int>(std::ceil(static_cast<double>(extent - size) / stride));
    std::vector<int> starts;
    for (int k = 0; k < n; ++k) {
        starts.push_back(n == 1 ? 0 : static_cast<int>(std::lround(static_cast<double>(k) * (extent - size) / (n - 1))));
    }
    return starts;
}

inline double taper(int u, int start, int size) {
    const double s = std::sin(M_PI * (u - start + 0.5) / size);
    return s * s;
}

}  // namespace detail

/**
 * Builds the patch grid, partition-of-unity windows and per-patch basis kernels.
 * Throws if the kernel extent cannot contain the splatted delta of some pose.
 */
inline EffDecomposition build_eff(const PoseGrid& grid, int width, int height, const EffSpec& spec) {
    if (width <= 0 || height <= 0) throw domain_error("build_eff: empty image");
    if (spec.patch_size <= 0) throw domain_error("build_eff: patch_size must be > 0");
    if (spec.overlap < 0 || spec.overlap >= spec.patch_size)
        throw domain_error("build_eff: overlap must lie in [0, patch_size)");
    EffDecomposition eff;
    eff.width = width;
    eff.height = height;
    eff.kernel_size = spec.kernel_size > 0 ? spec.kernel_size : kernel_size_for(grid, width, height);
    if (eff.kernel_size % 2 == 0) throw domain_error("build_eff: kernel_size must be odd");
    eff.radius = eff.kernel_size / 2;
    eff.num_poses = grid.size();

    const int pw = std::min(spec.patch_size, width);
    const int ph = std::min(spec.patch_size, height);
    const auto xs = detail::tile_starts(width, pw, std::min(spec.overlap, pw - 1));
    const auto ys = detail::tile_starts(height, ph, std::min(spec.overlap, ph - 1));
    eff.patch_cols = static_cast<int>(xs.size());
    eff.patch_rows = static_cast<int>(ys.size());

    Plane total(width, height);
    for (int sy : ys) {
        for (int sx : xs) {
            EffPatch p;
            p.x0 = sx;
            p.y0 = sy;
            p.x1 = sx + pw;
            p.y1 = sy + ph;
            p.cx = sx + 0.5 * (pw - 1);
            p.cy = sy + 0.5 * (ph - 1);
            p.window.resize(static_cast<std::size_t>(pw) * ph);
            for (int y = p.y0; y < p.y1; ++y)
                for (int x = p.x0; x < p.x1; ++x) {
                    const double v = detail::taper(x, sx, pw) * detail::taper(y, sy, ph);
                    p.window[static_cast<std::size_t>(y - p.y0) * pw + (x - p.x0)] = v;
                    total(x, y) += v;
                }
            eff.patches.push_back(std::move(p));
        }
    }
    for (auto& p : eff.patches)
        for (int y = p.y0; y < p.y1; ++y)
            for (int x = p.x0; x < p.x1; ++x) p.window[static_cast<std::size_t>(y - p.y0) * pw + (x - p.x0)] /= total(x, y);

    for (auto& p : eff.patches) {
        p.basis.reserve(grid.size());
        for (std::size_t j = 0; j < grid.size(); ++j) {
            const Pose& pose = grid.poses[j];
            const Point2 q = PoseTransform(pose, width, height).forward(p.cx, p.cy);
            auto taps = splat_offset(q.x - p.cx, q.y - p.cy);
            for (const auto& t : taps) {
                if (std::abs(t.dx) > eff.radius || std::abs(t.dy) > eff.radius) {
                    throw domain_error("build_eff: kernel_size " + std::to_string(eff.kernel_size) +
                                       " too small for pose " + std::to_string(j) + " (theta=" +
                                       std::to_string(pose.theta) + ", tx=" + std::to_string(pose.tx) +
                                       ", ty=" + std::to_string(pose.ty) + ")");
                }
            }
            p.basis.push_back(std::move(taps));
        }
    }
    return eff;
}

/// Local kernel A_r w of one patch as a dense K x K array (row-major, dy outer).
inline std::vector<double> patch_kernel(const EffDecomposition& eff, std::size_t r, const std::vector<double>& w) {
    if (w.size() != eff.num_poses) throw domain_error("patch_kernel: weight/pose count mismatch");
    std::vector<double> k(static_cast<std::size_t>(eff.kernel_size) * eff.kernel_size, 0.0);
    const auto& patch = eff.patches[r];
    for (std::size_t j = 0; j < w.size(); ++j) {
        if (w[j] == 0.0) continue;
        for (const auto& t : patch.basis[j]) k[eff.kernel_index(t.dx, t.dy)] += w[j] * t.weight;
    }
    return k;
}

/// Dense A_r (K^2 x J).
inline Eigen::MatrixXd basis_matrix(const EffDecomposition& eff, std::size_t r) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(eff.kernel_size) * eff.kernel_size,
                                              static_cast<Eigen::Index>(eff.num_poses));
    const auto& patch = eff.patches[r];
    for (std::size_t j = 0; j < eff.num_poses; ++j)
        for (const auto& t : patch.basis[j])
            a(static_cast<Eigen::Index>(eff.kernel_index(t.dx, t.dy)), static_cast<Eigen::Index>(j)) += t.weight;
    return a;
}

namespace detail {

// Windowed input of one patch on the support dilated by 2R, with replicate-boundary reads.
struct PatchBuffer {
    int bx0 = 0, by0 = 0, bw = 0, bh = 0;
    std::vector<double> v;

    double at(int x, int y) const noexcept { return v[static_cast<std::size_t>(y - by0) * bw + (x - bx0)]; }
    double& at(int x, int y) noexcept { return v[static_cast<std::size_t>(y - by0) * bw + (x - bx0)]; }
};

inline PatchBuffer make_buffer(const EffDecomposition& eff, const EffPatch& p) {
    PatchBuffer b;
    const int pad = 2 * eff.radius;
    b.bx0 = p.x0 - pad;
    b.by0 = p.y0 - pad;
    b.bw = p.support_width() + 2 * pad;
    b.bh = p.support_height() + 2 * pad;
    b.v.assign(static_cast<std::size_t>(b.bw) * b.bh, 0.0);
    return b;
}

inline PatchBuffer windowed_input(const EffDecomposition& eff, const EffPatch& p, const Plane& x) {
    PatchBuffer b = make_buffer(eff, p);
    for (int y = b.by0; y < b.by0 + b.bh; ++y) {
        const int cy = std::clamp(y, 0, eff.height - 1);
        if (cy < p.y0 || cy >= p.y1) continue;
        for (int xx = b.bx0; xx < b.bx0 + b.bw; ++xx) {
            const int cx = std::clamp(xx, 0, eff.width - 1);
            if (cx < p.x0 || cx >= p.x1) continue;
            b.at(xx, y) = p.window_at(cx, cy) * x(cx, cy);
        }
    }
    return b;
}

// Output region of a patch: support dilated by R, clipped to the image.
struct Rect {
    int x0, y0, x1, y1;
};

inline Rect output_region(const EffDecomposition& eff, const EffPatch& p) {
    return {std::max(0, p.x0 - eff.radius), std::max(0, p.y0 - eff.radius), std::min(eff.width, p.x1 + eff.radius),
            std::min(eff.height, p.y1 + eff.radius)};
}

inline void check_plane(const EffDecomposition& eff, const Plane& x, const char* what) {
    if (x.width() != eff.width || x.height() != eff.height) {
        throw domain_error(std::string(what) + ": image is " + std::to_string(x.width()) + "x" +
                           std::to_string(x.height()) + " but operator expects " + std::to_string(eff.width) + "x" +
                           std::to_string(eff.height));
    }
}

inline void check_weights(const EffDecomposition& eff, const std::vector<double>& w, const char* what) {
    if (w.size() != eff.num_poses) throw domain_error(std::string(what) + ": weight/pose count mismatch");
}

}  // namespace detail

/// H x: windowed patches convolved with their local kernels and accumulated.
inline Plane apply_blur(const Plane& x, const std::vector<double>& w, const EffDecomposition& eff) {
    detail::check_plane(eff, x, "apply_blur");
    detail::check_weights(eff, w, "apply_blur");
    Plane out(eff.width, eff.height);
    for (std::size_t r = 0; r < eff.patches.size(); ++r) {
        const auto& p = eff.patches[r];
        const auto k = patch_kernel(eff, r, w);
        const auto u = detail::windowed_input(eff, p, x);
        const auto o = detail::output_region(eff, p);
        for (int dy = -eff.radius; dy <= eff.radius; ++dy) {
            for (int dx = -eff.radius; dx <= eff.radius; ++dx) {
                const double v = k[eff.kernel_index(dx, dy)];
                if (v == 0.0) continue;
                for (int py = o.y0; py < o.y1; ++py) {
                    double* row = out.data() + out.index(0, py);
                    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(py - dy - u.by0) * u.bw - u.bx0 - dx;
                    const double* src = u.v.data();
                    for (int px = o.x0; px < o.x1; ++px) row[px] += v * src[off + px];
                }
            }
        }
    }
    return out;
}

/// H^T r: patchwise correlation with the local kernels, windows applied on the output side.
inline Plane apply_blur_adjoint(const Plane& res, const std::vector<double>& w, const EffDecomposition& eff) {
    detail::check_plane(eff, res, "apply_blur_adjoint");
    detail::check_weights(eff, w, "apply_blur_adjoint");
    Plane out(eff.width, eff.height);
    for (std::size_t r = 0; r < eff.patches.size(); ++r) {
        const auto& p = eff.patches[r];
        const auto k = patch_kernel(eff, r, w);
        auto acc = detail::make_buffer(eff, p);
        const auto o = detail::output_region(eff, p);
        for (int dy = -eff.radius; dy <= eff.radius; ++dy) {
            for (int dx = -eff.radius; dx <= eff.radius; ++dx) {
                const double v = k[eff.kernel_index(dx, dy)];
                if (v == 0.0) continue;
                for (int py = o.y0; py < o.y1; ++py) {
                    const double* row = res.data() + res.index(0, py);
                    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(py - dy - acc.by0) * acc.bw - acc.bx0 - dx;
                    double* dst = acc.v.data();
                    for (int px = o.x0; px < o.x1; ++px) dst[off + px] += v * row[px];
                }
            }
        }
        for (int y = acc.by0; y < acc.by0 + acc.bh; ++y) {
            const int cy = std::clamp(y, 0, eff.height - 1);
            if (cy < p.y0 || cy >= p.y1) continue;
            for (int x = acc.bx0; x < acc.bx0 + acc.bw; ++x) {
                const int cx = std::clamp(x, 0, eff.width - 1);
                if (cx < p.x0 || cx >= p.x1) continue;
                const double a = acc.at(x, y);
                if (a != 0.0) out(cx, cy) += p.window_at(cx, cy) * a;
            }
        }
    }
    return out;
}

inline GradientImage apply_blur(const GradientImage& x, const std::vector<double>& w, const EffDecomposition& eff) {
    GradientImage out;
    parallel_for(2, [&](std::size_t c) { out[c] = apply_blur(x[c], w, eff); });
    return out;
}

inline GradientImage apply_blur_adjoint(const GradientImage& r, const std::vector<double>& w,
                                        const EffDecomposition& eff) {
    GradientImage out;
    parallel_for(2, [&](std::size_t c) { out[c] = apply_blur_adjoint(r[c], w, eff); });
    return out;
}

/**
 * D^T r, i.e. the vector of <P_j x, r> under the patchwise model. Per patch, correlations of the
 * windowed input with r are taken once per kernel offset and shared by all poses.
 */
inline std::vector<double> apply_D_transpose(const Plane& res, const Plane& x, const EffDecomposition& eff) {
    detail::check_plane(eff, res, "apply_D_transpose");
    detail::check_plane(eff, x, "apply_D_transpose");
    std::vector<double> out(eff.num_poses, 0.0);
    const int k = eff.kernel_size;
    std::vector<double> corr(static_cast<std::size_t>(k) * k);
    std::vector<char> needed(corr.size());
    for (const auto& p : eff.patches) {
        std::fill(needed.begin(), needed.end(), 0);
        for (const auto& col : p.basis)
            for (const auto& t : col) needed[eff.kernel_index(t.dx, t.dy)] = 1;
        const auto u = detail::windowed_input(eff, p, x);
        const auto o = detail::output_region(eff, p);
        for (int dy = -eff.radius; dy <= eff.radius; ++dy) {
            for (int dx = -eff.radius; dx <= eff.radius; ++dx) {
                const std::size_t ki = eff.kernel_index(dx, dy);
                if (!needed[ki]) continue;
                double acc = 0.0;
                for (int py = o.y0; py < o.y1; ++py) {
                    const double* row = res.data() + res.index(0, py);
                    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(py - dy - u.by0) * u.bw - u.bx0 - dx;
                    const double* src = u.v.data();
                    for (int px = o.x0; px < o.x1; ++px) acc += src[off + px] * row[px];
                }
                corr[ki] = acc;
            }
        }
        for (std::size_t j = 0; j < eff.num_poses; ++j)
            for (const auto& t : p.basis[j]) out[j] += t.weight * corr[eff.kernel_index(t.dx, t.dy)];
    }
    return out;
}

inline std::vector<double> apply_D_transpose(const GradientImage& res, const GradientImage& x,
                                             const EffDecomposition& eff) {
    std::vector<double> a, b;
    parallel_for(2, [&](std::size_t c) { (c == 0 ? a : b) = apply_D_transpose(res[c], x[c], eff); });
    for (std::size_t j = 0; j < a.size(); ++j) a[j] += b[j];
    return a;
}

/// Overload taking the pose grid for symmetry with the forward model; the grid must match eff.
inline std::vector<double> apply_D_transpose(const GradientImage& res, const GradientImage& x,
                                             const EffDecomposition& eff, const PoseGrid& grid) {
    if (grid.size() != eff.num_poses) throw domain_error("apply_D_transpose: grid does not match decomposition");
    return apply_D_transpose(res, x, eff);
}

/// Normal equations of the pose-space least-squares problem min_w ||y - D w||^2.
struct PoseNormalEquations {
    Eigen::MatrixXd gram;  ///< D^T D
    Eigen::VectorXd rhs;   ///< D^T y
    double y_sq = 0.0;     ///< ||y||^2
};

/**
 * Assembles D^T D and D^T y by materializing D in horizontal bands of output rows, so memory
 * stays bounded by band_budget doubles regardless of image size.
 */
inline PoseNormalEquations pose_normal_equations(const GradientImage& x, const GradientImage& y,
                                                 const EffDecomposition& eff,
                                                 std::size_t band_budget = std::size_t{1} << 22) {
    for (std::size_t c = 0; c < 2; ++c) {
        detail::check_plane(eff, x[c], "pose_normal_equations");
        detail::check_plane(eff, y[c], "pose_normal_equations");
    }
    const auto nj = static_cast<Eigen::Index>(eff.num_poses);
    PoseNormalEquations ne;
    ne.gram = Eigen::MatrixXd::Zero(nj, nj);
    ne.rhs = Eigen::VectorXd::Zero(nj);
    ne.y_sq = squared_norm(y);
    if (nj == 0) return ne;

    std::vector<std::array<detail::PatchBuffer, 2>> inputs;
    inputs.reserve(eff.patches.size());
    for (const auto& p : eff.patches) inputs.push_back({detail::windowed_input(eff, p, x[0]), detail::windowed_input(eff, p, x[1])});

    const std::size_t per_row = 2 * static_cast<std::size_t>(eff.width) * static_cast<std::size_t>(nj);
    const int band = std::max<int>(1, static_cast<int>(band_budget / std::max<std::size_t>(per_row, 1)));
    Eigen::MatrixXd d;
    Eigen::VectorXd yb;
    for (int by0 = 0; by0 < eff.height; by0 += band) {
        const int by1 = std::min(eff.height, by0 + band);
        const Eigen::Index rows_per_channel = static_cast<Eigen::Index>(by1 - by0) * eff.width;
        d.setZero(2 * rows_per_channel, nj);
        yb.resize(2 * rows_per_channel);
        for (int c = 0; c < 2; ++c)
            for (int py = by0; py < by1; ++py)
                for (int px = 0; px < eff.width; ++px)
                    yb(c * rows_per_channel + static_cast<Eigen::Index>(py - by0) * eff.width + px) = y[c](px, py);

        for (std::size_t r = 0; r < eff.patches.size(); ++r) {
            const auto& p = eff.patches[r];
            auto o = detail::output_region(eff, p);
            o.y0 = std::max(o.y0, by0);
            o.y1 = std::min(o.y1, by1);
            if (o.y0 >= o.y1) continue;
            for (int c = 0; c < 2; ++c) {
                const auto& u = inputs[r][c];
                for (Eigen::Index j = 0; j < nj; ++j) {
                    double* col = d.col(j).data() + c * rows_per_channel;
                    for (const auto& t : p.basis[static_cast<std::size_t>(j)]) {
                        for (int py = o.y0; py < o.y1; ++py) {
                            double* dst = col + static_cast<std::size_t>(py - by0) * eff.width;
                            const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(py - t.dy - u.by0) * u.bw - u.bx0 - t.dx;
                            const double* src = u.v.data();
                            for (int px = o.x0; px < o.x1; ++px) dst[px] += t.weight * src[off + px];
                        }
                    }
                }
            }
        }
        ne.gram.selfadjointView<Eigen::Lower>().rankUpdate(d.transpose());
        ne.rhs.noalias() += d.transpose() * yb;
    }
    ne.gram.triangularView<Eigen::StrictlyUpper>() = ne.gram.transpose();
    return ne;
}

/// ||A_r w||^2 for every patch.
inline std::vector<double> patch_kernel_norms(const std::vector<double>& w, const EffDecomposition& eff) {
    std::vector<double> out;
    out.reserve(eff.patches.size());
    for (std::size_t r = 0; r < eff.patches.size(); ++r) {
        const auto k = patch_kernel(eff, r, w);
        double s = 0.0;
        for (double v : k) s += v * v;
        out.push_back(s);
    }
    return out;
}

/// Per-pixel ||w_i||^2, window-interpolated from the exact per-patch norms.
inline Plane local_kernel_norms(const std::vector<double>& w, const EffDecomposition& eff) {
    const auto pn = patch_kernel_norms(w, eff);
    Plane out(eff.width, eff.height);
    for (std::size_t r = 0; r < eff.patches.size(); ++r) {
        const auto& p = eff.patches[r];
        for (int y = p.y0; y < p.y1; ++y)
            for (int x = p.x0; x < p.x1; ++x) out(x, y) += p.window_at(x, y) * pn[r];
    }
    return out;
}

/// rho_i = lambda / ||w_i||^2.
inline Plane rho_map(const Plane& norms_sq, double lambda) {
    if (!(lambda > 0.0)) throw domain_error("rho_map: lambda must be > 0");
    Plane out(norms_sq.width(), norms_sq.height());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(norms_sq[i] > 0.0)) throw domain_error("rho_map: zero local kernel norm");
        out[i] = lambda / norms_sq[i];
    }
    return out;
}

/**
 * Exact local kernel B_i w at pixel (sx, sy) under the dense projective model, as a K x K
 * array centered on the site. Mass that would land outside the K x K window is dropped.
 */
inline std::vector<double> exact_local_kernel(const PoseGrid& grid, const std::vector<double>& w, int width,
                                              int height, int sx, int sy, int kernel_size) {
    if (w.size() != grid.size()) throw domain_error("exact_local_kernel: weight/pose count mismatch");
    const int rad = kernel_size / 2;
    std::vector<double> k(static_cast<std::size_t>(kernel_size) * kernel_size, 0.0);
    for (std::size_t j = 0; j < grid.size(); ++j) {
        if (w[j] == 0.0) continue;
        const Point2 q = PoseTransform(grid.poses[j], width, height).forward(sx, sy);
        for (const auto& t : splat_offset(q.x - sx, q.y - sy)) {
            if (std::abs(t.dx) > rad || std::abs(t.dy) > rad) continue;
            k[static_cast<std::size_t>(t.dy + rad) * kernel_size + (t.dx + rad)] += w[j] * t.weight;
        }
    }
    return k;
}

}  // namespace nubd
