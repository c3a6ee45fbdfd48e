#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "nubd/eff.hpp"
#include "nubd/pose.hpp"
#include "nubd/rng.hpp"
#include "oracles.hpp"

using namespace nubd;

namespace {

PoseGrid translation_grid(int max_shift) {
    PoseGridSpec s;
    s.max_rotation = 0.0;
    s.max_shift = max_shift;
    return build_pose_grid(s, 32, 32);
}

PoseGrid mixed_grid(int w, int h, double max_rot_steps, int max_shift) {
    PoseGridSpec s;
    s.rotation_step = auto_rotation_step(w, h);
    s.max_rotation = max_rot_steps * s.rotation_step;
    s.max_shift = max_shift;
    return build_pose_grid(s, w, h);
}

std::vector<double> random_simplex(std::size_t n, Rng& rng) {
    std::exponential_distribution<double> e(1.0);
    std::vector<double> w(n);
    for (auto& v : w) v = e(rng);
    const double s = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto& v : w) v /= s;
    return w;
}

std::vector<double> unit(std::size_t n, std::size_t j) {
    std::vector<double> w(n, 0.0);
    w[j] = 1.0;
    return w;
}

// Translation kernel of weights on a translation grid, in oracle layout.
std::vector<double> translation_kernel(const PoseGrid& g, const std::vector<double>& w, int ksize) {
    const int r = ksize / 2;
    std::vector<double> k(static_cast<std::size_t>(ksize) * ksize, 0.0);
    for (std::size_t j = 0; j < g.size(); ++j) {
        const int tx = static_cast<int>(std::lround(g.poses[j].tx)), ty = static_cast<int>(std::lround(g.poses[j].ty));
        k[static_cast<std::size_t>((ty + r) * ksize + tx + r)] += w[j];
    }
    return k;
}

}  // namespace

TEST(PoseGrid, DegenerateRanges) {
    PoseGridSpec s;
    s.max_rotation = 0.0;
    s.max_shift = 1.0;
    const auto g = build_pose_grid(s, 64, 64);
    EXPECT_EQ(g.size(), 9u);
    for (const auto& p : g.poses) EXPECT_EQ(p.theta, 0.0);
    s.max_shift = 0.0;
    const auto id = build_pose_grid(s, 64, 64);
    ASSERT_EQ(id.size(), 1u);
    EXPECT_EQ(id.poses[0], Pose{});
}

TEST(PoseGrid, AutoRotationStepBoundedByArc) {
    PoseGridSpec s;
    s.max_rotation = 0.01;
    s.max_shift = 0.0;
    const auto g = build_pose_grid(s, 143, 143);  // corner radius ~100.4 px
    EXPECT_LE(g.rotation_step, 0.01);
    EXPECT_LE(g.rotation_step * corner_radius(143, 143), 1.0 + 1e-12);
    EXPECT_GE(g.size(), 3u);
}

TEST(PoseGrid, CapIsEnforced) {
    PoseGridSpec s;
    s.max_shift = 20.0;
    s.max_poses = 100;
    try {
        build_pose_grid(s, 64, 64);
        FAIL() << "expected cap error";
    } catch (const domain_error& e) {
        EXPECT_NE(std::string(e.what()).find("100"), std::string::npos);
    }
}

TEST(Warp, IntegerTranslationIsClampedShift) {
    const Plane x = oracle::random_plane(12, 10, 1);
    const Plane y = warp(x, Pose{0.0, 2.0, -1.0});
    for (int py = 0; py < 10; ++py)
        for (int px = 0; px < 12; ++px) EXPECT_NEAR(y(px, py), x.clamped(px - 2, py + 1), 1e-14);
    EXPECT_EQ(warp(x, Pose{}), x);
}

TEST(Eff, WindowsPartitionUnity) {
    const auto g = mixed_grid(70, 50, 1, 1);
    const auto eff = build_eff(g, 70, 50, {24, 10, 0});
    Plane total(70, 50);
    for (const auto& p : eff.patches)
        for (int y = p.y0; y < p.y1; ++y)
            for (int x = p.x0; x < p.x1; ++x) total(x, y) += p.window_at(x, y);
    for (double v : total.values()) EXPECT_NEAR(v, 1.0, 1e-12);
    EXPECT_GT(eff.patches.size(), 4u);
}

TEST(Eff, IdentityGridHasCenteredDelta) {
    const auto g = translation_grid(0);
    const auto eff = build_eff(g, 32, 32, {16, 8, 0});
    for (std::size_t r = 0; r < eff.patches.size(); ++r) {
        const auto k = patch_kernel(eff, r, {1.0});
        for (std::size_t i = 0; i < k.size(); ++i) EXPECT_EQ(k[i], i == eff.kernel_index(0, 0) ? 1.0 : 0.0);
    }
}

TEST(Eff, KernelTooSmallNamesPose) {
    const auto g = translation_grid(3);
    try {
        build_eff(g, 32, 32, {32, 0, 3});
        FAIL() << "expected error";
    } catch (const domain_error& e) {
        EXPECT_NE(std::string(e.what()).find("pose"), std::string::npos);
    }
}

TEST(Eff, BasisColumnMass) {
    const auto g = mixed_grid(64, 64, 3, 2);
    const auto eff = build_eff(g, 64, 64, {32, 16, 0});
    for (std::size_t r = 0; r < eff.patches.size(); ++r) {
        const Eigen::MatrixXd a = basis_matrix(eff, r);
        EXPECT_GE(a.minCoeff(), 0.0);
        for (Eigen::Index j = 0; j < a.cols(); ++j) EXPECT_NEAR(a.col(j).sum(), 1.0, 1e-6);
    }
}

TEST(ApplyBlur, IdentityPose) {
    const auto eff = build_eff(translation_grid(0), 32, 32, {16, 8, 0});
    const Plane x = oracle::random_plane(32, 32, 3);
    EXPECT_LT(max_abs_diff(apply_blur(x, {1.0}, eff), x), 1e-15);
    EXPECT_LT(max_abs_diff(apply_blur_adjoint(x, {1.0}, eff), x), 1e-15);
}

TEST(ApplyBlur, TranslationMatchesDenseConvolution) {
    const auto g = translation_grid(3);
    auto rng = make_rng(5, "conv");
    const Plane x = oracle::random_plane(32, 32, 4);
    for (EffSpec spec : {EffSpec{32, 0, 0}, EffSpec{16, 8, 0}, EffSpec{12, 5, 9}}) {
        const auto eff = build_eff(g, 32, 32, spec);
        const auto w = random_simplex(g.size(), rng);
        const auto k = translation_kernel(g, w, eff.kernel_size);
        const Plane ref = oracle::dense_convolve(x, k, eff.kernel_size);
        EXPECT_LT(max_abs_diff(apply_blur(x, w, eff), ref), 1e-8);
        // The dense PMP model agrees as well for integer translations.
        EXPECT_LT(max_abs_diff(blur_dense(x, g, w), ref), 1e-12);
    }
}

TEST(ApplyBlur, AdjointOfTranslationIsDenseCorrelation) {
    const auto g = translation_grid(2);
    auto rng = make_rng(6, "corr");
    const auto eff = build_eff(g, 32, 32, {32, 0, 0});
    const auto w = random_simplex(g.size(), rng);
    const auto k = translation_kernel(g, w, eff.kernel_size);
    const Eigen::MatrixXd hm = oracle::operator_matrix(
        [&](const Plane& v) { return oracle::dense_convolve(v, k, eff.kernel_size); }, 32, 32);
    const Plane r = oracle::random_plane(32, 32, 7, -1.0, 1.0);
    const Eigen::VectorXd ref = hm.transpose() * Eigen::Map<const Eigen::VectorXd>(r.data(), 32 * 32);
    const Plane got = apply_blur_adjoint(r, w, eff);
    for (int i = 0; i < 32 * 32; ++i) EXPECT_NEAR(got[static_cast<std::size_t>(i)], ref(i), 1e-8);
}

TEST(ApplyBlur, AdjointIdentityRandomTrials) {
    const auto g = mixed_grid(32, 32, 2, 2);
    ASSERT_GE(g.size(), 50u);
    const auto eff = build_eff(g, 32, 32, {16, 8, 0});
    auto rng = make_rng(8, "adjoint");
    for (int t = 0; t < 100; ++t) {
        const auto w = random_simplex(g.size(), rng);
        const Plane x = oracle::random_plane(32, 32, 100 + t, -1.0, 1.0);
        const Plane r = oracle::random_plane(32, 32, 300 + t, -1.0, 1.0);
        const double lhs = dot(apply_blur(x, w, eff), r);
        const double rhs = dot(x, apply_blur_adjoint(r, w, eff));
        EXPECT_LT(std::abs(lhs - rhs) / std::sqrt(squared_norm(x) * squared_norm(r)), 1e-6);
    }
}

TEST(ApplyBlur, Bilinear) {
    const auto g = mixed_grid(32, 32, 1, 1);
    const auto eff = build_eff(g, 32, 32, {16, 8, 0});
    auto rng = make_rng(9, "bilinear");
    const auto w1 = random_simplex(g.size(), rng), w2 = random_simplex(g.size(), rng);
    const Plane x1 = oracle::random_plane(32, 32, 10), x2 = oracle::random_plane(32, 32, 11);
    Plane xs = scaled(x1, 2.0);
    axpy(-0.5, x2, xs);
    Plane lin = scaled(apply_blur(x1, w1, eff), 2.0);
    axpy(-0.5, apply_blur(x2, w1, eff), lin);
    EXPECT_LT(max_abs_diff(apply_blur(xs, w1, eff), lin), 1e-10);
    std::vector<double> ws(g.size());
    for (std::size_t j = 0; j < ws.size(); ++j) ws[j] = 3.0 * w1[j] + 0.25 * w2[j];
    Plane linw = scaled(apply_blur(x1, w1, eff), 3.0);
    axpy(0.25, apply_blur(x1, w2, eff), linw);
    EXPECT_LT(max_abs_diff(apply_blur(x1, ws, eff), linw), 1e-10);
}

TEST(ApplyBlur, ColumnExtraction) {
    // Column i of H, read around i, equals sum_r window_r(i) A_r w.
    const auto g = mixed_grid(16, 16, 2, 1);
    const auto eff = build_eff(g, 16, 16, {8, 4, 0});
    auto rng = make_rng(12, "column");
    const auto w = random_simplex(g.size(), rng);
    const int k = eff.kernel_size, rad = eff.radius;
    for (int sy = rad; sy < 16 - rad; ++sy)
        for (int sx = rad; sx < 16 - rad; ++sx) {
            Plane delta(16, 16);
            delta(sx, sy) = 1.0;
            const Plane col = apply_blur(delta, w, eff);
            std::vector<double> expect(static_cast<std::size_t>(k) * k, 0.0);
            for (std::size_t r = 0; r < eff.patches.size(); ++r) {
                const auto& p = eff.patches[r];
                if (!p.contains(sx, sy)) continue;
                const auto kr = patch_kernel(eff, r, w);
                for (std::size_t i = 0; i < kr.size(); ++i) expect[i] += p.window_at(sx, sy) * kr[i];
            }
            for (int py = 0; py < 16; ++py)
                for (int px = 0; px < 16; ++px) {
                    const int dx = px - sx, dy = py - sy;
                    if (std::abs(dx) <= rad && std::abs(dy) <= rad)
                        EXPECT_NEAR(col(px, py), expect[eff.kernel_index(dx, dy)], 1e-12);
                    else
                        EXPECT_EQ(col(px, py), 0.0);
                }
        }
}

TEST(ApplyBlur, DimensionMismatchThrows) {
    const auto eff = build_eff(translation_grid(1), 32, 32, {16, 8, 0});
    EXPECT_THROW(apply_blur(Plane(31, 32), std::vector<double>(9, 0.1), eff), domain_error);
    EXPECT_THROW(apply_blur(Plane(32, 32), std::vector<double>(8, 0.1), eff), domain_error);
    EXPECT_THROW(apply_blur_adjoint(Plane(32, 33), std::vector<double>(9, 0.1), eff), domain_error);
}

TEST(DTranspose, MatchesForwardModelAndLinearity) {
    const auto g = mixed_grid(24, 24, 2, 1);
    const auto eff = build_eff(g, 24, 24, {12, 6, 0});
    const Plane x = oracle::random_plane(24, 24, 20, -1.0, 1.0);
    const Plane r1 = oracle::random_plane(24, 24, 21, -1.0, 1.0), r2 = oracle::random_plane(24, 24, 22, -1.0, 1.0);
    const auto v1 = apply_D_transpose(r1, x, eff), v2 = apply_D_transpose(r2, x, eff);
    for (std::size_t j = 0; j < g.size(); ++j)
        EXPECT_NEAR(v1[j], dot(apply_blur(x, unit(g.size(), j), eff), r1), 1e-10);
    Plane rc = scaled(r1, 1.5);
    axpy(-2.0, r2, rc);
    const auto vc = apply_D_transpose(rc, x, eff);
    for (std::size_t j = 0; j < g.size(); ++j) EXPECT_NEAR(vc[j], 1.5 * v1[j] - 2.0 * v2[j], 1e-10);
}

TEST(DTranspose, IdentityEntryAndPeak) {
    const auto g = translation_grid(2);
    const auto eff = build_eff(g, 32, 32, {16, 8, 0});
    const Plane x = oracle::random_plane(32, 32, 23, -1.0, 1.0);
    const std::size_t id = g.nearest(Pose{}).first;
    const auto v = apply_D_transpose(x, x, eff);
    EXPECT_NEAR(v[id], squared_norm(x), 1e-10);
    for (std::size_t j : {std::size_t{0}, std::size_t{7}, g.size() - 1}) {
        const Plane r = warp(x, g.poses[j]);
        const auto vj = apply_D_transpose(r, x, eff);
        EXPECT_EQ(static_cast<std::size_t>(std::max_element(vj.begin(), vj.end()) - vj.begin()), j);
    }
}

TEST(DTranspose, NormalEquationsMatchExplicitColumns) {
    const auto g = mixed_grid(20, 20, 1, 1);
    const auto eff = build_eff(g, 20, 20, {10, 4, 0});
    GradientImage x(20, 20), y(20, 20);
    x[0] = oracle::random_plane(20, 20, 30, -1, 1);
    x[1] = oracle::random_plane(20, 20, 31, -1, 1);
    y[0] = oracle::random_plane(20, 20, 32, -1, 1);
    y[1] = oracle::random_plane(20, 20, 33, -1, 1);
    std::vector<GradientImage> cols;
    for (std::size_t j = 0; j < g.size(); ++j) cols.push_back(apply_blur(x, unit(g.size(), j), eff));
    for (std::size_t budget : {std::size_t{1} << 22, std::size_t{2000}}) {
        const auto ne = pose_normal_equations(x, y, eff, budget);
        for (std::size_t a = 0; a < g.size(); ++a) {
            EXPECT_NEAR(ne.rhs(static_cast<Eigen::Index>(a)), dot(cols[a], y), 1e-9);
            for (std::size_t b = 0; b < g.size(); ++b)
                EXPECT_NEAR(ne.gram(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)), dot(cols[a], cols[b]), 1e-9);
        }
        EXPECT_NEAR(ne.y_sq, squared_norm(y), 1e-9);
    }
    const auto dt = apply_D_transpose(y, x, eff, g);
    for (std::size_t j = 0; j < g.size(); ++j) EXPECT_NEAR(dt[j], dot(cols[j], y), 1e-9);
}

TEST(LocalNorms, TranslationExamples) {
    const auto g = translation_grid(2);
    const auto eff = build_eff(g, 32, 32, {16, 8, 0});
    auto rng = make_rng(40, "norms");
    const auto w = random_simplex(g.size(), rng);
    double wsq = 0.0;
    for (double v : w) wsq += v * v;
    const Plane n = local_kernel_norms(w, eff);
    for (double v : n.values()) EXPECT_NEAR(v, wsq, 1e-12);
    const std::vector<double> uniform(g.size(), 1.0 / static_cast<double>(g.size()));
    const Plane nu = local_kernel_norms(uniform, eff);
    for (double v : nu.values()) EXPECT_NEAR(v, 1.0 / static_cast<double>(g.size()), 1e-12);
    const Plane nd = local_kernel_norms(unit(g.size(), 3), eff);
    for (double v : nd.values()) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(LocalNorms, SimplexBounds) {
    const auto g = mixed_grid(48, 48, 3, 2);
    const auto eff = build_eff(g, 48, 48, {24, 12, 0});
    const double l = static_cast<double>(eff.kernel_size * eff.kernel_size);
    auto rng = make_rng(41, "bounds");
    for (int t = 0; t < 1000; ++t) {
        const auto n = local_kernel_norms(random_simplex(g.size(), rng), eff);
        const auto [lo, hi] = std::minmax_element(n.values().begin(), n.values().end());
        EXPECT_GE(*lo, 1.0 / l - 1e-9);
        EXPECT_LE(*hi, 1.0 + 1e-9);
    }
}

// Per-pixel dense norms alias with the sub-pixel phase of each splat, so the patch-interpolated
// field is compared on its interior mean relative error; the worst pixel is recorded.
TEST(LocalNorms, CloseToDensePerPixelNorms) {
    const int n = 48;
    const auto g = mixed_grid(n, n, 3, 2);
    std::vector<double> path(g.size(), 0.0);
    for (std::size_t j = 0; j < g.size(); ++j) {
        const auto& p = g.poses[j];
        if (std::abs(p.ty) < 0.5 && std::abs(p.tx - p.theta / g.rotation_step) < 0.5) path[j] = 1.0;
    }
    const double s = std::accumulate(path.begin(), path.end(), 0.0);
    ASSERT_GT(s, 2.0);
    for (auto& v : path) v /= s;
    auto rng = make_rng(42, "dense_norms");
    const auto spread = random_simplex(g.size(), rng);
    struct Case {
        const std::vector<double>* w;
        int patch;
    };
    for (const Case c : {Case{&path, 8}, Case{&spread, 8}, Case{&spread, 16}}) {
        const auto eff = build_eff(g, n, n, {c.patch, c.patch / 2, 0});
        const Plane approx = local_kernel_norms(*c.w, eff);
        double worst = 0.0, mean = 0.0;
        int count = 0;
        for (int y = eff.radius; y < n - eff.radius; ++y)
            for (int x = eff.radius; x < n - eff.radius; ++x) {
                const auto k = exact_local_kernel(g, *c.w, n, n, x, y, eff.kernel_size);
                double e = 0.0;
                for (double v : k) e += v * v;
                const double rel = std::abs(approx(x, y) - e) / e;
                worst = std::max(worst, rel);
                mean += rel;
                ++count;
            }
        mean /= count;
        RecordProperty("patch" + std::to_string(c.patch) + "_worst", std::to_string(worst));
        EXPECT_LT(mean, 0.05) << "patch " << c.patch << " worst pixel " << worst;
    }
}

TEST(RhoMap, Examples) {
    const auto gt = translation_grid(2);
    const auto eff_t = build_eff(gt, 32, 32, {16, 8, 0});
    auto rng = make_rng(50, "rho");
    const auto w = random_simplex(gt.size(), rng);
    const Plane rho = rho_map(local_kernel_norms(w, eff_t), 0.01);
    const auto [lo, hi] = std::minmax_element(rho.values().begin(), rho.values().end());
    EXPECT_NEAR(*hi / *lo, 1.0, 1e-12);
    const Plane rho2 = rho_map(local_kernel_norms(w, eff_t), 0.02);
    for (std::size_t i = 0; i < rho.size(); ++i) EXPECT_NEAR(rho2[i], 2.0 * rho[i], 1e-15);
    EXPECT_THROW(rho_map(local_kernel_norms(w, eff_t), 0.0), domain_error);
    EXPECT_THROW(rho_map(Plane(4, 4), 1.0), domain_error);

    // Rotation about the center: smallest rho at the center.
    PoseGridSpec s;
    s.rotation_step = auto_rotation_step(64, 64);
    s.max_rotation = 4 * s.rotation_step;
    s.max_shift = 0.0;
    const auto gr = build_pose_grid(s, 64, 64);
    const auto eff_r = build_eff(gr, 64, 64, {16, 8, 0});
    const std::vector<double> wr(gr.size(), 1.0 / static_cast<double>(gr.size()));
    const Plane rr = rho_map(local_kernel_norms(wr, eff_r), 0.01);
    const double center = rr(32, 32);
    EXPECT_LE(center, 1.05 * *std::min_element(rr.values().begin(), rr.values().end()));
    EXPECT_LT(center, rr(4, 4));
    EXPECT_LT(center, rr(59, 32));
}

TEST(ActiveSet, NothingBelowThreshold) {
    const auto g = translation_grid(1);
    const std::vector<double> w(g.size(), 1.0 / 9.0);
    const auto r = active_set_update(w, g, 0.02, 1.0, 1);
    EXPECT_EQ(r.removed, 0u);
    EXPECT_EQ(r.weights, w);
    EXPECT_EQ(r.grid.poses, g.poses);
}

TEST(ActiveSet, PrunesAndResamplesNearSurvivor) {
    const auto g = translation_grid(3);
    std::vector<double> w(g.size(), 0.0);
    const std::size_t center = g.nearest(Pose{}).first;
    w[center] = 1.0;
    // Eight weak poses, the remaining 40 also zero.
    const auto r = active_set_update(w, g, 0.02, 1.0, 77);
    EXPECT_EQ(r.removed, g.size() - 1);
    EXPECT_LE(r.added, r.removed);
    EXPECT_LE(r.grid.size(), g.size());
    for (std::size_t j = 1; j < r.grid.size(); ++j) {
        EXPECT_EQ(r.weights[j], 0.0);
        EXPECT_LE(g.lattice_distance(r.grid.poses[j], Pose{}), 4.0 + 1e-9);
    }
    const auto again = active_set_update(w, g, 0.02, 1.0, 77);
    EXPECT_EQ(again.grid.poses, r.grid.poses);
    EXPECT_THROW(active_set_update(std::vector<double>(g.size(), 0.0), g, 0.02, 1.0, 1), domain_error);
}

TEST(ActiveSet, EightBelowThreshold) {
    const auto g = mixed_grid(64, 64, 1, 1);
    std::vector<double> w(g.size(), 0.2);
    for (std::size_t j = 0; j < 8; ++j) w[j] = 1e-4;
    const auto r = active_set_update(w, g, 0.02, 1.0, 5);
    EXPECT_EQ(r.removed, 8u);
    EXPECT_LE(r.added, 8u);
    for (std::size_t j = g.size() - 8; j < r.grid.size(); ++j) {
        double nearest = INFINITY;
        for (std::size_t k = 0; k < g.size() - 8; ++k) nearest = std::min(nearest, g.lattice_distance(r.grid.poses[j], r.grid.poses[k]));
        EXPECT_LE(nearest, 5.0);
    }
}
