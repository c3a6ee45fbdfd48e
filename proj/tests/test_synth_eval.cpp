#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "nubd/rng.hpp"
#include "nubd/synth.hpp"
#include "oracles.hpp"

using namespace nubd;

namespace {

PoseGrid shift_grid(int n, double max_shift) {
    PoseGridSpec gs;
    gs.max_rotation = 0.0;
    gs.max_shift = max_shift;
    return build_pose_grid(gs, n, n);
}

IntensityImage shifted(const IntensityImage& img, int dx, int dy) {
    IntensityImage out = img;
    for (std::size_t c = 0; c < img.planes.size(); ++c)
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x) out.planes[c](x, y) = img.planes[c].clamped(x - dx, y - dy);
    return out;
}

IntensityImage plus_noise(const IntensityImage& img, double sigma, std::uint64_t seed) {
    IntensityImage out = img;
    auto rng = make_rng(seed, "test_noise");
    std::normal_distribution<double> nd(0.0, sigma);
    for (auto& p : out.planes)
        for (auto& v : p.values()) v += nd(rng);
    return out;
}

}  // namespace

TEST(Synthesize, IdentitySpecReproducesInput) {
    const int n = 48;
    const auto grid = build_pose_grid(fixture::grid_spec(n, 1.0, 2, 2.0), n, n);
    const auto eff = build_eff(grid, n, n, EffSpec{24, 12, 0});
    IntensityImage sharp;
    for (std::uint64_t c = 0; c < 3; ++c) sharp.planes.push_back(oracle::random_plane(n, n, c, 0.0, 1.0));
    MotionSpec ms;
    ms.entries = {{Pose{}, 1.0}};
    const auto res = synthesize(sharp, ms, grid, eff);
    EXPECT_EQ(res.blurry, sharp);
    EXPECT_EQ(res.kernels.size(), eff.patches.size());
}

TEST(Synthesize, TranslationSpecMatchesDenseConvolution) {
    const int n = 40;
    const auto grid = shift_grid(n, 3.0);
    const auto eff = build_eff(grid, n, n, EffSpec{n, 0, 0});
    ASSERT_EQ(eff.patches.size(), 1u);
    const Plane sharp = oracle::test_scene(n, n, 9);
    MotionSpec ms;
    ms.entries = {{{0, -3, 1}, 0.1}, {{0, 0, 0}, 0.35}, {{0, 1, 2}, 0.25}, {{0, 2, -1}, 0.3}};
    const auto res = synthesize(IntensityImage(sharp), ms, grid, eff);
    const int k = 7;
    std::vector<double> kernel(static_cast<std::size_t>(k * k), 0.0);
    for (const auto& [p, wt] : ms.entries)
        kernel[static_cast<std::size_t>((static_cast<int>(p.ty) + 3) * k + static_cast<int>(p.tx) + 3)] += wt;
    EXPECT_LT(max_abs_diff(res.blurry.planes[0], oracle::dense_convolve(sharp, kernel, k)), 1e-8);
}

TEST(Synthesize, NoiseVarianceMatchesSigma) {
    const int n = 64;
    const auto grid = shift_grid(n, 1.0);
    const auto eff = build_eff(grid, n, n, EffSpec{32, 16, 0});
    const IntensityImage sharp(Plane(n, n, 0.5));
    const double sigma = 0.03;
    double acc = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        MotionSpec ms;
        ms.entries = {{Pose{}, 1.0}};
        ms.noise_sigma = sigma;
        ms.seed = seed;
        const auto res = synthesize(sharp, ms, grid, eff);
        acc += squared_norm(res.blurry.planes[0] - sharp.planes[0]) / (n * n);
    }
    EXPECT_NEAR(acc / 20.0, sigma * sigma, 0.05 * sigma * sigma);
}

TEST(Synthesize, SameSeedSameNoise) {
    const int n = 32;
    const auto grid = shift_grid(n, 1.0);
    const auto eff = build_eff(grid, n, n, EffSpec{16, 8, 0});
    const IntensityImage sharp(oracle::test_scene(n, n, 2));
    MotionSpec ms;
    ms.entries = {{{0, 1, 0}, 0.5}, {Pose{}, 0.5}};
    ms.noise_sigma = 0.01;
    ms.seed = 17;
    EXPECT_EQ(synthesize(sharp, ms, grid, eff).blurry, synthesize(sharp, ms, grid, eff).blurry);
    ms.seed = 18;
    EXPECT_NE(synthesize(sharp, ms, grid, eff).blurry, synthesize(sharp, MotionSpec{ms.entries, 0.01, 17}, grid, eff).blurry);
}

TEST(Synthesize, RejectsInvalidSpecs) {
    const int n = 32;
    const auto grid = shift_grid(n, 2.0);
    const auto eff = build_eff(grid, n, n, EffSpec{16, 8, 0});
    const IntensityImage sharp(Plane(n, n, 0.5));
    MotionSpec ms;
    ms.entries = {{Pose{}, 0.6}, {{0, 1, 0}, 0.3}};
    EXPECT_THROW(synthesize(sharp, ms, grid, eff), domain_error);
    ms.entries = {{Pose{}, 1.2}, {{0, 1, 0}, -0.2}};
    EXPECT_THROW(synthesize(sharp, ms, grid, eff), domain_error);
    // Half a step off the lattice snaps; more than half is an error.
    ms.entries = {{{0, 0.5, 0}, 1.0}};
    EXPECT_NO_THROW(synthesize(sharp, ms, grid, eff));
    ms.entries = {{{0, 2.6, 0}, 1.0}};
    EXPECT_THROW(synthesize(sharp, ms, grid, eff), domain_error);
    ms.entries = {{{0, -1.2, 0.4}, 1.0}};
    EXPECT_NO_THROW(synthesize(sharp, ms, grid, eff));
}

TEST(ErrorRatio, Examples) {
    const int n = 48;
    const IntensityImage sharp(oracle::test_scene(n, n, 4));
    const IntensityImage gt = plus_noise(sharp, 0.02, 1);
    EXPECT_DOUBLE_EQ(ssd_error_ratio(gt, gt, sharp, 4), 1.0);
    EXPECT_EQ(ssd_error_ratio(sharp, gt, sharp, 4), 0.0);
    for (std::uint64_t seed = 2; seed < 7; ++seed) EXPECT_GT(ssd_error_ratio(plus_noise(gt, 0.01, seed), gt, sharp, 4), 1.0);
    EXPECT_THROW(ssd_error_ratio(gt, sharp, sharp, 4), domain_error);
}

TEST(ErrorRatio, InvariantToCommonGlobalShift) {
    const int n = 48;
    const IntensityImage sharp(oracle::test_scene(n, n, 5));
    const IntensityImage gt = plus_noise(sharp, 0.02, 3);
    const IntensityImage est = plus_noise(gt, 0.02, 4);
    const double base = ssd_error_ratio(est, gt, sharp, 6);
    for (auto [dx, dy] : {std::pair{1, 0}, std::pair{-2, 1}, std::pair{0, 2}})
        EXPECT_NEAR(ssd_error_ratio(shifted(est, dx, dy), shifted(gt, dx, dy), sharp, 6), base, 1e-12 * base);
}

TEST(KernelCorrelation, Examples) {
    const std::vector<double> gt{0.5, 0.3, 0.2};
    EXPECT_NEAR(kernel_correlation(gt, gt), 1.0, 1e-15);
    EXPECT_EQ(kernel_correlation({1.0, 0.0, 0.0}, {0.0, 0.4, 0.6}), 0.0);
    // gt plus 10% mass spread uniformly: (16, 10, 7)/30 against (15, 9, 6)/30.
    const std::vector<double> est{0.5 + 0.1 / 3, 0.3 + 0.1 / 3, 0.2 + 0.1 / 3};
    EXPECT_NEAR(kernel_correlation(est, gt), 372.0 / std::sqrt(405.0 * 342.0), 1e-12);
    EXPECT_THROW(kernel_correlation({0.0, 0.0}, {1.0, 0.0}), domain_error);
    EXPECT_THROW(kernel_correlation({1.0}, {1.0, 0.0}), domain_error);
}

TEST(KernelCorrelation, ProjectOntoCommonGrid) {
    const auto coarse = shift_grid(32, 1.0);
    const auto fine = shift_grid(32, 2.0);
    std::vector<double> w(fine.size(), 0.0);
    w[fine.nearest(Pose{0, 2, 0}).first] = 0.7;
    w[fine.nearest(Pose{}).first] = 0.3;
    const auto p = project_weights(w, fine, coarse);
    EXPECT_DOUBLE_EQ(p[coarse.nearest(Pose{0, 1, 0}).first], 0.7);
    EXPECT_DOUBLE_EQ(p[coarse.nearest(Pose{}).first], 0.3);
}

TEST(CumulativeHistogram, Examples) {
    EXPECT_EQ(cumulative_histogram({1, 1, 1, 1}, {1.5, 2, 3}), (std::vector<double>{1, 1, 1}));
    EXPECT_NEAR(cumulative_histogram({1, 2, 3}, {2})[0], 2.0 / 3.0, 1e-15);
    EXPECT_THROW(cumulative_histogram({}, {1}), domain_error);
    auto rng = make_rng(8, "hist");
    std::lognormal_distribution<double> ld(0.5, 0.6);
    std::vector<double> ratios(200);
    for (auto& r : ratios) r = ld(rng);
    std::vector<double> edges;
    for (double e = 0.5; e <= 6.0; e += 0.25) edges.push_back(e);
    const auto h = cumulative_histogram(ratios, edges);
    for (std::size_t i = 1; i < h.size(); ++i) EXPECT_GE(h[i], h[i - 1]);
    for (double v : h) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
}

TEST(Psnr, Values) {
    const Plane a(10, 10, 0.5);
    Plane b = a;
    for (auto& v : b.values()) v += 0.1;
    EXPECT_NEAR(psnr(IntensityImage(a), IntensityImage(b)), 20.0, 1e-9);
    EXPECT_TRUE(std::isinf(psnr(IntensityImage(a), IntensityImage(a))));
}
