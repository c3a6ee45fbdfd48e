#pragma once

// Seeded synthetic deblurring problems shared by the suites and the acceptance binary.

#include <cstdint>
#include <utility>
#include <vector>

#include "nubd/eff.hpp"
#include "nubd/image.hpp"
#include "nubd/pipeline.hpp"
#include "nubd/pose.hpp"
#include "nubd/solver.hpp"
#include "nubd/synth.hpp"
#include "oracles.hpp"

namespace fixture {

struct Problem {
    nubd::Plane sharp;
    nubd::PoseGrid grid;
    nubd::EffDecomposition eff;
    nubd::SynthResult syn;
    nubd::GradientImage y;  ///< gradients of the blurry image
};

inline Problem make_problem(int size, std::uint64_t seed, const nubd::PoseGridSpec& gs,
                            const std::vector<std::pair<nubd::Pose, double>>& motion, double sigma,
                            const nubd::EffSpec& es = {}, double pixels_per_shape = 500.0) {
    Problem p;
    p.sharp = oracle::test_scene(size, size, seed, pixels_per_shape);
    p.grid = nubd::build_pose_grid(gs, size, size);
    p.eff = nubd::build_eff(p.grid, size, size, es);
    nubd::MotionSpec ms;
    ms.entries = motion;
    ms.noise_sigma = sigma;
    ms.seed = seed;
    p.syn = nubd::synthesize(nubd::IntensityImage(p.sharp), ms, p.grid, p.eff);
    p.y = nubd::to_gradient_domain(p.syn.blurry.planes[0]);
    return p;
}

/// Rotation in multiples of the one-pixel-arc step and translation in pixels.
inline nubd::PoseGridSpec grid_spec(int size, double step_multiple, int rotation_steps, double max_shift) {
    nubd::PoseGridSpec gs;
    gs.rotation_step = step_multiple * nubd::auto_rotation_step(size, size);
    gs.max_rotation = rotation_steps * gs.rotation_step;
    gs.max_shift = max_shift;
    gs.shift_step = 1.0;
    return gs;
}

/// 64x64, one rotation step either side, shifts to +-2 px, a 4-pose motion with 1% noise.
inline Problem small_problem(std::uint64_t seed, double sigma = 0.01) {
    const auto gs = grid_spec(64, 1.0, 1, 2.0);
    const double r = gs.rotation_step;
    return make_problem(64, seed, gs, {{{-r, -1, 0}, 0.25}, {{0, 0, 0}, 0.3}, {{0, 1, 0}, 0.25}, {{r, 1, 1}, 0.2}}, sigma,
                        nubd::EffSpec{32, 16, 0});
}

/**
 * End-to-end recovery case: 128x128 scene, rotation step of twice the one-pixel arc (+-2 steps),
 * shifts to +-2 px, five equally weighted poses whose translations average to zero, 1% noise.
 */
inline Problem recovery_problem(std::uint64_t seed) {
    const auto gs = grid_spec(128, 2.0, 2, 2.0);
    const double r = gs.rotation_step;
    return make_problem(128, seed, gs,
                        {{{-r, -1, -1}, 0.2}, {{0, -1, 0}, 0.2}, {{0, 0, 0}, 0.2}, {{r, 1, 0}, 0.2}, {{r, 1, 1}, 0.2}}, 0.01,
                        nubd::EffSpec{64, 32, 0}, 200.0);
}

inline nubd::SolverConfig recovery_config() {
    nubd::SolverConfig cfg;
    cfg.outer_iters_per_level = 100;
    return cfg;
}

}  // namespace fixture
