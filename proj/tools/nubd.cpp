// nubd: non-uniform blind deblurring from the command line.
//
//   nubd deblur  --in blurry.png --out sharp.png [--artifacts DIR] [--trace trace.csv]
//   nubd synth   --in sharp.png --motion poses.tsv --out blurry.png [--sigma 0.01]
//   nubd eval    --cases DIR --out-dir DIR
//   nubd penalty --rho 0.5,1,10 --z 0:0.01:5 [--out curves.csv]
//
// Exit codes: 0 success, 1 error, 2 finished with warnings.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nubd/config.hpp"
#include "nubd/eff.hpp"
#include "nubd/io.hpp"
#include "nubd/parallel.hpp"
#include "nubd/penalty.hpp"
#include "nubd/pipeline.hpp"
#include "nubd/pose.hpp"
#include "nubd/solver.hpp"
#include "nubd/synth.hpp"

#ifndef NUBD_VERSION
#define NUBD_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace nubd;

namespace {

constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kWarn = 2;

// Options shared by the subcommands that run the estimator.
struct CommonOptions {
    std::string config_file;
    std::vector<std::string> sets;
    bool dump = false;
    double max_shift = -1.0;
    double max_rot_deg = -1.0;
    int levels = -1;
    int iters = -1;
    long long seed = -1;
    int threads = -1;
    int patch_size = -1;
    int overlap = -1;
    int kernel_size = -1;
};

void add_common(CLI::App* app, CommonOptions& o) {
    app->add_option("--config", o.config_file, "key = value configuration file");
    app->add_option("--set", o.sets, "override a config key (KEY=VALUE), repeatable");
    app->add_flag("--dump-config", o.dump, "print the effective configuration and exit");
    app->add_option("--max-shift", o.max_shift, "largest translation in pixels");
    app->add_option("--max-rot-deg", o.max_rot_deg, "largest in-plane rotation in degrees");
    app->add_option("--levels", o.levels, "pyramid levels (0 = automatic)");
    app->add_option("--iters", o.iters, "outer iterations per level");
    app->add_option("--seed", o.seed, "seed for all randomness");
    app->add_option("--threads", o.threads, "worker threads (1 is the determinism reference)");
    app->add_option("--patch-size", o.patch_size, "patch size in pixels");
    app->add_option("--overlap", o.overlap, "patch overlap in pixels");
    app->add_option("--kernel-size", o.kernel_size, "local kernel extent (odd, 0 = automatic)");
}

RunConfig resolve_config(const CommonOptions& o, RunConfig cfg) {
    if (!o.config_file.empty()) cfg = parse_config(read_text(o.config_file), cfg, o.config_file);
    if (o.max_shift >= 0) cfg.max_shift = o.max_shift;
    if (o.max_rot_deg >= 0) cfg.max_rotation_deg = o.max_rot_deg;
    if (o.levels >= 0) cfg.solver.levels = o.levels;
    if (o.iters >= 0) cfg.solver.outer_iters_per_level = o.iters;
    if (o.seed >= 0) cfg.solver.seed = static_cast<std::uint64_t>(o.seed);
    if (o.threads >= 0) cfg.threads = o.threads;
    if (o.patch_size >= 0) cfg.patch.patch_size = o.patch_size;
    if (o.overlap >= 0) cfg.patch.overlap = o.overlap;
    if (o.kernel_size >= 0) cfg.patch.kernel_size = o.kernel_size;
    for (const auto& kv : o.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw domain_error("--set: expected KEY=VALUE, got '" + kv + "'");
        set_config_value(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
    }
    validate(cfg);
    set_thread_count(cfg.threads);
    return cfg;
}

std::string trace_csv(const std::vector<TraceEntry>& trace) {
    std::string s = "level,iter,bound,lambda,w_change\n";
    for (const auto& e : trace)
        s += std::to_string(e.level) + "," + std::to_string(e.iter) + "," + format_double(e.bound) + "," +
             format_double(e.lambda) + "," + format_double(e.w_change) + "\n";
    return s;
}

void print_warnings(const std::vector<std::string>& warnings) {
    constexpr std::size_t kShown = 10;
    for (std::size_t i = 0; i < warnings.size() && i < kShown; ++i) std::cerr << "warning: " << warnings[i] << "\n";
    if (warnings.size() > kShown) std::cerr << "warning: ... " << warnings.size() - kShown << " more\n";
}

fs::path artifact_dir(const RunConfig& cfg) {
    fs::path dir = cfg.artifacts.empty() ? fs::path(cfg.output).parent_path() : fs::path(cfg.artifacts);
    if (dir.empty()) dir = ".";
    fs::create_directories(dir);
    return dir;
}

struct Estimate {
    MultiscaleResult blur;
    NonblindResult deblurred;
    std::vector<std::string> warnings;  ///< non-convergence only
    std::vector<std::string> notes;
};

Estimate estimate(const IntensityImage& blurry, const RunConfig& cfg, bool log) {
    Estimate e;
    const PoseGrid grid = build_pose_grid(cfg.grid_spec(), blurry.width(), blurry.height());
    SolverConfig scfg = cfg.solver;
    if (log) scfg.log = &std::cerr;
    e.blur = run_multiscale(to_luma(blurry), grid, cfg.patch, scfg);
    for (const auto& w : e.blur.warnings) (w.rfind("build_pyramid", 0) == 0 ? e.notes : e.warnings).push_back(w);
    e.deblurred = nonblind_deconvolve(blurry, e.blur.w, e.blur.eff, e.blur.lambda, cfg.nonblind);
    if (!e.deblurred.converged()) e.warnings.push_back("non-blind CG did not reach its tolerance");
    return e;
}

int cmd_deblur(const RunConfig& cfg) {
    if (cfg.input.empty()) throw domain_error("input: --in is required");
    if (cfg.output.empty()) throw domain_error("output: --out is required");
    const IntensityImage blurry = read_image(cfg.input);
    Estimate e = estimate(blurry, cfg, true);
    const fs::path dir = artifact_dir(cfg);
    write_png(cfg.output, e.deblurred.image);
    write_text((dir / "poses.tsv").string(), format_poses(e.blur.grid, e.blur.w));
    write_png((dir / "kernels.png").string(), kernel_montage(e.blur.w, e.blur.eff));
    write_png((dir / "rho.png").string(), normalize_range(e.blur.rho));
    write_text((dir / "rho.csv").string(), format_rho_csv(e.blur.rho));
    if (!cfg.trace.empty()) write_text(cfg.trace, trace_csv(e.blur.trace));
    std::string report;
    report += "lambda=" + format_double(e.blur.lambda) + "\n";
    report += "levels=" + std::to_string(e.blur.levels) + "\n";
    report += "iterations=" + std::to_string(e.blur.trace.size()) + "\n";
    report += "poses=" + std::to_string(e.blur.grid.size()) + "\n";
    report += "warnings=" + std::to_string(e.warnings.size()) + "\n";
    write_text((dir / "report.txt").string(), report);
    for (const auto& n : e.notes) std::cerr << "note: " << n << "\n";
    print_warnings(e.warnings);
    return e.warnings.empty() ? kOk : kWarn;
}

int cmd_synth(const RunConfig& cfg, const std::string& motion_file, double sigma) {
    if (cfg.input.empty()) throw domain_error("input: --in is required");
    if (cfg.output.empty()) throw domain_error("output: --out is required");
    if (motion_file.empty()) throw domain_error("motion: --motion is required");
    const IntensityImage sharp = read_image(cfg.input);
    const PoseTable table = parse_poses(read_text(motion_file), motion_file);
    MotionSpec spec;
    for (std::size_t j = 0; j < table.poses.size(); ++j) spec.entries.push_back({table.poses[j], table.weights[j]});
    spec.noise_sigma = sigma;
    spec.seed = cfg.solver.seed;
    const PoseGrid grid = build_pose_grid(cfg.grid_spec(), sharp.width(), sharp.height());
    const EffDecomposition eff = build_eff(grid, sharp.width(), sharp.height(), cfg.patch);
    const SynthResult res = synthesize(sharp, spec, grid, eff);
    const fs::path dir = artifact_dir(cfg);
    write_png(cfg.output, res.blurry);
    write_text((dir / "gt_poses.tsv").string(), format_poses(grid, res.weights, true));
    write_png((dir / "gt_kernels.png").string(), kernel_montage(res.kernels, eff));
    return kOk;
}

std::vector<double> parse_list(const std::string& s, const std::string& what) {
    std::vector<double> out;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ',');) out.push_back(parse_double(tok, what));
    if (out.empty()) throw domain_error(what + ": empty list");
    return out;
}

// Grid built from the listed poses themselves; weights keep their order.
PoseGrid grid_from_table(const PoseTable& t, const PoseGrid& like) {
    PoseGrid g = like;
    g.poses = t.poses;
    return g;
}

int cmd_eval(const RunConfig& cfg, const std::string& cases_dir, const std::string& out_dir, const std::string& edges_arg) {
    if (cases_dir.empty()) throw domain_error("cases: --cases is required");
    if (out_dir.empty()) throw domain_error("out-dir: --out-dir is required");
    const std::vector<double> edges = parse_list(edges_arg, "edges");
    std::vector<fs::path> cases;
    if (!fs::is_directory(cases_dir)) throw io_error("cases: '" + cases_dir + "' is not a directory");
    for (const auto& entry : fs::directory_iterator(cases_dir))
        if (entry.is_directory()) cases.push_back(entry.path());
    std::sort(cases.begin(), cases.end());
    if (cases.empty()) throw domain_error("cases: no case directories in '" + cases_dir + "'");

    std::vector<std::string> warnings;
    std::vector<double> ratios;
    std::string ratios_csv = "case,ratio\n";
    std::string report;
    for (const auto& c : cases) {
        const std::string name = c.filename().string();
        for (const char* f : {"sharp.png", "blurry.png", "gt_poses.tsv"})
            if (!fs::exists(c / f)) throw io_error("case '" + name + "': missing " + f);
        const IntensityImage sharp = read_image((c / "sharp.png").string());
        const IntensityImage blurry = read_image((c / "blurry.png").string());
        if (sharp.width() != blurry.width() || sharp.height() != blurry.height() || sharp.num_planes() != blurry.num_planes())
            throw domain_error("case '" + name + "': sharp and blurry images differ in shape");
        const PoseGrid canonical = build_pose_grid(cfg.grid_spec(), sharp.width(), sharp.height());
        const PoseTable gt = parse_poses(read_text((c / "gt_poses.tsv").string()), (c / "gt_poses.tsv").string());
        const PoseGrid gt_grid = grid_from_table(gt, canonical);

        PoseGrid est_grid;
        std::vector<double> est_w;
        double lambda = cfg.eval_lambda;
        IntensityImage deblur_est;
        if (fs::exists(c / "est_poses.tsv")) {
            const PoseTable est = parse_poses(read_text((c / "est_poses.tsv").string()), (c / "est_poses.tsv").string());
            est_grid = grid_from_table(est, canonical);
            est_w = est.weights;
        } else {
            Estimate e = estimate(blurry, cfg, false);
            for (auto& w : e.warnings) warnings.push_back(name + ": " + w);
            est_grid = e.blur.grid;
            est_w = e.blur.w;
            lambda = e.blur.lambda;
            deblur_est = std::move(e.deblurred.image);
        }
        EffSpec spec = cfg.patch;
        spec.kernel_size = 0;
        const EffDecomposition gt_eff = build_eff(gt_grid, sharp.width(), sharp.height(), spec);
        const auto gt_nb = nonblind_deconvolve(blurry, gt.weights, gt_eff, lambda, cfg.nonblind);
        if (!gt_nb.converged()) warnings.push_back(name + ": non-blind CG (ground truth) did not reach its tolerance");
        if (deblur_est.empty()) {
            const EffDecomposition est_eff = build_eff(est_grid, sharp.width(), sharp.height(), spec);
            auto nb = nonblind_deconvolve(blurry, est_w, est_eff, lambda, cfg.nonblind);
            if (!nb.converged()) warnings.push_back(name + ": non-blind CG (estimate) did not reach its tolerance");
            deblur_est = std::move(nb.image);
        }
        const int border = gt_eff.kernel_size + 2;
        const double ratio = ssd_error_ratio(deblur_est, gt_nb.image, sharp, border, 2);
        ratios.push_back(ratio);
        ratios_csv += name + "," + format_double(ratio) + "\n";
        report += "case." + name + ".ratio=" + format_double(ratio) + "\n";
        report += "case." + name + ".kernel_correlation=" +
                  format_double(kernel_correlation(project_weights(est_w, est_grid, canonical),
                                                   project_weights(gt.weights, gt_grid, canonical))) + "\n";
        report += "case." + name + ".psnr_blurry=" + format_double(psnr(blurry, sharp, border)) + "\n";
        report += "case." + name + ".psnr_deblurred=" + format_double(psnr(deblur_est, sharp, border)) + "\n";
        report += "case." + name + ".psnr_deblurred_gt=" + format_double(psnr(gt_nb.image, sharp, border)) + "\n";
    }
    const auto fractions = cumulative_histogram(ratios, edges);
    std::string hist = "edge,fraction\n";
    for (std::size_t k = 0; k < edges.size(); ++k) hist += format_double(edges[k]) + "," + format_double(fractions[k]) + "\n";
    std::vector<double> sorted = ratios;
    std::sort(sorted.begin(), sorted.end());
    double mean = 0.0;
    for (double r : ratios) mean += r;
    mean /= static_cast<double>(ratios.size());
    const std::string summary = "cases=" + std::to_string(ratios.size()) + "\nmean_ratio=" + format_double(mean) +
                                "\nmax_ratio=" + format_double(sorted.back()) + "\n";
    fs::create_directories(out_dir);
    write_text((fs::path(out_dir) / "ratios.csv").string(), ratios_csv);
    write_text((fs::path(out_dir) / "cumhist.csv").string(), hist);
    write_text((fs::path(out_dir) / "report.txt").string(), summary + report);
    print_warnings(warnings);
    return warnings.empty() ? kOk : kWarn;
}

struct ZRange {
    double lo, step, hi;
};

ZRange parse_range(const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ':');) parts.push_back(tok);
    if (parts.size() != 3) throw domain_error("z: expected START:STEP:STOP, got '" + s + "'");
    ZRange r{parse_double(parts[0], "z"), parse_double(parts[1], "z"), parse_double(parts[2], "z")};
    if (!(r.step > 0.0) || r.hi < r.lo || r.lo < 0.0) throw domain_error("z: need 0 <= START <= STOP and STEP > 0");
    return r;
}

int cmd_penalty(const std::string& rho_arg, const std::string& z_arg, const std::string& out) {
    const std::vector<double> rhos = parse_list(rho_arg, "rho");
    for (double r : rhos)
        if (!(r > 0.0)) throw domain_error("rho: values must be > 0");
    const ZRange zr = parse_range(z_arg);
    const auto count = static_cast<long long>(std::floor((zr.hi - zr.lo) / zr.step + 1e-9)) + 1;
    std::string s = "z,rho,h,dh\n";
    for (double rho : rhos)
        for (long long k = 0; k < count; ++k) {
            const double z = zr.lo + static_cast<double>(k) * zr.step;
            s += format_double(z) + "," + format_double(rho) + "," + format_double(penalty::eval_h(z, rho)) + "," +
                 format_double(penalty::h_gradient(z, rho)) + "\n";
        }
    if (out.empty() || out == "-")
        std::cout << s;
    else
        write_text(out, s);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Non-uniform blind deblurring"};
    app.set_version_flag("--version", std::string("nubd ") + NUBD_VERSION);
    app.require_subcommand(1);

    CommonOptions deblur_opt, synth_opt, eval_opt;
    std::string in, out, artifacts, trace;
    auto* deblur = app.add_subcommand("deblur", "estimate the blur and deconvolve");
    add_common(deblur, deblur_opt);
    deblur->add_option("--in", in, "blurry image (PNG, PGM, PPM)");
    deblur->add_option("--out", out, "deblurred PNG");
    deblur->add_option("--artifacts", artifacts, "directory for poses.tsv, kernels.png, rho.png, rho.csv");
    deblur->add_option("--trace", trace, "per-iteration trace CSV");

    std::string motion;
    double sigma = 0.0;
    auto* synth = app.add_subcommand("synth", "blur a sharp image with known camera motion");
    add_common(synth, synth_opt);
    synth->add_option("--in", in, "sharp image");
    synth->add_option("--motion", motion, "poses.tsv with the ground-truth weights");
    synth->add_option("--out", out, "blurry PNG");
    synth->add_option("--sigma", sigma, "Gaussian noise std in intensity units");
    synth->add_option("--artifacts", artifacts, "directory for gt_poses.tsv and gt_kernels.png");

    std::string cases, out_dir, edges = "1,1.5,2,2.5,3,3.5,4,4.5,5";
    auto* eval = app.add_subcommand("eval", "error-ratio evaluation over a directory of cases");
    add_common(eval, eval_opt);
    eval->add_option("--cases", cases, "directory of cases (sharp.png, blurry.png, gt_poses.tsv[, est_poses.tsv])");
    eval->add_option("--out-dir", out_dir, "directory for ratios.csv, cumhist.csv, report.txt");
    eval->add_option("--edges", edges, "comma-separated histogram edges");

    std::string rho = "0.5,1,10", zrange = "0:0.01:5", curve_out;
    int penalty_threads = 1;
    auto* pen = app.add_subcommand("penalty", "export penalty curves h(z; rho) and dh/dz");
    pen->add_option("--rho", rho, "comma-separated rho values");
    pen->add_option("--z", zrange, "START:STEP:STOP");
    pen->add_option("--out", curve_out, "CSV path (default stdout)");
    pen->add_option("--threads", penalty_threads, "accepted for symmetry; unused");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kError;
    }

    try {
        auto with_io = [&](const CommonOptions& o) {
            RunConfig cfg = resolve_config(o, RunConfig{});
            if (!in.empty()) cfg.input = in;
            if (!out.empty()) cfg.output = out;
            if (!artifacts.empty()) cfg.artifacts = artifacts;
            if (!trace.empty()) cfg.trace = trace;
            return cfg;
        };
        if (deblur->parsed()) {
            RunConfig cfg = with_io(deblur_opt);
            if (deblur_opt.dump) {
                std::cout << dump_config(cfg);
                return kOk;
            }
            return cmd_deblur(cfg);
        }
        if (synth->parsed()) {
            RunConfig cfg = with_io(synth_opt);
            if (synth_opt.dump) {
                std::cout << dump_config(cfg);
                return kOk;
            }
            return cmd_synth(cfg, motion, sigma);
        }
        if (eval->parsed()) {
            RunConfig cfg = with_io(eval_opt);
            if (eval_opt.dump) {
                std::cout << dump_config(cfg);
                return kOk;
            }
            return cmd_eval(cfg, cases, out_dir, edges);
        }
        if (pen->parsed()) return cmd_penalty(rho, zrange, curve_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kError;
    }
    return kError;
}
