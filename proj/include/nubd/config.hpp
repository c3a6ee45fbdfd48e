#pragma once

// Flat `key = value` run configuration with `#` comments. Unknown keys are rejected.

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "nubd/eff.hpp"
#include "nubd/io.hpp"
#include "nubd/pipeline.hpp"
#include "nubd/pose.hpp"
#include "nubd/solver.hpp"

namespace nubd {

struct RunConfig {
    SolverConfig solver;
    double max_rotation_deg = 5.0;
    /// 0 picks the step whose arc at the image corner is one pixel.
    double rotation_step_deg = 0.0;
    double max_shift = 4.0;
    double shift_step = 1.0;
    std::size_t max_poses = 2500;
    EffSpec patch;
    NonblindOptions nonblind;
    /// Noise variance used by eval when no estimate supplies one.
    double eval_lambda = 1e-3;
    int threads = 1;
    std::string input;
    std::string output;
    std::string artifacts;
    std::string trace;

    PoseGridSpec grid_spec() const {
        PoseGridSpec g;
        g.max_rotation = max_rotation_deg * M_PI / 180.0;
        g.rotation_step = rotation_step_deg * M_PI / 180.0;
        g.max_shift = max_shift;
        g.shift_step = shift_step;
        g.max_poses = max_poses;
        return g;
    }

    friend bool operator==(const RunConfig& a, const RunConfig& b);
};

namespace detail {

struct ConfigField {
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

inline long long parse_integer(const std::string& s, const std::string& key) {
    const double v = parse_double(s, key);
    if (v != std::floor(v) || std::abs(v) > 9.0e15) throw domain_error(key + ": '" + s + "' is not an integer");
    return static_cast<long long>(v);
}

inline ConfigField real_field(const char* key, double RunConfig::*outer) {
    return {key, [outer](const RunConfig& c) { return format_double(c.*outer); },
            [outer, key](RunConfig& c, const std::string& v) { c.*outer = parse_double(v, key); }};
}

template <class Sub>
ConfigField real_field(const char* key, Sub RunConfig::*sub, double Sub::*m) {
    return {key, [sub, m](const RunConfig& c) { return format_double(c.*sub.*m); },
            [sub, m, key](RunConfig& c, const std::string& v) { c.*sub.*m = parse_double(v, key); }};
}

template <class Sub>
ConfigField int_field(const char* key, Sub RunConfig::*sub, int Sub::*m) {
    return {key, [sub, m](const RunConfig& c) { return std::to_string(c.*sub.*m); },
            [sub, m, key](RunConfig& c, const std::string& v) { c.*sub.*m = static_cast<int>(parse_integer(v, key)); }};
}

inline ConfigField string_field(const char* key, std::string RunConfig::*m) {
    return {key, [m](const RunConfig& c) { return c.*m; }, [m](RunConfig& c, const std::string& v) { c.*m = v; }};
}

inline const std::vector<ConfigField>& config_fields() {
    static const std::vector<ConfigField> fields = [] {
        using S = SolverConfig;
        std::vector<ConfigField> f;
        f.push_back(real_field("cg_tol", &RunConfig::solver, &S::cg_tol));
        f.push_back(int_field("cg_max_iter", &RunConfig::solver, &S::cg_max_iter));
        f.push_back(int_field("outer_iters_per_level", &RunConfig::solver, &S::outer_iters_per_level));
        f.push_back(real_field("w_solver_tol", &RunConfig::solver, &S::w_solver_tol));
        f.push_back(int_field("w_solver_max_iter", &RunConfig::solver, &S::w_solver_max_iter));
        f.push_back(real_field("d_coefficient", &RunConfig::solver, &S::d_coefficient));
        f.push_back(real_field("gamma_floor", &RunConfig::solver, &S::gamma_floor));
        f.push_back(real_field("gamma_init_offset", &RunConfig::solver, &S::gamma_init_offset));
        f.push_back(real_field("pyramid_scale", &RunConfig::solver, &S::pyramid_scale));
        f.push_back(real_field("min_kernel_px", &RunConfig::solver, &S::min_kernel_px));
        f.push_back(int_field("levels", &RunConfig::solver, &S::levels));
        f.push_back(real_field("w_change_tol", &RunConfig::solver, &S::w_change_tol));
        f.push_back(int_field("active_set_interval", &RunConfig::solver, &S::active_set_interval));
        f.push_back(real_field("prune_fraction", &RunConfig::solver, &S::prune_fraction));
        f.push_back(real_field("resample_sigma", &RunConfig::solver, &S::resample_sigma));
        f.push_back({"seed", [](const RunConfig& c) { return std::to_string(c.solver.seed); },
                     [](RunConfig& c, const std::string& v) {
                         std::size_t pos = 0;
                         try {
                             c.solver.seed = std::stoull(v, &pos);
                         } catch (const std::exception&) {
                             pos = 0;
                         }
                         if (pos == 0 || pos != v.size() || v.front() == '-')
                             throw domain_error("seed: '" + v + "' is not an unsigned integer");
                     }});
        f.push_back(real_field("max_rotation_deg", &RunConfig::max_rotation_deg));
        f.push_back(real_field("rotation_step_deg", &RunConfig::rotation_step_deg));
        f.push_back(real_field("max_shift", &RunConfig::max_shift));
        f.push_back(real_field("shift_step", &RunConfig::shift_step));
        f.push_back({"max_poses", [](const RunConfig& c) { return std::to_string(c.max_poses); },
                     [](RunConfig& c, const std::string& v) {
                         const auto n = parse_integer(v, "max_poses");
                         if (n < 1) throw domain_error("max_poses: must be >= 1");
                         c.max_poses = static_cast<std::size_t>(n);
                     }});
        f.push_back(int_field("patch_size", &RunConfig::patch, &EffSpec::patch_size));
        f.push_back(int_field("overlap", &RunConfig::patch, &EffSpec::overlap));
        f.push_back(int_field("kernel_size", &RunConfig::patch, &EffSpec::kernel_size));
        f.push_back(real_field("reg_weight", &RunConfig::nonblind, &NonblindOptions::reg_weight));
        f.push_back(real_field("nonblind_cg_tol", &RunConfig::nonblind, &NonblindOptions::cg_tol));
        f.push_back(int_field("nonblind_cg_max_iter", &RunConfig::nonblind, &NonblindOptions::cg_max_iter));
        f.push_back(real_field("eval_lambda", &RunConfig::eval_lambda));
        f.push_back({"threads", [](const RunConfig& c) { return std::to_string(c.threads); },
                     [](RunConfig& c, const std::string& v) { c.threads = static_cast<int>(parse_integer(v, "threads")); }});
        f.push_back(string_field("input", &RunConfig::input));
        f.push_back(string_field("output", &RunConfig::output));
        f.push_back(string_field("artifacts", &RunConfig::artifacts));
        f.push_back(string_field("trace", &RunConfig::trace));
        return f;
    }();
    return fields;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Checks value ranges; the message names the offending field.
inline void validate(const RunConfig& c) {
    auto need = [](bool ok, const char* msg) {
        if (!ok) throw domain_error(msg);
    };
    const auto& s = c.solver;
    need(s.cg_tol > 0.0, "cg_tol: must be > 0");
    need(s.cg_max_iter >= 1, "cg_max_iter: must be >= 1");
    need(s.outer_iters_per_level >= 1, "outer_iters_per_level: must be >= 1");
    need(s.w_solver_tol > 0.0, "w_solver_tol: must be > 0");
    need(s.w_solver_max_iter >= 1, "w_solver_max_iter: must be >= 1");
    need(s.d_coefficient > 0.0, "d_coefficient: must be > 0");
    need(s.gamma_floor > 0.0, "gamma_floor: must be > 0");
    need(s.gamma_init_offset > 0.0, "gamma_init_offset: must be > 0");
    need(s.pyramid_scale > 0.0 && s.pyramid_scale < 1.0, "pyramid_scale: must lie in (0, 1)");
    need(s.min_kernel_px >= 1.0, "min_kernel_px: must be >= 1");
    need(s.levels >= 0, "levels: must be >= 0 (0 = automatic)");
    need(s.w_change_tol > 0.0, "w_change_tol: must be > 0");
    need(s.active_set_interval >= 0, "active_set_interval: must be >= 0");
    need(s.prune_fraction >= 0.0 && s.prune_fraction < 1.0, "prune_fraction: must lie in [0, 1)");
    need(s.resample_sigma > 0.0, "resample_sigma: must be > 0");
    need(c.max_rotation_deg >= 0.0, "max_rotation_deg: must be >= 0");
    need(c.rotation_step_deg >= 0.0, "rotation_step_deg: must be >= 0");
    need(c.max_shift >= 0.0, "max_shift: must be >= 0");
    need(c.shift_step > 0.0, "shift_step: must be > 0");
    need(c.patch.patch_size >= 4, "patch_size: must be >= 4");
    need(c.patch.overlap >= 0 && c.patch.overlap < c.patch.patch_size, "overlap: must lie in [0, patch_size)");
    need(c.patch.kernel_size >= 0 && (c.patch.kernel_size == 0 || c.patch.kernel_size % 2 == 1),
         "kernel_size: must be 0 (automatic) or odd");
    need(c.nonblind.reg_weight >= 0.0, "reg_weight: must be >= 0");
    need(c.nonblind.cg_tol > 0.0, "nonblind_cg_tol: must be > 0");
    need(c.nonblind.cg_max_iter >= 1, "nonblind_cg_max_iter: must be >= 1");
    need(c.eval_lambda > 0.0, "eval_lambda: must be > 0");
    need(c.threads >= 1, "threads: must be >= 1");
}

/// Sets one key; throws on unknown keys or unparsable values.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
    for (const auto& f : detail::config_fields())
        if (key == f.key) {
            f.set(c, value);
            return;
        }
    throw domain_error("unknown config key '" + key + "'");
}

/// Applies `key = value` lines on top of `base`.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}, const std::string& source = "config") {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw domain_error(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        try {
            set_config_value(base, key, value);
        } catch (const domain_error& e) {
            throw domain_error(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return base;
}

/// Every key, one per line, in a form parse_config reads back to an equal RunConfig.
inline std::string dump_config(const RunConfig& c) {
    std::string s;
    for (const auto& f : detail::config_fields()) s += std::string(f.key) + " = " + f.get(c) + "\n";
    return s;
}

inline bool operator==(const RunConfig& a, const RunConfig& b) { return dump_config(a) == dump_config(b); }

}  // namespace nubd
