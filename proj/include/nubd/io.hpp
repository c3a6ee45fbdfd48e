#pragma once

// Image and table I/O. PNG (8/16-bit gray, gray+alpha, RGB, RGBA) via libpng and binary PGM/PPM.
// Values are treated as linear; alpha is dropped. Images are written as 8-bit PNG with clamping.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <png.h>

#include "nubd/eff.hpp"
#include "nubd/image.hpp"
#include "nubd/pose.hpp"

namespace nubd {

class io_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s, const std::string& what) {
    double v = 0.0;
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size() || s.empty())
        throw domain_error(what + ": '" + std::string(s) + "' is not a number");
    return v;
}

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw io_error("cannot open '" + path + "'");
    return f;
}

[[noreturn]] inline void png_fail(png_structp png, png_const_charp msg) {
    auto* text = static_cast<std::string*>(png_get_error_ptr(png));
    if (text) *text = msg;
    png_longjmp(png, 1);
}

inline void png_warn(png_structp, png_const_charp) {}

inline bool has_png_signature(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    unsigned char sig[8] = {};
    in.read(reinterpret_cast<char*>(sig), 8);
    return in.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

// Reads a PNG into rows of 16-bit samples. Kept free of C++ objects with destructors between
// setjmp and any longjmp.
inline IntensityImage read_png_file(const std::string& path) {
    FilePtr f = open_file(path, "rb");
    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
    if (!png) throw io_error("libpng: out of memory");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw io_error("libpng: out of memory");
    }
    std::vector<std::uint16_t> samples;
    std::vector<png_bytep> rows;
    png_uint_32 width = 0, height = 0;
    int channels = 0, depth = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw io_error("'" + path + "': " + (err.empty() ? std::string("corrupt PNG") : err));
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (depth == 16) png_set_swap(png);
    png_read_update_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    channels = png_get_channels(png, info);
    depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    samples.resize((rowbytes * height + 1) / 2 + 1);
    rows.resize(height);
    auto* base = reinterpret_cast<png_bytep>(samples.data());
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = base + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    const int color_planes = channels >= 3 ? 3 : 1;
    IntensityImage img(static_cast<int>(width), static_cast<int>(height), color_planes);
    const double scale = depth == 16 ? 1.0 / 65535.0 : 1.0 / 255.0;
    for (png_uint_32 y = 0; y < height; ++y) {
        const png_bytep row = rows[y];
        for (png_uint_32 x = 0; x < width; ++x)
            for (int c = 0; c < color_planes; ++c) {
                const std::size_t k = static_cast<std::size_t>(x) * channels + c;
                double v;
                if (depth == 16) {
                    std::uint16_t s;
                    std::memcpy(&s, row + 2 * k, 2);
                    v = s * scale;
                } else {
                    v = row[k] * scale;
                }
                img.planes[static_cast<std::size_t>(c)](static_cast<int>(x), static_cast<int>(y)) = v;
            }
    }
    return img;
}

inline std::string next_pnm_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

inline IntensityImage read_pnm_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path + "'");
    const std::string magic = next_pnm_token(in);
    if (magic != "P5" && magic != "P6") throw io_error("'" + path + "': unsupported image format");
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(next_pnm_token(in));
        h = std::stoi(next_pnm_token(in));
        maxval = std::stoi(next_pnm_token(in));
    } catch (const std::exception&) {
        throw io_error("'" + path + "': malformed PNM header");
    }
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw io_error("'" + path + "': malformed PNM header");
    const int planes = magic == "P6" ? 3 : 1;
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * planes * bytes);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw io_error("'" + path + "': truncated PNM data");
    IntensityImage img(w, h, planes);
    std::size_t k = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < planes; ++c) {
                unsigned v = raw[k++];
                if (bytes == 2) v = (v << 8) | raw[k++];
                img.planes[static_cast<std::size_t>(c)](x, y) = static_cast<double>(v) / maxval;
            }
    return img;
}

inline std::uint8_t to_byte(double v) {
    if (!(v > 0.0)) return 0;
    if (v >= 1.0) return 255;
    return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

}  // namespace detail

/// PNG or binary PGM/PPM, chosen by file signature.
inline IntensityImage read_image(const std::string& path) {
    if (detail::has_png_signature(path)) return detail::read_png_file(path);
    return detail::read_pnm_file(path);
}

/// 8-bit PNG (gray or RGB), clamped to [0, 1]. No timestamps or text chunks, so output is byte-stable.
inline void write_png(const std::string& path, const IntensityImage& img) {
    if (img.empty()) throw domain_error("write_png: empty image");
    if (img.num_planes() != 1 && img.num_planes() != 3) throw domain_error("write_png: expected 1 or 3 planes");
    const int w = img.width(), h = img.height(), nc = img.num_planes();
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(w) * h * nc);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < nc; ++c)
                buf[(static_cast<std::size_t>(y) * w + x) * nc + c] = detail::to_byte(img.planes[static_cast<std::size_t>(c)](x, y));
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = buf.data() + static_cast<std::size_t>(y) * w * nc;

    detail::FilePtr f = detail::open_file(path, "wb");
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_fail, detail::png_warn);
    if (!png) throw io_error("libpng: out of memory");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw io_error("libpng: out of memory");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw io_error("writing '" + path + "': " + err);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 nc == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline void write_png(const std::string& path, const Plane& gray) { write_png(path, IntensityImage(gray)); }

/// Linear min-max stretch to [0, 1]; a constant plane maps to 0.5.
inline Plane normalize_range(const Plane& p) {
    Plane out(p.width(), p.height(), 0.5);
    if (p.empty()) return out;
    const auto [lo, hi] = std::minmax_element(p.values().begin(), p.values().end());
    if (*hi > *lo)
        for (std::size_t i = 0; i < p.size(); ++i) out[i] = (p[i] - *lo) / (*hi - *lo);
    return out;
}

/// Per-patch kernels tiled in the patch layout, each scaled to its own peak, 1 px gaps.
inline Plane kernel_montage(const std::vector<std::vector<double>>& kernels, const EffDecomposition& eff) {
    const int k = eff.kernel_size;
    const int cols = eff.patch_cols, rows = eff.patch_rows;
    Plane out(cols * (k + 1) + 1, rows * (k + 1) + 1, 0.0);
    for (std::size_t r = 0; r < kernels.size() && r < eff.patches.size(); ++r) {
        const auto& ker = kernels[r];
        const double peak = ker.empty() ? 0.0 : *std::max_element(ker.begin(), ker.end());
        const int ox = 1 + static_cast<int>(r % static_cast<std::size_t>(cols)) * (k + 1);
        const int oy = 1 + static_cast<int>(r / static_cast<std::size_t>(cols)) * (k + 1);
        for (int y = 0; y < k; ++y)
            for (int x = 0; x < k; ++x)
                out(ox + x, oy + y) = peak > 0.0 ? std::max(0.0, ker[static_cast<std::size_t>(y * k + x)]) / peak : 0.0;
    }
    return out;
}

inline Plane kernel_montage(const std::vector<double>& w, const EffDecomposition& eff) {
    std::vector<std::vector<double>> kernels;
    for (std::size_t r = 0; r < eff.patches.size(); ++r) kernels.push_back(patch_kernel(eff, r, w));
    return kernel_montage(kernels, eff);
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw io_error("write to '" + path + "' failed");
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline constexpr const char* kPosesHeader = "theta_rad\ttx_px\tty_px\tweight";

/// poses.tsv: header line then `theta tx ty weight` per pose, tab separated.
inline std::string format_poses(const PoseGrid& grid, const std::vector<double>& w, bool skip_zero = false) {
    if (w.size() != grid.size()) throw domain_error("format_poses: weight/pose count mismatch");
    std::string s = std::string(kPosesHeader) + "\n";
    for (std::size_t j = 0; j < w.size(); ++j) {
        if (skip_zero && w[j] == 0.0) continue;
        const auto& p = grid.poses[j];
        s += format_double(p.theta) + "\t" + format_double(p.tx) + "\t" + format_double(p.ty) + "\t" +
             format_double(w[j]) + "\n";
    }
    return s;
}

struct PoseTable {
    std::vector<Pose> poses;
    std::vector<double> weights;
};

/// Parses poses.tsv (tabs or spaces; the header line and `#` comments are skipped).
inline PoseTable parse_poses(const std::string& text, const std::string& source = "poses") {
    PoseTable t;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::vector<std::string> f;
        for (std::string tok; ls >> tok;) f.push_back(tok);
        if (f.empty()) continue;
        if (f[0] == "theta_rad") continue;
        if (f.size() != 4)
            throw domain_error(source + ":" + std::to_string(lineno) + ": expected 4 fields (theta_rad tx_px ty_px weight)");
        const std::string where = source + ":" + std::to_string(lineno);
        t.poses.push_back({parse_double(f[0], where), parse_double(f[1], where), parse_double(f[2], where)});
        t.weights.push_back(parse_double(f[3], where));
    }
    return t;
}

/// rho.csv: `x,y,rho` rows in raster order.
inline std::string format_rho_csv(const Plane& rho) {
    std::string s = "x,y,rho\n";
    for (int y = 0; y < rho.height(); ++y)
        for (int x = 0; x < rho.width(); ++x)
            s += std::to_string(x) + "," + std::to_string(y) + "," + format_double(rho(x, y)) + "\n";
    return s;
}

}  // namespace nubd
