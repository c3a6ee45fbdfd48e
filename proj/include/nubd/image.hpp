#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace nubd {

/// Thrown for invalid arguments and violated preconditions.
class domain_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/**
 * A single 2-D plane of doubles in row-major order (index = y * width + x).
 */
class Plane {
public:
    Plane() = default;
    Plane(int width, int height, double fill = 0.0)
        : width_(width), height_(height),
          data_(static_cast<std::size_t>(check_dim(width)) * static_cast<std::size_t>(check_dim(height)), fill) {}

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(int x, int y) noexcept { return data_[index(x, y)]; }
    double operator()(int x, int y) const noexcept { return data_[index(x, y)]; }
    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Replicate-boundary read.
    double clamped(int x, int y) const noexcept {
        return (*this)(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1));
    }

    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }
    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    bool same_shape(const Plane& other) const noexcept {
        return width_ == other.width_ && height_ == other.height_;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Plane&, const Plane&) = default;

private:
    static int check_dim(int d) {
        if (d < 0) throw domain_error("plane dimension must be non-negative");
        return d;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

/// Two derivative channels: horizontal [-1, 1] and vertical [-1, 1]^T.
struct GradientImage {
    std::array<Plane, 2> channels;

    GradientImage() = default;
    GradientImage(int width, int height) : channels{Plane(width, height), Plane(width, height)} {}

    int width() const noexcept { return channels[0].width(); }
    int height() const noexcept { return channels[0].height(); }
    /// Pixel count summed over both channels.
    std::size_t size() const noexcept { return channels[0].size() + channels[1].size(); }

    Plane& operator[](std::size_t c) noexcept { return channels[c]; }
    const Plane& operator[](std::size_t c) const noexcept { return channels[c]; }

    friend bool operator==(const GradientImage&, const GradientImage&) = default;
};

/// 1 (gray) or 3 (RGB) planes; values nominally in [0, 1], unclamped internally.
struct IntensityImage {
    std::vector<Plane> planes;

    IntensityImage() = default;
    IntensityImage(int width, int height, int num_planes, double fill = 0.0)
        : planes(static_cast<std::size_t>(num_planes), Plane(width, height, fill)) {}
    explicit IntensityImage(Plane gray) { planes.push_back(std::move(gray)); }

    int width() const noexcept { return planes.empty() ? 0 : planes[0].width(); }
    int height() const noexcept { return planes.empty() ? 0 : planes[0].height(); }
    int num_planes() const noexcept { return static_cast<int>(planes.size()); }
    bool empty() const noexcept { return planes.empty() || planes[0].empty(); }

    friend bool operator==(const IntensityImage&, const IntensityImage&) = default;
};

inline void require_same_shape(const Plane& a, const Plane& b, const char* what) {
    if (!a.same_shape(b)) {
        throw domain_error(std::string(what) + ": dimension mismatch (" + std::to_string(a.width()) + "x" +
                           std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                           std::to_string(b.height()) + ")");
    }
}

inline double dot(const Plane& a, const Plane& b) {
    require_same_shape(a, b, "dot");
    long double acc = 0.0L;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<long double>(a[i]) * b[i];
    return static_cast<double>(acc);
}

inline double squared_norm(const Plane& a) { return dot(a, a); }

inline double dot(const GradientImage& a, const GradientImage& b) {
    return dot(a[0], b[0]) + dot(a[1], b[1]);
}

inline double squared_norm(const GradientImage& a) { return dot(a, a); }

/// y <- y + alpha * x
inline void axpy(double alpha, const Plane& x, Plane& y) {
    require_same_shape(x, y, "axpy");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Plane operator-(const Plane& a, const Plane& b) {
    require_same_shape(a, b, "subtract");
    Plane out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

inline Plane scaled(const Plane& a, double s) {
    Plane out = a;
    for (auto& v : out.values()) v *= s;
    return out;
}

inline double max_abs_diff(const Plane& a, const Plane& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Luma (Rec. 601 weights) of an RGB image; gray images pass through.
inline Plane to_luma(const IntensityImage& img) {
    if (img.empty()) throw domain_error("to_luma: empty image");
    if (img.num_planes() == 1) return img.planes[0];
    if (img.num_planes() != 3) throw domain_error("to_luma: expected 1 or 3 planes");
    Plane out(img.width(), img.height());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = 0.299 * img.planes[0][i] + 0.587 * img.planes[1][i] + 0.114 * img.planes[2][i];
    }
    return out;
}

}  // namespace nubd
