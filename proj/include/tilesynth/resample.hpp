#pragma once

// Separable resampling with edge-clamped sampling and normalized kernels.

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "tilesynth/error.hpp"
#include "tilesynth/grid.hpp"

namespace tilesynth {

enum class ResampleFilter { Nearest, Bilinear, Bicubic, Lanczos3 };

inline ResampleFilter parse_filter(std::string_view name) {
    if (name == "nearest") return ResampleFilter::Nearest;
    if (name == "bilinear") return ResampleFilter::Bilinear;
    if (name == "bicubic") return ResampleFilter::Bicubic;
    if (name == "lanczos3" || name == "lanczos") return ResampleFilter::Lanczos3;
    throw UsageError("unknown resample filter '" + std::string(name) + "'");
}

inline const char* to_string(ResampleFilter f) {
    switch (f) {
        case ResampleFilter::Nearest: return "nearest";
        case ResampleFilter::Bilinear: return "bilinear";
        case ResampleFilter::Bicubic: return "bicubic";
        case ResampleFilter::Lanczos3: return "lanczos3";
    }
    return "?";
}

namespace detail {

inline double filter_radius(ResampleFilter f) {
    switch (f) {
        case ResampleFilter::Nearest: return 0.5;
        case ResampleFilter::Bilinear: return 1.0;
        case ResampleFilter::Bicubic: return 2.0;
        case ResampleFilter::Lanczos3: return 3.0;
    }
    return 1.0;
}

inline double sinc(double x) {
    if (x == 0.0) {
        return 1.0;
    }
    const double px = std::numbers::pi * x;
    return std::sin(px) / px;
}

inline double filter_weight(ResampleFilter f, double x) {
    x = std::abs(x);
    switch (f) {
        case ResampleFilter::Nearest:
            return x <= 0.5 ? 1.0 : 0.0;
        case ResampleFilter::Bilinear:
            return x < 1.0 ? 1.0 - x : 0.0;
        case ResampleFilter::Bicubic: {
            // Keys cubic convolution, a = -0.5.
            constexpr double a = -0.5;
            if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
            if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
            return 0.0;
        }
        case ResampleFilter::Lanczos3:
            return x < 3.0 ? sinc(x) * sinc(x / 3.0) : 0.0;
    }
    return 0.0;
}

/// Source taps contributing to one destination sample.
struct Contribution {
    int first = 0;
    std::vector<double> weights;
};

inline std::vector<Contribution> contributions(int in_size, int out_size, ResampleFilter f) {
    std::vector<Contribution> out(static_cast<std::size_t>(out_size));
    const double scale = static_cast<double>(in_size) / out_size;
    if (f == ResampleFilter::Nearest) {
        for (int i = 0; i < out_size; ++i) {
            const int src = std::min(in_size - 1, static_cast<int>(std::floor((i + 0.5) * scale)));
            out[static_cast<std::size_t>(i)] = Contribution{src, {1.0}};
        }
        return out;
    }
    const double stretch = std::max(1.0, scale);
    const double support = filter_radius(f) * stretch;
    for (int i = 0; i < out_size; ++i) {
        const double center = (i + 0.5) * scale - 0.5;
        const int lo = static_cast<int>(std::floor(center - support));
        const int hi = static_cast<int>(std::ceil(center + support));
        Contribution c{lo, {}};
        c.weights.reserve(static_cast<std::size_t>(hi - lo + 1));
        double sum = 0.0;
        for (int k = lo; k <= hi; ++k) {
            const double w = filter_weight(f, (k - center) / stretch);
            c.weights.push_back(w);
            sum += w;
        }
        for (double& w : c.weights) {
            w /= sum;
        }
        out[static_cast<std::size_t>(i)] = std::move(c);
    }
    return out;
}

}  // namespace detail

/// Resizes to exactly out_h x out_w. Out-of-range taps clamp to the nearest edge pixel.
template <typename T, typename S>
Grid<T, S> resample(const Grid<T, S>& img, int out_w, int out_h, ResampleFilter filter) {
    if (out_w < 1 || out_h < 1) {
        throw InvalidDimension("resample target must be at least 1x1");
    }
    const int ch = img.channels();
    const auto clamp_x = [&](int k) { return std::clamp(k, 0, img.width() - 1); };
    const auto clamp_y = [&](int k) { return std::clamp(k, 0, img.height() - 1); };

    // Horizontal pass.
    const auto cols = detail::contributions(img.width(), out_w, filter);
    Grid<T, S> tmp(img.height(), out_w, ch);
    std::vector<double> acc(static_cast<std::size_t>(ch));
    for (int y = 0; y < img.height(); ++y) {
        const auto src = img.row(y);
        auto dst = tmp.row(y);
        for (int x = 0; x < out_w; ++x) {
            const auto& c = cols[static_cast<std::size_t>(x)];
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t k = 0; k < c.weights.size(); ++k) {
                const auto base = static_cast<std::size_t>(clamp_x(c.first + static_cast<int>(k))) * ch;
                for (int cc = 0; cc < ch; ++cc) {
                    acc[static_cast<std::size_t>(cc)] += c.weights[k] * src[base + cc];
                }
            }
            for (int cc = 0; cc < ch; ++cc) {
                dst[static_cast<std::size_t>(x) * ch + cc] = static_cast<T>(acc[static_cast<std::size_t>(cc)]);
            }
        }
    }

    // Vertical pass.
    const auto rows = detail::contributions(img.height(), out_h, filter);
    Grid<T, S> out(out_h, out_w, ch);
    const auto run = static_cast<std::size_t>(out_w) * ch;
    std::vector<double> line(run);
    for (int y = 0; y < out_h; ++y) {
        const auto& c = rows[static_cast<std::size_t>(y)];
        std::fill(line.begin(), line.end(), 0.0);
        for (std::size_t k = 0; k < c.weights.size(); ++k) {
            const auto src = tmp.row(clamp_y(c.first + static_cast<int>(k)));
            const double w = c.weights[k];
            for (std::size_t i = 0; i < run; ++i) {
                line[i] += w * src[i];
            }
        }
        auto dst = out.row(y);
        for (std::size_t i = 0; i < run; ++i) {
            dst[i] = static_cast<T>(line[i]);
        }
    }
    return out;
}

}  // namespace tilesynth
