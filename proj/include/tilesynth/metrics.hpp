#pragma once

// Image quality metrics: PSNR, SSIM, L1/L2 and a tile-seam diagnostic.

#include <cmath>
#include <limits>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "tilesynth/error.hpp"
#include "tilesynth/grid.hpp"
#include "tilesynth/tiling.hpp"

namespace tilesynth {

template <typename T, typename S>
double l1(const Grid<T, S>& a, const Grid<T, S>& b) {
    require_same_shape(a, b, "l1");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(static_cast<double>(a.data()[i]) - b.data()[i]);
    return sum / static_cast<double>(a.size());
}

template <typename T, typename S>
double l2(const Grid<T, S>& a, const Grid<T, S>& b) {
    require_same_shape(a, b, "l2");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - b.data()[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.size());
}

/// Peak signal-to-noise ratio in dB over all channels jointly; +inf for identical inputs.
template <typename T, typename S>
double psnr(const Grid<T, S>& a, const Grid<T, S>& b, double max_val = 1.0) {
    const double mse = l2(a, b);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_val * max_val / mse);
}

struct SsimConfig {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_1d(int n, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(n));
    const double c = (n - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        w[static_cast<std::size_t>(i)] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
        sum += w[static_cast<std::size_t>(i)];
    }
    for (double& v : w) v /= sum;
    return w;
}

/// Separable weighted sum over every fully-contained window ("valid" mode).
inline std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::vector<double>& k) {
    const int n = static_cast<int>(k.size());
    const int ow = w - n + 1;
    const int oh = h - n + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * src[static_cast<std::size_t>(y) * w + x + i];
            tmp[static_cast<std::size_t>(y) * ow + x] = s;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    }
    return out;
}

}  // namespace detail

/// Mean structural similarity over all valid Gaussian windows, averaged across channels.
template <typename T, typename S>
double ssim(const Grid<T, S>& a, const Grid<T, S>& b, const SsimConfig& cfg = {}) {
    require_same_shape(a, b, "ssim");
    if (a.height() < cfg.window || a.width() < cfg.window) {
        throw TooSmall("ssim: image smaller than the " + std::to_string(cfg.window) + "px window");
    }
    const double c1 = (cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range);
    const double c2 = (cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range);
    const auto k = detail::gaussian_1d(cfg.window, cfg.sigma);
    const int h = a.height();
    const int w = a.width();
    const auto n = static_cast<std::size_t>(h) * w;
    double total = 0.0;
    for (int c = 0; c < a.channels(); ++c) {
        std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
        for (int r = 0; r < h; ++r) {
            for (int q = 0; q < w; ++q) {
                const auto i = static_cast<std::size_t>(r) * w + q;
                x[i] = a(r, q, c);
                y[i] = b(r, q, c);
                xx[i] = x[i] * x[i];
                yy[i] = y[i] * y[i];
                xy[i] = x[i] * y[i];
            }
        }
        const auto mx = detail::filter_valid(x, h, w, k);
        const auto my = detail::filter_valid(y, h, w, k);
        const auto mxx = detail::filter_valid(xx, h, w, k);
        const auto myy = detail::filter_valid(yy, h, w, k);
        const auto mxy = detail::filter_valid(xy, h, w, k);
        double sum = 0.0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = mxx[i] - mx[i] * mx[i];
            const double vy = myy[i] - my[i] * my[i];
            const double cov = mxy[i] - mx[i] * my[i];
            sum += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
                   ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += sum / static_cast<double>(mx.size());
    }
    return total / a.channels();
}

/**
 * Mean absolute difference across tile boundary lines minus the mean absolute
 * difference across every other adjacent pixel pair. Positive values mean
 * the boundaries are rougher than the rest of the image. The image may be the
 * upscaled output of the plan; boundaries are scaled to match.
 */
template <typename T, typename S>
double seam_energy(const Grid<T, S>& img, const TilingPlan& plan) {
    if (plan.width < 1 || img.width() % plan.width != 0 || img.height() % plan.height != 0 ||
        img.width() / plan.width != img.height() / plan.height) {
        throw OutOfBounds("seam_energy: plan does not match image dimensions");
    }
    const int s = img.width() / plan.width;
    std::set<int> cols;
    std::set<int> rows;
    for (int x : plan.xs) {
        if (x < 0 || x + plan.tile_size > plan.width) throw OutOfBounds("seam_energy: plan position outside image");
        if (x > 0) cols.insert(x * s);
        if (x + plan.tile_size < plan.width) cols.insert((x + plan.tile_size) * s);
    }
    for (int y : plan.ys) {
        if (y < 0 || y + plan.tile_size > plan.height) throw OutOfBounds("seam_energy: plan position outside image");
        if (y > 0) rows.insert(y * s);
        if (y + plan.tile_size < plan.height) rows.insert((y + plan.tile_size) * s);
    }
    double seam_sum = 0.0;
    double rest_sum = 0.0;
    std::size_t seam_n = 0;
    std::size_t rest_n = 0;
    const int ch = img.channels();
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 1; x < img.width(); ++x) {
            const bool seam = cols.count(x) != 0;
            for (int c = 0; c < ch; ++c) {
                const double d = std::abs(static_cast<double>(img(y, x, c)) - img(y, x - 1, c));
                (seam ? seam_sum : rest_sum) += d;
                ++(seam ? seam_n : rest_n);
            }
        }
    }
    for (int y = 1; y < img.height(); ++y) {
        const bool seam = rows.count(y) != 0;
        for (int x = 0; x < img.width(); ++x) {
            for (int c = 0; c < ch; ++c) {
                const double d = std::abs(static_cast<double>(img(y, x, c)) - img(y - 1, x, c));
                (seam ? seam_sum : rest_sum) += d;
                ++(seam ? seam_n : rest_n);
            }
        }
    }
    if (seam_n == 0) return 0.0;
    const double rest = rest_n == 0 ? 0.0 : rest_sum / static_cast<double>(rest_n);
    return seam_sum / static_cast<double>(seam_n) - rest;
}

inline void write_metric_header(std::ostream& os) { os << "image_id,strategy,psnr,ssim,seam_energy\n"; }

inline void write_metric_row(std::ostream& os, const std::string& image_id, const std::string& strategy, double psnr_db,
                             double ssim_value, double seam) {
    os << image_id << ',' << strategy << ',';
    if (std::isinf(psnr_db)) {
        os << "inf";
    } else {
        os << psnr_db;
    }
    os << ',' << ssim_value << ',' << seam << '\n';
}

}  // namespace tilesynth
