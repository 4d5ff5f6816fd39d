#pragma once

// Deterministic synthetic images for tests, sweeps and training corpora.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include "tilesynth/grid.hpp"

namespace tilesynth {

/**
 * Smooth texture in [0, 1]: a sum of randomly oriented sinusoids per channel
 * plus mild per-pixel noise. Neighbouring pixels are strongly correlated, as
 * in natural images.
 */
inline ImageBuffer textured_image(int height, int width, int channels, std::uint64_t seed, double noise = 0.02) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    constexpr int kWaves = 6;
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<std::vector<Wave>> waves(static_cast<std::size_t>(channels));
    for (auto& ch : waves) {
        for (int k = 0; k < kWaves; ++k) {
            const double angle = u(rng) * std::numbers::pi;
            const double period = 6.0 + u(rng) * 58.0;  // pixels
            const double f = 2.0 * std::numbers::pi / period;
            ch.push_back({f * std::cos(angle), f * std::sin(angle), u(rng) * 2.0 * std::numbers::pi, 0.5 + u(rng)});
        }
    }
    std::normal_distribution<double> n01(0.0, 1.0);
    ImageBuffer img(height, width, channels);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < channels; ++c) {
                double v = 0.0;
                double norm = 0.0;
                for (const auto& w : waves[static_cast<std::size_t>(c)]) {
                    v += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
                    norm += w.amp;
                }
                v = 0.5 + 0.4 * v / norm + noise * n01(rng);
                img(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return img;
}

/// Sets `count` distinct, mutually non-adjacent pixels to bright impulses (artifacts).
inline void add_impulses(ImageBuffer& img, int count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    // Candidate sites on a stride-2 lattice keep impulses isolated.
    std::vector<std::pair<int, int>> sites;
    for (int y = 1; y + 1 < img.height(); y += 2) {
        for (int x = 1; x + 1 < img.width(); x += 2) sites.emplace_back(y, x);
    }
    std::shuffle(sites.begin(), sites.end(), rng);
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(std::max(0, count)), sites.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto [y, x] = sites[i];
        for (int c = 0; c < img.channels(); ++c) {
            img(y, x, c) = img(y, x, c) > 0.5f ? 0.0f : 1.0f;
        }
    }
}

/// Linear ramp over x and y: (x + y) / (width + height - 2).
inline ImageBuffer ramp_image(int height, int width, int channels) {
    ImageBuffer img(height, width, channels);
    const double denom = std::max(1, width + height - 2);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < channels; ++c) img(y, x, c) = static_cast<float>((x + y) / denom);
        }
    }
    return img;
}

}  // namespace tilesynth
