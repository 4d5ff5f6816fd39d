#pragma once

/**
 * diffusion.hpp - Noise schedule, classifier-free guidance with separate
 * image and text weights, and a deterministic first-order sampler.
 *
 * The denoiser predicts noise. Guidance combines three evaluations:
 *
 *   g = f(z,t,0,0) + s_I * (f(z,t,c_I,0) - f(z,t,0,0)) + s_T * (f(z,t,c_I,c_T) - f(z,t,c_I,0))
 */

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tilesynth/error.hpp"
#include "tilesynth/grid.hpp"

namespace tilesynth {

/// alpha(t), sigma(t) on t in [0, 1]; signal-to-noise alpha^2/sigma^2 must fall strictly.
struct Schedule {
    std::function<double(double)> alpha;
    std::function<double(double)> sigma;

    [[nodiscard]] double snr(double t) const {
        const double a = alpha(t);
        const double s = sigma(t);
        return (a * a) / (s * s);
    }
};

inline constexpr double kScheduleFloor = 1e-4;

/// Variance-preserving cosine schedule: alpha = cos(pi t / 2), sigma = sin(pi t / 2),
/// each floored at 1e-4 so neither endpoint divides by zero.
inline Schedule schedule_cosine() {
    return Schedule{
        [](double t) { return std::max(std::cos(std::numbers::pi * t / 2.0), kScheduleFloor); },
        [](double t) { return std::max(std::sin(std::numbers::pi * t / 2.0), kScheduleFloor); },
    };
}

inline void write_schedule_csv(std::ostream& os, const Schedule& s, int points) {
    os << "t,alpha,sigma,snr\n";
    for (int i = 0; i < points; ++i) {
        const double t = points == 1 ? 0.0 : static_cast<double>(i) / (points - 1);
        os << t << ',' << s.alpha(t) << ',' << s.sigma(t) << ',' << s.snr(t) << '\n';
    }
}

struct GuidanceWeights {
    float image = 1.0f;  // s_I
    float text = 1.0f;   // s_T

    void validate() const {
        if (!(image > 0.0f) || !(text > 0.0f)) {
            throw InvalidRatio("guidance weights must be strictly positive");
        }
    }
};

/// Conditioning inputs; an empty optional is the null token.
struct Conditioning {
    std::optional<LatentGrid> image;
    std::optional<std::vector<float>> text;
};

/// Non-owning view handed to the denoiser; nullptr is the null token.
struct ConditioningView {
    const LatentGrid* image = nullptr;
    const std::vector<float>* text = nullptr;
};

using Denoiser = std::function<LatentGrid(const LatentGrid& z_t, float t, const ConditioningView& cond)>;

struct NoisySample {
    LatentGrid z_t;
    float t = 0.0f;
    LatentGrid eps;
};

inline NoisySample add_noise(const LatentGrid& z, const LatentGrid& eps, float t, const Schedule& sched) {
    require_same_shape(z, eps, "add_noise");
    if (!(t >= 0.0f && t <= 1.0f)) {
        throw InvalidRatio("add_noise: t must be in [0, 1]");
    }
    const double a = sched.alpha(t);
    const double s = sched.sigma(t);
    LatentGrid zt(z.height(), z.width(), z.channels());
    auto out = zt.data();
    const auto zs = z.data();
    const auto es = eps.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>(a * zs[i] + s * es[i]);
    }
    return NoisySample{std::move(zt), t, eps};
}

inline LatentGrid cfg_combine(const LatentGrid& f_null, const LatentGrid& f_img, const LatentGrid& f_full,
                              const GuidanceWeights& w) {
    require_same_shape(f_null, f_img, "cfg_combine");
    require_same_shape(f_null, f_full, "cfg_combine");
    // Regrouped as (1 - s_I) f_null + (s_I - s_T) f_img + s_T f_full; the
    // coefficients vanish exactly at s_I = s_T = 1, so g == f_full bit for bit.
    const double c_null = 1.0 - static_cast<double>(w.image);
    const double c_img = static_cast<double>(w.image) - static_cast<double>(w.text);
    const double c_full = w.text;
    LatentGrid g(f_null.height(), f_null.width(), f_null.channels());
    auto out = g.data();
    const auto a = f_null.data();
    const auto b = f_img.data();
    const auto c = f_full.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>(c_null * a[i] + c_img * b[i] + c_full * c[i]);
    }
    return g;
}

/// Guided noise estimate from the three denoiser evaluations.
inline LatentGrid guided_noise(const Denoiser& denoiser, const LatentGrid& z_t, float t, const Conditioning& cond,
                               const GuidanceWeights& w) {
    const LatentGrid* img = cond.image ? &*cond.image : nullptr;
    const std::vector<float>* txt = cond.text ? &*cond.text : nullptr;
    const auto f_null = denoiser(z_t, t, ConditioningView{nullptr, nullptr});
    const auto f_img = denoiser(z_t, t, ConditioningView{img, nullptr});
    const auto f_full = denoiser(z_t, t, ConditioningView{img, txt});
    return cfg_combine(f_null, f_img, f_full, w);
}

/**
 * Deterministic first-order sampler over the uniform grid
 * t_k = t_start * k / steps, k = steps .. 0. Each step estimates the clean
 * latent x0 = (z - sigma(t) g) / alpha(t) and re-noises it to the next time:
 * z' = alpha(t') x0 + sigma(t') g. The final step returns x0 itself.
 */
inline LatentGrid denoise_loop(const LatentGrid& z_init, const Denoiser& denoiser, const Conditioning& cond,
                               const GuidanceWeights& w, const Schedule& sched, int steps, float t_start = 1.0f) {
    if (steps < 1) {
        throw InvalidDimension("denoise_loop: steps must be >= 1");
    }
    if (!(t_start > 0.0f && t_start <= 1.0f)) {
        throw InvalidRatio("denoise_loop: t_start must be in (0, 1]");
    }
    w.validate();
    LatentGrid z = z_init;
    for (int k = steps; k >= 1; --k) {
        const double t = static_cast<double>(t_start) * k / steps;
        const double t_next = static_cast<double>(t_start) * (k - 1) / steps;
        const auto g = guided_noise(denoiser, z, static_cast<float>(t), cond, w);
        require_same_shape(z, g, "denoise_loop");
        const double a = sched.alpha(t);
        const double s = sched.sigma(t);
        const bool last = (k == 1);
        const double a_next = sched.alpha(t_next);
        const double s_next = sched.sigma(t_next);
        auto zs = z.data();
        const auto gs = g.data();
        for (std::size_t i = 0; i < zs.size(); ++i) {
            const double x0 = (zs[i] - s * gs[i]) / a;
            zs[i] = static_cast<float>(last ? x0 : a_next * x0 + s_next * gs[i]);
        }
        if (!z.all_finite()) {
            throw DivergenceError("denoise_loop produced non-finite values at t=" + std::to_string(t));
        }
    }
    return z;
}

}  // namespace tilesynth
